"""Binary Maze2D dataset files and a JSON-lines debug export.

Layout (all little-endian, fixed width)::

    header : magic b"FPGD" | u32 version | u32 G | u32 H | u32 count | f64 truncation_radius
    record : u64 seed | ceil(G*G/8) bytes packed occupancy (row-major, MSB first)
             | 2 x f64 start | 2 x f64 goal | H x 2 x f64 expert waypoints
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .maze import MazeWorld, Trajectory, generate_world

MAGIC = b"FPGD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


def world_seed(base_seed: int, index: int) -> int:
    """Per-world seed derived from (base seed, index); independent of count."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])


def generate_dataset(seed: int, count: int, **world_kwargs) -> list:
    return [generate_world(world_seed(seed, i), **world_kwargs) for i in range(count)]


def _record_dtype(G: int, H: int) -> np.dtype:
    return np.dtype([
        ("seed", "<u8"),
        ("grid", "u1", ((G * G + 7) // 8,)),
        ("start", "<f8", (2,)),
        ("goal", "<f8", (2,)),
        ("expert", "<f8", (H, 2)),
    ])


def save_dataset(path, worlds) -> None:
    if not worlds:
        raise ValueError("cannot infer G and H from an empty world list; pass at least one world")
    G, H = worlds[0].grid_size, worlds[0].horizon
    R = worlds[0].truncation_radius
    rec = np.zeros(len(worlds), dtype=_record_dtype(G, H))
    for k, w in enumerate(worlds):
        if w.grid_size != G or w.horizon != H:
            raise ValueError("all worlds in a dataset must share G and H")
        rec[k]["seed"] = 0 if w.seed is None else w.seed
        rec[k]["grid"] = np.packbits(w.grid.reshape(-1))
        rec[k]["start"] = w.start
        rec[k]["goal"] = w.goal
        rec[k]["expert"] = w.expert.waypoints
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, G, H, len(worlds), float(R)))
        fh.write(rec.tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, G, H, count, R = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a Maze2D dataset file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    return {"version": version, "grid_size": G, "horizon": H, "count": count, "truncation_radius": R}


def load_dataset(path) -> list:
    hdr = read_header(path)
    G, H, n = hdr["grid_size"], hdr["horizon"], hdr["count"]
    dt = _record_dtype(G, H)
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        buf = fh.read()
    if len(buf) != n * dt.itemsize:
        raise ValueError(f"{path}: expected {n} records, file size disagrees")
    rec = np.frombuffer(buf, dtype=dt)
    worlds = []
    for r in rec:
        grid = np.unpackbits(r["grid"])[: G * G].reshape(G, G).astype(bool)
        worlds.append(MazeWorld(grid, r["start"].copy(), r["goal"].copy(),
                                Trajectory(r["expert"].copy()), hdr["truncation_radius"],
                                int(r["seed"])))
    return worlds


def export_jsonl(path, worlds) -> None:
    with open(path, "w") as fh:
        for w in worlds:
            fh.write(json.dumps({
                "seed": w.seed,
                "grid_size": w.grid_size,
                "occupied": np.argwhere(w.grid).tolist(),
                "start": w.start.tolist(),
                "goal": w.goal.tolist(),
                "expert": w.expert.waypoints.tolist(),
            }, sort_keys=True) + "\n")
