"""Command-line entry point: ``fpgnav <subcommand> [options]``.

Subcommands: gen-data, train, sample, eval, bound-check, render. A JSON
config file (``--config``) may hold ``"run"`` and ``"train"`` sections whose
keys override the defaults; ``--print-config`` dumps the merged config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .harness import RunConfig, default_output_dir
from .training import TrainConfig

log = logging.getLogger("fpgnav")


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"run", "train"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _run_config(args, doc) -> RunConfig:
    d = RunConfig().to_dict()
    d.update(doc.get("run", {}))
    for key in ("mode", "gamma", "candidates", "tail_length", "seed", "solver", "world_count",
                "repeats", "guidance_point"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "no_tg", False):
        d["use_tg"] = False
    return RunConfig.from_dict(d)


def _train_config(args, doc) -> TrainConfig:
    d = TrainConfig().to_dict()
    d.update(doc.get("train", {}))
    for key, attr in (("epochs", "epochs"), ("learning_rate", "lr"), ("seed", "seed"),
                      ("hidden_dim", "hidden_dim"), ("batch_size", "batch_size"),
                      ("max_steps", "max_steps"), ("dataset_path", "data"),
                      ("checkpoint_path", "out"), ("metrics_path", "metrics")):
        if args.command != "train":
            break
        val = getattr(args, attr, None)
        if val is not None:
            d[key] = val
    return TrainConfig.from_dict(d)


def _emit(args, doc, text=None):
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    elif text is not None:
        print(text)


def _out_path(args, name):
    if args.out:
        return args.out
    outdir = default_output_dir()
    os.makedirs(outdir, exist_ok=True)
    return os.path.join(outdir, name)


# ----------------------------------------------------------------------------- subcommands

def cmd_gen_data(args, doc):
    from .dataset import export_jsonl, generate_dataset, save_dataset
    worlds = generate_dataset(args.seed, args.count, grid_size=args.grid_size,
                              obstacle_density=args.density, horizon=args.horizon)
    if not worlds:
        raise ValueError("--count must be at least 1")
    path = _out_path(args, "worlds.bin")
    save_dataset(path, worlds)
    if args.jsonl:
        export_jsonl(args.jsonl, worlds)
    _emit(args, {"path": path, "count": len(worlds)}, f"wrote {len(worlds)} worlds to {path}")
    return 0


def cmd_train(args, doc):
    from .training import train
    if args.out is None:
        args.out = _out_path(args, "model.ckpt")
    cfg = _train_config(args, doc)
    if not cfg.dataset_path:
        raise ValueError("train needs --data")
    res = train(cfg)
    summary = {"checkpoint": cfg.checkpoint_path, "steps": len(res.history),
               "heldout_initial": res.heldout_initial, "heldout_final": res.heldout_final}
    _emit(args, summary, f"trained {len(res.history)} steps, held-out loss "
                         f"{res.heldout_initial:.4f} -> {res.heldout_final:.4f}")
    return 0


def _load_model_and_worlds(args):
    from .checkpoint import load_checkpoint
    from .dataset import load_dataset
    if not args.checkpoint or not args.data:
        raise ValueError(f"{args.command} needs --checkpoint and --data")
    model, schedule, _ = load_checkpoint(args.checkpoint)
    worlds = load_dataset(args.data)
    return model, schedule, worlds


def cmd_sample(args, doc):
    from .harness import rollout_seed, run_algorithm1
    from .maze import evaluate_rollout
    model, schedule, worlds = _load_model_and_worlds(args)
    cfg = _run_config(args, doc).replace(total_steps=schedule.T)
    world = worlds[args.index]
    res = run_algorithm1(model, schedule, world, cfg, rollout_seed(cfg.seed, args.index, 0))
    metrics = evaluate_rollout(world, res.blended, cfg.goal_tolerance_cells).to_dict()
    out = {"world": args.index, "blended": res.blended.tolist(),
           "candidates": res.candidates.actions.tolist(), "blending": res.candidates.to_dict(),
           "metrics": metrics, "aborted": res.aborted}
    if args.trace:
        with open(args.trace, "w") as fh:
            json.dump(res.trace, fh, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
    _emit(args, out, f"world {args.index}: {metrics}")
    return 0


def cmd_eval(args, doc):
    from .harness import method_table, run_benchmark, save_results
    from .render import benchmark_svg
    model, schedule, worlds = _load_model_and_worlds(args)
    cfg = _run_config(args, doc).replace(total_steps=schedule.T)
    fpg_mode = cfg.mode if cfg.mode.startswith("fpg") else "fpg_ops"
    table = method_table(fpg_mode)
    names = args.methods.split(",") if args.methods else list(table)
    bad = [n for n in names if n not in table]
    if bad:
        raise ValueError(f"unknown methods {bad}; choose from {list(table)}")
    results = run_benchmark(cfg, model, schedule, worlds, {n: table[n] for n in names})
    if results["warnings"]:
        for w in results["warnings"]:
            log.warning(w)
    path = _out_path(args, "results.json")
    save_results(path, results)
    if args.plot:
        with open(args.plot, "w") as fh:
            fh.write(benchmark_svg(results["summary"]))
    lines = [f"{n:12s} collisions {s['mean_collisions']} success {s['success_rate']} "
             f"path {s['mean_path_length']}" for n, s in results["summary"].items()]
    doc_out = {k: results[k] for k in ("format", "version", "summary", "comparisons", "warnings")}
    doc_out["results_path"] = path
    _emit(args, doc_out, "\n".join(lines) or "no worlds evaluated")
    return 0


def cmd_bound_check(args, doc):
    from .harness import bound_check
    model, schedule, worlds = _load_model_and_worlds(args)
    cfg = _run_config(args, doc).replace(total_steps=schedule.T)
    reports = bound_check(model, schedule, worlds, cfg)
    held = [r["bound_holds"] for r in reports if r["bound_holds"] is not None]
    out = {"reports": reports, "all_hold": all(held), "checked": len(held)}
    _emit(args, out, f"bound holds on {sum(held)}/{len(held)} rollouts")
    return 0 if all(held) else 1


def cmd_render(args, doc):
    from .dataset import load_dataset
    from .render import world_ppm, world_svg
    world = load_dataset(args.data)[args.index]
    cands, blended = None, None
    if args.sample:
        with open(args.sample) as fh:
            s = json.load(fh)
        cands = [np.asarray(c).reshape(-1, 2) for c in s["candidates"]]
        blended = np.asarray(s["blended"]).reshape(-1, 2)
    path = _out_path(args, f"world{args.index}.svg")
    if path.endswith(".ppm"):
        with open(path, "wb") as fh:
            fh.write(world_ppm(world, cands, blended))
    else:
        with open(path, "w") as fh:
            fh.write(world_svg(world, cands, blended, title=f"world {args.index}"))
    _emit(args, {"path": path}, f"wrote {path}")
    return 0


# ----------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with 'run' and/or 'train' sections")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--print-config", action="store_true", help="print merged config and exit")
    common.add_argument("--out", help="output path (defaults under $FPGNAV_OUTPUT_DIR)")
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--checkpoint")
    run.add_argument("--data")
    run.add_argument("--mode", choices=["none", "raw", "fpg_exact", "fpg_ops"])
    run.add_argument("--gamma", type=float)
    run.add_argument("--candidates", type=int)
    run.add_argument("--tail-length", dest="tail_length", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--solver", choices=["ddpm", "ddim"])
    run.add_argument("--world-count", dest="world_count", type=int)
    run.add_argument("--repeats", type=int)
    run.add_argument("--guidance-point", dest="guidance_point", choices=["state", "mean", "x0"])
    run.add_argument("--no-tg", dest="no_tg", action="store_true", help="disable TSDF guidance")

    p = argparse.ArgumentParser(prog="fpgnav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a Maze2D dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--grid-size", dest="grid_size", type=int, default=64)
    g.add_argument("--density", type=float, default=0.2)
    g.add_argument("--horizon", type=int, default=32)
    g.add_argument("--jsonl", help="also write a JSON-lines debug export")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the denoiser")
    t.add_argument("--data")
    t.add_argument("--metrics", help="CSV metrics log path")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--max-steps", dest="max_steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common, run], help="run guided sampling on one world")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--trace", help="write the per-step trace as JSON")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", parents=[common, run], help="benchmark the compared methods")
    e.add_argument("--methods", help="comma-separated subset of baseline,baseline+TG,FPG,FPG+TG")
    e.add_argument("--plot", help="write an SVG summary plot")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bound-check", parents=[common, run], help="truncation-bound reports")
    b.set_defaults(func=cmd_bound_check)

    r = sub.add_parser("render", parents=[common], help="draw a world (and optionally a sample)")
    r.add_argument("--data", required=True)
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--sample", help="JSON written by 'sample --out'")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = _load_config(args.config)
        if args.print_config:
            print(json.dumps({"run": _run_config(args, doc).to_dict(),
                              "train": _train_config(args, doc).to_dict()}, indent=2, sort_keys=True))
            return 0
        return args.func(args, doc)
    except (ValueError, OSError, IndexError) as exc:
        print(f"fpgnav {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
