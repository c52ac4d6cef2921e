import numpy as np
import pytest

from fpgnav.denoiser import Denoiser
from fpgnav.schedule import build_cosine_schedule


def small_model(seed=0, cond_dim=3, action_dim=4, hidden=12, latent=6, temb=4, activation="tanh",
                scale=1.0):
    m = Denoiser(cond_dim, action_dim, hidden, latent, temb, activation, seed=seed)
    if scale != 1.0:
        for k in ("A1", "A2", "W"):
            m.params[k] = m.params[k] * scale
        m.refresh()
    return m


@pytest.fixture
def schedule10():
    return build_cosine_schedule(10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ----------------------------------------------------------------------------- acceptance summary

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}" + (f" ({detail})" if detail else ""))
