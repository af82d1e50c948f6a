import time

import pytest

from mfnet.model import HeadMode
from mfnet.objectives import snr_db
from mfnet.pipeline import enhance, overfit_toy

TOY_STEPS = 500


@pytest.fixture(scope="session")
def toy_runs():
    """Each head overfit once on the 1 s toy pair; shared by pipeline and acceptance tests."""
    runs = {}
    t0 = time.perf_counter()
    for head in HeadMode:
        res, noisy, clean = overfit_toy(head, TOY_STEPS, seed=0)
        out = enhance(noisy, res.model).waveform
        runs[head] = {
            "result": res,
            "loss_ratio": res.final_loss / res.initial_loss,
            "snr_gain": snr_db(clean, out) - snr_db(clean, noisy),
        }
    runs["seconds"] = time.perf_counter() - t0
    return runs


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def emit(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
