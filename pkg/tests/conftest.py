"""Shared sweeps for the acceptance run and the per-criterion result table."""

import os
import time

import pytest

from qdbayes.bayesest import GaussianPrior
from qdbayes.optimizer import OptimizerConfig
from qdbayes.spinbath import make_bath
from qdbayes.sweeper import SweepContext, default_time_grid, time_sweep

RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one criterion's outcome; printed at the end of the session."""
    RESULTS[number] = (bool(ok), detail)
    print(f"CRITERION {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"CRITERION {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


class Sweep:
    def __init__(self, N, prior, records, seconds, ctx):
        self.N = N
        self.prior = prior
        self.records = records
        self.seconds = seconds
        self.ctx = ctx


def run_sweep(N, prior, t_grid=None, restarts=None):
    bath = make_bath()
    cfg = OptimizerConfig.for_dots(N) if restarts is None else OptimizerConfig(restarts=restarts)
    t_grid = default_time_grid() if t_grid is None else t_grid
    start = time.perf_counter()
    recs = time_sweep(N, bath, prior, t_grid, cfg, workers=workers())
    return Sweep(N, prior, recs, time.perf_counter() - start, SweepContext(N, bath, prior, cfg))


REFERENCE_PRIOR = GaussianPrior.from_mT(7, 4)


@pytest.fixture(scope="session")
def bath():
    return make_bath()


@pytest.fixture(scope="session")
def sweep_n1():
    return run_sweep(1, REFERENCE_PRIOR)


@pytest.fixture(scope="session")
def sweep_n2():
    return run_sweep(2, REFERENCE_PRIOR)


@pytest.fixture(scope="session")
def sweep_n3():
    return run_sweep(3, REFERENCE_PRIOR)


@pytest.fixture(scope="session")
def sweep_n4():
    return run_sweep(4, REFERENCE_PRIOR)
