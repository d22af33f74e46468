import numpy as np
import pytest

from fairflow.assignment import SolverConfig
from fairflow.network import TravelTimeFn, build_pigou, load_sioux_falls, parallel_network
from fairflow.pricing import UserClass
from fairflow.sweep import dense_sweep


@pytest.fixture(scope="session")
def pigou():
    return build_pigou()


@pytest.fixture(scope="session")
def sioux_falls():
    return load_sioux_falls()


@pytest.fixture(scope="session")
def sf_sweep(sioux_falls):
    """Sioux Falls at step 0.01, default solver; shared by the slow tests."""
    import time
    t0 = time.perf_counter()
    recs = dense_sweep(sioux_falls, 0.01, SolverConfig(), jobs=1)
    return recs, time.perf_counter() - t0


def small_parallel_instances():
    """Parallel networks with two or three edges used by the oracle comparisons."""
    return {
        "pigou": build_pigou(),
        "pigou-m2": build_pigou(2),
        "pigou-m4": build_pigou(4),
        "pigou-m4-eps": build_pigou(4, 1e-6),
        "pigou-eps0.5-d2": build_pigou(1, 0.5, 2.0),
        "affine3": parallel_network([TravelTimeFn.affine(1.0, 1.0), TravelTimeFn.affine(2.0, 0.5),
                                     TravelTimeFn.affine(0.5, 3.0)], 2.0, "affine3"),
        "bpr3": parallel_network([TravelTimeFn.from_bpr(1.0, 1.0), TravelTimeFn.from_bpr(1.5, 2.0),
                                  TravelTimeFn.from_bpr(0.8, 0.5)], 1.5, "bpr3"),
    }


def partitions(net):
    """Three class partitions applied to every commodity."""
    K = range(net.num_commodities)
    return {
        "single": [UserClass(k, 1.0, 1.0) for k in K],
        "two": [UserClass(k, v, 0.5) for k in K for v in (1.0, 2.0)],
        "three": [UserClass(k, v, s) for k in K for v, s in ((0.5, 0.2), (1.0, 0.5), (3.0, 0.3))],
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ----------------------------------------------------------------------------
# acceptance criteria: one PASS/FAIL line each in the terminal summary

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a criterion verdict, then assert it."""
    n = request.node.get_closest_marker("criterion").args[0]
    _CRITERIA[n] = (False, "raised before reporting")

    def record(ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {detail}")
