import numpy as np
import pytest

from winflownets.config import Config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**train):
    """Point-robot config small enough for sub-second training loops."""
    base = {"warmup_steps": 240, "total_steps": 720, "hidden": (8, 8), "batch_size": 16,
            "retrieval_batch_size": 16, "eval_interval": 60, "eval_episodes": 2,
            "buffer_capacity": 1000, "pretrain_transitions": 200, "pretrain_epochs": 2}
    base.update(train)
    return Config().override(train=base, flow={"M": 8, "K": 4})


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    num = getattr(item.function, "criterion", None)
    if num is None or rep.when != "call" and not (rep.when == "setup" and not rep.passed):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    if status == "FAIL" and not detail:
        lines = str(call.excinfo.value).splitlines() if call.excinfo else []
        detail = lines[0] if lines else ""
    _CRITERIA[num] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")
