import numpy as np
import pytest

from bankfusion import numeric as nm
from bankfusion.training import cross_entropy

GRAD_RTOL = 1e-5


def grad_check(loss_fn, leaves, rel_step=1e-5, floor=1e-6):
    """Max relative error between backward() and central differences over all leaves."""
    loss = loss_fn()
    grads = nm.backward(loss)
    worst = 0.0
    for leaf in leaves:
        analytic = grads[leaf].copy() if leaf in grads else np.zeros(leaf.shape)
        numeric = nm.finite_difference_grad(lambda: loss_fn().item(), leaf, rel_step)
        worst = max(worst, nm.relative_error(analytic, numeric, floor))
    return worst


def model_loss(model, features, labels):
    return lambda: cross_entropy(model(model.bank(features)), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria summary: one line per criterion after the run.

_criteria: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion"):
        return
    key = name.split("_")[1].replace("criterion", "criterion ")
    _criteria.setdefault(key, []).append("PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")

    def order(k):
        return int(k.split()[1])

    for key in sorted(_criteria, key=order):
        outcomes = _criteria[key]
        status = "PASS" if all(o == "PASS" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{key:<12} {status}  ({outcomes.count('PASS')}/{len(outcomes)} checks)")
