import numpy as np
import pytest

from mtkd_rl import tensor_core as tc
from mtkd_rl.distill import TeacherOutputs, teacher_ce


def fd_check(scalar_fn, params, analytic, tol=1e-4, epsilon=1e-5):
    """Assert every analytic gradient agrees with central differences."""
    numeric = tc.finite_diff_grad(scalar_fn, params, epsilon)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, tc.rel_error(a, n))
    assert worst < tol, f"relative error {worst:.3e} >= {tol}"
    return worst


def random_teachers(rng, B=5, C=4, dims=(6, 3), labels=None, scale=1.0):
    feats = [rng.normal(size=(B, d)) * scale for d in dims]
    logits = [rng.normal(size=(B, C)) * scale for _ in dims]
    if labels is None:
        labels = rng.integers(0, C, size=B)
    ce = np.stack([teacher_ce(z, labels) for z in logits], axis=1)
    return TeacherOutputs(feats, logits, ce), labels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
