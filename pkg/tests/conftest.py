import numpy as np
import pytest

from cmgipd.data import center_covariates, from_arrays


def simulate_simple(seed=0, I=3, n=60, p=3, gamma=None, tau=0.0, sigma=1.0):
    """Small random-effects dataset; returns the centered dataset."""
    rng = np.random.default_rng(seed)
    gamma = np.zeros(p) if gamma is None else np.asarray(gamma, float)
    ys, ts, Xs, tr = [], [], [], []
    for i in range(I):
        X = rng.standard_normal((n, p))
        t = rng.permutation(np.arange(n) % 2).astype(float)
        u = tau * rng.standard_normal(p)
        y = (1.0 + 0.5 * rng.standard_normal() + t * (2.0 + 0.5 * rng.standard_normal())
             + X @ np.linspace(0.5, 1.0, p) + t * (X @ (gamma + u))
             + sigma * rng.standard_normal(n))
        ys.append(y); ts.append(t); Xs.append(X); tr += [f"S{i}"] * n
    data = from_arrays(np.concatenate(ys), np.concatenate(ts), np.vstack(Xs), np.array(tr))
    return center_covariates(data)


@pytest.fixture
def small_data():
    return simulate_simple()


ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(num: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES[num] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
