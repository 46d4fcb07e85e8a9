import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gsmppi.cbf import safe_set_membership
from gsmppi.scenarios import paper_scenario

settings.register_profile(
    "repo", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def scenario():
    return paper_scenario()


def random_states(sc, n, rng, safe=True, nu=(-1.0, 9.0)):
    """Uniform states inside the wall's bounding box; optionally only certified-safe ones."""
    w = sc.wall
    out = []
    while len(out) < n:
        X = np.column_stack([
            rng.uniform(-w.c / w.ax, w.c / w.ax, 4 * n),
            rng.uniform(-w.c / w.ay, w.c / w.ay, 4 * n),
            rng.uniform(*nu, 4 * n),
            rng.uniform(-np.pi, np.pi, 4 * n),
        ])
        if safe:
            inside, _, _ = safe_set_membership(sc.cbf, X)
            X = X[inside]
        out.extend(X)
    return np.array(out[:n])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
