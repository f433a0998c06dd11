from functools import lru_cache

import pytest
from hypothesis import HealthCheck, settings

from stokes_iga.assembly import ProblemConfig, assemble_system
from stokes_iga.cases import CASES
from stokes_iga.spaces import build_pair

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

_ACCEPTANCE: list[str] = []


@lru_cache(maxsize=None)
def stokes_system(case: str, k_prime: int, n_elem: int, nu: float = 1.0, c_pen: float | None = None):
    """Assembled system, cached across tests (systems are treated as read-only)."""
    c = CASES[case](nu)
    cfg = ProblemConfig(nu=nu, c_pen=c_pen, dirichlet=c.dirichlet, body_force=c.body_force)
    return assemble_system(build_pair(k_prime, n_elem), c.gmap, cfg)


@pytest.fixture
def system_factory():
    return stokes_system


@pytest.fixture
def acceptance_log():
    def log(criterion: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
