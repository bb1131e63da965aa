import math

import numpy as np
import pytest
from hypothesis import settings

from starbell.network import BranchConfig, NetworkConfig, PartySetting, SourceSpec

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def random_config(rng: np.random.Generator, max_m: int = 3, max_n: int = 3, visibility: float | None = 1.0) -> NetworkConfig:
    m = int(rng.integers(1, max_m + 1))
    branches = []
    for _ in range(m):
        n = int(rng.integers(1, max_n + 1))
        branches.append(BranchConfig(tuple(PartySetting(*rng.uniform(0, 1, 2)) for _ in range(n))))
    vs = [visibility if visibility is not None else rng.uniform(0, 1) for _ in range(m)]
    return NetworkConfig(tuple(branches), tuple(SourceSpec(float(v)) for v in vs), float(rng.uniform(0, math.pi / 2)))


def random_density(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
