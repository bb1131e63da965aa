"""Evolution of one source's two-qubit state through a branch of sequential parties.

Every 4x4 state here is ordered (branch-party qubit) (x) (Alice qubit), so the
branch measurements act as ``K (x) I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import I2, SX, SZ, check_density, kron, partial_trace_first
from .measurement import kraus_from_povm, party_povm
from .network import BranchConfig, PartySetting, SourceSpec

ZERO_PROB_TOL = 1e-15

PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
SZ_I = kron(SZ, I2)
SX_I = kron(SX, I2)

_PAULI = {"z": SZ, "x": SX}


class DepthExhausted(ValueError):
    """Every party of the branch has already measured."""


class ZeroProbabilityBranch(ArithmeticError):
    """Conditioning on an outcome that occurs with (numerically) zero probability."""

    def __init__(self, probability: float):
        self.probability = probability
        super().__init__(f"outcome probability {probability:.3e} below {ZERO_PROB_TOL}")


@dataclass(frozen=True)
class BranchState:
    rho: np.ndarray
    depth: int = 0
    length: int | None = None  # number of parties in the branch, if known

    def advanced(self, rho: np.ndarray) -> "BranchState":
        return BranchState(rho, self.depth + 1, self.length)


@dataclass(frozen=True)
class CorrelatorVector:
    """Pauli correlators ``Tr[rho (s_u (x) s_v)]``, first index on the branch side."""

    t_zz: float
    t_zx: float
    t_xz: float
    t_xx: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.t_zz, self.t_zx, self.t_xz, self.t_xx)


def source_state(source: SourceSpec | float = 1.0) -> np.ndarray:
    """Isotropic mixture ``v |phi+><phi+| + (1 - v) I/4``."""
    v = source.visibility if isinstance(source, SourceSpec) else float(source)
    return v * np.outer(PHI_PLUS, PHI_PLUS.conj()) + (1.0 - v) * np.eye(4, dtype=complex) / 4


def correlators(rho: np.ndarray) -> CorrelatorVector:
    def t(u, v):
        return float(np.real(np.trace(rho @ kron(_PAULI[u], _PAULI[v]))))

    return CorrelatorVector(t("z", "z"), t("z", "x"), t("x", "z"), t("x", "x"))


def _check_depth(state: BranchState):
    if state.length is not None and state.depth >= state.length:
        raise DepthExhausted(f"branch has {state.length} parties; depth {state.depth} already reached")


def luders_average(state: BranchState, setting: PartySetting) -> BranchState:
    """Outcome- and input-averaged Lueders update ``1/2 sum_{b,y} (K (x) I) rho (K (x) I)``."""
    _check_depth(state)
    rho = state.rho
    out = np.zeros_like(rho)
    for y in (0, 1):
        kp = kraus_from_povm(party_povm(setting, y))
        for b in (0, 1):
            k = kron(kp.op(b), I2)
            out += k @ rho @ k.conj().T
    return state.advanced(0.5 * out)


def luders_closed_form(rho: np.ndarray, setting: PartySetting) -> np.ndarray:
    """Three-term form of the averaged update (dephasing along Z and X)."""
    rz = math.sqrt(1.0 - setting.eta_z**2)
    rx = math.sqrt(1.0 - setting.eta_x**2)
    return (
        0.25 * (2.0 + rz + rx) * rho
        + 0.25 * (1.0 - rz) * (SZ_I @ rho @ SZ_I)
        + 0.25 * (1.0 - rx) * (SX_I @ rho @ SX_I)
    )


def luders_conditional(
    state: BranchState, setting: PartySetting, y: int, b: int
) -> tuple[BranchState, float]:
    """Post-measurement state given input ``y`` and outcome ``b``, with its probability.

    Raises :class:`ZeroProbabilityBranch` rather than normalising by ~0.
    """
    _check_depth(state)
    kp = kraus_from_povm(party_povm(setting, y))
    k = kron(kp.op(b), I2)
    unnorm = k @ state.rho @ k.conj().T
    p = float(np.real(np.trace(unnorm)))
    if p < ZERO_PROB_TOL:
        raise ZeroProbabilityBranch(p)
    return state.advanced(unnorm / p), p


def survival_factor(eta: float) -> float:
    """``(1 + sqrt(1 - eta^2))/2``: how much a conjugate correlator survives."""
    return 0.5 * (1.0 + math.sqrt(max(0.0, 1.0 - eta * eta)))


def correlator_recursion(c: CorrelatorVector, setting: PartySetting) -> CorrelatorVector:
    fx = survival_factor(setting.eta_x)
    fz = survival_factor(setting.eta_z)
    return CorrelatorVector(fx * c.t_zz, fx * c.t_zx, fz * c.t_xz, fz * c.t_xx)


def evolve_source(source: SourceSpec, branch: BranchConfig, depth: int) -> BranchState:
    """Average state arriving at party ``depth + 1`` of the branch."""
    n = len(branch)
    if not 0 <= depth <= n:
        raise ValueError(f"depth {depth} outside 0..{n}")
    state = BranchState(source_state(source), 0, n)
    for setting in branch.parties[:depth]:
        state = luders_average(state, setting)
    return state


def evolve_correlators(source: SourceSpec, branch: BranchConfig, depth: int) -> CorrelatorVector:
    """Arithmetic fast path: correlators of :func:`evolve_source` without matrices."""
    v = source.visibility
    c = CorrelatorVector(v, 0.0, 0.0, v)
    for setting in branch.parties[:depth]:
        c = correlator_recursion(c, setting)
    return c


def alice_marginal(state: BranchState) -> np.ndarray:
    return partial_trace_first(state.rho)


def check_state(state: BranchState) -> BranchState:
    check_density(state.rho, name=f"branch state at depth {state.depth}")
    return state
