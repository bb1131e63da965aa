"""Star-network Bell quantities: exact distributions, I/J/S, closed form, CHSH pairs.

A :class:`JointDistribution` table is indexed ``table[x, y, a, b]`` where ``y``
and ``b`` are m-bit integers with branch 0 in the most significant bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import SX, SZ, kron, kron_all
from .measurement import alice_observable, alice_projector, central_effect, party_povm
from .network import NetworkConfig, PartySelection, validate_selection
from .sequence import evolve_source

SQRT2 = math.sqrt(2.0)
SQRT10 = math.sqrt(10.0)
PROJECTIVE_RANGE = (2.0, 2.0 * SQRT10 - 4.0)
DETERMINISTIC_MAX_M = 3


@dataclass(frozen=True)
class JointDistribution:
    m: int
    table: np.ndarray  # shape (2, 2**m, 2, 2**m)

    def slice_sums(self) -> np.ndarray:
        return self.table.sum(axis=(2, 3))

    def marginal_a(self) -> np.ndarray:
        """``p(a|x)`` averaged over the branch inputs, shape (2, 2)."""
        return self.table.sum(axis=3).mean(axis=1)


@dataclass(frozen=True)
class BellReport:
    i_s: float
    j_s: float
    s_value: float
    selection: tuple
    method: str  # "exact" | "closed_form" | "sampled"
    std_error: float | None = None
    branches: tuple[int, ...] | None = None
    warnings: tuple[str, ...] = field(default=())

    @property
    def label(self) -> str:
        from .network import format_selection

        if self.branches is None:
            return format_selection(self.selection)
        m_total = max(self.branches) + 1 if self.branches else 0
        full: list[int | None] = [None] * max(m_total, len(self.selection))
        for k, s in zip(self.branches, self.selection):
            full[k] = s
        return format_selection(full)


@dataclass(frozen=True)
class ChshPair:
    chsh1: float
    chsh2: float
    branch: int
    chsh1_err: float | None = None
    chsh2_err: float | None = None
    margin: float | None = None  # chsh2 - projective_bound(chsh1)
    margin_err: float | None = None


def _popcount_signs(m: int) -> np.ndarray:
    """(-1)**popcount(i) for i in range(2**m)."""
    idx = np.arange(2**m)
    bits = np.array([(idx >> k) & 1 for k in range(m)]).sum(axis=0) if m else np.zeros(1, int)
    return np.where(bits % 2 == 0, 1.0, -1.0)


def _letters(start: int, count: int) -> str:
    alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return alphabet[start : start + count]


def joint_distribution(config: NetworkConfig, sel: Sequence[int]) -> JointDistribution:
    """Born-rule probabilities ``p(a, b_s | x, y_s)`` on the recycled product state.

    The total state is the Kronecker product of the per-source averaged states
    (each ordered branch-party (x) Alice). Each cell is ``Tr[E chi]`` contracted
    over the full ``4**m``-dimensional space, then Alice's per-branch bits are
    parity-wired.
    """
    problems = validate_selection(config, sel)
    if problems:
        raise ValueError("; ".join(problems))
    m = config.m
    rhos = [
        evolve_source(config.sources[k], config.branches[k], sel[k] - 1).rho for k in range(m)
    ]
    chi = kron_all(*rhos).reshape((4,) * (2 * m))

    # local[k][x, y, a_k, b, i, j] = (B_{b|y} (x) Pi_{a_k|x})[i, j]
    local = []
    for k in range(m):
        setting = config.branches[k].parties[sel[k] - 1]
        arr = np.empty((2, 2, 2, 2, 4, 4), dtype=complex)
        for x, y, ak, b in itertools.product((0, 1), repeat=4):
            arr[x, y, ak, b] = kron(party_povm(setting, y).effect(b), alice_projector(config.theta, x, ak))
        local.append(arr)

    rows = _letters(0, m)
    cols = _letters(m, m)
    ys = _letters(2 * m, m)
    As = _letters(3 * m, m)
    bs = _letters(4 * m, m)
    terms = [cols + rows]  # chi[j..., i...]
    for k in range(m):
        terms.append(ys[k] + As[k] + bs[k] + rows[k] + cols[k])
    spec = ",".join(terms) + "->" + ys + As + bs

    table = np.zeros((2, 2**m, 2, 2**m))
    parity = _popcount_signs(m) < 0  # True where popcount(a_vec) is odd
    for x in (0, 1):
        full = np.einsum(spec, chi, *(loc[x] for loc in local), optimize=True)
        full = np.real(full).reshape(2**m, 2**m, 2**m)  # (y, a_vec, b)
        table[x, :, 0, :] = full[:, ~parity, :].sum(axis=1)
        table[x, :, 1, :] = full[:, parity, :].sum(axis=1)
    return JointDistribution(m, table)


def born_probability(config: NetworkConfig, sel: Sequence[int], x: int, y: int, a: int, b: int) -> float:
    """Single cell via the monolithic effect ``(x)_k B_k (x) A_{a|x}``.

    Slow reference path: Alice's qubits are permuted to the right of all branch
    qubits so the wired central effect can be applied as one matrix.
    """
    m = config.m
    ybits = [(y >> (m - 1 - k)) & 1 for k in range(m)]
    bbits = [(b >> (m - 1 - k)) & 1 for k in range(m)]
    rhos = [evolve_source(config.sources[k], config.branches[k], sel[k] - 1).rho for k in range(m)]
    chi = kron_all(*rhos)
    # qubit order in chi: B0 A0 B1 A1 ...; target order: B0 B1 ... A0 A1 ...
    perm = [2 * k for k in range(m)] + [2 * k + 1 for k in range(m)]
    t = chi.reshape((2,) * (4 * m))
    t = t.transpose(perm + [2 * m + p for p in perm])
    chi_perm = t.reshape(4**m, 4**m)
    effect_b = kron_all(
        *(party_povm(config.branches[k].parties[sel[k] - 1], ybits[k]).effect(bbits[k]) for k in range(m))
    )
    effect = kron_all(effect_b, central_effect(config, x, a))
    return float(np.real(np.trace(effect @ chi_perm)))


def _real_root(v: float, m: int) -> float:
    return abs(v) ** (1.0 / m)


def bell_quantities(table: np.ndarray, m: int) -> tuple[float, float]:
    """``(I, J)`` from a probability table ``[x, y, a, b]``."""
    sb = _popcount_signs(m)
    sa = np.array([1.0, -1.0])
    sign_ab = sa[:, None] * sb[None, :]
    corr = np.einsum("yab,ab->y", table[0], sign_ab)
    i_s = corr.sum() / 2**m
    corr1 = np.einsum("yab,ab->y", table[1], sign_ab)
    j_s = (corr1 * sb).sum() / 2**m  # sb doubles as (-1)**popcount(y)
    return float(i_s), float(j_s)


def s_from_ij(i_s: float, j_s: float, m: int) -> float:
    return _real_root(i_s, m) + _real_root(j_s, m)


def bell_value(dist: JointDistribution, selection: tuple = (), method: str = "exact") -> BellReport:
    i_s, j_s = bell_quantities(dist.table, dist.m)
    return BellReport(i_s, j_s, s_from_ij(i_s, j_s, dist.m), tuple(selection), method)


def _f(eta: float) -> float:
    return 1.0 + math.sqrt(max(0.0, 1.0 - eta * eta))


def branch_term(config: NetworkConfig, k: int, s_k: int) -> float:
    """Per-branch factor ``2**(1-s) (eta_z cos(t) prod f_x + eta_x sin(t) prod f_z) * v``."""
    parties = config.branches[k].parties
    fx = math.prod(_f(p.eta_x) for p in parties[: s_k - 1])
    fz = math.prod(_f(p.eta_z) for p in parties[: s_k - 1])
    cur = parties[s_k - 1]
    inner = cur.eta_z * math.cos(config.theta) * fx + cur.eta_x * math.sin(config.theta) * fz
    return 2.0 ** (1 - s_k) * inner * config.sources[k].visibility


def closed_form_s(config: NetworkConfig, sel: Sequence[int]) -> float:
    """Analytic S for the selection; sources with visibility ``v`` scale it by ``prod v**(1/m)``."""
    m = config.m
    return math.prod(_real_root(branch_term(config, k, sel[k]), m) for k in range(m))


def closed_form_report(config: NetworkConfig, sel: Sequence[int]) -> BellReport:
    m = config.m
    prod = math.prod(branch_term(config, k, sel[k]) for k in range(m))
    i_s = prod / 2**m
    return BellReport(i_s, i_s, closed_form_s(config, sel), tuple(sel), "closed_form")


def chsh_values(config: NetworkConfig, branch: int) -> list[float]:
    """Sequential CHSH value of every party in the branch against Alice's sharp observables."""
    b = config.branches[branch]
    out = []
    for j, setting in enumerate(b.parties):
        rho = evolve_source(config.sources[branch], b, j).rho
        obs_b = (setting.eta_z * SZ, setting.eta_x * SX)
        total = 0.0
        for x, y in itertools.product((0, 1), repeat=2):
            corr = np.real(np.trace(rho @ kron(obs_b[y], alice_observable(config.theta, x))))
            total += (-1) ** (x * y) * corr
        out.append(float(total))
    return out


def projective_bound(chsh1: float) -> float:
    """Largest second CHSH value reachable with projective strategies, given the first."""
    lo, hi = PROJECTIVE_RANGE
    if not lo - 1e-12 <= chsh1 <= hi + 1e-12:
        raise ValueError(f"chsh1={chsh1} outside the valid interval [2, 2*sqrt(10)-4] = [{lo}, {hi:.6f}]")
    return SQRT10 - chsh1 / 2.0


def chsh_pair(config: NetworkConfig, branch: int) -> ChshPair:
    if len(config.branches[branch]) < 2:
        raise ValueError(f"branch {branch} has fewer than two parties")
    c1, c2 = chsh_values(config, branch)[:2]
    try:
        margin = c2 - projective_bound(c1)
    except ValueError:
        margin = None
    return ChshPair(c1, c2, branch, margin=margin)


def deterministic_table(a_fn: Sequence[int], b_fns: Sequence[Sequence[int]]) -> np.ndarray:
    """Distribution of a deterministic local strategy: ``a = a_fn[x]``, ``b_k = b_fns[k][y_k]``."""
    m = len(b_fns)
    table = np.zeros((2, 2**m, 2, 2**m))
    for x in (0, 1):
        for y in range(2**m):
            b = 0
            for k in range(m):
                yk = (y >> (m - 1 - k)) & 1
                b = (b << 1) | b_fns[k][yk]
            table[x, y, a_fn[x], b] = 1.0
    return table


def deterministic_max_s(m: int, sel_depths: PartySelection | None = None) -> float:
    """Largest S over all deterministic network-local strategies.

    With deterministic responses the hidden variables are fixed, so the central
    outcome depends only on ``x`` and each branch outcome only on its own input.
    The selected depths do not change the local strategy space. This checks the
    bound at the deterministic extreme points; S is not linear in the
    distribution, so it is not a proof of the inequality.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if m > DETERMINISTIC_MAX_M:
        raise ValueError(f"exhaustive search limited to m <= {DETERMINISTIC_MAX_M}, got {m}")
    responses = list(itertools.product((0, 1), repeat=2))  # 4 functions of one bit
    best = -math.inf
    for a_fn in responses:
        for b_fns in itertools.product(responses, repeat=m):
            i_s, j_s = bell_quantities(deterministic_table(a_fn, b_fns), m)
            best = max(best, s_from_ij(i_s, j_s, m))
    return best
