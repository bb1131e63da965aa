"""Finite-statistics simulation of the recycled star network.

Random numbers
--------------
Run ``r`` consumes one row of uniforms of width
``1 + sum_k (2*n_k + 1)`` laid out as::

    [x, (y_k1, b_k1, ..., y_kn, b_kn, a_k) for each branch k]

Rows come from blocks of :data:`BLOCK_SIZE` runs; block ``i`` is drawn from a
Philox counter-based generator keyed by ``(seed, i)``. A run's uniforms
therefore depend only on ``(seed, run index)`` and the position inside the row
fixes (branch, depth), so any partition of the run range over workers yields
the same records.

Inputs are bits ``u < 0.5``; outcomes are 0 iff ``u < P(outcome 0)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .bell import BellReport, ChshPair, projective_bound, s_from_ij, _popcount_signs
from .linalg import I2, kron
from .measurement import alice_projector
from .network import NetworkConfig, enumerate_selections, subnetwork, validate
from .sequence import BranchState, ZeroProbabilityBranch, luders_conditional, source_state

BLOCK_SIZE = 8192
DEFAULT_BOOTSTRAP = 1000


class InsufficientData(ValueError):
    """Some input setting of a statistic has no recorded runs."""


# ------------------------------------------------------------------ rng


def row_width(config: NetworkConfig) -> int:
    return 1 + sum(2 * n + 1 for n in config.lengths)


def _block_generator(seed: int, block: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must lie in [0, 2**64)")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | block))


def run_uniforms(seed: int, start: int, stop: int, width: int) -> np.ndarray:
    """Uniform rows for runs ``start..stop-1``, shape ``(stop-start, width)``."""
    rows = []
    first, last = start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE
    for blk in range(first, last + 1):
        u = _block_generator(seed, blk).random((BLOCK_SIZE, width))
        lo = max(start, blk * BLOCK_SIZE) - blk * BLOCK_SIZE
        hi = min(stop, (blk + 1) * BLOCK_SIZE) - blk * BLOCK_SIZE
        rows.append(u[lo:hi])
    return np.concatenate(rows) if rows else np.empty((0, width))


def _fixed_inputs(config: NetworkConfig, runs: np.ndarray) -> np.ndarray:
    """Round-robin input bits (x then every y in row order) for fixed allocation."""
    n_inputs = 1 + sum(config.lengths)
    setting = runs % (2**n_inputs)
    return np.stack([(setting >> (n_inputs - 1 - i)) & 1 for i in range(n_inputs)], axis=1)


# ------------------------------------------------------------------ records


@dataclass(frozen=True)
class ShotRecord:
    x: int
    y: tuple[tuple[int, ...], ...]
    b: tuple[tuple[int, ...], ...]
    a_bits: tuple[int, ...]
    a: int


@dataclass
class ShotBatch:
    """Column-oriented records for a contiguous range of runs."""

    x: np.ndarray
    y: list[np.ndarray]  # per branch, shape (N, n_k)
    b: list[np.ndarray]
    a_bits: np.ndarray  # (N, m)

    @property
    def a(self) -> np.ndarray:
        return np.bitwise_xor.reduce(self.a_bits, axis=1)

    def __len__(self) -> int:
        return len(self.x)

    def record(self, i: int) -> ShotRecord:
        return ShotRecord(
            int(self.x[i]),
            tuple(tuple(int(v) for v in yk[i]) for yk in self.y),
            tuple(tuple(int(v) for v in bk[i]) for bk in self.b),
            tuple(int(v) for v in self.a_bits[i]),
            int(self.a[i]),
        )


def _alice_p0(rho: np.ndarray, theta: float, x: int) -> float:
    p = float(np.real(np.trace(rho @ kron(I2, alice_projector(theta, x, 0)))))
    return min(1.0, max(0.0, p))


def _outcome_p0(state: BranchState, setting, y: int) -> tuple[float, BranchState | None, BranchState | None]:
    """P(b=0) and both conditional states (``None`` for a zero-probability outcome)."""
    try:
        s0, p0 = luders_conditional(state, setting, y, 0)
    except ZeroProbabilityBranch:
        s0, p0 = None, 0.0
    try:
        s1, _ = luders_conditional(state, setting, y, 1)
    except ZeroProbabilityBranch:
        s1 = None
        p0 = 1.0
    return p0, s0, s1


@dataclass(frozen=True)
class BranchTree:
    """Conditional outcome probabilities for every history of one branch.

    History codes are base-4 numbers with digit ``2*y + b`` per party.
    ``p0[j][h, y]`` is P(b=0) for party ``j+1`` after history ``h``;
    ``alice_p0[h, x]`` is P(a_k=0) after the full history.
    """

    p0: tuple[np.ndarray, ...]
    alice_p0: np.ndarray


def branch_tree(config: NetworkConfig, k: int) -> BranchTree:
    branch = config.branches[k]
    n = len(branch)
    level: list[BranchState | None] = [BranchState(source_state(config.sources[k]), 0, n)]
    p0_tables = []
    for j in range(n):
        setting = branch.parties[j]
        table = np.full((4**j, 2), 0.5)
        nxt: list[BranchState | None] = [None] * (4 ** (j + 1))
        for h, state in enumerate(level):
            if state is None:
                continue
            for y in (0, 1):
                p0, s0, s1 = _outcome_p0(state, setting, y)
                table[h, y] = p0
                nxt[4 * h + 2 * y] = s0
                nxt[4 * h + 2 * y + 1] = s1
        p0_tables.append(table)
        level = nxt
    alice = np.full((4**n, 2), 0.5)
    for h, state in enumerate(level):
        if state is not None:
            for x in (0, 1):
                alice[h, x] = _alice_p0(state.rho, config.theta, x)
    return BranchTree(tuple(p0_tables), alice)


def _inputs_and_uniforms(config, seed, start, stop, allocation):
    u = run_uniforms(seed, start, stop, row_width(config))
    bits = (u < 0.5).astype(np.int64)
    if allocation == "fixed":
        fixed = _fixed_inputs(config, np.arange(start, stop, dtype=np.int64))
        cols = [0]
        col = 1
        for n in config.lengths:
            cols.extend(col + 2 * j for j in range(n))
            col += 2 * n + 1
        bits[:, cols] = fixed
    elif allocation != "uniform":
        raise ValueError(f"allocation must be 'uniform' or 'fixed', got {allocation!r}")
    return u, bits


def sample_batch(
    config: NetworkConfig,
    seed: int,
    start: int,
    stop: int,
    trees: Sequence[BranchTree] | None = None,
    allocation: str = "uniform",
) -> ShotBatch:
    """Vectorised simulation of runs ``start..stop-1``."""
    if trees is None:
        trees = [branch_tree(config, k) for k in range(config.m)]
    u, bits = _inputs_and_uniforms(config, seed, start, stop, allocation)
    x = bits[:, 0]
    ys, bs, a_cols = [], [], []
    col = 1
    for k, n in enumerate(config.lengths):
        tree = trees[k]
        h = np.zeros(len(x), dtype=np.int64)
        yk = np.empty((len(x), n), dtype=np.int64)
        bk = np.empty((len(x), n), dtype=np.int64)
        for j in range(n):
            y = bits[:, col + 2 * j]
            p0 = tree.p0[j][h, y]
            b = (u[:, col + 2 * j + 1] >= p0).astype(np.int64)
            yk[:, j], bk[:, j] = y, b
            h = 4 * h + 2 * y + b
        a_k = (u[:, col + 2 * n] >= tree.alice_p0[h, x]).astype(np.int64)
        ys.append(yk)
        bs.append(bk)
        a_cols.append(a_k)
        col += 2 * n + 1
    return ShotBatch(x, ys, bs, np.stack(a_cols, axis=1))


def sample_run(config: NetworkConfig, seed: int, run_index: int, allocation: str = "uniform") -> ShotRecord:
    """One run simulated party by party with explicit conditional Lueders updates.

    Reference path for :func:`sample_batch`: it reads the same uniforms and so
    produces the same record.
    """
    u, bits = _inputs_and_uniforms(config, seed, run_index, run_index + 1, allocation)
    u, bits = u[0], bits[0]
    x = int(bits[0])
    ys, bs, a_bits = [], [], []
    col = 1
    for k, branch in enumerate(config.branches):
        n = len(branch)
        state = BranchState(source_state(config.sources[k]), 0, n)
        yk, bk = [], []
        for j, setting in enumerate(branch.parties):
            y = int(bits[col + 2 * j])
            p0, s0, s1 = _outcome_p0(state, setting, y)
            b = 0 if u[col + 2 * j + 1] < p0 else 1
            state = s0 if b == 0 else s1
            yk.append(y)
            bk.append(b)
        a_bits.append(0 if u[col + 2 * n] < _alice_p0(state.rho, config.theta, x) else 1)
        ys.append(tuple(yk))
        bs.append(tuple(bk))
        col += 2 * n + 1
    a = 0
    for bit in a_bits:
        a ^= bit
    return ShotRecord(x, tuple(ys), tuple(bs), tuple(a_bits), a)


def write_run_log(config: NetworkConfig, batch: ShotBatch, stream: TextIO, header: bool = True) -> None:
    """Whitespace-separated columns: x, every y, every b, every a_k, a (branches 1-based)."""
    if header:
        names = ["x"]
        for k, n in enumerate(config.lengths):
            names += [f"y{k + 1}_{j + 1}" for j in range(n)]
        for k, n in enumerate(config.lengths):
            names += [f"b{k + 1}_{j + 1}" for j in range(n)]
        names += [f"a{k + 1}" for k in range(config.m)] + ["a"]
        stream.write(" ".join(names) + "\n")
    cols = np.column_stack([batch.x, *batch.y, *batch.b, batch.a_bits, batch.a])
    np.savetxt(stream, cols, fmt="%d")


# ------------------------------------------------------------------ counts


@dataclass
class CountTable:
    """Counts ``[x, y, a, b]`` for one selection of parties on a subset of branches."""

    branches: tuple[int, ...]
    selection: tuple[int, ...]
    counts: np.ndarray
    total_shots: int = 0

    def merge(self, other: "CountTable") -> "CountTable":
        if (self.branches, self.selection) != (other.branches, other.selection):
            raise ValueError("cannot merge count tables of different selections")
        return CountTable(self.branches, self.selection, self.counts + other.counts, self.total_shots + other.total_shots)


@dataclass
class BranchCounts:
    """Counts ``[x, y_chain, a_k, b_chain]`` for one branch (Alice unwired)."""

    branch: int
    n: int
    counts: np.ndarray
    total_shots: int = 0

    def merge(self, other: "BranchCounts") -> "BranchCounts":
        return BranchCounts(self.branch, self.n, self.counts + other.counts, self.total_shots + other.total_shots)


def _chain_code(bits: np.ndarray) -> np.ndarray:
    code = np.zeros(bits.shape[0], dtype=np.int64)
    for j in range(bits.shape[1]):
        code = 2 * code + bits[:, j]
    return code


def count_selection(batch: ShotBatch, branches: Sequence[int], selection: Sequence[int]) -> CountTable:
    mm = len(branches)
    y = np.zeros(len(batch), dtype=np.int64)
    b = np.zeros(len(batch), dtype=np.int64)
    a = np.zeros(len(batch), dtype=np.int64)
    for k, s in zip(branches, selection):
        y = 2 * y + batch.y[k][:, s - 1]
        b = 2 * b + batch.b[k][:, s - 1]
        a ^= batch.a_bits[:, k]
    dim = 2**mm
    idx = ((batch.x * dim + y) * 2 + a) * dim + b
    counts = np.bincount(idx, minlength=4 * dim * dim).reshape(2, dim, 2, dim)
    return CountTable(tuple(branches), tuple(selection), counts, len(batch))


def count_branch(batch: ShotBatch, k: int) -> BranchCounts:
    n = batch.y[k].shape[1]
    dim = 2**n
    idx = ((batch.x * dim + _chain_code(batch.y[k])) * 2 + batch.a_bits[:, k]) * dim + _chain_code(batch.b[k])
    counts = np.bincount(idx, minlength=4 * dim * dim).reshape(2, dim, 2, dim)
    return BranchCounts(k, n, counts, len(batch))


# ------------------------------------------------------------------ estimators


def _bits_label(v: int, width: int) -> str:
    return "(" + ",".join(str((v >> (width - 1 - i)) & 1) for i in range(width)) + ")"


def _bootstrap_draws(counts: np.ndarray, resamples: int, rng: np.random.Generator) -> np.ndarray:
    """Nonparametric bootstrap over runs, expressed on the cell counts.

    Resampling N runs with replacement gives multinomial(N, empirical cell
    frequencies) cell counts, which is all the estimators depend on.
    """
    flat = counts.reshape(-1).astype(float)
    n = int(flat.sum())
    return rng.multinomial(n, flat / n, size=resamples).reshape((resamples,) + counts.shape)


def _ij_batch(counts: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plug-in I and J for stacked count tables ``[..., x, y, a, b]``; also returns validity."""
    totals = counts.sum(axis=(-2, -1))
    valid = np.all(totals > 0, axis=(-2, -1))
    safe = np.where(totals > 0, totals, 1)
    p = counts / safe[..., None, None]
    sb = _popcount_signs(m)
    sign_ab = np.array([1.0, -1.0])[:, None] * sb[None, :]
    corr = np.einsum("...xyab,ab->...xy", p, sign_ab)
    i_s = corr[..., 0, :].sum(axis=-1) / 2**m
    j_s = (corr[..., 1, :] * sb).sum(axis=-1) / 2**m
    return i_s, j_s, valid


def _s_batch(i_s, j_s, m):
    return np.abs(i_s) ** (1.0 / m) + np.abs(j_s) ** (1.0 / m)


def _std(values: np.ndarray, warn_list: list[str], what: str) -> float:
    if len(values) < 2:
        msg = f"{what}: degenerate bootstrap ({len(values)} usable resample), std_error set to 0"
        warn_list.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return 0.0
    return float(np.std(values, ddof=1))


def estimate_bell(
    counts: CountTable,
    bootstrap_resamples: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> BellReport:
    """Plug-in I, J, S from counts with a bootstrap standard error on S."""
    m = len(counts.branches)
    totals = counts.counts.sum(axis=(2, 3))
    empty = np.argwhere(totals == 0)
    if len(empty):
        x, y = empty[0]
        raise InsufficientData(
            f"selection {counts.selection} on branches {counts.branches}: "
            f"no runs with x={x}, y={_bits_label(int(y), m)}"
        )
    i_s, j_s, _ = _ij_batch(counts.counts.astype(float), m)
    s_hat = s_from_ij(float(i_s), float(j_s), m)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *counts.branches, *counts.selection])))
    draws = _bootstrap_draws(counts.counts, bootstrap_resamples, rng)
    bi, bj, valid = _ij_batch(draws.astype(float), m)
    notes: list[str] = []
    if not valid.all():
        notes.append(f"{int((~valid).sum())} bootstrap resamples with an empty input slice dropped")
    err = _std(_s_batch(bi[valid], bj[valid], m), notes, "S")
    return BellReport(
        float(i_s), float(j_s), s_hat, counts.selection, "sampled", err, counts.branches, tuple(notes)
    )


def _chsh_batch(counts: np.ndarray, n: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """CHSH of party ``j`` (1-based) from stacked branch counts ``[..., x, y, a, b]``."""
    c = counts.reshape(counts.shape[:-4] + (2,) + (2,) * n + (2,) + (2,) * n)
    lead = len(counts.shape) - 4
    # keep x, y_j, a, b_j
    y_axes = [lead + 1 + i for i in range(n) if i != j - 1]
    b_axes = [lead + 2 + n + i for i in range(n) if i != j - 1]
    c = c.sum(axis=tuple(y_axes + b_axes))  # [..., x, y_j, a, b_j]
    totals = c.sum(axis=(-2, -1))
    valid = np.all(totals > 0, axis=(-2, -1))
    safe = np.where(totals > 0, totals, 1)
    p = c / safe[..., None, None]
    sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
    e = np.einsum("...xyab,ab->...xy", p, sign)
    xy_sign = np.array([[1.0, 1.0], [1.0, -1.0]])
    return np.einsum("...xy,xy->...", e, xy_sign), valid


def estimate_chsh(counts: BranchCounts, bootstrap_resamples: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> ChshPair:
    """Sequential CHSH pair of the first two parties, bootstrapped jointly."""
    if counts.n < 2:
        raise ValueError(f"branch {counts.branch} has fewer than two parties")
    c = counts.counts.astype(float)
    sliced = c.reshape((2,) + (2,) * counts.n + (2,) + (2,) * counts.n)
    for j in (1, 2):
        n = counts.n
        others = tuple(1 + i for i in range(n) if i != j - 1) + tuple(2 + n + i for i in range(n) if i != j - 1)
        tot = sliced.sum(axis=others).sum(axis=(-2, -1))
        if np.any(tot == 0):
            x, y = np.argwhere(tot == 0)[0]
            raise InsufficientData(f"branch {counts.branch} party {j}: no runs with x={x}, y={y}")
    c1 = float(_chsh_batch(c, counts.n, 1)[0])
    c2 = float(_chsh_batch(c, counts.n, 2)[0])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7919, counts.branch])))
    draws = _bootstrap_draws(counts.counts, bootstrap_resamples, rng).astype(float)
    b1, v1 = _chsh_batch(draws, counts.n, 1)
    b2, v2 = _chsh_batch(draws, counts.n, 2)
    ok = v1 & v2
    notes: list[str] = []
    e1 = _std(b1[ok], notes, "CHSH1")
    e2 = _std(b2[ok], notes, "CHSH2")
    lo, hi = 2.0, 2.0 * math.sqrt(10.0) - 4.0
    margin = margin_err = None
    if lo <= c1 <= hi:
        margin = c2 - projective_bound(c1)
        margins = b2[ok] - (math.sqrt(10.0) - b1[ok] / 2.0)
        margin_err = _std(margins, notes, "margin")
    return ChshPair(c1, c2, counts.branch, e1, e2, margin, margin_err)


# ------------------------------------------------------------------ experiment


@dataclass
class ExperimentReport:
    selections: list[BellReport]
    bilocal: list[BellReport]
    chsh: list[ChshPair]
    total_shots: int
    warnings: list[str] = field(default_factory=list)


def bilocal_selections(config: NetworkConfig) -> list[tuple[tuple[int, int], tuple[int, ...]]]:
    """(branch pair, selection) for every pair of branches, only when m >= 3."""
    if config.m < 3:
        return []
    out = []
    for pair in itertools.combinations(range(config.m), 2):
        sub = subnetwork(config, pair)
        out.extend((pair, sel) for sel in enumerate_selections(sub))
    return out


def _block_counts(config, seed, start, stop, trees, allocation, plan):
    batch = sample_batch(config, seed, start, stop, trees, allocation)
    sel_counts = [count_selection(batch, br, sel) for br, sel in plan]
    branch_counts = [count_branch(batch, k) for k in range(config.m)]
    return sel_counts, branch_counts


def simulate_counts(
    config: NetworkConfig,
    shots: int,
    seed: int,
    plan: Sequence[tuple[tuple[int, ...], tuple[int, ...]]],
    threads: int = 1,
    allocation: str = "uniform",
) -> tuple[list[CountTable], list[BranchCounts]]:
    """Simulate ``shots`` runs in blocks and accumulate counts for each planned selection."""
    trees = [branch_tree(config, k) for k in range(config.m)]
    bounds = [(s, min(s + BLOCK_SIZE, shots)) for s in range(0, shots, BLOCK_SIZE)]

    def work(b):
        return _block_counts(config, seed, b[0], b[1], trees, allocation, plan)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    sel_tot, br_tot = parts[0]
    for sc, bc in parts[1:]:
        sel_tot = [a.merge(b) for a, b in zip(sel_tot, sc)]
        br_tot = [a.merge(b) for a, b in zip(br_tot, bc)]
    return sel_tot, br_tot


def experiment_report(
    config: NetworkConfig,
    shots: int,
    seed: int,
    threads: int = 1,
    bootstrap_resamples: int = DEFAULT_BOOTSTRAP,
    allocation: str = "uniform",
    skip_insufficient: bool = False,
) -> ExperimentReport:
    """Simulate once and estimate every tri-local, bi-local and CHSH quantity from the same runs.

    With ``skip_insufficient`` a statistic lacking data for some input setting
    is reported with NaN values and a warning instead of raising.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    problems = validate(config)
    if problems:
        raise ValueError("; ".join(problems))
    full = tuple(range(config.m))
    plan = [(full, sel) for sel in enumerate_selections(config)]
    n_tri = len(plan)
    plan += [(pair, sel) for pair, sel in bilocal_selections(config)]
    sel_counts, br_counts = simulate_counts(config, shots, seed, plan, threads, allocation)
    notes: list[str] = []

    def guarded(fn, fallback):
        try:
            return fn()
        except InsufficientData as exc:
            if not skip_insufficient:
                raise
            notes.append(str(exc))
            warnings.warn(str(exc), RuntimeWarning, stacklevel=3)
            return fallback

    reports = []
    for ct in sel_counts:
        nan = BellReport(math.nan, math.nan, math.nan, ct.selection, "sampled", math.nan, ct.branches, ("insufficient data",))
        reports.append(guarded(lambda ct=ct: estimate_bell(ct, bootstrap_resamples, seed), nan))
    chsh = []
    for bc in br_counts:
        if bc.n < 2:
            continue
        nan = ChshPair(math.nan, math.nan, bc.branch)
        chsh.append(guarded(lambda bc=bc: estimate_chsh(bc, bootstrap_resamples, seed), nan))
    return ExperimentReport(reports[:n_tri], reports[n_tri:], chsh, shots, notes)
