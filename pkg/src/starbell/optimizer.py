"""Search for sharpness values and Alice's angle that keep every selection violating.

The objective is the closed-form S, either its minimum over all selections
(``worst_case_s``) or its mean (``average_s``). Search is coordinate ascent
with golden-section line searches, restarted from ``budget`` random points.
The ``min`` makes the surface kinked exactly where the optimum sits (several
selections tie), so each start is first run on a soft-min surrogate whose
temperature is lowered step by step down to the exact objective.

Symmetry modes
--------------
``full``       one sharpness for every party and both observables
``per-depth``  ``eta_{k,j} = eta_j`` and ``eta^Z = eta^X``
``branch``     ``eta_{k,j} = eta_j`` with independent ``eta^Z_j``, ``eta^X_j``
``none``       every ``eta^Z_{k,j}``, ``eta^X_{k,j}`` free
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bell import closed_form_s
from .network import BranchConfig, NetworkConfig, PartySetting, SourceSpec, enumerate_selections

SYMMETRIES = ("none", "per-depth", "branch", "full")
OBJECTIVES = ("worst_case_s", "average_s")
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# soft-min temperatures, ending on the exact (non-smooth) objective
TEMPERATURES = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0)


@dataclass(frozen=True)
class OptimizationProblem:
    m: int
    n: int | tuple[int, ...]
    symmetry: str = "per-depth"
    objective: str = "worst_case_s"
    visibility: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.symmetry not in SYMMETRIES:
            raise ValueError(f"symmetry must be one of {SYMMETRIES}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        lengths = self.lengths
        if len(lengths) != self.m or min(lengths) < 1:
            raise ValueError(f"need {self.m} positive branch lengths, got {lengths}")

    @property
    def lengths(self) -> tuple[int, ...]:
        if isinstance(self.n, int):
            return (self.n,) * self.m
        return tuple(self.n)

    @property
    def exploratory(self) -> bool:
        """No published reference values exist for asymmetric or ragged problems."""
        return self.symmetry == "none" or len(set(self.lengths)) > 1

    @property
    def dimension(self) -> int:
        nmax = max(self.lengths)
        return {
            "full": 1,
            "per-depth": nmax,
            "branch": 2 * nmax,
            "none": 2 * sum(self.lengths),
        }[self.symmetry] + 1

    def bounds(self) -> np.ndarray:
        b = np.zeros((self.dimension, 2))
        b[:, 1] = 1.0
        b[-1, 1] = math.pi / 2
        return b

    def to_config(self, params: Sequence[float]) -> NetworkConfig:
        p = [float(v) for v in params]
        theta = p[-1]
        nmax = max(self.lengths)
        branches = []
        offset = 0
        for n in self.lengths:
            parties = []
            for j in range(n):
                if self.symmetry == "full":
                    ez = ex = p[0]
                elif self.symmetry == "per-depth":
                    ez = ex = p[j]
                elif self.symmetry == "branch":
                    ez, ex = p[j], p[nmax + j]
                else:
                    ez, ex = p[offset + 2 * j], p[offset + 2 * j + 1]
                parties.append(PartySetting(ez, ex))
            offset += 2 * n
            branches.append(BranchConfig(tuple(parties)))
        return NetworkConfig(tuple(branches), tuple(SourceSpec(self.visibility) for _ in branches), theta)


@dataclass
class OptimizationResult:
    best_params: np.ndarray
    best_config: NetworkConfig
    best_objective: float
    trace: list[tuple[int, float]] = field(default_factory=list)
    exploratory: bool = False


def worst_case_objective(config: NetworkConfig) -> float:
    """Minimum closed-form S over every selection of parties."""
    return min(closed_form_s(config, sel) for sel in enumerate_selections(config))


def average_objective(config: NetworkConfig) -> float:
    sels = enumerate_selections(config)
    return sum(closed_form_s(config, sel) for sel in sels) / len(sels)


def objective_value(config: NetworkConfig, objective: str) -> float:
    return worst_case_objective(config) if objective == "worst_case_s" else average_objective(config)


def _unpack(problem: OptimizationProblem, params) -> tuple[list[list[float]], list[list[float]], float]:
    """Per-branch ``eta_z`` and ``eta_x`` lists plus theta, without building a config."""
    p = list(params)
    nmax = max(problem.lengths)
    ez, ex = [], []
    offset = 0
    for n in problem.lengths:
        if problem.symmetry == "full":
            z = x = [p[0]] * n
        elif problem.symmetry == "per-depth":
            z = x = p[:n]
        elif problem.symmetry == "branch":
            z, x = p[:n], p[nmax : nmax + n]
        else:
            z, x = p[offset : offset + 2 * n : 2], p[offset + 1 : offset + 2 * n : 2]
        offset += 2 * n
        ez.append(z)
        ex.append(x)
    return ez, ex, p[-1]


def _softmin(values: list[float], tau: float) -> float:
    lo = min(values)
    if tau <= 0.0:
        return lo
    return lo - tau * math.log(sum(math.exp(-(v - lo) / tau) for v in values))


def _fast_objective(problem: OptimizationProblem, tau: float = 0.0) -> Callable[[np.ndarray], float]:
    """Closed-form objective straight from the parameter vector.

    S(sel) = prod_k term_k(s_k)**(1/m) factorises over branches, so the min
    (and the mean) over the Cartesian product of selections factorise too.
    ``tau > 0`` replaces each per-branch min by a soft-min of that temperature.
    """
    m = problem.m
    v = problem.visibility
    worst = problem.objective == "worst_case_s"

    def f(params):
        ez, ex, theta = _unpack(problem, params)
        c, s = math.cos(theta), math.sin(theta)
        total = 1.0
        for z, x in zip(ez, ex):
            fz = fx = 1.0
            roots = []
            for j in range(len(z)):
                term = 2.0 ** (-j) * (z[j] * c * fx + x[j] * s * fz) * v
                roots.append(abs(term) ** (1.0 / m))
                fz *= 1.0 + math.sqrt(max(0.0, 1.0 - z[j] * z[j]))
                fx *= 1.0 + math.sqrt(max(0.0, 1.0 - x[j] * x[j]))
            total *= _softmin(roots, tau) if worst else sum(roots) / len(roots)
        return total

    return f


def golden_section_max(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-11, max_iter: int = 200
) -> tuple[float, float]:
    """Maximise ``f`` on ``[lo, hi]``; endpoints are checked and ties go to ``hi``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc > fd else (d, fd)
    f_lo, f_hi = f(lo), f(hi)
    if f_hi >= fx:
        return hi, f_hi
    if f_lo > fx:
        return lo, f_lo
    return x, fx


def _line_search(f, x, direction, bounds):
    """Golden-section search of ``t -> f(x + t*direction)`` inside the box."""
    t_lo, t_hi = -math.inf, math.inf
    for xi, di, (lo, hi) in zip(x, direction, bounds):
        if abs(di) < 1e-15:
            continue
        a, b = (lo - xi) / di, (hi - xi) / di
        t_lo, t_hi = max(t_lo, min(a, b)), min(t_hi, max(a, b))
    if not t_hi > t_lo:
        return x, f(x)
    t, ft = golden_section_max(lambda t: f(np.clip(x + t * direction, bounds[:, 0], bounds[:, 1])), t_lo, t_hi)
    return np.clip(x + t * direction, bounds[:, 0], bounds[:, 1]), ft


def coordinate_ascent(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    bounds: np.ndarray,
    max_sweeps: int = 200,
    tol: float = 1e-13,
) -> tuple[np.ndarray, float, list[float]]:
    """Line searches along each coordinate, then along the sweep's net move.

    The net-move direction replaces the direction that gained most in the
    sweep (Powell's update), which lets the search follow ridges where
    several selections tie. Directions reset to the axes when a sweep stalls.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    dim = len(x)
    dirs = list(np.eye(dim))
    history = [fx]
    for sweep in range(max_sweeps):
        x_start, f_start = x.copy(), fx
        gains = []
        for u in dirs:
            y, fy = _line_search(f, x, u, bounds)
            gains.append(max(fy - fx, 0.0))
            if fy >= fx:
                x, fx = y, fy
        net = x - x_start
        norm = float(np.linalg.norm(net))
        if norm > 1e-15:
            u = net / norm
            y, fy = _line_search(f, x, u, bounds)
            if fy >= fx:
                x, fx = y, fy
            dirs.pop(int(np.argmax(gains)))
            dirs.append(u)
        history.append(fx)
        if fx - f_start <= tol:
            if sweep > 2 and fx - f_start <= 0.1 * tol:
                break
            dirs = list(np.eye(dim))
    return x, fx, history


def optimize(problem: OptimizationProblem, budget: int = 16, seed: int = 0, threads: int = 1) -> OptimizationResult:
    """Multistart coordinate ascent on the closed-form objective; returns the best start."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    bounds = problem.bounds()
    stages = [_fast_objective(problem, tau) for tau in TEMPERATURES]
    exact = stages[-1]
    children = np.random.SeedSequence(seed).spawn(budget)

    def run(ss):
        x = np.random.default_rng(ss).uniform(bounds[:, 0], bounds[:, 1])
        history: list[float] = []
        for f in stages[:-1]:
            x, _, _ = coordinate_ascent(f, x, bounds)
            history.append(exact(x))
        x, fx, hist = coordinate_ascent(exact, x, bounds)
        return x, fx, history + hist

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(run, children))
    else:
        runs = [run(ss) for ss in children]

    trace: list[tuple[int, float]] = []
    best_x, best_f = None, -math.inf
    it = 0
    for x, fx, hist in runs:  # fixed order keeps the reduction deterministic
        for h in hist:
            trace.append((it, max(best_f, h)))
            it += 1
        if fx > best_f:
            best_x, best_f = x, fx
    config = problem.to_config(best_x)
    return OptimizationResult(
        best_params=best_x,
        best_config=config,
        best_objective=objective_value(config, problem.objective),
        trace=trace,
        exploratory=problem.exploratory,
    )
