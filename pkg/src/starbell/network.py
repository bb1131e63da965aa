"""Star-network description: branches of sequential parties, sources, Alice's angle.

Conventions
-----------
* Branch indices are 0-based (``0..m-1``).
* Party depths in a :data:`PartySelection` are 1-based: ``s[k] == 1`` picks the
  first party of branch ``k``.
* ``theta`` is stored in radians; config files carry ``theta_degrees``.

Config file schema (JSON)::

    {
      "theta_degrees": 45.0,
      "branches": [[{"eta_z": 0.8, "eta_x": 0.8}, {"eta_z": 1.0, "eta_x": 1.0}], ...],
      "sources": [{"visibility": 1.0}, ...]
    }

``sources`` may be omitted, in which case every source has visibility 1.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PartySelection = tuple[int, ...]


@dataclass(frozen=True)
class PartySetting:
    eta_z: float
    eta_x: float


@dataclass(frozen=True)
class BranchConfig:
    parties: tuple[PartySetting, ...]

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))

    def __len__(self) -> int:
        return len(self.parties)


@dataclass(frozen=True)
class SourceSpec:
    visibility: float = 1.0


@dataclass(frozen=True)
class NetworkConfig:
    branches: tuple[BranchConfig, ...]
    sources: tuple[SourceSpec, ...] = field(default=())
    theta: float = math.pi / 4

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        sources = tuple(self.sources)
        if not sources:
            sources = tuple(SourceSpec() for _ in self.branches)
        object.__setattr__(self, "sources", sources)

    @property
    def m(self) -> int:
        return len(self.branches)

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.branches)

    def with_visibility(self, v: float | Sequence[float]) -> "NetworkConfig":
        vs = [v] * self.m if isinstance(v, (int, float)) else list(v)
        return NetworkConfig(self.branches, tuple(SourceSpec(float(x)) for x in vs), self.theta)


class ConfigError(ValueError):
    """A config document could not be parsed; ``path`` names the offending node."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def symmetric_config(
    etas: Sequence[float | tuple[float, float]],
    m: int,
    theta: float = math.pi / 4,
    visibility: float = 1.0,
) -> NetworkConfig:
    """Network whose ``m`` branches share the same chain of sharpness values.

    Each entry of ``etas`` is either one value (used for both observables) or an
    ``(eta_z, eta_x)`` pair.
    """
    parties = []
    for e in etas:
        ez, ex = (e, e) if isinstance(e, (int, float)) else e
        parties.append(PartySetting(float(ez), float(ex)))
    branch = BranchConfig(tuple(parties))
    return NetworkConfig(
        tuple(branch for _ in range(m)),
        tuple(SourceSpec(visibility) for _ in range(m)),
        theta,
    )


def reference_config(visibility: float = 1.0) -> NetworkConfig:
    """Three branches, two parties each: eta = 0.8 then 1, theta = 45 degrees."""
    return symmetric_config([0.8, 1.0], m=3, theta=math.pi / 4, visibility=visibility)


def _in_unit(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and 0.0 <= x <= 1.0


def validate(config: NetworkConfig) -> list[str]:
    """Return one description per violated invariant; empty means valid."""
    problems: list[str] = []
    if config.m < 1:
        problems.append("branches: at least one branch is required")
    if len(config.sources) != config.m:
        problems.append(
            f"sources: {len(config.sources)} sources for {config.m} branches (lengths must match)"
        )
    if not (isinstance(config.theta, (int, float)) and 0.0 <= config.theta <= math.pi / 2 + 1e-15):
        problems.append(f"theta: {config.theta!r} outside [0, pi/2]")
    for k, branch in enumerate(config.branches):
        if len(branch.parties) == 0:
            problems.append(f"branches[{k}]: a branch needs at least one party")
        for j, p in enumerate(branch.parties):
            if not _in_unit(p.eta_z):
                problems.append(f"branches[{k}][{j}].eta_z: {p.eta_z!r} outside [0, 1]")
            if not _in_unit(p.eta_x):
                problems.append(f"branches[{k}][{j}].eta_x: {p.eta_x!r} outside [0, 1]")
    for k, src in enumerate(config.sources):
        if not _in_unit(src.visibility):
            problems.append(f"sources[{k}].visibility: {src.visibility!r} outside [0, 1]")
    return problems


def validate_selection(config: NetworkConfig, sel: Sequence[int]) -> list[str]:
    problems = []
    if len(sel) != config.m:
        problems.append(f"selection {tuple(sel)} has length {len(sel)}, expected {config.m}")
        return problems
    for k, (s, n) in enumerate(zip(sel, config.lengths)):
        if not 1 <= s <= n:
            problems.append(f"selection[{k}] = {s} outside 1..{n}")
    return problems


def enumerate_selections(config: NetworkConfig) -> list[PartySelection]:
    """Every choice of one party per branch, lexicographic order."""
    return list(itertools.product(*(range(1, n + 1) for n in config.lengths)))


def subnetwork(config: NetworkConfig, branch_subset: Iterable[int]) -> NetworkConfig:
    """Restrict the network to the given (0-based) branches, keeping theta."""
    idx = sorted(set(branch_subset))
    if not idx:
        raise ValueError("branch subset must be non-empty")
    bad = [k for k in idx if not 0 <= k < config.m]
    if bad:
        raise IndexError(f"branch indices {bad} out of range 0..{config.m - 1}")
    return NetworkConfig(
        tuple(config.branches[k] for k in idx),
        tuple(config.sources[k] for k in idx),
        config.theta,
    )


def format_selection(sel: Sequence[int | None]) -> str:
    """``(1,2,*)`` style label; ``None`` marks an unused branch."""
    return "(" + ",".join("*" if s is None else str(s) for s in sel) + ")"


# ---------------------------------------------------------------- config io


def _number(node, path: str) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(node).__name__}")
    if not math.isfinite(node):
        raise ConfigError(path, "expected a finite number")
    return float(node)


def config_from_dict(doc) -> NetworkConfig:
    if not isinstance(doc, dict):
        raise ConfigError("$", "top level must be an object")
    unknown = set(doc) - {"theta_degrees", "branches", "sources"}
    if unknown:
        raise ConfigError(f"$.{sorted(unknown)[0]}", "unknown key")
    if "theta_degrees" not in doc:
        raise ConfigError("$.theta_degrees", "missing required key")
    theta = math.radians(_number(doc["theta_degrees"], "$.theta_degrees"))
    if "branches" not in doc:
        raise ConfigError("$.branches", "missing required key")
    raw_branches = doc["branches"]
    if not isinstance(raw_branches, list):
        raise ConfigError("$.branches", "expected a list of branches")
    branches = []
    for k, rb in enumerate(raw_branches):
        bpath = f"$.branches[{k}]"
        if not isinstance(rb, list):
            raise ConfigError(bpath, "expected a list of parties")
        parties = []
        for j, rp in enumerate(rb):
            ppath = f"{bpath}[{j}]"
            if not isinstance(rp, dict):
                raise ConfigError(ppath, "expected an object with eta_z and eta_x")
            for key in ("eta_z", "eta_x"):
                if key not in rp:
                    raise ConfigError(f"{ppath}.{key}", "missing required key")
            extra = set(rp) - {"eta_z", "eta_x"}
            if extra:
                raise ConfigError(f"{ppath}.{sorted(extra)[0]}", "unknown key")
            parties.append(
                PartySetting(_number(rp["eta_z"], f"{ppath}.eta_z"), _number(rp["eta_x"], f"{ppath}.eta_x"))
            )
        branches.append(BranchConfig(tuple(parties)))
    sources = []
    raw_sources = doc.get("sources")
    if raw_sources is not None:
        if not isinstance(raw_sources, list):
            raise ConfigError("$.sources", "expected a list of sources")
        for k, rs in enumerate(raw_sources):
            spath = f"$.sources[{k}]"
            if not isinstance(rs, dict) or "visibility" not in rs:
                raise ConfigError(f"{spath}.visibility", "missing required key")
            sources.append(SourceSpec(_number(rs["visibility"], f"{spath}.visibility")))
    else:
        sources = [SourceSpec() for _ in branches]
    return NetworkConfig(tuple(branches), tuple(sources), theta)


def config_to_dict(config: NetworkConfig) -> dict:
    return {
        "theta_degrees": math.degrees(config.theta),
        "branches": [[{"eta_z": p.eta_z, "eta_x": p.eta_x} for p in b.parties] for b in config.branches],
        "sources": [{"visibility": s.visibility} for s in config.sources],
    }


def loads_config(text: str) -> NetworkConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    return config_from_dict(doc)


def load_config(path: str | Path) -> NetworkConfig:
    return loads_config(Path(path).read_text())


def dump_config(config: NetworkConfig, path: str | Path | None = None) -> str:
    text = json.dumps(config_to_dict(config), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
