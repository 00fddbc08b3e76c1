"""Markov-chain transition procedures and the chain runner.

Four transition kinds share the same two-phase structure: draw a level
uniformly below the current density value, then move on that level set.
The level move is exact uniform sampling, stepping-out plus shrinkage on
the axis, a hit-and-run chord draw, or stepping-out plus shrinkage along a
random chord.  A fifth kind repeats the level move several times before
releasing the level.

All randomness flows through an explicit ``numpy.random.Generator``;
chains are reproducible bit-for-bit for a fixed seed within one build.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import (
    ChainError,
    InvalidStateError,
    OffSliceError,
    RunawayExpansionError,
    ShrinkageStallError,
    SliceGapError,
)
from .slice_geometry import line_section, uniform_sample_level_set

DEFAULT_MAX_LOOP = 10_000


class SamplerKind(str, Enum):
    SIMPLE = "simple"
    SO_SH = "so_sh"
    HAR = "har"
    HAR_SO_SH = "har_so_sh"
    K_STEP = "k_step"


@dataclass(frozen=True)
class SamplerConfig:
    """Which transition to run and its tuning knobs."""

    kind: SamplerKind
    w: float | None = None
    k_inner: int = 1
    inner_kind: SamplerKind | None = None
    max_loop: int = DEFAULT_MAX_LOOP

    def __post_init__(self):
        if self.k_inner < 1:
            raise ValueError("k_inner must be at least 1")
        if self.max_loop < 1:
            raise ValueError("max_loop must be at least 1")
        needs_w = {SamplerKind.SO_SH, SamplerKind.HAR_SO_SH}
        inner = self.inner_kind
        if self.kind is SamplerKind.K_STEP:
            if inner is None or inner is SamplerKind.K_STEP:
                raise ValueError("k_step requires an inner_kind other than k_step")
            if inner in needs_w and (self.w is None or self.w <= 0):
                raise ValueError(f"inner kind {inner.value} requires a positive step width w")
        elif self.kind in needs_w and (self.w is None or self.w <= 0):
            raise ValueError(f"kind {self.kind.value} requires a positive step width w")


@dataclass
class Trace:
    """States and accepted levels of one chain run."""

    states: np.ndarray  # (n+1, d)
    levels: np.ndarray  # (n+1,), levels[0] = 0
    seed: int
    config: SamplerConfig = field(repr=False)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def to_csv(self, path, comment: str | None = None) -> None:
        """Write ``step,level,x1,...,xd`` rows with 17 significant digits."""
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["step", "level"] + [f"x{i + 1}" for i in range(d)])
            for i, (x, lev) in enumerate(zip(self.states, self.levels)):
                writer.writerow([i, f"{lev:.17g}"] + [f"{v:.17g}" for v in x])


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back states and levels from a trace file (comment lines skipped)."""
    levels, states = [], []
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    for row in rows[1:]:
        levels.append(float(row[1]))
        states.append([float(v) for v in row[2:]])
    return np.asarray(states), np.asarray(levels)


def _draw_level(target, x: np.ndarray, rng: np.random.Generator) -> float:
    rho = float(target.density(x))
    if rho <= 0.0:
        raise InvalidStateError(f"density is zero at {x}; no transition defined")
    # uniform on (0, rho]; excluding 0 keeps the level set well defined
    return rho * (1.0 - rng.random())


def _unit_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform direction on the unit sphere via a normalised Gaussian vector."""
    while True:
        g = rng.standard_normal(dim)
        norm = np.linalg.norm(g)
        if norm > 0.0:
            return g / norm


def stepping_out(
    line_density: Callable[[float], float],
    pos0: float,
    t: float,
    w: float,
    rng: np.random.Generator,
    max_loop: int = DEFAULT_MAX_LOOP,
) -> tuple[float, float]:
    """Expand a width-``w`` bracket around ``pos0`` until both ends leave the slice.

    The initial bracket is uniformly phased over ``pos0``; each end then
    retreats in steps of ``w`` while it still lies on the slice.  The result
    satisfies density(L) < t, density(R) < t and L < pos0 < R.
    """
    if line_density(pos0) < t:
        raise OffSliceError(f"stepping-out start {pos0} lies below level {t}")
    u = rng.random()
    left = pos0 - u * w
    right = left + w
    for _ in range(max_loop):
        if line_density(left) < t:
            break
        left -= w
    else:
        raise RunawayExpansionError("left expansion exceeded max_loop; slice unbounded or w too small")
    for _ in range(max_loop):
        if line_density(right) < t:
            break
        right += w
    else:
        raise RunawayExpansionError("right expansion exceeded max_loop; slice unbounded or w too small")
    return left, right


def shrinkage(
    bracket: tuple[float, float],
    pos0: float,
    t: float,
    line_density: Callable[[float], float],
    rng: np.random.Generator,
    max_loop: int = DEFAULT_MAX_LOOP,
) -> float:
    """Sample inside the bracket, shrinking the rejected side toward ``pos0``."""
    left, right = bracket
    if not left < pos0 < right:
        raise ValueError(f"bracket ({left}, {right}) must strictly contain the start {pos0}")
    if line_density(pos0) < t:
        raise OffSliceError(f"shrinkage start {pos0} lies below level {t}")
    for _ in range(max_loop):
        y = left + rng.random() * (right - left)
        if line_density(y) >= t:
            return y
        if y < pos0:
            left = y
        else:
            right = y
    raise ShrinkageStallError("shrinkage exceeded max_loop; bracket numerically degenerate")


# -- level-conditional moves (fixed level t) --------------------------------


def uniform_level_move(target, t: float, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact uniform refresh on the level set; ignores the current point."""
    return uniform_sample_level_set(target, t, rng)


def so_sh_level_move(
    target, t: float, x: np.ndarray, rng: np.random.Generator, w: float, max_loop: int = DEFAULT_MAX_LOOP
) -> np.ndarray:
    """One stepping-out plus shrinkage move on the axis of a 1D target."""
    if target.dim != 1:
        raise ValueError("axis stepping-out requires a one-dimensional target")
    pos0 = float(np.atleast_1d(x)[0])

    def density(s: float) -> float:
        return float(target.density(np.array([s])))

    bracket = stepping_out(density, pos0, t, w, rng, max_loop)
    y = shrinkage(bracket, pos0, t, density, rng, max_loop)
    return np.array([y])


def hit_and_run_level_move(target, t: float, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the chord through ``x`` in a uniform random direction."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = _unit_direction(rng, target.dim)
    section = line_section(target, t, x, theta)
    s = section.parts.sample_uniform(rng)
    return x + s * theta


def so_sh_line_move(
    target,
    t: float,
    x: np.ndarray,
    theta: np.ndarray,
    rng: np.random.Generator,
    w: float,
    max_loop: int = DEFAULT_MAX_LOOP,
) -> np.ndarray:
    """Stepping-out plus shrinkage along a fixed direction, anchored at coordinate 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.asarray(theta, dtype=float)

    def density(s: float) -> float:
        return float(target.density(x + s * theta))

    bracket = stepping_out(density, 0.0, t, w, rng, max_loop)
    s = shrinkage(bracket, 0.0, t, density, rng, max_loop)
    return x + s * theta


def har_so_sh_level_move(
    target, t: float, x: np.ndarray, rng: np.random.Generator, w: float, max_loop: int = DEFAULT_MAX_LOOP
) -> np.ndarray:
    """Random direction, then stepping-out plus shrinkage along it."""
    theta = _unit_direction(rng, target.dim)
    return so_sh_line_move(target, t, x, theta, rng, w, max_loop)


def _level_move(kind: SamplerKind, target, t, x, rng, w, max_loop) -> np.ndarray:
    if kind is SamplerKind.SIMPLE:
        return uniform_level_move(target, t, x, rng)
    if kind is SamplerKind.SO_SH:
        return so_sh_level_move(target, t, x, rng, w, max_loop)
    if kind is SamplerKind.HAR:
        return hit_and_run_level_move(target, t, x, rng)
    if kind is SamplerKind.HAR_SO_SH:
        return har_so_sh_level_move(target, t, x, rng, w, max_loop)
    raise ValueError(f"no level move for kind {kind}")


# -- full transitions --------------------------------------------------------


def simple_slice_step(target, x, rng: np.random.Generator) -> np.ndarray:
    """Level draw followed by an exact uniform draw on the level set."""
    t = _draw_level(target, np.atleast_1d(x), rng)
    return uniform_sample_level_set(target, t, rng)


def so_sh_step(target, x, rng: np.random.Generator, w: float, max_loop: int = DEFAULT_MAX_LOOP) -> np.ndarray:
    t = _draw_level(target, np.atleast_1d(x), rng)
    return so_sh_level_move(target, t, np.atleast_1d(x), rng, w, max_loop)


def hit_and_run_slice_step(target, x, rng: np.random.Generator) -> np.ndarray:
    t = _draw_level(target, np.atleast_1d(x), rng)
    return hit_and_run_level_move(target, t, np.atleast_1d(x), rng)


def har_so_sh_step(target, x, rng: np.random.Generator, w: float, max_loop: int = DEFAULT_MAX_LOOP) -> np.ndarray:
    t = _draw_level(target, np.atleast_1d(x), rng)
    return har_so_sh_level_move(target, t, np.atleast_1d(x), rng, w, max_loop)


def k_step_hybrid_step(
    target,
    x,
    rng: np.random.Generator,
    k: int,
    inner_kind: SamplerKind,
    w: float | None = None,
    max_loop: int = DEFAULT_MAX_LOOP,
) -> np.ndarray:
    """Draw one level, then apply ``k`` successive inner moves at that level."""
    if k < 1:
        raise ValueError("k must be at least 1")
    y = np.atleast_1d(np.asarray(x, dtype=float))
    t = _draw_level(target, y, rng)
    for _ in range(k):
        y = _level_move(inner_kind, target, t, y, rng, w, max_loop)
    return y


def sample_stationary(target, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the normalised target by rejection from the component mixture.

    The pointwise maximum of the components is dominated by their sum, so
    proposing from the mass-weighted component mixture and accepting with
    probability max/sum is exact, with acceptance rate at least one half.
    """
    comps = getattr(target, "components", None)
    if comps is None:
        raise ValueError("exact stationary sampling needs component structure")
    masses = []
    for c in comps:
        if c.shape.value == "triangular":
            masses.append(c.height * c.scale)
        else:
            masses.append(c.height * (math.pi / c.scale) ** (target.dim / 2.0))
    masses = np.asarray(masses)
    probs = masses / masses.sum()
    out = np.empty((n, target.dim))
    filled = 0
    while filled < n:
        batch = max(2 * (n - filled), 64)
        which = rng.random(batch) < probs[-1] if len(comps) == 2 else np.zeros(batch, dtype=bool)
        pts = np.empty((batch, target.dim))
        for ci, comp in enumerate(comps):
            mask = which if ci == 1 else ~which
            cnt = int(mask.sum())
            if cnt == 0:
                continue
            mode = np.asarray(comp.mode)
            if comp.shape.value == "triangular":
                u = rng.random((cnt, 2))
                pts[mask] = mode + comp.scale * (u.sum(axis=1) - 1.0)[:, None]
            else:
                pts[mask] = mode + rng.standard_normal((cnt, target.dim)) * math.sqrt(0.5 / comp.scale)
        dens = np.asarray(target.density(pts))
        total = np.zeros(batch)
        for comp in comps:
            total += np.asarray(comp.density(pts))
        keep = pts[rng.random(batch) < dens / total]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def _step_with_level(target, config: SamplerConfig, x: np.ndarray, rng) -> tuple[np.ndarray, float]:
    t = _draw_level(target, x, rng)
    if config.kind is SamplerKind.K_STEP:
        y = x
        for _ in range(config.k_inner):
            y = _level_move(config.inner_kind, target, t, y, rng, config.w, config.max_loop)
        return y, t
    return _level_move(config.kind, target, t, x, rng, config.w, config.max_loop), t


def run_chain(target, config: SamplerConfig, x0, n: int, seed: int) -> Trace:
    """Run ``n`` transitions from ``x0``; deterministic in all arguments."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if float(target.density(x0)) <= 0.0:
        raise InvalidStateError(f"starting point {x0} has zero density")
    rng = np.random.default_rng(seed)
    states = np.empty((n + 1, target.dim))
    levels = np.zeros(n + 1)
    states[0] = x0
    x = x0
    for i in range(1, n + 1):
        try:
            x, t = _step_with_level(target, config, x, rng)
        except SliceGapError as exc:
            raise ChainError(i, exc) from exc
        states[i] = x
        levels[i] = t
    return Trace(states=states, levels=levels, seed=seed, config=config)
