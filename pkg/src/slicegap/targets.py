"""Target density families with exact level-set oracles.

Every target exposes its dimension, pointwise density, supremum norm and,
crucially, an analytic description of each level set as a union of at most
two elementary regions (intervals in 1D, Euclidean balls otherwise).  All
geometry downstream is computed from these closed forms, so there is no
root-finding error anywhere in the verification chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .errors import MembershipViolationError, UnsupportedShapeError


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] on the real line."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, s: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= s <= self.hi + tol


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball."""

    center: tuple[float, ...]
    radius: float

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        d = self.dim
        unit = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
        return unit * self.radius**d

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(self.center))) <= self.radius + tol


Region = Union[Interval, Ball]


class Shape(str, Enum):
    TRIANGULAR = "triangular"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class QuasiConcaveComponent:
    """One unimodal building block of a target density.

    ``scale`` is the half-width of the base for the triangular shape and the
    precision ``a`` in ``height * exp(-a |x - mode|^2)`` for the Gaussian
    shape.  Every level set of a component is an interval (1D) or a ball.
    """

    shape: Shape
    mode: tuple[float, ...]
    height: float
    scale: float

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("component height must be positive")
        if self.scale <= 0:
            raise ValueError("component scale must be positive")
        if self.shape is Shape.TRIANGULAR and len(self.mode) != 1:
            raise UnsupportedShapeError("triangular components are one-dimensional only")

    @property
    def dim(self) -> int:
        return len(self.mode)

    def density(self, x: np.ndarray) -> np.ndarray:
        """Component value at ``x``; broadcasts over leading axes of shape (..., d).

        One-dimensional components also accept bare scalars and arrays of
        scalars without a trailing axis.
        """
        x = np.asarray(x, dtype=float)
        m = np.asarray(self.mode)
        if self.dim == 1:
            xs = x[..., 0] if (x.ndim and x.shape[-1] == 1) else x
            r = np.abs(xs - m[0])
        else:
            r = np.linalg.norm(x - m, axis=-1)
        if self.shape is Shape.TRIANGULAR:
            return self.height * np.maximum(0.0, 1.0 - r / self.scale)
        return self.height * np.exp(-self.scale * r**2)

    def level_radius(self, t: float) -> float:
        """Radius of the level region {component >= t}, defined for 0 < t <= height."""
        if not 0.0 < t <= self.height:
            raise ValueError(f"level {t} outside (0, {self.height}]")
        if self.shape is Shape.TRIANGULAR:
            return self.scale * (1.0 - t / self.height)
        return math.sqrt(math.log(self.height / t) / self.scale)

    def level_region(self, t: float) -> Region | None:
        """Level region at ``t``, or None when the component stays below ``t``."""
        if t > self.height:
            return None
        r = self.level_radius(t)
        if self.dim == 1:
            return Interval(self.mode[0] - r, self.mode[0] + r)
        return Ball(self.mode, r)


@dataclass(frozen=True)
class TargetDensity:
    """Pointwise maximum of one or two quasi-concave components."""

    dim: int
    components: tuple[QuasiConcaveComponent, ...]
    name: str = ""

    def __post_init__(self):
        if not 1 <= len(self.components) <= 2:
            raise ValueError("a target holds one or two components")
        for comp in self.components:
            if comp.dim != self.dim:
                raise ValueError("all components must share the target dimension")

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim > 1 and (x.ndim == 0 or x.shape[-1] != self.dim):
            raise ValueError(f"expected points with trailing axis {self.dim}, got shape {x.shape}")
        vals = [comp.density(x) for comp in self.components]
        return np.maximum.reduce(vals)

    @property
    def sup_norm(self) -> float:
        return max(comp.height for comp in self.components)

    def level_regions(self, t: float) -> list[Region]:
        """Per-component level regions at level t (components below t drop out)."""
        regions = []
        for comp in self.components:
            region = comp.level_region(t)
            if region is not None:
                regions.append(region)
        return regions

    def kink_levels(self) -> list[float]:
        """Levels where the level-set volume has a kink: component heights and the split level."""
        levels = sorted({comp.height for comp in self.components})
        if len(self.components) == 2:
            t1 = merge_level(self)
            if 0.0 < t1 < levels[0]:
                levels.insert(0, t1)
        return levels

    def support_bounds(self, eps_cut: float = 1e-4) -> list[tuple[float, float]]:
        """Per-axis bounds of a box covering {density >= eps_cut}."""
        los = np.full(self.dim, np.inf)
        his = np.full(self.dim, -np.inf)
        for comp in self.components:
            if comp.shape is Shape.TRIANGULAR:
                r = comp.scale
            else:
                r = comp.level_radius(min(eps_cut, comp.height))
            m = np.asarray(comp.mode)
            los = np.minimum(los, m - r)
            his = np.maximum(his, m + r)
        return list(zip(los.tolist(), his.tolist()))


@dataclass(frozen=True)
class UniformInterval:
    """Flat density ``height`` on [lo, hi]; every level set is the whole interval."""

    lo: float
    hi: float
    height: float = 1.0
    name: str = "uniform-interval"
    dim: int = 1

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = x[..., 0] if x.ndim and x.shape[-1:] == (1,) else x
        inside = (r >= self.lo) & (r <= self.hi)
        return np.where(inside, self.height, 0.0)

    @property
    def sup_norm(self) -> float:
        return self.height

    def level_regions(self, t: float) -> list[Region]:
        if t > self.height:
            return []
        return [Interval(self.lo, self.hi)]

    def kink_levels(self) -> list[float]:
        return [self.height]

    def support_bounds(self, eps_cut: float = 1e-4) -> list[tuple[float, float]]:
        return [(self.lo, self.hi)]


@dataclass(frozen=True)
class UniformBall:
    """Flat density ``height`` on a ball; test fixture for chord-kernel identities."""

    center: tuple[float, ...]
    radius: float
    height: float = 1.0
    name: str = "uniform-ball"

    @property
    def dim(self) -> int:
        return len(self.center)

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(np.atleast_1d(x) - np.asarray(self.center), axis=-1)
        return np.where(r <= self.radius, self.height, 0.0)

    @property
    def sup_norm(self) -> float:
        return self.height

    def level_regions(self, t: float) -> list[Region]:
        if t > self.height:
            return []
        return [Ball(self.center, self.radius)]

    def kink_levels(self) -> list[float]:
        return [self.height]

    def support_bounds(self, eps_cut: float = 1e-4) -> list[tuple[float, float]]:
        m = np.asarray(self.center)
        return list(zip((m - self.radius).tolist(), (m + self.radius).tolist()))


@dataclass(frozen=True)
class RwCertificate:
    """Admissibility certificate for the stepping-out class.

    Below ``t1`` the level set is one interval, on (t1, t2] it splits into
    two, and the inter-part gap stays below ``w`` at every probed level.
    """

    t1: float
    t2: float
    w: float


def eval_density(target, x) -> float:
    """Density of ``target`` at a single point ``x``."""
    x = np.asarray(x, dtype=float)
    if target.dim == 1 and x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (target.dim,):
        raise ValueError(f"expected a point of dimension {target.dim}, got shape {x.shape}")
    return float(target.density(x))


def sup_norm(target) -> float:
    """Supremum of the unnormalised density."""
    return float(target.sup_norm)


def merge_level(target: TargetDensity) -> float:
    """Smallest level at which the two component regions become disjoint.

    Found by bisection (absolute tolerance 1e-10 in t); the predicate is
    monotone because component level regions are nested.  Returns t2 when
    the regions never separate, and 0 when they are disjoint at all
    positive levels.
    """
    if len(target.components) != 2:
        return 0.0
    c1, c2 = target.components
    t2 = min(c1.height, c2.height)

    def disjoint(t: float) -> bool:
        return _region_gap(c1.level_region(t), c2.level_region(t)) > 0.0

    if not disjoint(t2):
        return t2
    lo, hi = 0.0, t2
    # invariant: not disjoint at lo (or lo = 0), disjoint at hi
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if disjoint(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _region_gap(r1: Region | None, r2: Region | None) -> float:
    if r1 is None or r2 is None:
        return math.inf
    if isinstance(r1, Interval) and isinstance(r2, Interval):
        lo = max(r1.lo, r2.lo)
        hi = min(r1.hi, r2.hi)
        return lo - hi
    dist = float(np.linalg.norm(np.asarray(r1.center) - np.asarray(r2.center)))
    return dist - r1.radius - r2.radius


def check_Rw(target: TargetDensity, w: float, probe_levels: int = 64) -> RwCertificate:
    """Certify that a 1D target admits stepping-out with width ``w``.

    Computes the split level t1 by bisection, sets t2 to the smaller
    component height, and verifies that the inter-part gap is below ``w``
    on a grid of ``probe_levels`` levels in (t1, t2].
    """
    if target.dim != 1:
        raise ValueError("check_Rw is defined for one-dimensional targets")
    if w <= 0:
        raise ValueError("step width w must be positive")
    if len(target.components) == 1:
        # unimodal targets are trivially admissible: the gap is identically 0
        return RwCertificate(target.sup_norm, target.sup_norm, w)
    c1, c2 = target.components
    t2 = min(c1.height, c2.height)
    t1 = merge_level(target)
    if t1 < t2:
        for t in np.linspace(t1, t2, probe_levels + 1)[1:]:
            gap = _region_gap(c1.level_region(float(t)), c2.level_region(float(t)))
            if gap >= w:
                raise MembershipViolationError(
                    f"level-set gap {gap:.6g} at level {t:.6g} reaches the step width {w:.6g}"
                )
    return RwCertificate(t1, t2, w)


def check_Rdw(target: TargetDensity, w: float) -> bool:
    """Admissibility of the combined direction-line sampler: mode distance <= w/2.

    Requires convex level regions, so only Gaussian components qualify.
    """
    if w <= 0:
        raise ValueError("step width w must be positive")
    for comp in target.components:
        if comp.shape is not Shape.GAUSSIAN:
            raise UnsupportedShapeError("combined-class check requires Gaussian components (convex level sets)")
    if len(target.components) == 1:
        return True
    m1 = np.asarray(target.components[0].mode)
    m2 = np.asarray(target.components[1].mode)
    return float(np.linalg.norm(m1 - m2)) <= w / 2.0


def twin_triangles() -> TargetDensity:
    """Reference bimodal 1D target: triangles at -1 and +1 with heights 1 and 0.8."""
    return TargetDensity(
        dim=1,
        components=(
            QuasiConcaveComponent(Shape.TRIANGULAR, (-1.0,), 1.0, 1.0),
            QuasiConcaveComponent(Shape.TRIANGULAR, (1.0,), 0.8, 1.0),
        ),
        name="twin-triangles",
    )


def gaussian_pair() -> TargetDensity:
    """Reference bimodal 2D target: exp(-2|x|^2) against exp(-|x-(1.5,0)|^2)."""
    return TargetDensity(
        dim=2,
        components=(
            QuasiConcaveComponent(Shape.GAUSSIAN, (0.0, 0.0), 1.0, 2.0),
            QuasiConcaveComponent(Shape.GAUSSIAN, (1.5, 0.0), 1.0, 1.0),
        ),
        name="gaussian-pair",
    )
