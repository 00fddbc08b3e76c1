"""Brute-force ground truth via discretized Markov operators.

Every kernel is reduced to a finite row-stochastic matrix on a regular
grid.  Level kernels live on the sub-grid of cells whose density clears
the level; full kernels average level kernels with a per-row midpoint rule
over the level variable.  Operator norms come from singular values of the
stationary-similarity transform, and each inequality of the gap theory is
checked with an explicit margin.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, svds

from .errors import CoverageError, EmptyLevelSetError
from .kernels import sphere_surface_area
from .slice_geometry import level_set_1d
from .targets import Shape, TargetDensity

#: boundary tolerance when assigning grid cells to a level set
LEVEL_TOL = 1e-12


class KernelKind(str, Enum):
    UNIFORM = "uniform"
    SO_SH = "so_sh"
    HIT_AND_RUN = "hit_and_run"
    COMBINED = "combined"


@dataclass(eq=False)
class Grid:
    """Regular cell grid covering the support of a target."""

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    axes: list[np.ndarray] = field(init=False, repr=False)
    centers: np.ndarray = field(init=False, repr=False)
    cell_vol: float = field(init=False)

    def __post_init__(self):
        axes = []
        vol = 1.0
        for (lo, hi), cells in zip(self.bounds, self.shape):
            if hi <= lo or cells < 1:
                raise ValueError("grid bounds must be increasing and cell counts positive")
            h = (hi - lo) / cells
            axes.append(lo + h * (np.arange(cells) + 0.5))
            vol *= h
        self.axes = axes
        if len(axes) == 1:
            self.centers = axes[0][:, None]
        else:
            mesh = np.meshgrid(*axes, indexing="ij")
            self.centers = np.stack([m.ravel() for m in mesh], axis=-1)
        self.cell_vol = vol

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @classmethod
    def for_target(cls, target, shape, eps_cut: float = 1e-4) -> "Grid":
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        if len(shape) != target.dim:
            raise ValueError("one cell count per axis is required")
        return cls(bounds=tuple(target.support_bounds(eps_cut)), shape=shape)

    def locate(self, points) -> np.ndarray:
        """Flat cell index of each point (clipped to the grid)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = []
        for axis, (lo, hi), cells in zip(range(self.dim), self.bounds, self.shape):
            h = (hi - lo) / cells
            idx.append(np.clip(((pts[:, axis] - lo) / h).astype(int), 0, cells - 1))
        return np.ravel_multi_index(idx, self.shape)


@dataclass(eq=False)
class DiscreteKernel:
    """Row-stochastic matrix with its stationary weights.

    ``support`` holds the parent-grid indices when the kernel lives on a
    sub-grid (level kernels); None means the full active grid.
    """

    P: np.ndarray
    pi: np.ndarray
    label: str = ""
    support: np.ndarray | None = None

    def __post_init__(self):
        drift = np.abs(self.P.sum(axis=1) - 1.0).max()
        if drift > 1e-9:
            raise ValueError(f"rows of {self.label or 'kernel'} sum to 1 only within {drift:.3e}")
        self.P = self.P / self.P.sum(axis=1, keepdims=True)
        if np.any(self.pi <= 0.0):
            raise ValueError("stationary weights must be strictly positive")
        self.pi = self.pi / self.pi.sum()

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class Check:
    """One verified inequality: pass iff lhs <= rhs + tol."""

    name: str
    lhs: float
    rhs: float
    tol: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.tol


@dataclass
class GapReport:
    """Gaps, convergence profile and the outcome of every inequality check."""

    gap_u: float
    gap_h: float
    beta: dict[int, float]
    checks: list[Check]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["check", "lhs", "rhs", "margin", "pass"])
            for c in self.checks:
                writer.writerow([c.name, f"{c.lhs:.17g}", f"{c.rhs:.17g}", f"{c.margin:.17g}", c.passed])

    def summary(self) -> str:
        lines = [
            f"gap(U) = {self.gap_u:.6f}",
            f"gap(H) = {self.gap_h:.6f}",
        ]
        for k in sorted(self.beta):
            lines.append(f"beta_{k} = {self.beta[k]:.6f}")
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}: lhs={c.lhs:.6g} rhs={c.rhs:.6g} margin={c.margin:.3g}")
        lines.append("result: " + ("ALL CHECKS PASS" if self.all_passed else "CHECK FAILURES PRESENT"))
        return "\n".join(lines)


# -- discretization -----------------------------------------------------------


def density_on_grid(target, grid: Grid) -> np.ndarray:
    return np.asarray(target.density(grid.centers), dtype=float)


def discretize_target(target, grid: Grid) -> np.ndarray:
    """Stationary weights proportional to density times cell volume."""
    vals = density_on_grid(target, grid)
    mass = float(vals.sum()) * grid.cell_vol
    if mass <= 0.0:
        raise CoverageError("grid cells carry no density mass; grid misses the support")
    return vals * grid.cell_vol / mass


def _active_cells(vals: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(vals > 0.0)
    if idx.size == 0:
        raise CoverageError("no grid cell has positive density")
    return idx


# -- 1D level geometry, vectorised over levels --------------------------------


def _component_bounds(comp, t: np.ndarray):
    """Level-interval ends of a 1D component for an array of levels."""
    active = t <= comp.height
    tt = np.where(active, t, comp.height)
    if comp.shape is Shape.TRIANGULAR:
        r = comp.scale * (1.0 - tt / comp.height)
    else:
        r = np.sqrt(np.log(comp.height / tt) / comp.scale)
    return active, comp.mode[0] - r, comp.mode[0] + r


def _level_profile_1d(target, t: np.ndarray, x_row: float | None):
    """Continuous geometry of the 1D level sets at levels ``t``.

    Returns interval bounds per component together with merged length, gap
    and (when ``x_row`` is given) which component interval holds the row
    point.  Supports one or two components.
    """
    comps = target.components
    a1, lo1, hi1 = _component_bounds(comps[0], t)
    if len(comps) == 1:
        length = np.where(a1, hi1 - lo1, 0.0)
        zeros = np.zeros_like(t)
        return (a1, lo1, hi1), None, length, zeros, np.ones_like(t, dtype=bool)
    a2, lo2, hi2 = _component_bounds(comps[1], t)
    both = a1 & a2
    gap = np.maximum(lo1, lo2) - np.minimum(hi1, hi2)
    disjoint = both & (gap > LEVEL_TOL)
    overlap = np.where(both & ~disjoint, np.minimum(hi1, hi2) - np.maximum(lo1, lo2), 0.0)
    len1 = np.where(a1, hi1 - lo1, 0.0)
    len2 = np.where(a2, hi2 - lo2, 0.0)
    length = len1 + len2 - np.maximum(overlap, 0.0) * both
    delta = np.where(disjoint, gap, 0.0)
    if x_row is None:
        in_first = np.ones_like(t, dtype=bool)
    else:
        in_first = a1 & (lo1 - LEVEL_TOL <= x_row) & (x_row <= hi1 + LEVEL_TOL)
    return (a1, lo1, hi1), (a2, lo2, hi2), length, delta, in_first


def _assemble_rows_1d(target, centers: np.ndarray, rho: np.ndarray, kind: KernelKind, w, m: int, k: int) -> np.ndarray:
    """Dense transition matrix for 1D kinds by per-row midpoint level quadrature.

    Each level contributes a mixture row; rows are accumulated through
    difference arrays over cell-index ranges, so the cost per row is
    O(m + n) instead of O(m * n).
    """
    n = centers.size
    P = np.zeros((n, n))
    uniform_kind = kind in (KernelKind.UNIFORM, KernelKind.HIT_AND_RUN)
    offsets = (np.arange(m) + 0.5) / m
    for i in range(n):
        t = offsets * rho[i]
        first, second, length, delta, in_first = _level_profile_1d(target, t, float(centers[i]))
        a1, lo1, hi1 = first
        l1 = np.searchsorted(centers, lo1 - LEVEL_TOL, side="left")
        r1 = np.searchsorted(centers, hi1 + LEVEL_TOL, side="right")
        c1 = np.where(a1, r1 - l1, 0)
        if second is None:
            a2 = np.zeros_like(a1)
            l2 = r2 = np.zeros_like(l1)
            c2 = np.zeros_like(c1)
        else:
            a2, lo2, hi2 = second
            l2 = np.searchsorted(centers, lo2 - LEVEL_TOL, side="left")
            r2 = np.searchsorted(centers, hi2 + LEVEL_TOL, side="right")
            c2 = np.where(a2, r2 - l2, 0)
        both = a1 & a2
        disjoint = both & (delta > 0.0)
        merged = both & ~disjoint
        # merged slices span one contiguous cell range
        lo_m = np.minimum(np.where(a1, l1, n), np.where(a2, l2, n))
        hi_m = np.maximum(np.where(a1, r1, 0), np.where(a2, r2, 0))
        n_slice = np.where(disjoint, c1 + c2, hi_m - lo_m)
        n_slice = np.maximum(n_slice, 1)

        if uniform_kind:
            gamma_k = np.ones_like(t)
        else:
            gamma = ((w - delta) / w) * (length / (length + delta))
            gamma = np.clip(gamma, 0.0, 1.0)
            gamma_k = 1.0 - (1.0 - gamma) ** k

        acc = np.zeros(n + 1)
        cu = gamma_k / (m * n_slice)
        # uniform term: one range when merged or single-component, two when disjoint
        sel = disjoint
        np.add.at(acc, l1[sel], cu[sel])
        np.add.at(acc, r1[sel], -cu[sel])
        np.add.at(acc, l2[sel], cu[sel])
        np.add.at(acc, r2[sel], -cu[sel])
        sel = ~disjoint
        np.add.at(acc, lo_m[sel], cu[sel])
        np.add.at(acc, hi_m[sel], -cu[sel])
        if not uniform_kind:
            # local term on the part holding the row point; merged sets have no gap
            part_lo = np.where(in_first, l1, l2)
            part_hi = np.where(in_first, r1, r2)
            n_part = np.maximum(np.where(in_first, c1, c2), 1)
            cl = (1.0 - gamma_k) / (m * n_part)
            sel = disjoint & (cl > 0.0)
            np.add.at(acc, part_lo[sel], cl[sel])
            np.add.at(acc, part_hi[sel], -cl[sel])
            # merged levels put the local weight on the whole slice
            sel = merged & (cl > 0.0)
            np.add.at(acc, lo_m[sel], cl[sel])
            np.add.at(acc, hi_m[sel], -cl[sel])
        P[i] = np.cumsum(acc[:n])
    return P


def _assemble_rows_1d_generic(target, centers, rho, kind, w, m, k) -> np.ndarray:
    """Slow per-level fallback for 1D targets without component structure."""
    n = centers.size
    P = np.zeros((n, n))
    uniform_kind = kind in (KernelKind.UNIFORM, KernelKind.HIT_AND_RUN)
    for i in range(n):
        for j in range(m):
            t = (j + 0.5) * rho[i] / m
            ls = level_set_1d(target, t)
            mask = np.zeros(n, dtype=bool)
            for iv in ls.parts.intervals:
                mask |= (centers >= iv.lo - LEVEL_TOL) & (centers <= iv.hi + LEVEL_TOL)
            u = mask / mask.sum()
            if uniform_kind or ls.parts.nparts == 1:
                P[i] += u / m
            else:
                gamma = ((w - ls.delta_t) / w) * (ls.length / (ls.length + ls.delta_t))
                gamma_k = 1.0 - (1.0 - gamma) ** k
                part = ls.parts.intervals[ls.parts.part_index(float(centers[i]), LEVEL_TOL)]
                pmask = (centers >= part.lo - LEVEL_TOL) & (centers <= part.hi + LEVEL_TOL)
                P[i] += (gamma_k * u + (1.0 - gamma_k) * pmask / pmask.sum()) / m
    return P


# -- pairwise chord geometry in dimension >= 2 --------------------------------


def _ball_components(target) -> list[tuple[np.ndarray, object, float]]:
    """(center, radius-at-level callable, height) per convex component."""
    comps = getattr(target, "components", None)
    if comps is not None:
        return [(np.asarray(c.mode), c.level_radius, c.height) for c in comps]
    center = np.asarray(target.center)
    radius = target.radius
    return [(center, lambda t: radius, target.sup_norm)]


@dataclass(eq=False)
class _PairGeometry:
    """Precomputed chord coordinates for every ordered pair of points.

    For the pair (i, j) the chord through point i toward point j carries,
    per component, the coordinate of the mode's foot point and the squared
    distance from the chord line to the mode.  Level sections then follow
    from the component radii alone.
    """

    dist: np.ndarray
    comp_s: list[np.ndarray]
    comp_h2: list[np.ndarray]

    @classmethod
    def build(cls, points: np.ndarray, target) -> "_PairGeometry":
        diff = points[None, :, :] - points[:, None, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        theta = diff / dist[..., None]
        comp_s, comp_h2 = [], []
        for center, _, _ in _ball_components(target):
            v = center[None, :] - points
            s = np.einsum("ijk,ik->ij", theta, v)
            h2 = np.maximum(np.einsum("ik,ik->i", v, v)[:, None] - s**2, 0.0)
            comp_s.append(s)
            comp_h2.append(h2)
        return cls(dist=dist, comp_s=comp_s, comp_h2=comp_h2)


def _chord_density_block(pg: _PairGeometry, target, t: float, rows, cols, kind: KernelKind, w) -> np.ndarray:
    """Pointwise kernel density for a block of (row, col) pairs.

    The diagonal (zero-distance pairs) comes out as zero; the caller adds
    the stay atom so rows integrate to one.
    """
    take = np.ix_(rows, cols)
    dist = pg.dist[take]
    d = target.dim
    comps = _ball_components(target)
    los, his, actives = [], [], []
    for c, (_, radius_at, height) in enumerate(comps):
        if t <= height:
            r2 = radius_at(t) ** 2
            h2 = pg.comp_h2[c][take]
            inside = h2 < r2
            half = np.sqrt(np.maximum(r2 - h2, 0.0))
            s = pg.comp_s[c][take]
            los.append(np.where(inside, s - half, np.nan))
            his.append(np.where(inside, s + half, np.nan))
            actives.append(inside)
        else:
            shape = dist.shape
            los.append(np.full(shape, np.nan))
            his.append(np.full(shape, np.nan))
            actives.append(np.zeros(shape, dtype=bool))
    if len(comps) == 1:
        length = np.where(actives[0], his[0] - los[0], 0.0)
        delta = np.zeros_like(length)
        same = np.ones_like(length, dtype=bool)
        local_len = length
    else:
        a1, a2 = actives
        lo1, lo2 = los
        hi1, hi2 = his
        both = a1 & a2
        gap = np.where(both, np.maximum(lo1, lo2) - np.minimum(hi1, hi2), 0.0)
        disjoint = both & (gap > LEVEL_TOL)
        len1 = np.where(a1, hi1 - lo1, 0.0)
        len2 = np.where(a2, hi2 - lo2, 0.0)
        overlap = np.where(both & ~disjoint, np.minimum(hi1, hi2) - np.maximum(lo1, lo2), 0.0)
        length = len1 + len2 - np.maximum(overlap, 0.0)
        delta = np.where(disjoint, gap, 0.0)
        # part of the origin point (chord coordinate 0) and of the target point (coordinate dist)
        tol = 1e-9
        x_in1 = a1 & (lo1 <= tol) & (hi1 >= -tol)
        y_in1 = a1 & (lo1 <= dist + tol) & (hi1 >= dist - tol)
        y_in2 = a2 & (lo2 <= dist + tol) & (hi2 >= dist - tol)
        same = np.where(disjoint, np.where(x_in1, y_in1, y_in2), True)
        local_len = np.where(disjoint, np.where(x_in1, len1, len2), length)
    sigma = sphere_surface_area(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is KernelKind.HIT_AND_RUN:
            dens = (2.0 / sigma) / (dist ** (d - 1) * length)
        else:
            gamma = np.clip(((w - delta) / w) * (length / (length + delta)), 0.0, 1.0)
            dens = (2.0 / sigma) * dist ** (1 - d) * (
                gamma / length + (1.0 - gamma) * same / np.where(local_len > 0, local_len, np.inf)
            )
    dens = np.where(np.isfinite(dens) & (length > 0), dens, 0.0)
    return dens


@functools.lru_cache(maxsize=8)
def _pair_geometry(target, grid: Grid) -> _PairGeometry:
    return _PairGeometry.build(grid.centers, target)


def _slice_indices(vals: np.ndarray, t: float) -> np.ndarray:
    return np.flatnonzero(vals >= t - LEVEL_TOL)


def _density_level_rows(
    pg: _PairGeometry, target, grid: Grid, t: float, rows, cols, kind: KernelKind, w
) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalised density rows plus the per-row stay atom.

    Cell-centre quadrature can overshoot mass one near level-set boundaries;
    such rows are scaled back so each row is a probability vector.
    """
    dens = _chord_density_block(pg, target, t, rows, cols, kind, w) * grid.cell_vol
    totals = dens.sum(axis=1)
    if totals.max() > 1.25:
        raise ValueError(f"chord quadrature mass {totals.max():.3f} at level {t}; grid far too coarse")
    over = totals > 1.0
    if np.any(over):
        dens[over] *= ((1.0 - 1e-12) / totals[over])[:, None]
        totals = dens.sum(axis=1)
    return dens, 1.0 - totals


def _strip_level_matrix(target, grid: Grid, t: float, idx: np.ndarray, kind: KernelKind, w, n_theta: int = 128):
    """Level kernel as a direction-quantised mixture of strip projections.

    For each of ``n_theta`` chord directions the slice cells are grouped
    into strips one projected cell wide; the kernel averages, per strip,
    the uniform refresh over the strip (weight gamma) and over the part of
    the current point (weight 1 - gamma).  Being a nonnegative mixture of
    orthogonal projections, the matrix is reversible and positive
    semi-definite to machine precision.
    """
    pts = grid.centers[idx]
    n_s = idx.size
    comps = _ball_components(target)
    memberships = []
    for center, radius_at, height in comps:
        if t <= height:
            r = radius_at(t)
            memberships.append(np.linalg.norm(pts - center, axis=1) <= r + 1e-12)
        else:
            memberships.append(np.zeros(n_s, dtype=bool))
    hx = (grid.bounds[0][1] - grid.bounds[0][0]) / grid.shape[0]
    hy = (grid.bounds[1][1] - grid.bounds[1][0]) / grid.shape[1]
    P = np.zeros((n_s, n_s))
    weight = 1.0 / n_theta
    for a in range(n_theta):
        phi = (a + 0.5) * math.pi / n_theta
        theta = np.array([math.cos(phi), math.sin(phi)])
        perp = np.array([-theta[1], theta[0]])
        xi = pts @ perp
        eta = pts @ theta
        strip_w = hx * abs(perp[0]) + hy * abs(perp[1])
        eta_w = hx * abs(theta[0]) + hy * abs(theta[1])
        sid = np.floor((xi - xi.min()) / strip_w).astype(int)
        order = np.argsort(sid, kind="stable")
        bounds_ = np.flatnonzero(np.diff(sid[order])) + 1
        for cells in np.split(order, bounds_):
            _add_strip_blocks(P, cells, eta, eta_w, memberships, kind, w, weight)
    return P


def _add_strip_blocks(P, cells, eta, eta_w, memberships, kind, w, weight):
    n_c = cells.size
    in1 = memberships[0][cells]
    in2 = memberships[1][cells] if len(memberships) == 2 else np.zeros(n_c, dtype=bool)
    two_parts = in1.any() and (in2 & ~in1).any() and not (in1 & in2).any()
    if kind is KernelKind.HIT_AND_RUN or not two_parts:
        P[np.ix_(cells, cells)] += weight / n_c
        return
    part1 = cells[in1]
    part2 = cells[~in1]
    # chord geometry from the projected cell footprints along the direction
    lo1, hi1 = eta[part1].min() - eta_w / 2, eta[part1].max() + eta_w / 2
    lo2, hi2 = eta[part2].min() - eta_w / 2, eta[part2].max() + eta_w / 2
    delta = max(max(lo1, lo2) - min(hi1, hi2), 0.0)
    length = (hi1 - lo1) + (hi2 - lo2)
    if delta >= w:
        gamma = 0.0
    else:
        gamma = min(max(((w - delta) / w) * (length / (length + delta)), 0.0), 1.0)
    P[np.ix_(cells, cells)] += weight * gamma / n_c
    P[np.ix_(part1, part1)] += weight * (1.0 - gamma) / part1.size
    P[np.ix_(part2, part2)] += weight * (1.0 - gamma) / part2.size


# -- kernel builders -----------------------------------------------------------


def build_level_matrix(target, grid: Grid, t: float, kind: KernelKind, w: float | None = None) -> DiscreteKernel:
    """Discretized per-level kernel on the sub-grid of cells clearing level ``t``."""
    vals = density_on_grid(target, grid)
    if t > vals.max() + LEVEL_TOL:
        raise EmptyLevelSetError(f"no grid cell clears level {t}")
    idx = _slice_indices(vals, t)
    n_s = idx.size
    u = np.full(n_s, 1.0 / n_s)
    label = f"{kind.value}-level-{t:.6g}"
    if kind is KernelKind.UNIFORM or (grid.dim == 1 and kind is KernelKind.HIT_AND_RUN):
        P = np.tile(u, (n_s, 1))
        return DiscreteKernel(P=P, pi=u, label=label, support=idx)
    if grid.dim == 1:
        ls = level_set_1d(target, t)
        if ls.parts.nparts == 1:
            P = np.tile(u, (n_s, 1))
            return DiscreteKernel(P=P, pi=u, label=label, support=idx)
        gamma = ((w - ls.delta_t) / w) * (ls.length / (ls.length + ls.delta_t))
        gamma = min(max(gamma, 0.0), 1.0)
        centers = grid.centers[idx, 0]
        first = ls.parts.intervals[0]
        in_first = centers <= first.hi + LEVEL_TOL
        P = np.tile(gamma * u, (n_s, 1))
        for mask in (in_first, ~in_first):
            cnt = int(mask.sum())
            if cnt:
                P[np.ix_(mask, mask)] += (1.0 - gamma) / cnt
        return DiscreteKernel(P=P, pi=u, label=label, support=idx)
    P = _strip_level_matrix(target, grid, t, idx, kind, w)
    return DiscreteKernel(P=P, pi=u, label=label, support=idx)


def _flow_symmetrize(P: np.ndarray, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make the kernel exactly reversible by symmetrising its stationary flow.

    The symmetrised flow F = (diag(pi) P + P^T diag(pi)) / 2 defines a
    reversible kernel P' = F / rowsum(F) with stationary weights
    proportional to the row sums; those differ from ``pi`` only by the
    quadrature asymmetry being projected out.
    """
    flow = pi[:, None] * P
    flow = 0.5 * (flow + flow.T)
    r = flow.sum(axis=1)
    if np.abs(r / pi - 1.0).max() > 0.55:
        raise ValueError("flow symmetrization moved too much mass; quadrature inconsistent")
    return flow / r[:, None], r / r.sum()


def build_full_matrix(target, grid: Grid, kind: KernelKind, w: float | None = None, m: int = 64) -> DiscreteKernel:
    """Full transition matrix: per-row midpoint average of level kernels."""
    return _build_power_matrix(target, grid, kind, w, (1,), m)[1]


def build_k_step_matrix(
    target, grid: Grid, kind: KernelKind, w: float | None, k: int, m: int = 64
) -> DiscreteKernel:
    """Like the full matrix but with ``k`` level-kernel applications per level."""
    return _build_power_matrix(target, grid, kind, w, (k,), m)[k]


def build_k_step_matrices(
    target, grid: Grid, kind: KernelKind, w: float | None, k_list, m: int = 64
) -> dict[int, DiscreteKernel]:
    """One pass over levels shared by several ``k`` values."""
    return _build_power_matrix(target, grid, kind, w, tuple(k_list), m)


def _build_power_matrix(target, grid, kind, w, k_list, m) -> dict[int, DiscreteKernel]:
    if m < 1 or min(k_list) < 1:
        raise ValueError("m and every k must be at least 1")
    vals = density_on_grid(target, grid)
    act = _active_cells(vals)
    rho = vals[act]
    pi = rho / rho.sum()
    n = act.size
    k_list = tuple(sorted(set(k_list)))
    out: dict[int, np.ndarray] = {}
    if grid.dim == 1:
        centers = grid.centers[act, 0]
        if isinstance(target, TargetDensity):
            for k in k_list:
                out[k] = _assemble_rows_1d(target, centers, rho, kind, w, m, k)
        else:
            for k in k_list:
                out[k] = _assemble_rows_1d_generic(target, centers, rho, kind, w, m, k)
    elif kind is KernelKind.UNIFORM:
        P = _assemble_uniform_nd(vals, act, m)
        for k in k_list:
            out[k] = P
    else:
        if act.size != grid.n:
            raise CoverageError("chord kernels require strictly positive density on the whole grid")
        pg = _pair_geometry(target, grid)
        order = np.argsort(-rho, kind="stable")
        rho_desc = rho[order]
        kmax = max(k_list)
        mats = {k: np.zeros((n, n)) for k in k_list}
        row_arr = np.empty(1, dtype=int)
        for i in range(n):
            row_arr[0] = i
            for j in range(m):
                t = (j + 0.5) * rho[i] / m
                count = int(np.searchsorted(-rho_desc, -(t - LEVEL_TOL), side="right"))
                cols = order[:count]
                if kmax == 1:
                    dens, atom = _density_level_rows(pg, target, grid, t, row_arr, cols, kind, w)
                    mats[1][i, cols] += dens[0] / m
                    mats[1][i, i] += atom[0] / m
                    continue
                A, atoms = _density_level_rows(pg, target, grid, t, cols, cols, kind, w)
                A[np.diag_indices_from(A)] += atoms
                pos = int(np.nonzero(cols == i)[0][0])
                r = A[pos]
                step = 1
                for k in k_list:
                    while step < k:
                        r = r @ A
                        step += 1
                    mats[k][i, cols] += r / m
        out = mats
    result: dict[int, DiscreteKernel] = {}
    for k in k_list:
        P = out[k]
        drift = np.abs(P.sum(axis=1) - 1.0).max()
        if drift > 1e-9:
            raise ValueError(f"assembled rows sum to 1 only within {drift:.3e}")
        P = P / P.sum(axis=1, keepdims=True)
        # per-row level quadrature leaves a small detailed-balance residual;
        # project it out so the assembled kernel is exactly reversible
        P, pi_k = _flow_symmetrize(P, pi)
        result[k] = DiscreteKernel(P=P, pi=pi_k, label=f"{kind.value}-k{k}-m{m}", support=act)
    return result


def _assemble_uniform_nd(vals: np.ndarray, act: np.ndarray, m: int) -> np.ndarray:
    """Uniform-kind rows in any dimension via the descending-density prefix trick."""
    rho = vals[act]
    n = act.size
    order = np.argsort(-rho, kind="stable")
    rho_desc = rho[order]
    P = np.zeros((n, n))
    offsets = (np.arange(m) + 0.5) / m
    for i in range(n):
        t = offsets * rho[i]
        counts = np.searchsorted(-rho_desc, -(t - LEVEL_TOL), side="right")
        acc = np.zeros(n + 1)
        coef = 1.0 / (m * counts)
        acc[0] += coef.sum()
        np.subtract.at(acc, counts, coef)
        P[i, order] = np.cumsum(acc[:n])
    return P


# -- norms and spectra ---------------------------------------------------------


def _centered_similarity(K: DiscreteKernel) -> np.ndarray:
    root = np.sqrt(K.pi)
    return (root[:, None] * (K.P - K.pi[None, :])) / root[None, :]


def op_norm_centered(K: DiscreteKernel) -> float:
    """Operator norm of the kernel minus its stationary projection on L2(pi).

    Largest singular value of D^(1/2) (P - 1 pi^T) D^(-1/2).
    """
    C = _centered_similarity(K)
    n = C.shape[0]
    if n <= 800:
        return float(np.linalg.svd(C, compute_uv=False)[0])
    try:
        s = svds(C, k=1, v0=_krylov_start(n), return_singular_vectors=False, maxiter=5000, tol=0)
        return float(s[0])
    except ArpackNoConvergence:
        return float(np.linalg.svd(C, compute_uv=False)[0])


def _krylov_start(n: int) -> np.ndarray:
    """Deterministic, structure-free start vector for iterative eigensolvers."""
    v = np.sin(np.arange(1, n + 1, dtype=float))
    return v / np.linalg.norm(v)


def op_norm_centered_eig(K: DiscreteKernel) -> float:
    """Same norm from the symmetric eigenvalue route (valid for reversible kernels)."""
    C = _centered_similarity(K)
    eigs = np.linalg.eigvalsh(0.5 * (C + C.T))
    return float(np.abs(eigs).max())


def spectral_gap(K: DiscreteKernel) -> float:
    return 1.0 - op_norm_centered(K)


def psd_check(K: DiscreteKernel) -> float:
    """Minimum eigenvalue of the symmetrized similarity transform."""
    root = np.sqrt(K.pi)
    A = (root[:, None] * K.P) / root[None, :]
    eigs = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(eigs.min())


def reversibility_check(K: DiscreteKernel) -> float:
    """Largest detailed-balance residual max_ij |pi_i P_ij - pi_j P_ji|."""
    flow = K.pi[:, None] * K.P
    return float(np.abs(flow - flow.T).max())


# -- numeric beta profile ------------------------------------------------------


def _level_norm(target, grid: Grid, vals: np.ndarray, t: float, kind: KernelKind, w) -> float:
    """Distance of one discretized level kernel to its uniform refresh.

    Computed as the largest-magnitude eigenvalue of the centered symmetric
    operator, applied matrix-free for the mixture kinds and from the dense
    block otherwise.
    """
    idx = _slice_indices(vals, t)
    n_s = idx.size
    if n_s == 0:
        return 0.0
    if kind is KernelKind.UNIFORM or (grid.dim == 1 and kind is KernelKind.HIT_AND_RUN):
        return 0.0
    if grid.dim == 1:
        ls = level_set_1d(target, t)
        if ls.parts.nparts == 1:
            return 0.0
        gamma = np.clip(((w - ls.delta_t) / w) * (ls.length / (ls.length + ls.delta_t)), 0.0, 1.0)
        centers = grid.centers[idx, 0]
        in_first = centers <= ls.parts.intervals[0].hi + LEVEL_TOL
        n1, n2 = int(in_first.sum()), int((~in_first).sum())
        if n1 == 0 or n2 == 0:
            return 0.0
        if n_s > 4:
            # the centered similarity is symmetric (uniform weights); apply it matrix-free
            def matvec(z):
                z = np.asarray(z).ravel()
                mean_full = z.mean()
                out = np.empty_like(z)
                out[in_first] = z[in_first].mean() - mean_full
                out[~in_first] = z[~in_first].mean() - mean_full
                return (1.0 - gamma) * out

            op = LinearOperator((n_s, n_s), matvec=matvec, dtype=float)
            try:
                vals_eig = eigsh(op, k=1, which="LM", v0=_krylov_start(n_s), return_eigenvectors=False)
                return float(abs(vals_eig[0]))
            except ArpackNoConvergence:
                pass
        kernel = build_level_matrix(target, grid, t, kind, w)
        return op_norm_centered_eig(kernel)
    # dimension >= 2: centered norm of the row-normalised density kernel
    pg = _pair_geometry(target, grid)
    A, atoms = _density_level_rows(pg, target, grid, t, idx, idx, kind, w)
    A[np.diag_indices_from(A)] += atoms
    C = A - 1.0 / n_s
    if n_s <= 700:
        return float(np.linalg.svd(C, compute_uv=False)[0])
    try:
        s = svds(C, k=1, v0=_krylov_start(n_s), return_singular_vectors=False, maxiter=5000, tol=0)
        return float(s[0])
    except ArpackNoConvergence:
        return float(np.linalg.svd(C, compute_uv=False)[0])


def beta_profile(
    target, grid: Grid, kind: KernelKind, w, norm_bins: int = 1024
) -> tuple[np.ndarray, float]:
    """Per-level kernel distances on a uniform bin grid over (0, max density]."""
    vals = density_on_grid(target, grid)
    top = float(vals.max())
    width = top / norm_bins
    nus = np.empty(norm_bins)
    for b in range(norm_bins):
        t = (b + 0.5) * width
        nus[b] = _level_norm(target, grid, vals, t, kind, w)
    return nus, width


def beta_k_numeric_many(
    target, grid: Grid, kind: KernelKind, w, k_list, m: int, norm_bins: int = 1024, profile=None
) -> tuple[dict[int, float], int]:
    """Numeric convergence profile sup_x of the row-averaged squared level norms.

    Returns the values per ``k`` and the grid index of the row attaining the
    supremum for the largest ``k``.
    """
    vals = density_on_grid(target, grid)
    act = _active_cells(vals)
    rho = vals[act]
    nus, width = profile if profile is not None else beta_profile(target, grid, kind, w, norm_bins)
    offsets = (np.arange(m) + 0.5) / m
    bins = np.minimum((offsets[None, :] * rho[:, None] / width).astype(int), nus.size - 1)
    nu_rows = nus[bins]
    out: dict[int, float] = {}
    argmax_cell = int(act[0])
    for k in sorted(set(k_list)):
        row_vals = np.mean(nu_rows ** (2 * k), axis=1)
        best = int(np.argmax(row_vals))
        out[k] = float(math.sqrt(row_vals[best]))
        argmax_cell = int(act[best])
    return out, argmax_cell


def beta_k_numeric(
    target, grid: Grid, kind: KernelKind, w, k: int, m: int, norm_bins: int = 1024
) -> float:
    """Numeric counterpart of the closed-form convergence profile for one ``k``."""
    return beta_k_numeric_many(target, grid, kind, w, [k], m, norm_bins)[0][k]


# -- inequality verifiers ------------------------------------------------------


def verify_theorem_bounds(
    target,
    grid: Grid,
    kind: KernelKind,
    w,
    k_list,
    m: int,
    tol: float = 5e-3,
    norm_bins: int = 1024,
    psd_probe_levels: int = 8,
    psd_tol: float = 1e-10,
    kstep_grid: Grid | None = None,
    kstep_m: int | None = None,
    prebuilt: dict | None = None,
) -> GapReport:
    """Check the gap sandwich and the k-step lower bound with explicit margins.

    ``prebuilt`` may carry matrices/values from an earlier run (keys
    ``U``, ``H``, ``beta``, ``kstep``) to avoid recomputation.
    """
    prebuilt = prebuilt or {}
    k_list = sorted(set(k_list))
    U = prebuilt.get("U") or build_full_matrix(target, grid, KernelKind.UNIFORM, w, m)
    H = prebuilt.get("H") or build_full_matrix(target, grid, kind, w, m)
    gap_u = spectral_gap(U)
    gap_h = spectral_gap(H)
    beta = prebuilt.get("beta") or beta_k_numeric_many(target, grid, kind, w, k_list, m, norm_bins)[0]
    checks: list[Check] = []

    vals = density_on_grid(target, grid)
    top = float(vals.max())
    min_eig = math.inf
    for j in range(psd_probe_levels):
        t = (j + 0.5) * top / psd_probe_levels
        try:
            min_eig = min(min_eig, psd_check(build_level_matrix(target, grid, t, kind, w)))
        except EmptyLevelSetError:
            continue
    checks.append(Check("psd_level_kernels", lhs=-min_eig, rhs=0.0, tol=psd_tol))

    checks.append(Check("sandwich_upper_gapH_le_gapU", lhs=gap_h, rhs=gap_u, tol=tol))
    for k in k_list:
        checks.append(Check(f"sandwich_lower_k{k}", lhs=(gap_u - beta[k]) / k, rhs=gap_h, tol=tol))

    kgrid = kstep_grid or grid
    km = kstep_m or m
    if kgrid is grid and km == m:
        gap_u_k, beta_k = gap_u, beta
    else:
        gap_u_k = spectral_gap(build_full_matrix(target, kgrid, KernelKind.UNIFORM, w, km))
        beta_k = beta_k_numeric_many(target, kgrid, kind, w, k_list, km, norm_bins)[0]
    ksteps = prebuilt.get("kstep") or build_k_step_matrices(target, kgrid, kind, w, k_list, km)
    for k in k_list:
        gap_k = spectral_gap(ksteps[k])
        checks.append(Check(f"corollary_kstep_gap_k{k}", lhs=gap_u_k - beta_k[k], rhs=gap_k, tol=tol))

    return GapReport(gap_u=gap_u, gap_h=gap_h, beta=beta, checks=checks)


def verify_monotonicity(
    target, grid: Grid, kind: KernelKind, w, k_max: int, m: int, tol: float = 1e-6, prebuilt: dict | None = None
) -> list[Check]:
    """Centered norms of the k-step kernels must not increase with ``k``."""
    ks = list(range(1, k_max + 1))
    mats = prebuilt or build_k_step_matrices(target, grid, kind, w, ks, m)
    norms = {k: op_norm_centered(mats[k]) for k in ks}
    return [
        Check(f"monotone_norm_k{k + 1}_le_k{k}", lhs=norms[k + 1], rhs=norms[k], tol=tol)
        for k in ks[:-1]
    ]


def verify_power_bound(
    target, grid: Grid, kind: KernelKind, w, k_max: int, m: int, tol: float = 1e-6, prebuilt: dict | None = None
) -> list[Check]:
    """The one-step norm to the k-th power is bounded by the k-step norm."""
    ks = list(range(1, k_max + 1))
    mats = prebuilt or build_k_step_matrices(target, grid, kind, w, ks, m)
    norm_h = op_norm_centered(mats[1])
    return [
        Check(f"power_bound_k{k}", lhs=norm_h**k, rhs=op_norm_centered(mats[k]), tol=tol)
        for k in ks
    ]


def verify_mt_bound(target, grid: Grid, tol: float = 1e-3, prebuilt_u: DiscreteKernel | None = None) -> Check:
    """Doeblin lower bound on the exact-refresh gap from mass over box volume."""
    vals = density_on_grid(target, grid)
    act = _active_cells(vals)
    mass = float(vals[act].sum()) * grid.cell_vol
    bound = mass / (float(vals.max()) * act.size * grid.cell_vol)
    U = prebuilt_u or build_full_matrix(target, grid, KernelKind.UNIFORM, None, m=64)
    return Check("mt_lower_bound_gapU", lhs=bound, rhs=spectral_gap(U), tol=tol)


def verify_tv_bound(
    target,
    grid: Grid,
    kind: KernelKind,
    w,
    nu: np.ndarray | None = None,
    n_max: int = 50,
    tol: float = 1e-8,
    m: int = 64,
    prebuilt_h: DiscreteKernel | None = None,
) -> list[Check]:
    """Iterated total-variation distance against the geometric gap bound."""
    H = prebuilt_h or build_full_matrix(target, grid, kind, w, m)
    gap = spectral_gap(H)
    pi = H.pi
    if nu is None:
        nu = np.zeros(H.n)
        nu[int(np.argmax(pi))] = 1.0
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (H.n,) or abs(nu.sum() - 1.0) > 1e-12 or nu.min() < 0:
        raise ValueError("nu must be a probability vector on the kernel's cells")
    l2 = float(np.sqrt(np.sum(pi * (nu / pi - 1.0) ** 2)))
    checks = []
    mu = nu.copy()
    for n in range(1, n_max + 1):
        mu = mu @ H.P
        tv = 0.5 * float(np.abs(mu - pi).sum())
        checks.append(Check(f"tv_decay_n{n}", lhs=tv, rhs=(1.0 - gap) ** n * l2, tol=tol))
    return checks
