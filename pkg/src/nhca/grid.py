"""Dyadic grids: standard, shifted, and lower-dimensional boundary families.

A cube at level k has side 2^-k and lower corner ``shift + 2^-k * j`` with an
integer corner vector j.  Shifted grids translate the standard grid by
``lambda_i * (1,...,1)`` where lambda_1 = 0 and the remaining shifts are square
roots of primes, so pairwise differences are irrational.  Boundary grids of
intrinsic dimension r < n freeze n-r axes at dyadic values; the free axes keep
integer corner arithmetic, so parent/child navigation stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .errors import RangeError, ValidationError

# Levels beyond this lose exact dyadic representation in float64.
MAX_LEVEL = 50

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def shift_value(i: int) -> float:
    """Translation amount of the i-th grid family (1-based, shift_value(1)=0)."""
    if i < 1:
        raise RangeError(f"grid family index must be >= 1, got {i}")
    if i == 1:
        return 0.0
    if i - 1 > len(_PRIMES):
        raise RangeError(f"no shift configured for family {i}")
    return math.sqrt(_PRIMES[i - 2])


@dataclass(frozen=True)
class GridRef:
    """Identifies one grid family: 'std', shifted 'sh<i>', or boundary 'bd<r>'."""

    kind: str
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise RangeError(f"ambient dimension must be >= 1, got {self.n}")
        if self.kind == "std" or self.kind.startswith("sh"):
            return
        if self.kind.startswith("bd"):
            r = self.intrinsic_dim
            if not (1 <= r <= self.n):
                raise RangeError(f"boundary dimension {r} outside [1, {self.n}]")
            return
        raise ValidationError(f"unknown grid kind {self.kind!r}")

    @staticmethod
    def standard(n: int) -> "GridRef":
        return GridRef("std", n)

    @staticmethod
    def shifted(i: int, n: int) -> "GridRef":
        shift_value(i)  # validates i
        return GridRef("std" if i == 1 else f"sh{i}", n)

    @staticmethod
    def boundary(r: int, n: int) -> "GridRef":
        if r == n:
            return GridRef.standard(n)
        return GridRef(f"bd{r}", n)

    @property
    def shift(self) -> np.ndarray:
        if self.kind.startswith("sh"):
            return np.full(self.n, shift_value(int(self.kind[2:])))
        return np.zeros(self.n)

    @property
    def intrinsic_dim(self) -> int:
        if self.kind.startswith("bd"):
            return int(self.kind[2:])
        return self.n

    @property
    def is_boundary(self) -> bool:
        return self.kind.startswith("bd")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, possibly with zero-width (frozen) axes.

    Free axes are half-open [lo, hi) or, when ``open_`` is set, open (lo, hi).
    A zero-width axis matches points by exact equality either way.  ``side``
    is the common extent of the free axes (set distance computations use the
    closure, so the open flag never affects geometry, only point membership).
    """

    lo: tuple
    hi: tuple
    open_: bool = False

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def free_mask(self) -> np.ndarray:
        return self.hi_arr > self.lo_arr

    @property
    def side(self) -> float:
        widths = self.hi_arr - self.lo_arr
        free = widths[widths > 0]
        return float(free.max()) if free.size else 0.0

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_arr + self.hi_arr)

    def dilate(self, lam: float) -> "Box":
        """lam*B: same center, side scaled; zero-width axes stay frozen."""
        c, half = self.center, 0.5 * lam * (self.hi_arr - self.lo_arr)
        return Box(tuple(c - half), tuple(c + half), self.open_)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Vectorized membership for points of shape (N, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, hi = self.lo_arr, self.hi_arr
        ok = np.ones(x.shape[0], dtype=bool)
        for d in range(self.n):
            if hi[d] > lo[d]:
                if self.open_:
                    ok &= (x[:, d] > lo[d]) & (x[:, d] < hi[d])
                else:
                    ok &= (x[:, d] >= lo[d]) & (x[:, d] < hi[d])
            else:
                ok &= x[:, d] == lo[d]
        return ok


@dataclass(frozen=True)
class CubeId:
    """A dyadic cube of some grid family.

    ``corner`` carries the integer indices of the free axes (in increasing
    axis order); ``frozen`` lists (axis, value) pairs for the remaining axes.
    """

    grid: GridRef
    level: int
    corner: tuple
    open_: bool = False
    frozen: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if abs(self.level) > MAX_LEVEL:
            raise RangeError(f"level {self.level} beyond supported range ±{MAX_LEVEL}")
        if len(self.corner) + len(self.frozen) != self.grid.n:
            raise ValidationError(
                f"corner ({len(self.corner)}) + frozen ({len(self.frozen)}) axes "
                f"must cover ambient dimension {self.grid.n}"
            )

    @property
    def ambient_dim(self) -> int:
        return self.grid.n

    @property
    def eff_dim(self) -> int:
        return len(self.corner)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def free_axes(self) -> tuple:
        frozen_axes = {a for a, _ in self.frozen}
        return tuple(d for d in range(self.grid.n) if d not in frozen_axes)

    @property
    def box(self) -> Box:
        shift = self.grid.shift
        h = self.side
        lo = [0.0] * self.grid.n
        hi = [0.0] * self.grid.n
        for axis, j in zip(self.free_axes, self.corner):
            lo[axis] = shift[axis] + j * h
            hi[axis] = shift[axis] + (j + 1) * h
        for axis, v in self.frozen:
            lo[axis] = hi[axis] = v
        return Box(tuple(lo), tuple(hi), self.open_)

    @property
    def center(self) -> np.ndarray:
        return self.box.center

    def parent(self) -> "CubeId":
        if self.level - 1 < -MAX_LEVEL:
            raise RangeError("parent level out of range")
        corner = tuple(j >> 1 for j in self.corner)
        return replace(self, level=self.level - 1, corner=corner)

    def children(self) -> list:
        """The 2^r child cubes (r = effective dimension)."""
        if self.level + 1 > MAX_LEVEL:
            raise RangeError("child level out of range")
        out = []
        for eps in product((0, 1), repeat=self.eff_dim):
            corner = tuple(2 * j + e for j, e in zip(self.corner, eps))
            out.append(replace(self, level=self.level + 1, corner=corner))
        return out

    def ancestor(self, level: int) -> "CubeId":
        if level > self.level:
            raise RangeError("ancestor level must be coarser")
        s = self.level - level
        return replace(self, level=level, corner=tuple(j >> s for j in self.corner))

    def to_json(self) -> dict:
        return {
            "grid": self.grid.kind,
            "level": self.level,
            "corner": list(self.corner),
            "open": self.open_,
            "frozen": [[a, v] for a, v in self.frozen],
        }

    @staticmethod
    def from_json(d: dict, n: int) -> "CubeId":
        return CubeId(
            GridRef(d["grid"], n),
            int(d["level"]),
            tuple(int(j) for j in d["corner"]),
            bool(d.get("open", False)),
            tuple((int(a), float(v)) for a, v in d.get("frozen", [])),
        )


def containing(grid: GridRef, point, level: int) -> CubeId:
    """The unique level-``level`` cube of ``grid`` owning ``point`` (lower-closed)."""
    if abs(level) > MAX_LEVEL:
        raise RangeError(f"level {level} beyond supported range")
    x = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("point must be finite")
    if x.shape != (grid.n,):
        raise ValidationError(f"point has shape {x.shape}, expected ({grid.n},)")
    if grid.is_boundary:
        raise ValidationError("containing() is defined for full-dimensional grids")
    j = np.floor((x - grid.shift) * 2.0**level).astype(np.int64)
    return CubeId(grid, level, tuple(int(v) for v in j))


def navigate(cube: CubeId, rel: str, point=None, level: int | None = None):
    """Spec-facing navigation entry point: parent | children | containing."""
    if rel == "parent":
        return cube.parent()
    if rel == "children":
        return cube.children()
    if rel == "containing":
        return containing(cube.grid, point, level)
    raise ValidationError(f"unknown navigation relation {rel!r}")


# ---------------------------------------------------------------------------
# lagom windows
# ---------------------------------------------------------------------------

def central_box(M: int, n: int) -> Box:
    """B_{2^M} = 2^M * [-1/2, 1/2)^n."""
    half = 2.0**M / 2.0
    return Box((-half,) * n, (half,) * n)


def box_set_distance(a: Box, b: Box) -> float:
    """Euclidean distance between closures (per-axis clamping)."""
    ga = np.maximum(0.0, np.maximum(b.lo_arr - a.hi_arr, a.lo_arr - b.hi_arr))
    return float(np.sqrt(np.sum(ga * ga)))


def rdist_boxes(a: Box, b: Box) -> float:
    """rdist(A,B) = 1 + dist(A,B) / side(larger); ties resolved to the first."""
    larger = a if b.side <= a.side else b
    return 1.0 + box_set_distance(a, b) / larger.side


def lagom_membership(cube_or_box, M: int) -> bool:
    """True iff the cube lies in the M-window D_M.

    Membership requires 2^-M <= side <= 2^M together with
    rdist(I, B_{2^M}) <= M.
    """
    if M < 0:
        raise RangeError("window parameter M must be >= 0")
    box = cube_or_box.box if isinstance(cube_or_box, CubeId) else cube_or_box
    side = box.side
    if not (2.0**-M <= side <= 2.0**M):
        return False
    return rdist_boxes(box, central_box(M, box.n)) <= M


# ---------------------------------------------------------------------------
# frontier and Whitney decomposition
# ---------------------------------------------------------------------------

def frontier(cube: CubeId) -> list:
    """All same-level cubes at set distance zero from ``cube`` (3^r of them)."""
    out = []
    for off in product((-1, 0, 1), repeat=cube.eff_dim):
        corner = tuple(j + o for j, o in zip(cube.corner, off))
        out.append(replace(cube, corner=corner))
    return out


def inner_skeleton_dist(b: Box, c: Box) -> float:
    """Distance from box ``b`` to the child-face skeleton of cube ``c``.

    The skeleton is the union of the boundaries of c's children: for every
    free axis the three planes {lo, mid, hi}, each spanning c's closure in the
    remaining axes.
    """
    lo_c, hi_c = c.lo_arr, c.hi_arr
    lo_b, hi_b = b.lo_arr, b.hi_arr
    gaps = np.maximum(0.0, np.maximum(lo_b - hi_c, lo_c - hi_b))
    best = math.inf
    for a in range(c.n):
        if hi_c[a] <= lo_c[a]:
            continue
        rest2 = float(np.sum(gaps**2)) - float(gaps[a] ** 2)
        for v in (lo_c[a], 0.5 * (lo_c[a] + hi_c[a]), hi_c[a]):
            da = max(0.0, lo_b[a] - v, v - hi_b[a])
            best = min(best, math.sqrt(da * da + rest2))
    return 0.0 if best is math.inf else best


def inrdist_boxes(a: Box, b: Box) -> float:
    """inrdist(A,B) = 1 + dist(smaller, skeleton(larger)) / side(smaller)."""
    if b.side <= a.side:
        small, large = b, a
    else:
        small, large = a, b
    return 1.0 + inner_skeleton_dist(small, large) / small.side


@dataclass
class WhitneyResult:
    cubes: list
    residue_volume: float
    warning: bool


def whitney(root: CubeId, max_depth: int) -> WhitneyResult:
    """Maximal dyadic S inside ``root`` with inrdist(S, root) > 1 and 3S in root.

    Recursion stops ``max_depth`` levels below the root; the uncovered volume
    near the skeleton (and below the depth cap) is reported as a residue.
    """
    if max_depth < 2:
        raise RangeError("max_depth must be >= 2")
    rbox = root.box
    picked = []

    def qualifies(c: CubeId) -> bool:
        cb = c.box
        if inrdist_boxes(cb, rbox) <= 1.0:
            return False
        tb = cb.dilate(3.0)
        return bool(
            np.all(tb.lo_arr >= rbox.lo_arr) and np.all(tb.hi_arr <= rbox.hi_arr)
        )

    wave = root.children()
    for _ in range(max_depth):
        nxt = []
        for c in wave:
            if qualifies(c):
                picked.append(c)
            else:
                nxt.extend(c.children())
        wave = nxt
        if not wave:
            break

    vol_root = rbox.side ** root.eff_dim
    vol_cov = sum(c.side ** c.eff_dim for c in picked)
    return WhitneyResult(picked, vol_root - vol_cov, warning=not picked)


# ---------------------------------------------------------------------------
# boundary grids
# ---------------------------------------------------------------------------

def is_dyadic(v: float, max_level: int = MAX_LEVEL) -> bool:
    """Whether v equals j * 2^-m for integers j, m with m <= max_level."""
    scaled = v * 2.0**max_level
    return scaled == int(scaled)


def boundary_grid_cubes(
    r: int,
    n: int,
    bbox_lo,
    bbox_hi,
    levels,
    frozen_values: dict | None = None,
) -> list:
    """Enumerate r-dimensional boundary cubes meeting a window.

    For each level k, each choice of n-r frozen axes and each frozen value
    (by default the multiples of 2^-k inside the window's closure, matching
    the face skeleton at that level) this yields the cubes whose free-axis
    corners fall in the window.  ``frozen_values`` may pin explicit values per
    axis, e.g. to scan segments lying on a measure's own support line.
    """
    if not (1 <= r < n or (r == n)):
        raise RangeError(f"boundary dimension r={r} must satisfy 1 <= r <= n={n}")
    lo = np.asarray(bbox_lo, dtype=float)
    hi = np.asarray(bbox_hi, dtype=float)
    grid = GridRef.boundary(r, n)
    out = []
    if r == n:  # degenerate: the standard grid itself
        for k in levels:
            out.extend(cubes_at_level(GridRef.standard(n), k, lo, hi))
        return out
    from itertools import combinations

    for k in levels:
        h = 2.0**-k
        for frozen_axes in combinations(range(n), n - r):
            free_axes = [d for d in range(n) if d not in frozen_axes]
            value_lists = []
            for a in frozen_axes:
                if frozen_values and a in frozen_values:
                    vals = [v for v in frozen_values[a] if lo[a] <= v <= hi[a]]
                else:
                    j0 = math.ceil(lo[a] / h - 1e-12)
                    j1 = math.floor(hi[a] / h + 1e-12)
                    vals = [j * h for j in range(j0, j1 + 1)]
                value_lists.append(vals)
            corner_ranges = []
            for a in free_axes:
                j0 = math.floor(lo[a] / h)
                j1 = math.ceil(hi[a] / h) - 1
                corner_ranges.append(range(j0, j1 + 1))
            for vals in product(*value_lists):
                frozen = tuple(sorted(zip(frozen_axes, vals)))
                for corner in product(*corner_ranges):
                    out.append(CubeId(grid, k, corner, False, frozen))
    return out


def cubes_at_level(grid: GridRef, level: int, bbox_lo, bbox_hi, limit: int = 2**22) -> list:
    """All level-``level`` cubes of a full-dimensional grid meeting the box."""
    if abs(level) > MAX_LEVEL:
        raise RangeError(f"level {level} beyond supported range")
    lo = np.asarray(bbox_lo, dtype=float) - grid.shift
    hi = np.asarray(bbox_hi, dtype=float) - grid.shift
    h = 2.0**-level
    ranges = []
    total = 1
    for d in range(grid.n):
        j0 = math.floor(lo[d] / h)
        j1 = math.ceil(hi[d] / h) - 1
        if hi[d] / h == math.floor(hi[d] / h):  # half-open window: exclude flush end
            j1 = int(hi[d] / h) - 1
        j1 = max(j1, j0)
        ranges.append(range(j0, j1 + 1))
        total *= len(ranges[-1])
        if total > limit:
            raise RangeError(f"level-{level} window would enumerate {total} cubes")
    return [CubeId(grid, level, corner) for corner in product(*ranges)]
