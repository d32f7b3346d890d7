"""Atomic measures with power growth, canonical generators and densities.

A measure is a finite collection of weighted point masses together with the
growth exponent alpha and a resolution h (the finest scale at which the
discretization is faithful).  Generators place atoms at cell midpoints, so no
atom ever sits on the dyadic skeleton of the standard grid up to the
resolution level; half-open and open cube masses then coincide.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, RangeError, ValidationError
from .grid import Box, CubeId, GridRef, cubes_at_level

FILE_VERSION = 1


@dataclass
class AtomicMeasure:
    dim: int
    alpha: float
    x: np.ndarray          # (N, dim) positions
    w: np.ndarray          # (N,) strictly positive weights
    resolution: float
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=float)
        self.w = np.ascontiguousarray(self.w, dtype=float)
        if self.x.ndim != 2 or self.x.shape[1] != self.dim:
            raise ValidationError(f"positions must have shape (N, {self.dim})")
        if self.w.shape != (self.x.shape[0],):
            raise ValidationError("weights must align with positions")
        if self.x.shape[0] == 0:
            raise ValidationError("a measure needs at least one atom")
        if np.any(self.w <= 0):
            raise ValidationError("all weights must be strictly positive")
        if not (0 < self.alpha <= self.dim):
            raise ValidationError(f"alpha must lie in (0, {self.dim}]")
        if self.resolution <= 0:
            raise ValidationError("resolution must be positive")

    # -- basic queries ------------------------------------------------------

    @property
    def n_atoms(self) -> int:
        return int(self.x.shape[0])

    @property
    def total_mass(self) -> float:
        return float(self.w.sum())

    @property
    def resolution_level(self) -> int:
        return int(round(-math.log2(self.resolution)))

    def bbox(self, margin: float = 0.0) -> tuple:
        return self.x.min(axis=0) - margin, self.x.max(axis=0) + margin

    def select(self, box: Box) -> np.ndarray:
        """Indices of atoms inside a box (respecting its open flag)."""
        return np.nonzero(box.contains(self.x))[0]

    def mass(self, box: Box) -> float:
        return float(self.w[box.contains(self.x)].sum())

    def quadrant_key(self) -> np.ndarray:
        """Integer code of each atom's open quadrant (sign pattern)."""
        return ((self.x < 0).astype(np.int64) * (2 ** np.arange(self.dim))).sum(axis=1)

    # -- file round trip ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": FILE_VERSION,
            "dim": self.dim,
            "alpha": self.alpha,
            "resolution": self.resolution,
            "label": self.label,
            "atoms": {"x": self.x.tolist(), "w": self.w.tolist()},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def load(path) -> "AtomicMeasure":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}") from exc
        for key in ("version", "dim", "alpha", "resolution", "atoms"):
            if key not in d:
                raise ParseError(f"{path}: missing field {key!r}")
        if d["version"] != FILE_VERSION:
            raise ParseError(f"{path}: unsupported version {d['version']}")
        atoms = d["atoms"]
        if "x" not in atoms or "w" not in atoms:
            raise ParseError(f"{path}: atoms must carry 'x' and 'w'")
        x = np.asarray(atoms["x"], dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(atoms["w"], dtype=float)
        if np.any(w <= 0):
            raise ValidationError(f"{path}: nonpositive weight")
        return AtomicMeasure(
            dim=int(d["dim"]),
            alpha=float(d["alpha"]),
            x=x,
            w=w,
            resolution=float(d["resolution"]),
            label=str(d.get("label", "")),
        )


def skeleton_hits(mu: AtomicMeasure, depth: int | None = None) -> np.ndarray:
    """Atoms with some coordinate on the standard dyadic skeleton up to depth."""
    depth = mu.resolution_level if depth is None else depth
    scaled = mu.x * 2.0**depth
    return np.nonzero(np.any(scaled == np.round(scaled), axis=1))[0]


def validate_measure(mu: AtomicMeasure, depth: int | None = None) -> list:
    """Diagnostics list; empty when the measure is clean for dyadic scanning."""
    issues = []
    hits = skeleton_hits(mu, depth)
    if hits.size:
        issues.append(
            f"{hits.size} atom(s) on the dyadic skeleton up to depth "
            f"{mu.resolution_level if depth is None else depth} (first index {hits[0]})"
        )
    dup = mu.n_atoms - np.unique(mu.x, axis=0).shape[0]
    if dup:
        issues.append(f"{dup} duplicate atom position(s)")
    return issues


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

SEGMENT_HEIGHT = 0.3  # off the dyadic skeleton at every practical depth


def _next_pow2(n: int) -> int:
    """Round up to a power of two so midpoint atoms stay off the skeleton."""
    return 1 << (n - 1).bit_length()


def segment_measure(n_atoms: int = 2**14, y0: float = SEGMENT_HEIGHT) -> AtomicMeasure:
    """Arclength on [0,1] x {y0}: midpoint atoms of weight 1/N, alpha = 1."""
    if n_atoms < 4:
        raise ValidationError("atom budget must be >= 4")
    n = _next_pow2(n_atoms)
    xs = (2 * np.arange(n) + 1) / (2 * n)
    x = np.column_stack([xs, np.full(n, y0)])
    return AtomicMeasure(2, 1.0, x, np.full(n, 1.0 / n), 1.0 / n, "segment",
                         {"y0": y0})


def square_measure(n_cells: int = 2**7, alpha: float = 1.0) -> AtomicMeasure:
    """Area on the unit square: N x N midpoint atoms of weight 1/N^2."""
    if n_cells < 2:
        raise ValidationError("atom budget must be >= 4 (N >= 2 cells per axis)")
    n = _next_pow2(n_cells)
    g = (2 * np.arange(n) + 1) / (2 * n)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    x = np.column_stack([xx.ravel(), yy.ravel()])
    return AtomicMeasure(2, alpha, x, np.full(n * n, 1.0 / n**2), 1.0 / n, "square")


def cantor4_measure(generation: int = 4) -> AtomicMeasure:
    """Generation-g quarter-Cantor corner measure: 4^g atoms of weight 4^-g."""
    if generation < 1:
        raise ValidationError("generation must be >= 1")
    corners = np.array([[0.0, 0.0]])
    side = 1.0
    for _ in range(generation):
        side /= 4.0
        offs = np.array([[0.0, 0.0], [3 * side, 0.0], [0.0, 3 * side], [3 * side, 3 * side]])
        corners = (corners[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    x = corners + side / 2.0
    n = x.shape[0]
    return AtomicMeasure(2, 1.0, x, np.full(n, 1.0 / n), side, f"cantor4-g{generation}",
                         {"generation": generation})


def random_measure(
    n_atoms: int,
    dim: int,
    seed: int,
    depth: int = 8,
    span: float = 1.0,
) -> AtomicMeasure:
    """Random atoms at odd multiples of 2^-(depth+1): off-skeleton by design."""
    rng = np.random.default_rng(seed)
    cells = 2**depth
    seen = set()
    pts = []
    while len(pts) < n_atoms:
        cand = tuple(int(v) for v in rng.integers(0, cells, size=dim))
        if cand not in seen:
            seen.add(cand)
            pts.append(cand)
    x = (2 * np.asarray(pts, dtype=float) + 1) / (2 * cells) * span
    w = rng.uniform(0.2, 1.0, size=n_atoms)
    w /= w.sum()
    return AtomicMeasure(dim, 1.0, x, w, span / cells, f"random-{seed}")


def generate(kind: str, **params) -> AtomicMeasure:
    if kind == "segment":
        return segment_measure(params.get("n_atoms", 2**14), params.get("y0", SEGMENT_HEIGHT))
    if kind == "square":
        return square_measure(params.get("n_cells", 2**7), params.get("alpha", 1.0))
    if kind == "cantor4":
        return cantor4_measure(params.get("generation", 4))
    if kind == "file":
        return AtomicMeasure.load(params["path"])
    raise ValidationError(f"unknown measure kind {kind!r}")


# ---------------------------------------------------------------------------
# averages, growth, densities
# ---------------------------------------------------------------------------

def mass_and_average(mu: AtomicMeasure, cube, f) -> tuple:
    """(mass, mass-weighted average of f) over a cube; average 0 on zero mass."""
    box = cube.box if isinstance(cube, CubeId) else cube
    idx = mu.select(box)
    m = float(mu.w[idx].sum())
    if m == 0.0:
        return 0.0, 0.0
    vals = f(mu.x[idx]) if callable(f) else np.asarray(f)[idx]
    avg = np.sum(mu.w[idx] * vals) / m
    return m, (complex(avg) if np.iscomplexobj(vals) else float(avg))


def growth_check(
    mu: AtomicMeasure,
    alpha: float,
    levels,
    grids=None,
    ceiling: float | None = None,
) -> dict:
    """Scan rho(I) = mu(I)/side^alpha over grids and levels.

    Returns the maximal density C_growth, its witness cube, and the cubes
    exceeding ``ceiling`` when one is given.
    """
    levels = list(levels)
    if max(levels) > mu.resolution_level:
        raise RangeError(
            f"levels beyond the resolution level {mu.resolution_level} are not faithful"
        )
    grids = grids or [GridRef.standard(mu.dim)]
    lo, hi = mu.bbox()
    best, witness, violations = 0.0, None, []
    for grid in grids:
        for k in levels:
            for cube in cubes_at_level(grid, k, lo, hi):
                rho = mu.mass(cube.box) / cube.side**alpha
                if rho > best:
                    best, witness = rho, cube
                if ceiling is not None and rho > ceiling:
                    violations.append((cube, rho))
    return {"C_growth": best, "witness": witness, "violations": violations}


@dataclass
class DensityProfile:
    rho: float
    rho_in: float
    rho_out: float
    floor: float
    tail_bound: float

    @property
    def rho_mu(self) -> float:
        return self.rho_in + self.rho_out

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "rho_in": self.rho_in,
            "rho_out": self.rho_out,
            "rho_mu": self.rho_mu,
            "floor": self.floor,
            "tail_bound": self.tail_bound,
        }


def _ball_sup(mu, idx, box, alpha, floor):
    """sup over candidate centers and a dyadic ladder of radii of
    mu(I cap B(t,r)) / r^alpha."""
    if idx.size == 0:
        return 0.0
    pts = mu.x[idx]
    wts = mu.w[idx]
    diam = float(np.linalg.norm(box.hi_arr - box.lo_arr))
    # candidate centers: capped stride of atoms, plus vertices and the center
    stride = max(1, idx.size // 512)
    cands = [pts[::stride], box.center[None, :]]
    free = np.nonzero(box.free_mask)[0]
    if free.size:
        from itertools import product as _prod

        verts = []
        for bits in _prod((0, 1), repeat=free.size):
            v = box.lo_arr.copy()
            for d, b in zip(free, bits):
                v[d] = box.hi_arr[d] if b else box.lo_arr[d]
            verts.append(v)
        cands.append(np.asarray(verts))
    centers = np.vstack(cands)
    # radii: geometric ladder from the floor, plus the circumscribing radius
    ladder = []
    r = floor
    while r <= 2 * diam:
        ladder.append(r)
        r *= 2.0
    ladder.append(0.5 * math.sqrt(box.n) * box.side * (1 + 1e-12))
    ladder = np.asarray(sorted(set(ladder)))
    best = 0.0
    for t in centers:
        d = np.linalg.norm(pts - t, axis=1)
        order = np.argsort(d)
        cum = np.concatenate([[0.0], np.cumsum(wts[order])])
        # open ball: strictly closer than r
        pos = np.searchsorted(d[order], ladder, side="left")
        ratios = cum[pos] / ladder**alpha
        best = max(best, float(ratios.max()))
    return best


def _radial_entry(mu, box):
    """Smallest integer m with atom inside the dilation m*box (per atom)."""
    c = box.center
    half = 0.5 * (box.hi_arr - box.lo_arr)
    m_req = np.ones(mu.n_atoms)
    frozen = ~box.free_mask
    for d in range(box.n):
        xd = mu.x[:, d]
        if frozen[d]:
            m_req = np.where(xd == c[d], m_req, np.inf)
            continue
        left = np.ceil((c[d] - xd) / half[d])
        right = np.floor((xd - c[d]) / half[d]) + 1.0
        m_req = np.maximum(m_req, np.maximum(left, right))
    return m_req


def density_profile(
    mu: AtomicMeasure,
    cube,
    delta: float,
    tail_target: float = 1e-6,
) -> DensityProfile:
    """rho, rho_in (ladder sup with floor h) and rho_out (certified tail).

    rho_out sums rho(mI) * m^-(delta/2+1) exactly until every atom has entered
    the dilations, then brackets the analytic remainder by integrals; the
    reported value is a lower bound and ``tail_bound`` certifies the error.
    """
    box = cube.box if isinstance(cube, CubeId) else cube
    ell = box.side
    if ell < mu.resolution:
        raise RangeError(f"cube side {ell} below resolution {mu.resolution}")
    alpha = mu.alpha
    idx = mu.select(box)
    m_in = float(mu.w[idx].sum())
    rho = m_in / ell**alpha

    rho_in = _ball_sup(mu, idx, box, alpha, mu.resolution)

    s = alpha + delta / 2.0 + 1.0
    entries = _radial_entry(mu, box)
    finite = np.isfinite(entries)
    mtot = float(mu.w[finite].sum())
    if mtot == 0.0:
        return DensityProfile(rho, rho_in, 0.0, mu.resolution, 0.0)
    m0 = int(entries[finite].max())
    m_exact = max(
        m0, int(math.ceil((mtot / (ell**alpha * tail_target)) ** (1.0 / s))) + 1
    )
    m_exact = max(m_exact, 2)
    counts = np.bincount(
        np.minimum(entries[finite], m_exact).astype(np.int64),
        weights=mu.w[finite],
        minlength=m_exact + 1,
    )
    cum = np.cumsum(counts)[1:]  # cum[m-1] = mu(mI) for m = 1..m_exact
    ms = np.arange(1, m_exact + 1, dtype=float)
    rho_out = float(np.sum(cum / (ms * ell) ** alpha * ms ** -(delta / 2.0 + 1.0)))
    # analytic remainder: all atoms are inside for m > m_exact
    lo_int = mtot / ell**alpha * (m_exact + 1) ** (1.0 - s) / (s - 1.0)
    hi_int = mtot / ell**alpha * m_exact ** (1.0 - s) / (s - 1.0)
    rho_out += lo_int
    return DensityProfile(rho, rho_in, rho_out, mu.resolution, hi_int - lo_int)


def support_line(mu: AtomicMeasure, axis: int = 1) -> float | None:
    """The common coordinate when all atoms share one (e.g. a segment's height)."""
    vals = np.unique(mu.x[:, axis])
    return float(vals[0]) if vals.size == 1 else None
