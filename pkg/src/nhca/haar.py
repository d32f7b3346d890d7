"""Measure-adapted Haar wavelets, martingale operators and lagom projections.

The wavelet attached to a cube I with parent I_p is

    psi_I = mu(I)^(1/2) * (chi_I / mu(I) - chi_Ip / mu(I_p)),

and psi_I = 0 when mu(I) = 0.  The system is not orthogonal across siblings,
but after removing per-quadrant means it satisfies Parseval's identity, which
is what the compression diagnostics rely on.  For a finite atomic measure all
coefficient sums are finite: coefficients vanish above the support scale and
below the atom-isolation scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IncompleteRangeError, RangeError, ValidationError
from .grid import MAX_LEVEL, Box, CubeId, GridRef, lagom_membership
from .measure import AtomicMeasure


def l2_norm(mu: AtomicMeasure, f) -> float:
    v = np.asarray(f)
    return float(np.sqrt(np.sum(mu.w * np.abs(v) ** 2)))


def inner(mu: AtomicMeasure, f, g) -> complex:
    """Bilinear dual pair sum w_j f_j g_j (no conjugation)."""
    return complex(np.sum(mu.w * np.asarray(f) * np.asarray(g)))


class HaarSystem:
    """Per-level cell tables of one grid family over one measure (cached)."""

    def __init__(self, mu: AtomicMeasure, grid: GridRef | None = None):
        self.mu = mu
        self.grid = grid or GridRef.standard(mu.dim)
        if self.grid.is_boundary:
            raise ValidationError("Haar systems require a full-dimensional grid")
        self._levels: dict = {}
        self._indexes: dict = {}
        self._shifted = mu.x - self.grid.shift

    @staticmethod
    def of(mu: AtomicMeasure, grid: GridRef | None = None) -> "HaarSystem":
        grid = grid or GridRef.standard(mu.dim)
        cache = mu.meta.setdefault("_haar_systems", {})
        if grid.kind not in cache:
            cache[grid.kind] = HaarSystem(mu, grid)
        return cache[grid.kind]

    # -- per-level tables ----------------------------------------------------

    def cells(self, level: int):
        """(keys, inverse, masses): unique occupied cells at a level."""
        if abs(level) > MAX_LEVEL:
            raise RangeError(f"level {level} beyond supported range")
        tab = self._levels.get(level)
        if tab is None:
            raw = np.floor(self._shifted * 2.0**level).astype(np.int64)
            keys, inverse = np.unique(raw, axis=0, return_inverse=True)
            masses = np.bincount(inverse, weights=self.mu.w, minlength=len(keys))
            tab = (keys, inverse.ravel(), masses)
            self._levels[level] = tab
        return tab

    def cell_sums(self, level: int, f) -> np.ndarray:
        keys, inverse, _ = self.cells(level)
        vals = np.asarray(f)
        if np.iscomplexobj(vals):
            re = np.bincount(inverse, weights=self.mu.w * vals.real, minlength=len(keys))
            im = np.bincount(inverse, weights=self.mu.w * vals.imag, minlength=len(keys))
            return re + 1j * im
        return np.bincount(inverse, weights=self.mu.w * vals, minlength=len(keys))

    def isolation_level(self) -> int:
        """Finest level at which some cube still holds more than one atom, +1."""
        k = self.mu.resolution_level
        while k <= MAX_LEVEL:
            keys, _, _ = self.cells(k)
            if len(keys) == self.mu.n_atoms:
                return k
            k += 1
        raise RangeError("atoms too close to separate within the level budget")

    def top_level(self) -> int:
        """Coarsest level that can carry a nonzero coefficient."""
        k = min(0, self.mu.resolution_level)
        while k > -MAX_LEVEL:
            keys, _, _ = self.cells(k - 1)
            per_quadrant = len(np.unique(keys < 0, axis=0))
            if len(keys) == per_quadrant:
                return k
            k -= 1
        raise RangeError("support too wide for the level budget")

    def default_range(self) -> tuple:
        return self.top_level(), self.isolation_level()

    def parent_lookup(self, level: int):
        """Map each level-``level`` cell to its parent cell index at level-1.

        Every occupied cell shares all its atoms with one parent cell, so any
        representative atom identifies the parent.
        """
        keys, inverse, _ = self.cells(level)
        _, pinverse, pmass = self.cells(level - 1)
        rep = np.zeros(len(keys), dtype=np.int64)
        rep[inverse] = np.arange(self.mu.n_atoms)
        return pinverse[rep], pmass

    def cell_index(self, level: int) -> dict:
        """corner tuple -> position in the cells(level) table."""
        tab = self._indexes.get(level)
        if tab is None:
            keys, _, _ = self.cells(level)
            tab = {tuple(map(int, row)): i for i, row in enumerate(keys)}
            self._indexes[level] = tab
        return tab

    def cube(self, level: int, key) -> CubeId:
        return CubeId(self.grid, level, tuple(int(v) for v in key))


# ---------------------------------------------------------------------------
# wavelets and martingale operators
# ---------------------------------------------------------------------------

def wavelet_values(mu: AtomicMeasure, I: CubeId) -> np.ndarray:
    """psi_I at every atom (zero array when mu(I) = 0)."""
    vals = np.zeros(mu.n_atoms)
    box = I.box
    mi = mu.select(box)
    m_i = float(mu.w[mi].sum())
    if m_i == 0.0:
        return vals
    mp = mu.select(I.parent().box)
    m_p = float(mu.w[mp].sum())
    r = math.sqrt(m_i)
    vals[mp] -= r / m_p
    vals[mi] += r / m_i
    return vals


def full_wavelet_values(mu: AtomicMeasure, I: CubeId, J_p: CubeId, Q: Box) -> np.ndarray:
    """psi^full_{I,J_p}: the constant psi-profile seen from c(J_p), cut to Q."""
    vals = np.zeros(mu.n_atoms)
    m_i = mu.mass(I.box)
    if m_i == 0.0:
        return vals
    m_p = mu.mass(I.parent().box)
    c = np.asarray(J_p.center)[None, :]
    const = math.sqrt(m_i) * (
        float(I.box.contains(c)[0]) / m_i - float(I.parent().box.contains(c)[0]) / m_p
    )
    inq = mu.select(Q)
    vals[inq] = const
    return vals


def wavelet_eval(mu, I: CubeId, variant: str = "plain", J_p: CubeId | None = None,
                 Q: Box | None = None) -> np.ndarray:
    if variant == "plain":
        return wavelet_values(mu, I)
    if variant == "full":
        if J_p is None or Q is None:
            raise ValidationError("full variant needs J_p and Q")
        return full_wavelet_values(mu, I, J_p, Q)
    raise ValidationError(f"unknown wavelet variant {variant!r}")


def martingale(mu, f, Q: CubeId, which: str, J_p: CubeId | None = None,
               bigQ: Box | None = None) -> np.ndarray:
    """E_Q, Delta_Q and their localized hat-variants, as values at atoms."""
    f = np.asarray(f)

    def avg(box):
        idx = mu.select(box)
        m = float(mu.w[idx].sum())
        return (np.sum(mu.w[idx] * f[idx]) / m) if m > 0 else 0.0

    if which == "E":
        out = np.zeros(mu.n_atoms, dtype=f.dtype)
        idx = mu.select(Q.box)
        out[idx] = avg(Q.box)
        return out
    if which == "Delta":
        out = np.zeros(mu.n_atoms, dtype=f.dtype)
        for child in Q.children():
            idx = mu.select(child.box)
            out[idx] = avg(child.box)
        idx = mu.select(Q.box)
        out[idx] -= avg(Q.box)
        return out
    if which in ("E_hat", "Delta_hat"):
        if J_p is None or bigQ is None:
            raise ValidationError("hat variants need J_p and bigQ")
        c = np.asarray(J_p.center)[None, :]
        inq = mu.select(bigQ)

        def ehat(box):
            out = np.zeros(mu.n_atoms, dtype=f.dtype)
            if bool(box.contains(c)[0]):
                out[inq] = avg(box)
            return out

        if which == "E_hat":
            return ehat(Q.box)
        return sum(ehat(ch.box) for ch in Q.children()) - ehat(Q.box)
    raise ValidationError(f"unknown martingale operator {which!r}")


def gram(mu: AtomicMeasure, I: CubeId, J: CubeId, debug: bool = False) -> float:
    """<psi_I, psi_J> in closed form: zero unless the parents coincide."""
    m_i, m_j = mu.mass(I.box), mu.mass(J.box)
    if m_i == 0.0 or m_j == 0.0:
        value = 0.0
    elif I.parent() != J.parent():
        value = 0.0
    else:
        m_p = mu.mass(I.parent().box)
        value = math.sqrt(m_i) * math.sqrt(m_j) * ((1.0 if I == J else 0.0) / m_i - 1.0 / m_p)
    if debug:
        brute = float(np.sum(mu.w * wavelet_values(mu, I) * wavelet_values(mu, J)))
        if abs(brute - value) > 1e-12:
            raise AssertionError(f"gram closed form {value} vs atom sum {brute}")
    return value


# ---------------------------------------------------------------------------
# analysis / synthesis
# ---------------------------------------------------------------------------

@dataclass
class HaarCoefficientMap:
    entries: dict               # CubeId -> coefficient
    level_range: tuple
    grid: GridRef

    def __iter__(self):
        return iter(self.entries.items())

    def __len__(self):
        return len(self.entries)

    def coefficient_energy(self) -> float:
        return float(sum(abs(c) ** 2 for c in self.entries.values()))

    def to_csv_rows(self):
        for cube, c in sorted(
            self.entries.items(), key=lambda kv: (kv[0].level, kv[0].corner)
        ):
            z = complex(c)
            yield (
                cube.grid.kind,
                cube.level,
                ";".join(str(j) for j in cube.corner),
                z.real,
                z.imag,
            )


def analyze(mu, f, level_range: tuple | None = None, grid: GridRef | None = None,
            drop_tol: float = 0.0) -> HaarCoefficientMap:
    """All coefficients <f, psi_I> for occupied cubes in the level range.

    The default range spans every level that can carry a nonzero coefficient,
    so synthesize(analyze(f)) reproduces f minus its per-quadrant means.
    """
    sysm = HaarSystem.of(mu, grid)
    if level_range is None:
        level_range = sysm.default_range()
    k_lo, k_hi = level_range
    if 2.0**-k_hi < mu.resolution * (1 - 1e-12):
        raise RangeError(
            f"analysis level {k_hi} finer than the resolution level "
            f"{mu.resolution_level}"
        )
    f = np.asarray(f)
    entries: dict = {}
    for k in range(k_lo, k_hi + 1):
        keys, _, masses = sysm.cells(k)
        sums = sysm.cell_sums(k, f)
        pidx, pmass = sysm.parent_lookup(k)
        psums = sysm.cell_sums(k - 1, f)
        coef = np.sqrt(masses) * (sums / masses - psums[pidx] / pmass[pidx])
        keep = np.abs(coef) > drop_tol if drop_tol else np.abs(coef) >= 0
        for row, c in zip(keys[keep], coef[keep]):
            entries[sysm.cube(k, row)] = complex(c) if np.iscomplexobj(coef) else float(c)
    return HaarCoefficientMap(entries, (k_lo, k_hi), sysm.grid)


def synthesize(mu, cmap: HaarCoefficientMap) -> np.ndarray:
    """Evaluate the coefficient expansion at the atoms."""
    sysm = HaarSystem.of(mu, cmap.grid)
    by_level: dict = {}
    for cube, c in cmap.entries.items():
        by_level.setdefault(cube.level, []).append((cube.corner, c))
    is_complex = any(isinstance(c, complex) for c in cmap.entries.values())
    out = np.zeros(mu.n_atoms, dtype=complex if is_complex else float)
    for k, items in by_level.items():
        keys, inverse, masses = sysm.cells(k)
        _, pinverse, pmass = sysm.cells(k - 1)
        coef = np.zeros(len(keys), dtype=out.dtype)
        index = sysm.cell_index(k)
        for corner, c in items:
            coef[index[corner]] = c
        amp = coef * np.sqrt(masses)
        out += (amp / masses)[inverse]
        pidx, _ = sysm.parent_lookup(k)
        psum = np.zeros(len(pmass), dtype=out.dtype)
        np.add.at(psum, pidx, amp)
        out -= (psum / pmass)[pinverse]
    return out


def quadrant_means(mu, f) -> np.ndarray:
    """Per-atom value of the mean of f over the atom's open quadrant."""
    f = np.asarray(f)
    codes = mu.quadrant_key()
    out = np.zeros(mu.n_atoms, dtype=f.dtype)
    for q in np.unique(codes):
        sel = codes == q
        out[sel] = np.sum(mu.w[sel] * f[sel]) / np.sum(mu.w[sel])
    return out


def remove_quadrant_means(mu, f) -> np.ndarray:
    return np.asarray(f) - quadrant_means(mu, f)


def parseval_residual(mu, f, level_range=None, grid=None) -> float:
    """| sum |<f,psi_I>|^2 - ||f - quadrant means||^2 | / ||f||^2."""
    cmap = analyze(mu, f, level_range, grid)
    target = l2_norm(mu, remove_quadrant_means(mu, f)) ** 2
    denom = l2_norm(mu, f) ** 2
    if denom == 0.0:
        return 0.0
    return abs(cmap.coefficient_energy() - target) / denom


def project(mu, f, M: int, side: str = "P_M", level_range=None, grid=None) -> np.ndarray:
    """Lagom projection P_M f (or its complement P_M_perp f) at the atoms."""
    cmap = analyze(mu, f, level_range, grid)
    window = HaarCoefficientMap(
        {c: v for c, v in cmap.entries.items() if lagom_membership(c, M)},
        cmap.level_range,
        cmap.grid,
    )
    pm = synthesize(mu, window)
    if side == "P_M":
        return pm
    if side == "P_M_perp":
        return np.asarray(f) - pm
    raise ValidationError(f"unknown projection side {side!r}")


def window_complement_coefficients(cmap: HaarCoefficientMap, M: int) -> dict:
    return {c: v for c, v in cmap.entries.items() if not lagom_membership(c, M)}


def check_range_complete(mu, f, level_range, grid=None, tol: float = 1e-13):
    """Raise IncompleteRangeError if coefficients live outside the range."""
    sysm = HaarSystem.of(mu, grid)
    full_lo, full_hi = sysm.default_range()
    k_lo, k_hi = level_range
    missed = []
    scale = l2_norm(mu, f)
    for k in list(range(full_lo, min(k_lo, full_hi + 1))) + list(
        range(max(k_hi + 1, full_lo), full_hi + 1)
    ):
        cmap = analyze(mu, f, (k, k), grid)
        for cube, c in cmap.entries.items():
            if abs(c) > tol * max(scale, 1.0):
                missed.append(cube)
    if missed:
        raise IncompleteRangeError(
            f"{len(missed)} coefficient(s) outside levels [{k_lo}, {k_hi}]", missed
        )


def boundary_split(mu, f, grid: GridRef | None = None, depth: int | None = None):
    """(f_interior, f_skeleton): restriction to atoms off/on the grid skeleton."""
    grid = grid or GridRef.standard(mu.dim)
    depth = mu.resolution_level if depth is None else depth
    scaled = (mu.x - grid.shift) * 2.0**depth
    on = np.any(scaled == np.round(scaled), axis=1)
    f = np.asarray(f)
    f_skel = np.where(on, f, 0.0)
    return f - f_skel, f_skel
