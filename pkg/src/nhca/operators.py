"""Truncated operators on atomic measures: application, forms, testing norms.

Everything is a finite weighted sum: (Tf)(x_j) = sum_k w_k K(x_k, x_j) f(x_k).
Dual pairs are bilinear (no conjugation).  Per-cube testing statistics are
cached by the exact atom index set, so scans over nested windows never repeat
a kernel double sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DiagonalError, ValidationError
from .grid import Box, CubeId
from .haar import (
    HaarCoefficientMap,
    analyze,
    check_range_complete,
    remove_quadrant_means,
    synthesize,
    wavelet_values,
    l2_norm,
)
from .kernels import KernelSpec
from .measure import AtomicMeasure

_BLOCK_ELEMS = 1 << 22


def kernel_column_sums(kernel, src_x, src_w, tgt_x):
    """sum_k w_k K(x_k, t) for each target t, in memory-bounded blocks."""
    n_t = tgt_x.shape[0]
    out = np.zeros(n_t, dtype=complex)
    if src_x.shape[0] == 0:
        return out
    rows = max(1, _BLOCK_ELEMS // max(src_x.shape[0], 1))
    for a in range(0, n_t, rows):
        b = min(a + rows, n_t)
        vals = kernel.evaluate(src_x[None, :, :], tgt_x[a:b, None, :])
        out[a:b] = vals @ src_w
    return out


def apply(kernel: KernelSpec, mu: AtomicMeasure, f, targets=None) -> np.ndarray:
    """Tf at the atoms (or at explicit target points)."""
    f = np.asarray(f)
    if targets is None:
        if not kernel.diagonal_safe:
            raise DiagonalError(
                "applying a non-truncated kernel at its own atoms hits the diagonal"
            )
        targets = mu.x
    targets = np.asarray(targets, dtype=float)
    return kernel_column_sums(kernel, mu.x, mu.w * f, targets)


def bilinear(kernel: KernelSpec, mu: AtomicMeasure, f, g) -> complex:
    """<Tf, g> = sum_j w_j (Tf)(x_j) g(x_j), bilinear in both slots."""
    tf = apply(kernel, mu, f)
    return complex(np.sum(mu.w * tf * np.asarray(g)))


@dataclass
class TestingStat:
    cube: object
    mass: float
    t_norm: float
    tstar_norm: float
    f_t: float
    zero_mass: bool = False

    def csv_row(self):
        c = self.cube
        if isinstance(c, CubeId):
            grid, level, corner = c.grid.kind, c.level, ";".join(map(str, c.corner))
            side = c.side
        else:
            grid, level, corner, side = "box", "", "", c.side
        return (grid, level, corner, side, self.mass, self.t_norm, self.tstar_norm, self.f_t)


def testing_stats(kernel: KernelSpec, mu: AtomicMeasure, cube, cache: dict | None = None) -> TestingStat:
    """Restricted testing norms ||chi_I T chi_I|| and the ratio f_t.

    f_t = max(t_norm, tstar_norm) / mass^(1/2), and 0 on zero-mass cubes.
    """
    box = cube.box if isinstance(cube, CubeId) else cube
    idx = mu.select(box)
    if idx.size == 0:
        return TestingStat(cube, 0.0, 0.0, 0.0, 0.0, zero_mass=True)
    key = None
    if cache is not None:
        key = (idx.size, hash(idx.tobytes()))
        hit = cache.get(key)
        if hit is not None:
            return TestingStat(cube, hit[0], hit[1], hit[2], hit[3])
    x, w = mu.x[idx], mu.w[idx]
    mass = float(w.sum())
    tvals = kernel_column_sums(kernel, x, w, x)
    t_norm = math.sqrt(float(np.sum(w * np.abs(tvals) ** 2)))
    if getattr(kernel, "antisymmetric", False):
        tstar_norm = t_norm
    else:
        swapped = _SwappedKernel(kernel)
        svals = kernel_column_sums(swapped, x, w, x)
        tstar_norm = math.sqrt(float(np.sum(w * np.abs(svals) ** 2)))
    f_t = max(t_norm, tstar_norm) / math.sqrt(mass)
    if cache is not None:
        cache[key] = (mass, t_norm, tstar_norm, f_t)
    return TestingStat(cube, mass, t_norm, tstar_norm, f_t)


class _SwappedKernel:
    def __init__(self, kernel):
        self._k = kernel

    def evaluate(self, t, x):
        return self._k.evaluate(x, t)


def adjoint(kernel: KernelSpec) -> KernelSpec:
    """T*: the operator with kernel K*(t,x) = K(x,t)."""
    from dataclasses import replace

    base = kernel.evaluate
    return replace(kernel, evaluate=lambda t, x: base(x, t), name=kernel.name + "*")


def wavelet_pair(kernel: KernelSpec, mu: AtomicMeasure, I: CubeId, J: CubeId) -> complex:
    """<T psi_I, psi_J> by the exact atom double sum over the supports."""
    vi = wavelet_values(mu, I)
    vj = wavelet_values(mu, J)
    src = np.nonzero(vi)[0]
    tgt = np.nonzero(vj)[0]
    if src.size == 0 or tgt.size == 0:
        return 0.0 + 0.0j
    col = kernel_column_sums(kernel, mu.x[src], mu.w[src] * vi[src], mu.x[tgt])
    return complex(np.sum(mu.w[tgt] * vj[tgt] * col))


def pair_double_sum(kernel, mu, cmap_f: dict, cmap_g: dict) -> complex:
    """Literal sum over coefficient pairs of c_I d_J <T psi_I, psi_J>."""
    total = 0.0 + 0.0j
    for I, ci in cmap_f.items():
        if ci == 0:
            continue
        for J, dj in cmap_g.items():
            if dj == 0:
                continue
            total += ci * dj * wavelet_pair(kernel, mu, I, J)
    return total


@dataclass
class CompressionResult:
    coefficient_value: complex
    direct_value: complex
    residual: float
    removed_mean_f: float
    removed_mean_g: float
    window_size: int
    complement_size: int


def compressed_bilinear(
    kernel: KernelSpec,
    mu: AtomicMeasure,
    f,
    g,
    M: int,
    level_range: tuple | None = None,
    M_f: int | None = None,
) -> CompressionResult:
    """Both sides of the lagom compression identity and their residual.

    The coefficient route synthesizes the window-complement expansions of f
    and g and pushes them through the kernel form; the direct route applies
    the projections P_M to the functions themselves.  Per-quadrant means are
    removed first (and reported), since the expansion only ever sees the
    mean-free part.  ``M_f`` lets the f-side use a different window (the main
    decomposition pairs window 2M on f with window M on g).
    """
    from .grid import lagom_membership

    M_f = M if M_f is None else M_f
    f0 = remove_quadrant_means(mu, np.asarray(f))
    g0 = remove_quadrant_means(mu, np.asarray(g))
    if level_range is not None:
        check_range_complete(mu, f0, level_range)
        check_range_complete(mu, g0, level_range)
    cf = analyze(mu, f0, level_range)
    cg = analyze(mu, g0, level_range)

    def split(cmap, M_):
        win, comp = {}, {}
        for cube, c in cmap.entries.items():
            (win if lagom_membership(cube, M_) else comp)[cube] = c
        return win, comp

    win_f, comp_f = split(cf, M_f)
    win_g, comp_g = split(cg, M)
    perp_f_sum = synthesize(mu, HaarCoefficientMap(comp_f, cf.level_range, cf.grid))
    perp_g_sum = synthesize(mu, HaarCoefficientMap(comp_g, cg.level_range, cg.grid))
    value_coeff = bilinear(kernel, mu, perp_f_sum, perp_g_sum)

    pf = f0 - synthesize(mu, HaarCoefficientMap(win_f, cf.level_range, cf.grid))
    pg = g0 - synthesize(mu, HaarCoefficientMap(win_g, cg.level_range, cg.grid))
    value_direct = bilinear(kernel, mu, pf, pg)

    scale = max(
        abs(value_coeff),
        abs(value_direct),
        1e-12 * max(l2_norm(mu, f0) * l2_norm(mu, g0), 1e-300),
    )
    residual = abs(value_coeff - value_direct) / scale if scale > 0 else 0.0
    mean_f = float(np.mean(np.abs(np.asarray(f) - f0)))
    mean_g = float(np.mean(np.abs(np.asarray(g) - g0)))
    return CompressionResult(
        value_coeff, value_direct, residual, mean_f, mean_g,
        len(win_f) + len(win_g), len(comp_f) + len(comp_g),
    )
