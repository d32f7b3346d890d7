"""Theorem-level experiments: scans, compactness tables, bump and bucket reports.

All diagnostics are pure functions of (kernel, measure, config).  Scans walk
countable cube families over a window around the measure's support; the
compactness verdict compares suprema of testing ratios and densities across a
ladder of lagom windows.  The bucket report reorganizes the compressed
bilinear form into the distant / nested / paraproduct / borderline pieces and
checks that the reorganization is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as _dc_replace
from itertools import product as _prod

import numpy as np

from .errors import (
    EmptyScanError,
    InsufficientRangeError,
    InternalError,
    PreconditionError,
    RangeError,
    ValidationError,
)
from .geometry import pair_geometry, pairwise_dist, pairwise_skeleton_dist
from .grid import (
    Box,
    CubeId,
    GridRef,
    boundary_grid_cubes,
    central_box,
    cubes_at_level,
    inner_skeleton_dist,
    lagom_membership,
)
from .haar import (
    HaarSystem,
    analyze,
    full_wavelet_values,
    l2_norm,
    martingale,
    remove_quadrant_means,
    synthesize,
    wavelet_values,
)
from .haar import HaarCoefficientMap
from .kernels import KernelSpec, f_1, f_2mu, f_3, f_K
from .measure import AtomicMeasure, density_profile, mass_and_average, skeleton_hits
from .operators import bilinear, kernel_column_sums, testing_stats
from .parallel import run_map


def _family_cubes(mu: AtomicMeasure, family, levels, frozen_values=None) -> list:
    """Enumerate a family's cubes over the support window."""
    lo, hi = mu.bbox(margin=1e-9)
    if isinstance(family, GridRef):
        grid = family
    elif family == "std":
        grid = GridRef.standard(mu.dim)
    elif family.startswith("sh"):
        grid = GridRef.shifted(int(family[2:]), mu.dim)
    elif family.startswith("bd"):
        r = int(family[2:])
        return boundary_grid_cubes(r, mu.dim, lo, hi, levels, frozen_values)
    else:
        raise ValidationError(f"unknown family {family!r}")
    out = []
    for k in levels:
        out.extend(cubes_at_level(grid, k, lo, hi))
    return out


@dataclass
class ScanResult:
    stats: list
    level_sup: dict
    skipped_zero_mass: int

    def csv_rows(self):
        yield ("grid", "level", "corner", "side", "mass", "t_norm", "tstar_norm", "f_t")
        for st in self.stats:
            yield st.csv_row()


def testing_scan(
    kernel: KernelSpec,
    mu: AtomicMeasure,
    family="std",
    levels=range(0, 6),
    dilations=(1,),
    frozen_values: dict | None = None,
    cache: dict | None = None,
    threads: int | None = None,
) -> ScanResult:
    """Testing statistics over one cube family, with per-level suprema."""
    levels = list(levels)
    cubes = _family_cubes(mu, family, levels, frozen_values)
    if not cubes:
        raise EmptyScanError(f"family {family} has no cubes at levels {levels}")
    cache = {} if cache is None else cache
    jobs = []
    for cube in cubes:
        for lam in dilations:
            jobs.append((cube, cube.box if lam == 1 else cube.box.dilate(float(lam))))

    def work(job):
        cube, box = job
        st = testing_stats(kernel, mu, box, cache)
        st.cube = cube
        return st

    results = run_map(work, jobs, threads)
    stats = [st for st in results if not st.zero_mass]
    skipped = len(results) - len(stats)
    if not stats:
        raise EmptyScanError("no cube in the window carries mass")
    level_sup: dict = {}
    for st in stats:
        k = st.cube.level
        level_sup[k] = max(level_sup.get(k, 0.0), st.f_t)
    return ScanResult(stats, level_sup, skipped)


# ---------------------------------------------------------------------------
# compactness table
# ---------------------------------------------------------------------------

@dataclass
class CompactnessTable:
    rows: list                     # dicts: M, sup_f_t, sup_rho_mu, cube_count
    verdict: str
    thresholds: dict
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "M": [r["M"] for r in self.rows],
            "sup_f_t": [r["sup_f_t"] for r in self.rows],
            "sup_rho_mu": [r["sup_rho_mu"] for r in self.rows],
            "cube_count": [r["cube_count"] for r in self.rows],
            "verdict": self.verdict,
            "thresholds": self.thresholds,
            "config": self.config,
        }


DEFAULT_THRESHOLDS = {"decay": 0.8, "growth": 1.5, "flat_band": 0.1}


def _verdict(f_sups, rho_sups, th) -> str:
    f0, f1 = f_sups[0], f_sups[-1]
    r0, r1 = rho_sups[0], rho_sups[-1]
    if f0 > 0 and r0 > 0 and f1 <= th["decay"] * f0 and r1 <= th["decay"] * r0:
        return "compact_consistent"
    if f0 > 0 and f1 >= th["growth"] * f0:
        return "unbounded_suspected"

    def flat(seq):
        lo, hi = min(seq), max(seq)
        return lo > 0 and hi / lo <= 1.0 + th["flat_band"]

    if flat(f_sups) and flat(rho_sups):
        return "bounded_noncompact"
    return "inconclusive"


def compactness_table(
    kernel: KernelSpec,
    mu: AtomicMeasure,
    M_range,
    delta: float,
    families=("std",),
    depth_window: int = 4,
    depth_cap: int | None = None,
    dilations=(1,),
    thresholds: dict | None = None,
    frozen_values: dict | None = None,
    threads: int | None = None,
) -> CompactnessTable:
    """Per-window suprema of f_t and rho_mu over the window complement.

    For each M the scan walks the levels M+1 .. M+depth_window (capped at the
    resolution level): the cubes just below the window, where the complement
    suprema live for compactly supported measures.  The verdict compares the
    first and last rows against configurable decay/growth/flatness thresholds,
    all echoed in the result.
    """
    M_values = sorted(M_range)
    if len(M_values) < 3:
        raise InsufficientRangeError("need at least 3 window sizes M")
    th = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
    depth_cap = mu.resolution_level if depth_cap is None else depth_cap
    if max(M_values) + 1 > depth_cap:
        raise RangeError("M range exceeds the scannable depth")
    # a uniform window across rows keeps cube counts monotone in M
    depth_window = min(depth_window, depth_cap - max(M_values))
    cache: dict = {}
    prof_cache: dict = {}
    rows = []
    for M in M_values:
        levels = range(M + 1, M + depth_window + 1)
        sup_f, sup_rho, count = 0.0, 0.0, 0
        for family in families:
            try:
                scan = testing_scan(
                    kernel, mu, family, levels, dilations, frozen_values, cache, threads
                )
            except EmptyScanError:
                continue
            for st in scan.stats:
                if lagom_membership(st.cube, M):
                    continue  # only the window complement feeds the verdict
                count += 1
                sup_f = max(sup_f, st.f_t)
                prof = prof_cache.get(st.cube)
                if prof is None:
                    prof = density_profile(mu, st.cube, delta, tail_target=1e-4)
                    prof_cache[st.cube] = prof
                sup_rho = max(sup_rho, prof.rho_mu)
        rows.append({"M": M, "sup_f_t": sup_f, "sup_rho_mu": sup_rho, "cube_count": count})
    if any(r["cube_count"] == 0 for r in rows):
        raise EmptyScanError("some window complement contained no massive cubes")
    verdict = _verdict([r["sup_f_t"] for r in rows], [r["sup_rho_mu"] for r in rows], th)
    config = {
        "families": list(map(str, families)),
        "depth_window": depth_window,
        "depth_cap": depth_cap,
        "delta": delta,
        "dilations": list(dilations),
    }
    return CompactnessTable(rows, verdict, th, config)


# ---------------------------------------------------------------------------
# occupied-cube helpers shared by the pair diagnostics
# ---------------------------------------------------------------------------

def occupied_cubes(mu: AtomicMeasure, levels, grid: GridRef | None = None) -> list:
    """All cubes with nonzero mass at the given levels."""
    sysm = HaarSystem.of(mu, grid)
    out = []
    for k in levels:
        keys, _, _ = sysm.cells(k)
        out.extend(sysm.cube(k, row) for row in keys)
    return out


def _cube_arrays(cubes):
    lo = np.array([c.box.lo for c in cubes])
    hi = np.array([c.box.hi for c in cubes])
    lop = np.array([c.parent().box.lo for c in cubes])
    hip = np.array([c.parent().box.hi for c in cubes])
    lev = np.array([c.level for c in cubes])
    return lo, hi, lop, hip, lev


def _pair_tables(cubes_f, cubes_g) -> dict:
    """Vectorized pair statistics indexed [i, j] = (I = f-cube, J = g-cube)."""
    lo_f, hi_f, lop_f, hip_f, lev_f = _cube_arrays(cubes_f)
    lo_g, hi_g, lop_g, hip_g, lev_g = _cube_arrays(cubes_g)
    A: dict = {}
    A["e"] = lev_g[None, :] - lev_f[:, None]            # side(I) = 2^e side(J)
    side_pf = 2.0 ** (1 - lev_f)[:, None]
    side_pg = 2.0 ** (1 - lev_g)[None, :]
    dist_p = pairwise_dist(
        lop_f[:, None, :], hip_f[:, None, :], lop_g[None, :, :], hip_g[None, :, :]
    )
    A["dist_p"] = dist_p
    A["rdist_p"] = 1.0 + dist_p / np.maximum(side_pf, side_pg)
    f_is_large = side_pg <= side_pf                     # ties: J_p is the smaller
    lo_small = np.where(f_is_large[..., None], lop_g[None, :, :], lop_f[:, None, :])
    hi_small = np.where(f_is_large[..., None], hip_g[None, :, :], hip_f[:, None, :])
    lo_large = np.where(f_is_large[..., None], lop_f[:, None, :], lop_g[None, :, :])
    hi_large = np.where(f_is_large[..., None], hip_f[:, None, :], hip_g[None, :, :])
    dsk = pairwise_skeleton_dist(lo_small, hi_small, lo_large, hi_large)
    A["inrdist_p"] = 1.0 + dsk / np.minimum(side_pf, side_pg)
    A["g_parent_in_f_parent"] = np.all(
        (lop_g[None, :, :] >= lop_f[:, None, :]) & (hip_g[None, :, :] <= hip_f[:, None, :]),
        axis=-1,
    )
    A["f_parent_in_g_parent"] = np.all(
        (lop_f[:, None, :] >= lop_g[None, :, :]) & (hip_f[:, None, :] <= hip_g[None, :, :]),
        axis=-1,
    )
    return A


def _pair_value_matrix(kernel, mu, cubes_f, cubes_g):
    """P[i, j] = <T psi_{I_i}, psi_{J_j}> for all cube pairs, via one sandwich."""
    U_f = np.array([mu.w * wavelet_values(mu, c) for c in cubes_f])
    U_g = np.array([mu.w * wavelet_values(mu, c) for c in cubes_g])
    B = kernel.evaluate(mu.x[None, :, :], mu.x[:, None, :])  # B[j, k] = K(x_k, x_j)
    return (U_g @ (B @ U_f.T)).T, U_f, U_g, B


def _point_in(point, box: Box) -> bool:
    return bool(box.contains(np.asarray(point)[None, :])[0])


def _full_const(mu, I: CubeId, J_p: CubeId, m_i: float, m_p: float) -> float:
    if m_i == 0:
        return 0.0
    c = np.asarray(J_p.center)[None, :]
    return math.sqrt(m_i) * (
        float(I.box.contains(c)[0]) / m_i - float(I.parent().box.contains(c)[0]) / m_p
    )


# ---------------------------------------------------------------------------
# bump report
# ---------------------------------------------------------------------------

@dataclass
class BumpReport:
    mode: str
    sup_ratio: float
    pairs: int
    excluded: int
    buckets: list          # rows: (e, m_or_k, pairs, sup_ratio, mean_ratio)

    def csv_rows(self):
        yield ("e", "m_or_k", "pairs", "sup_ratio", "mean_ratio")
        for row in self.buckets:
            yield row


def bump_report(
    kernel: KernelSpec,
    mu: AtomicMeasure,
    mode: str,
    depth: int,
    theta: float | None = None,
    delta: float | None = None,
    levels=None,
    Q: Box | None = None,
) -> BumpReport:
    """Ratio of wavelet dual pairs against their envelope bounds.

    separated: pairs with positive parent distance and the eccentricity gap
    ec^theta (inrdist - 1) > 1, measured against
    inrdist^-(alpha+delta) mu(I)^1/2 mu(J)^1/2 side(smaller)^-alpha F_1.
    nested: touching parents with the smaller cube buried inside the larger,
    measured against the two-term F_2mu / F_3 bound for T(psi_I - psi^full).
    """
    if mode not in ("separated", "nested"):
        raise ValidationError(f"unknown bump mode {mode!r}")
    alpha = kernel.alpha
    delta = kernel.delta if delta is None else delta
    kernel = _dc_replace(kernel, delta=delta)
    theta = alpha / (alpha + delta / 2.0) if theta is None else theta
    levels = range(0, depth + 1) if levels is None else levels
    cubes = occupied_cubes(mu, levels)
    if Q is None:
        hi = float(np.abs(mu.x).max())
        Q = central_box(max(2, math.ceil(math.log2(hi + 1)) + 2), mu.dim)
    P, U_f, U_g, B = _pair_value_matrix(kernel, mu, cubes, cubes)
    tq_per_cube = U_g @ (B @ (mu.w * Q.contains(mu.x)))   # <T chi_Q, psi_J>
    A = _pair_tables(cubes, cubes)
    masses = np.array([mu.mass(c.box) for c in cubes])
    pmasses = np.array([mu.mass(c.parent().box) for c in cubes])
    n_c = len(cubes)
    ratios, buckets, excluded = [], {}, 0
    for i in range(n_c):          # I
        for j in range(n_c):      # J
            e = int(A["e"][i, j])
            inr = float(A["inrdist_p"][i, j])
            ec_theta = 2.0 ** (-abs(e) * theta)
            gap = ec_theta * (inr - 1.0)
            if mode == "separated":
                admissible = A["dist_p"][i, j] > 0 and gap > 1.0
            else:
                admissible = (
                    A["dist_p"][i, j] == 0.0
                    and e >= 0
                    and i != j
                    and bool(A["g_parent_in_f_parent"][i, j])
                    and gap >= 1.0
                )
            if not admissible:
                excluded += 1
                continue
            I, J = cubes[i], cubes[j]
            small_side = min(I.side, J.side)
            if mode == "separated":
                val = abs(P[i, j])
                bound = (
                    inr ** -(alpha + delta)
                    * math.sqrt(masses[i] * masses[j])
                    / small_side**alpha
                    * f_1(kernel, I, J)
                )
                key = (e, int(math.floor(A["rdist_p"][i, j])))
            else:
                cfull = _full_const(mu, I, J.parent(), masses[i], pmasses[i])
                val = abs(P[i, j] - cfull * tq_per_cube[j])
                ratio_sum = 0.0
                for R in (I, I.parent()):
                    m_r = mu.mass(R.box)
                    m_int = masses[j] if _point_in(J.center, R.box) else 0.0
                    if m_r > 0:
                        ratio_sum += math.sqrt(m_int / m_r)
                t1 = inr**-delta * ratio_sum * f_2mu(kernel, mu, I, J)[0]
                chi_out = 0.0 if _point_in(J.parent().center, I.box) else 1.0
                t2 = (
                    inr ** -(alpha + delta)
                    * math.sqrt(masses[i] * masses[j])
                    / small_side**alpha
                    * chi_out
                    * f_3(kernel, I, J)[0]
                )
                bound = t1 + t2
                key = (e, int(math.floor(inr)))
            if bound == 0.0:
                if val > 1e-14:
                    ratios.append(math.inf)
                continue
            r = val / bound
            ratios.append(r)
            b = buckets.setdefault(key, [0, 0.0, 0.0])
            b[0] += 1
            b[1] = max(b[1], r)
            b[2] += r
    if not ratios:
        raise EmptyScanError(f"no admissible {mode} pairs at depth {depth}")
    rows = [(e, k, n, sup, acc / n) for (e, k), (n, sup, acc) in sorted(buckets.items())]
    return BumpReport(mode, max(ratios), len(ratios), excluded, rows)


# ---------------------------------------------------------------------------
# trichotomy classifier
# ---------------------------------------------------------------------------

class FMuEvaluator:
    """sup over dyadic subcubes of F_K(R,S) rho_mu(R v S), plus testing terms.

    The sup is sampled down to ``depth_cap`` levels below each argument cube;
    the cap is reported alongside the value.
    """

    def __init__(self, kernel, mu, delta: float, depth_cap: int = 3, f_t=None):
        self.kernel, self.mu, self.delta, self.depth_cap = kernel, mu, delta, depth_cap
        self._f_t = f_t
        self._profiles: dict = {}
        self._stats_cache: dict = {}

    def _subcubes(self, I: CubeId) -> list:
        out, wave = [I], [I]
        for _ in range(self.depth_cap):
            if wave and wave[0].level + 1 > self.mu.resolution_level:
                break  # densities are only faithful down to the resolution
            wave = [k for c in wave for k in c.children()]
            out.extend(wave)
        return [c for c in out if self.mu.mass(c.box) > 0]

    def _rho(self, cube) -> float:
        p = self._profiles.get(cube)
        if p is None:
            p = density_profile(self.mu, cube, self.delta, tail_target=1e-4)
            self._profiles[cube] = p
        return p.rho_mu

    def f_t(self, cube) -> float:
        if self._f_t is not None:
            return self._f_t(cube)
        return testing_stats(self.kernel, self.mu, cube, self._stats_cache).f_t

    def value(self, I: CubeId, J: CubeId) -> float:
        best = 0.0
        for R in self._subcubes(I):
            for S in self._subcubes(J):
                larger = R if S.side <= R.side else S
                best = max(best, f_K(self.kernel, R, S)[0] * self._rho(larger))
        if I == J:
            best += self.f_t(I)
        return best


def trichotomy_classify(I: CubeId, J: CubeId, M: int, eps: float,
                        evaluator: FMuEvaluator) -> dict:
    """First clause of the small-F trichotomy met by the pair, with raw values.

    Clauses, in order: F_mu(I,J) < eps; |log2 ec| >= log2 M; rdist >= M^(1/8).
    The implicit constants of the statement are not assumed: when no clause
    fires the pair is reported with clause 'none' and a flag.
    """
    if lagom_membership(I, 2 * M):
        raise PreconditionError("I must lie outside the 2M window")
    if lagom_membership(J, M):
        raise PreconditionError("J must lie outside the M window")
    g = pair_geometry(I, J)
    f_mu = evaluator.value(I, J)
    log_ec = abs(math.log2(g.ec)) if g.ec > 0 else math.inf
    thresholds = {"eps": eps, "log2_M": math.log2(M) if M > 1 else 0.0,
                  "M_eighth": M ** 0.125}
    if f_mu < eps:
        clause = "small_F"
    elif M > 1 and log_ec >= thresholds["log2_M"]:
        clause = "extreme_ec"
    elif g.rdist >= thresholds["M_eighth"]:
        clause = "extreme_rdist"
    else:
        clause = "none"
    return {
        "clause": clause,
        "flagged": clause == "none",
        "F_mu": f_mu,
        "abs_log2_ec": log_ec,
        "rdist": g.rdist,
        "thresholds": thresholds,
        "depth_cap": evaluator.depth_cap,
    }


# ---------------------------------------------------------------------------
# Carleson embedding check
# ---------------------------------------------------------------------------

CARLESON_CONSTANT = 4.0


def carleson_check(coeffs: dict, mu: AtomicMeasure, f_samples) -> dict:
    """Packing constant of a nonnegative cube family and the embedding check.

    packing = sup_I mu(I)^-1 sum_{J subseteq I} a_J over the coefficient cubes
    and their ancestors; for every sample f the embedding sum
    sum_I a_I <f>_I^2 must stay below CARLESON_CONSTANT * packing * ||f||^2,
    reported as max_violation <= 0.
    """
    if any(a < 0 for a in coeffs.values()):
        raise ValidationError("Carleson coefficients must be nonnegative")
    if not coeffs:
        return {"packing_constant": 0.0, "max_violation": 0.0}
    # subtree sums pushed fine -> coarse; ancestors join as packing candidates
    subtree: dict = dict(coeffs)
    top = min(c.level for c in coeffs)
    k = max(c.level for c in coeffs)
    while k >= top:
        for c in [c for c in list(subtree) if c.level == k]:
            p = c.parent()
            subtree[p] = subtree.get(p, 0.0) + subtree[c]
        k -= 1
    packing = 0.0
    for c, s in subtree.items():
        m = mu.mass(c.box)
        if m > 0:
            packing = max(packing, s / m)
    max_violation = -math.inf
    for f in f_samples:
        f = np.asarray(f)
        lhs = 0.0
        for c, a in coeffs.items():
            if a == 0.0:
                continue
            _, avg = mass_and_average(mu, c, f)
            lhs += a * abs(avg) ** 2
        denom = packing * l2_norm(mu, f) ** 2
        if denom > 0:
            max_violation = max(max_violation, lhs / denom - CARLESON_CONSTANT)
    if max_violation == -math.inf:
        max_violation = 0.0
    return {"packing_constant": packing, "max_violation": max_violation}


def paraproduct_coefficients(kernel, mu, Q: Box, levels=None) -> dict:
    """The Carleson family a_I = |<T chi_Q, psi_I>|^2 over occupied cubes."""
    chi = Q.contains(mu.x).astype(float)
    tq = kernel_column_sums(kernel, mu.x, mu.w * chi, mu.x)
    cmap = analyze(mu, tq, levels)
    return {c: abs(v) ** 2 for c, v in cmap.entries.items()}


# ---------------------------------------------------------------------------
# paraproducts
# ---------------------------------------------------------------------------

class _Swap:
    def __init__(self, kernel):
        self._k = kernel

    def evaluate(self, t, x):
        return self._k.evaluate(x, t)


def _is_strict_descendant(c: CubeId, anc: CubeId) -> bool:
    return c.level > anc.level and c.ancestor(anc.level) == anc


def paraproduct_eval(
    kernel: KernelSpec,
    mu: AtomicMeasure,
    f,
    g,
    Q: Box,
    theta: float | None = None,
    level_range: tuple | None = None,
    telescope_checks: int = 4,
    seed: int = 0,
) -> dict:
    """The paraproduct bilinear forms Pi and Pi' over the finite support.

    Pi pairs every coefficient cube I with the smaller cubes J inside I_p
    whose parents sit deeper than the eccentricity threshold
    inrdist(J_p, I_p) > 1 + ec(I,J)^-theta; through the full wavelet the inner
    factor reduces to <T chi_Q, psi_J>.  Means are removed (and reported),
    and the localized-telescope identity is spot-checked on random pairs.
    """
    theta = kernel.alpha / (kernel.alpha + kernel.delta / 2.0) if theta is None else theta
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    inq = Q.contains(mu.x)
    if np.any((f != 0) & ~inq) or np.any((g != 0) & ~inq):
        raise ValidationError("f and g must be supported inside Q")
    f0 = remove_quadrant_means(mu, f)
    g0 = remove_quadrant_means(mu, g)
    cf = analyze(mu, f0, level_range)
    cg = analyze(mu, g0, level_range)

    def in_Q(c: CubeId) -> bool:
        b = c.box
        return bool(
            np.all(b.lo_arr >= Q.lo_arr - 1e-12)
            and np.all(b.hi_arr <= Q.hi_arr + 1e-12)
            and b.side < Q.side
        )

    ent_f = {c: v for c, v in cf.entries.items() if in_Q(c) and v != 0}
    ent_g = {c: v for c, v in cg.entries.items() if in_Q(c) and v != 0}

    chi = inq.astype(float)
    tq_coef = dict(analyze(mu, kernel_column_sums(kernel, mu.x, mu.w * chi, mu.x)).entries)
    tstarq_coef = dict(
        analyze(mu, kernel_column_sums(_Swap(kernel), mu.x, mu.w * chi, mu.x)).entries
    )

    masses: dict = {}

    def mass_of(c: CubeId) -> float:
        m = masses.get(c)
        if m is None:
            m = mu.mass(c.box)
            masses[c] = m
        return m

    def fullconst(I: CubeId, J_p: CubeId) -> float:
        return _full_const(mu, I, J_p, mass_of(I), mass_of(I.parent()))

    def lam_theta(I: CubeId, J: CubeId) -> float:
        ec = min(I.side, J.side) / max(I.side, J.side)
        return 1.0 + ec**-theta

    pi = 0.0 + 0.0j
    for I, ci in ent_f.items():
        ip = I.parent()
        for J, dj in ent_g.items():
            if not _is_strict_descendant(J, ip):
                continue
            if pair_geometry(J.parent().box, ip.box).inrdist <= lam_theta(I, J):
                continue
            pi += ci * dj * fullconst(I, J.parent()) * tq_coef.get(J, 0.0)

    pi_prime = 0.0 + 0.0j
    for J, dj in ent_g.items():
        jp = J.parent()
        for I, ci in ent_f.items():
            if not _is_strict_descendant(I, jp):
                continue
            if pair_geometry(I.parent().box, jp.box).inrdist <= lam_theta(I, J):
                continue
            pi_prime += ci * dj * fullconst(J, I.parent()) * tstarq_coef.get(I, 0.0)

    # telescope cross-check of the inner-sum identity on random pairs
    rng = np.random.default_rng(seed)
    parents = sorted({c.parent() for c in ent_f}, key=lambda c: (c.level, c.corner))
    tele_res = 0.0
    done = 0
    for _ in range(20 * telescope_checks):
        if done >= telescope_checks or not parents or not ent_g:
            break
        R = parents[rng.integers(0, len(parents))]
        J = list(ent_g)[rng.integers(0, len(ent_g))]
        J_p = J.parent()
        if not (J_p.side < R.side) or mass_of(J_p) == 0:
            continue
        lhs = martingale(mu, f0, R, "Delta_hat", J_p=J_p, bigQ=Q)
        rhs = np.zeros(mu.n_atoms)
        for child in R.children():
            v = wavelet_values(mu, child)
            coef = float(np.sum(mu.w * f0 * v))
            rhs += coef * full_wavelet_values(mu, child, J_p, Q)
        tele_res = max(tele_res, float(np.max(np.abs(lhs - rhs))))
        done += 1
    return {
        "Pi": pi,
        "Pi_prime": pi_prime,
        "telescope_residual": tele_res,
        "removed_mean_f": float(np.max(np.abs(f - f0))) if f.size else 0.0,
        "removed_mean_g": float(np.max(np.abs(g - g0))) if g.size else 0.0,
        "theta": theta,
    }


# ---------------------------------------------------------------------------
# collar measure
# ---------------------------------------------------------------------------

def _descendants(Q: CubeId, j: int) -> list:
    wave = [Q]
    for _ in range(j):
        wave = [k for c in wave for k in c.children()]
    return wave


def _collar_cells(I: CubeId, level_abs: int, theta: float) -> np.ndarray:
    """Integer cells at an absolute level within the collar distance of the
    child skeleton of I, restricted to 3I."""
    h = 2.0**-level_abs
    ec = h / I.side
    d = h * ec**-theta
    ib = I.box
    tb = ib.dilate(3.0)
    n = I.ambient_dim
    cells = set()
    for axis in range(n):
        for v in (ib.lo_arr[axis], ib.center[axis], ib.hi_arr[axis]):
            j0 = math.floor((v - d) / h) - 1
            j1 = math.floor((v + d) / h) + 1
            other = [
                range(
                    math.floor((ib.lo_arr[a] - d) / h) - 1,
                    math.floor((ib.hi_arr[a] + d) / h) + 2,
                )
                for a in range(n)
                if a != axis
            ]
            for ja in range(j0, j1 + 1):
                for rest in _prod(*other):
                    idx = list(rest)
                    idx.insert(axis, ja)
                    cells.add(tuple(idx))
    if not cells:
        return np.empty((0, n), dtype=np.int64)
    arr = np.array(sorted(cells), dtype=np.int64)
    lo = arr * h
    hi = lo + h
    inside = np.all(lo >= tb.lo_arr - 1e-12, axis=1) & np.all(
        hi <= tb.hi_arr + 1e-12, axis=1
    )
    arr, lo, hi = arr[inside], lo[inside], hi[inside]
    dsk = pairwise_skeleton_dist(lo, hi, np.broadcast_to(ib.lo_arr, lo.shape),
                                 np.broadcast_to(ib.hi_arr, hi.shape))
    return arr[dsk <= d]


def collar_measure(
    mu: AtomicMeasure,
    Q: CubeId,
    N0: int,
    theta: float,
    k_range,
) -> dict:
    """Mass of the near-skeleton collars C_k around the coarse cubes of Q.

    C_k is the union of the interiors of the level-k cubes R (relative to Q,
    so side(R) = 2^-k side(Q)) lying inside 3I for some I among the first N0
    generations of Q, with inrdist(R, I) - 1 <= ec(I, R)^-theta.  The sets
    are nested in k, so the exact atomic masses never increase.
    """
    if not (0 < theta < 1):
        raise RangeError("theta must lie in (0, 1)")
    k_values = sorted(k_range)
    if k_values and k_values[0] <= N0:
        raise RangeError("collar levels must stay finer than N0")
    big = [c for j in range(1, N0 + 1) for c in _descendants(Q, j)]
    flagged = skeleton_hits(mu).size > 0
    masses = []
    for k in k_values:
        level_abs = Q.level + k
        if 2.0**-level_abs < mu.resolution * (1 - 1e-12):
            raise RangeError(f"collar level {k} finer than the measure resolution")
        keys = [
            arr for I in big
            for arr in (_collar_cells(I, level_abs, theta),)
            if arr.size
        ]
        if keys:
            allk = np.unique(np.vstack(keys), axis=0)
            cell = np.floor(mu.x * 2.0**level_abs).astype(np.int64)
            if mu.dim == 2:
                enc = cell[:, 0] * (1 << 31) + cell[:, 1]
                enc_keys = allk[:, 0] * (1 << 31) + allk[:, 1]
            else:
                enc, enc_keys = cell[:, 0], allk[:, 0]
            inside = np.isin(enc, enc_keys)
            scaled = mu.x * 2.0**level_abs
            on_boundary = np.any(scaled == np.round(scaled), axis=1)
            mass = float(mu.w[inside & ~on_boundary].sum())
        else:
            mass = 0.0
        masses.append((k, mass))
    return {"masses": masses, "skeleton_atoms_flag": flagged, "theta": theta, "N0": N0}


# ---------------------------------------------------------------------------
# bucket decomposition
# ---------------------------------------------------------------------------

BUCKET_NAMES = ("D1", "D2", "N2", "N3", "P4", "P5", "B6")


@dataclass
class BucketReport:
    totals: dict               # bucket -> complex sum
    abs_sums: dict             # bucket -> sum of |terms|
    counts: dict               # bucket -> number of ordered pairs
    d1_shells: dict            # m -> sum of |terms| in D1
    direct_value: complex
    bucket_total: complex
    residual: float
    pairs: int

    def to_json(self) -> dict:
        return {
            "totals": {k: [v.real, v.imag] for k, v in self.totals.items()},
            "abs_sums": self.abs_sums,
            "counts": self.counts,
            "d1_shells": {str(m): v for m, v in sorted(self.d1_shells.items())},
            "direct": [self.direct_value.real, self.direct_value.imag],
            "bucket_total": [self.bucket_total.real, self.bucket_total.imag],
            "residual": self.residual,
            "pairs": self.pairs,
        }


def bucket_decomposition_report(
    kernel: KernelSpec,
    mu: AtomicMeasure,
    f,
    g,
    M: int,
    theta: float | None = None,
    depth: int | None = None,
    Q: Box | None = None,
) -> BucketReport:
    """Split the compressed form <T P_2M-perp f, P_M-perp g> into the seven
    buckets and check the reorganization against the direct evaluation.

    Every ordered coefficient pair lands in exactly one of D1 (distant), D2
    (close but separated), N2/N3 (nested, with the full-wavelet part split
    off into the paraproduct buckets P4/P5) or B6 (borderline, inner distance
    below the eccentricity threshold).  The bucket total must reproduce the
    direct value: the decomposition is a reorganization, not an approximation.
    """
    theta = kernel.alpha / (kernel.alpha + kernel.delta / 2.0) if theta is None else theta
    f0 = remove_quadrant_means(mu, np.asarray(f, dtype=float))
    g0 = remove_quadrant_means(mu, np.asarray(g, dtype=float))
    cf = analyze(mu, f0)
    cg = analyze(mu, g0)
    if Q is None:
        hi = float(np.abs(mu.x).max())
        Q = central_box(max(2, math.ceil(math.log2(hi + 1)) + 2), mu.dim)

    def clip(cmap, window):
        out = {}
        for c, v in cmap.entries.items():
            if lagom_membership(c, window):
                continue
            if depth is not None and c.level > depth:
                continue
            if v != 0:
                out[c] = v
        return out

    ent_f = clip(cf, 2 * M)
    ent_g = clip(cg, M)
    cubes_f, coef_f = list(ent_f), np.array([ent_f[c] for c in ent_f])
    cubes_g, coef_g = list(ent_g), np.array([ent_g[c] for c in ent_g])
    if not cubes_f or not cubes_g:
        raise EmptyScanError("no coefficients survive the window clip")

    P, U_f, U_g, B = _pair_value_matrix(kernel, mu, cubes_f, cubes_g)
    A = _pair_tables(cubes_f, cubes_g)
    weights = coef_f[:, None] * coef_g[None, :]
    terms = weights * P

    e = A["e"]
    m = np.floor(A["rdist_p"]).astype(np.int64)
    kk = np.floor(A["inrdist_p"]).astype(np.int64)
    t_e = 2.0 ** (theta * np.abs(e))
    is_d1 = m >= 2
    is_b6 = (m == 1) & (kk <= t_e)
    rest = (m == 1) & ~is_b6
    is_d2 = rest & (A["dist_p"] > 0)
    touching = rest & (A["dist_p"] == 0.0)
    is_n2 = touching & (e > 0) & A["g_parent_in_f_parent"]
    is_n3 = touching & (e < 0) & A["f_parent_in_g_parent"]
    assigned = is_d1 | is_b6 | is_d2 | is_n2 | is_n3
    if not np.all(assigned):
        bad = np.argwhere(~assigned)[0]
        raise InternalError(
            f"pair ({cubes_f[bad[0]]}, {cubes_g[bad[1]]}) escaped the bucket partition"
        )
    if int(is_d1.sum() + is_b6.sum() + is_d2.sum() + is_n2.sum() + is_n3.sum()) != e.size:
        raise InternalError("bucket masks overlap")

    # full-wavelet splitting for the nested buckets
    wq = mu.w * Q.contains(mu.x)
    tq_g = U_g @ (B @ wq)          # <T chi_Q, psi_J>
    tq_f = (B @ U_f.T).T @ wq      # <T psi_I, chi_Q>
    masses_f = np.array([mu.mass(c.box) for c in cubes_f])
    pmass_f = np.array([mu.mass(c.parent().box) for c in cubes_f])
    masses_g = np.array([mu.mass(c.box) for c in cubes_g])
    pmass_g = np.array([mu.mass(c.parent().box) for c in cubes_g])

    p4 = np.zeros_like(P)
    for i, j in np.argwhere(is_n2):
        const = _full_const(mu, cubes_f[i], cubes_g[j].parent(), masses_f[i], pmass_f[i])
        p4[i, j] = const * tq_g[j]
    p5 = np.zeros_like(P)
    for i, j in np.argwhere(is_n3):
        const = _full_const(mu, cubes_g[j], cubes_f[i].parent(), masses_g[j], pmass_g[j])
        p5[i, j] = const * tq_f[i]

    totals = {
        "D1": complex(terms[is_d1].sum()),
        "D2": complex(terms[is_d2].sum()),
        "N2": complex((weights * (P - p4))[is_n2].sum()),
        "N3": complex((weights * (P - p5))[is_n3].sum()),
        "P4": complex((weights * p4)[is_n2].sum()),
        "P5": complex((weights * p5)[is_n3].sum()),
        "B6": complex(terms[is_b6].sum()),
    }
    abs_sums = {
        "D1": float(np.abs(terms[is_d1]).sum()),
        "D2": float(np.abs(terms[is_d2]).sum()),
        "N2": float(np.abs((weights * (P - p4))[is_n2]).sum()),
        "N3": float(np.abs((weights * (P - p5))[is_n3]).sum()),
        "P4": float(np.abs((weights * p4)[is_n2]).sum()),
        "P5": float(np.abs((weights * p5)[is_n3]).sum()),
        "B6": float(np.abs(terms[is_b6]).sum()),
    }
    counts = {
        "D1": int(is_d1.sum()),
        "D2": int(is_d2.sum()),
        "N2": int(is_n2.sum()),
        "N3": int(is_n3.sum()),
        "P4": int(is_n2.sum()),
        "P5": int(is_n3.sum()),
        "B6": int(is_b6.sum()),
    }
    d1_shells: dict = {}
    for shell in np.unique(m[is_d1]):
        sel = is_d1 & (m == shell)
        d1_shells[int(shell)] = float(np.abs(terms[sel]).sum())

    perp_f = synthesize(mu, HaarCoefficientMap(ent_f, cf.level_range, cf.grid))
    perp_g = synthesize(mu, HaarCoefficientMap(ent_g, cg.level_range, cg.grid))
    direct = bilinear(kernel, mu, perp_f, perp_g)
    bucket_total = sum(totals.values())
    scale = max(abs(direct), abs(bucket_total),
                1e-12 * max(l2_norm(mu, f0) * l2_norm(mu, g0), 1e-300))
    residual = abs(bucket_total - direct) / scale if scale else 0.0
    return BucketReport(
        totals, abs_sums, counts, d1_shells, direct, bucket_total, residual, int(e.size)
    )
