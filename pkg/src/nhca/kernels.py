"""Calderon-Zygmund kernels, smooth truncations and envelope functionals.

The flagship kernel is the Cauchy kernel K(t, x) = 1/(t - x) on the plane
(points read as complex numbers), with growth exponent alpha = 1 and
smoothness order delta = 1.  Truncations multiply by a radial cutoff
1 - phi(|t-x|/gamma) and two spatial cutoffs phi(4|t|/side(Q)) phi(4|x|/side(Q)),
which makes the kernel bounded by 1/gamma^alpha and diagonal-safe.

Envelope functions L, S, D are bounded monotone profiles; products of their
values at pair-geometry statistics bound the wavelet dual pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DiagonalError, RangeError, ValidationError
from .grid import Box, CubeId, central_box, rdist_boxes
from .geometry import between_box, enclosing_box, order_pair, pair_geometry
from .measure import AtomicMeasure


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Bounded monotone profile on [0, inf)."""

    fn: object
    monotone: str          # 'nonincreasing' | 'nondecreasing' | 'constant'
    bound: float
    name: str = ""

    def __call__(self, r):
        return self.fn(np.asarray(r, dtype=float))

    def validate(self, grid_max: float = 1e6) -> None:
        xs = np.geomspace(1e-9, grid_max, 200)
        ys = self(xs)
        if not np.all(np.isfinite(ys)) or np.any(ys < 0) or np.any(ys > self.bound + 1e-12):
            raise ValidationError(f"envelope {self.name or self.fn} exceeds its bound")
        d = np.diff(ys)
        if self.monotone == "nonincreasing" and np.any(d > 1e-12):
            raise ValidationError(f"envelope {self.name} is not non-increasing")
        if self.monotone == "nondecreasing" and np.any(d < -1e-12):
            raise ValidationError(f"envelope {self.name} is not non-decreasing")


def unit_envelope() -> Envelope:
    return Envelope(lambda r: np.ones_like(r), "constant", 1.0, "one")


def power_decay(s: float, cap: float = 1.0) -> Envelope:
    """min(cap, r^-s): a non-increasing profile for L or D."""
    if s <= 0:
        raise ValidationError("power decay needs s > 0")
    return Envelope(
        lambda r: np.minimum(cap, np.where(r > 0, r, np.inf) ** -s),
        "nonincreasing", cap, f"r^-{s}",
    )


def power_growth_profile(s: float, cap: float = 1.0) -> Envelope:
    """min(cap, r^s): a non-decreasing profile for S."""
    if s <= 0:
        raise ValidationError("power growth needs s > 0")
    return Envelope(lambda r: np.minimum(cap, r**s), "nondecreasing", cap, f"r^{s}")


def log_decay(cap: float = 1.0) -> Envelope:
    return Envelope(
        lambda r: cap / (1.0 + np.log1p(np.maximum(r, 0.0))),
        "nonincreasing", cap, "1/(1+log(1+r))",
    )


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass
class KernelSpec:
    evaluate: object        # (t, x) arrays (..., n) -> complex (...)
    alpha: float
    delta: float
    c_k: float
    L: Envelope = field(default_factory=unit_envelope)
    S: Envelope = field(default_factory=unit_envelope)
    D: Envelope = field(default_factory=unit_envelope)
    compact_flag: bool = False
    diagonal_safe: bool = False
    assert_ck: bool = False
    antisymmetric: bool = False
    name: str = "custom"

    def F(self, t, x):
        """Pointwise envelope F(t,x) = L(|t-x|) S(|t-x|) D(|t+x|)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(t - x, axis=-1)
        s = np.linalg.norm(t + x, axis=-1)
        return self.L(r) * self.S(r) * self.D(s)


def _as_complex(pts: np.ndarray) -> np.ndarray:
    return pts[..., 0] + 1j * pts[..., 1]


def cauchy_kernel() -> KernelSpec:
    """K(t, x) = 1/(t - x) on the plane; alpha = delta = 1, C_K = 2."""

    def evaluate(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if t.shape[-1] != 2 or x.shape[-1] != 2:
            raise ValidationError("the Cauchy kernel lives on the plane (n = 2)")
        den = _as_complex(t) - _as_complex(x)
        if np.any(den == 0):
            raise DiagonalError("Cauchy kernel evaluated on the diagonal")
        return 1.0 / den

    return KernelSpec(
        evaluate, 1.0, 1.0, 2.0, assert_ck=True, antisymmetric=True, name="cauchy"
    )


def constant_kernel(c: complex = 1.0, n: int = 2) -> KernelSpec:
    def evaluate(t, x):
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape[:-1], np.asarray(x).shape[:-1])
        return np.full(shape, complex(c))

    return KernelSpec(evaluate, 1.0, 1.0, 0.0, diagonal_safe=True, name="constant")


def smoothstep(x):
    """C^1 cutoff: 1 on |x| <= 1, 0 on |x| >= 2, cubic in between, |phi'| <= 1.5."""
    u = np.clip(np.abs(np.asarray(x, dtype=float)) - 1.0, 0.0, 1.0)
    return 1.0 - (3.0 * u**2 - 2.0 * u**3)


@dataclass(frozen=True)
class TruncationParams:
    gamma: float
    bigN: int = 10           # Q = [-2^N, 2^N]^n
    phi: object = smoothstep

    def Q(self, n: int) -> Box:
        half = 2.0**self.bigN
        return Box((-half,) * n, (half,) * n)

    @property
    def side_Q(self) -> float:
        return 2.0 ** (self.bigN + 1)


def truncate(kernel: KernelSpec, p: TruncationParams) -> KernelSpec:
    """Smoothly truncated kernel K_{gamma,Q}; diagonal values are 0."""
    if not (0 < p.gamma < p.side_Q):
        raise RangeError(f"gamma must lie in (0, side(Q)) = (0, {p.side_Q})")
    base, phi, gamma, side = kernel.evaluate, p.phi, p.gamma, p.side_Q

    def evaluate(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(t - x, axis=-1)
        radial = 1.0 - phi(r / gamma)
        spatial = phi(4.0 * np.linalg.norm(t, axis=-1) / side) * phi(
            4.0 * np.linalg.norm(x, axis=-1) / side
        )
        factor = radial * spatial
        out = np.zeros(np.broadcast_shapes(r.shape, factor.shape), dtype=complex)
        live = factor != 0.0
        if np.any(live):
            tb, xb = np.broadcast_arrays(t, x)
            out[live] = base(tb[live], xb[live]) * factor[live]
        return out

    return replace(
        kernel,
        evaluate=evaluate,
        diagonal_safe=True,
        assert_ck=False,
        name=f"{kernel.name}-trunc(g={p.gamma},N={p.bigN})",
    )


# ---------------------------------------------------------------------------
# envelope functionals on cubes
# ---------------------------------------------------------------------------

UNIT_BALL_RDIST = 0  # B = central_box(0, n)

TAIL_TARGET = 1e-9


def d_tilde(D: Envelope, box: Box, delta: float) -> tuple:
    """Sum over k >= 0 of 2^(-k delta/2) D(rdist(2^k box, B)), with tail bound."""
    if not (0 < delta <= 1):
        raise RangeError("delta must lie in (0, 1]")
    ratio = 2.0 ** (-delta / 2.0)
    ball = central_box(0, box.n)
    total, k, term_cap = 0.0, 0, D.bound
    while True:
        scaled = box.dilate(2.0**k)
        total += ratio**k * float(D(rdist_boxes(scaled, ball)))
        tail = term_cap * ratio ** (k + 1) / (1.0 - ratio)
        if tail < TAIL_TARGET * max(total, 1.0) or k > 400:
            return total, tail
        k += 1


def f_triple(kernel: KernelSpec, I1: Box, I2: Box, I3: Box) -> float:
    ball = central_box(0, I3.n)
    return float(
        kernel.L(I1.side) * kernel.S(I2.side) * kernel.D(rdist_boxes(I3, ball))
    )


def f_K(kernel: KernelSpec, I, J) -> tuple:
    """F_K(I,J): L S at the smaller side times (D at the enclosing cube plus
    the D-tilde series at the inner-distance dilation of the smaller cube)."""
    a = I.box if isinstance(I, CubeId) else I
    b = J.box if isinstance(J, CubeId) else J
    small, large = order_pair(a, b)
    g = pair_geometry(a, b)
    ball = central_box(0, a.n)
    dt, tail = d_tilde(kernel.D, small.dilate(g.inrdist), kernel.delta)
    ls = float(kernel.L(small.side) * kernel.S(small.side))
    val = ls * (float(kernel.D(rdist_boxes(g.enclosing, ball))) + dt)
    return val, ls * tail


def f_1(kernel: KernelSpec, I: CubeId, J: CubeId) -> float:
    """Separated-pair envelope, evaluated on the parents."""
    ip, jp = I.parent().box, J.parent().box
    small, _ = order_pair(ip, jp)
    ball = central_box(0, ip.n)
    return float(
        kernel.L(between_box(ip, jp).side)
        * kernel.S(small.side)
        * kernel.D(rdist_boxes(enclosing_box(ip, jp), ball))
    )


def _inner_dilation(I: CubeId, J: CubeId) -> Box:
    from .grid import inrdist_boxes

    lam = inrdist_boxes(I.parent().box, J.parent().box)
    small, _ = order_pair(I.box, J.box)
    return small.dilate(lam)


def f_2mu(kernel: KernelSpec, mu: AtomicMeasure, I: CubeId, J: CubeId) -> tuple:
    """Nested-pair envelope carrying the density series rho(2^k K) D(...)."""
    from .measure import _radial_entry

    khat = _inner_dilation(I, J)
    small, _ = order_pair(I.box, J.box)
    ls = float(kernel.L(small.side) * kernel.S(small.side))
    ball = central_box(0, khat.n)
    entries = _radial_entry(mu, khat)
    finite = np.isfinite(entries)
    order = np.sort(entries[finite])
    wsort = mu.w[finite][np.argsort(entries[finite], kind="stable")]
    cumw = np.concatenate([[0.0], np.cumsum(wsort)])
    total, k = 0.0, 0
    delta, alpha = kernel.delta, kernel.alpha
    mtot = float(mu.w[finite].sum())
    while True:
        lam = 2.0**k
        m = float(cumw[np.searchsorted(order, lam, side="right")])
        rho = m / (lam * khat.side) ** alpha
        total += 2.0 ** (-k * delta) * rho * float(kernel.D(rdist_boxes(khat.dilate(lam), ball)))
        tail = (
            kernel.D.bound
            * mtot
            / khat.side**alpha
            * 2.0 ** (-(k + 1) * (alpha + delta))
            / (1.0 - 2.0 ** -(alpha + delta))
        )
        if tail < TAIL_TARGET * max(total, 1.0) or k > 200:
            return ls * total, ls * tail
        k += 1


def f_3(kernel: KernelSpec, I: CubeId, J: CubeId) -> tuple:
    """Nested-pair envelope without density weights."""
    khat = _inner_dilation(I, J)
    small, _ = order_pair(I.box, J.box)
    ls = float(kernel.L(small.side) * kernel.S(small.side))
    ball = central_box(0, khat.n)
    total, k = 0.0, 0
    while True:
        total += 2.0 ** (-k * kernel.delta) * float(
            kernel.D(rdist_boxes(khat.dilate(2.0**k), ball))
        )
        tail = kernel.D.bound * 2.0 ** (-(k + 1) * kernel.delta) / (
            1.0 - 2.0**-kernel.delta
        )
        if tail < TAIL_TARGET * max(total, 1.0) or k > 400:
            return ls * total, ls * tail
        k += 1


def envelope(kind: str, kernel: KernelSpec, ctx: dict):
    """Spec-facing dispatcher over the envelope functionals."""
    if kind == "F_triple":
        return f_triple(kernel, ctx["I1"], ctx["I2"], ctx["I3"])
    if kind == "F_K":
        return f_K(kernel, ctx["I"], ctx["J"])[0]
    if kind == "F1":
        return f_1(kernel, ctx["I"], ctx["J"])
    if kind == "F2mu":
        return f_2mu(kernel, ctx["mu"], ctx["I"], ctx["J"])[0]
    if kind == "F3":
        return f_3(kernel, ctx["I"], ctx["J"])[0]
    if kind == "D_tilde":
        return d_tilde(kernel.D, ctx["I"], kernel.delta)[0]
    raise ValidationError(f"unknown envelope kind {kind!r}")


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

def smoothness_probe(kernel: KernelSpec, mu: AtomicMeasure, samples: int = 2000,
                     seed: int = 0) -> dict:
    """Empirical smoothness constant over admissible perturbed pairs.

    Draws (t, x) near atom positions and perturbations with
    2(|t-t'| + |x-x'|) < |t-x|, then maximizes
    |K(t,x)-K(t',x')| |t-x|^(alpha+delta) / ((|t-t'|+|x-x'|)^delta F(t,x)).
    """
    if samples < 1000:
        raise RangeError("use at least 1e3 samples")
    rng = np.random.default_rng(seed)
    n = mu.dim
    scale = max(mu.bbox()[1].max() - mu.bbox()[0].min(), 1.0)
    c_emp, worst, regenerated, done = 0.0, None, 0, 0
    while done < samples:
        batch = min(4096, samples - done)
        ti = rng.integers(0, mu.n_atoms, batch)
        xi = rng.integers(0, mu.n_atoms, batch)
        t = mu.x[ti] + rng.normal(scale=0.05 * scale, size=(batch, n))
        x = mu.x[xi] + rng.normal(scale=0.05 * scale, size=(batch, n))
        r = np.linalg.norm(t - x, axis=1)
        ok = r > 1e-12
        regenerated += int((~ok).sum())
        t, x, r = t[ok], x[ok], r[ok]
        if t.shape[0] == 0:
            continue
        budget = 0.5 * r * rng.uniform(0.05, 0.999, size=r.shape)
        split = rng.uniform(0.0, 1.0, size=r.shape)
        du = rng.normal(size=(len(r), n))
        du /= np.linalg.norm(du, axis=1, keepdims=True)
        dv = rng.normal(size=(len(r), n))
        dv /= np.linalg.norm(dv, axis=1, keepdims=True)
        tp = t + (budget * split)[:, None] * du
        xp = x + (budget * (1 - split))[:, None] * dv
        move = np.linalg.norm(tp - t, axis=1) + np.linalg.norm(xp - x, axis=1)
        good = (2 * move < r) & (np.linalg.norm(tp - xp, axis=1) > 1e-12) & (move > 0)
        t, x, tp, xp, r, move = t[good], x[good], tp[good], xp[good], r[good], move[good]
        if t.shape[0] == 0:
            continue
        diff = np.abs(kernel.evaluate(t, x) - kernel.evaluate(tp, xp))
        fvals = kernel.F(t, x)
        ratio = diff * r ** (kernel.alpha + kernel.delta) / (move**kernel.delta * fvals)
        i = int(np.argmax(ratio))
        if ratio[i] > c_emp:
            c_emp = float(ratio[i])
            worst = {"t": t[i].tolist(), "x": x[i].tolist(),
                     "t2": tp[i].tolist(), "x2": xp[i].tolist()}
        done += t.shape[0]
    if kernel.assert_ck and c_emp > kernel.c_k * (1 + 1e-9):
        raise AssertionError(
            f"empirical smoothness {c_emp} exceeds declared C_K={kernel.c_k}"
        )
    return {"C_emp": c_emp, "worst_triple": worst, "regenerated": regenerated}


def integrable_check(mu: AtomicMeasure, I, x) -> dict:
    """Compare the radial sum over a cube against side * rho_in."""
    from .measure import _ball_sup

    box = I.box if isinstance(I, CubeId) else I
    idx = mu.select(box)
    pos = mu.x[idx]
    d = np.linalg.norm(pos - np.asarray(x, dtype=float), axis=1)
    keep = d > 0
    lhs = float(np.sum(mu.w[idx][keep] * d[keep] ** -(mu.alpha - 1.0)))
    rho_in = _ball_sup(mu, idx, box, mu.alpha, mu.resolution)
    rhs = box.side * rho_in
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs else math.inf}
