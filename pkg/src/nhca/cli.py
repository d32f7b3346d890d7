"""Command-line front end with deterministic file outputs.

Every command writes its science artifacts (CSV/JSON, one SVG chart for the
compactness table) plus a manifest echoing the full configuration, the
library version and the wall time.  Report files are byte-stable for a fixed
(config, seed); only the manifest carries timing.  Errors are printed as JSON
on stderr: exit 2 for validation problems, 3 for failed numeric assertions.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import InternalError, NhcaError, ValidationError
from .grid import Box, CubeId, GridRef, central_box
from .haar import analyze, gram, parseval_residual, synthesize, remove_quadrant_means
from .kernels import TruncationParams, cauchy_kernel, truncate
from .measure import AtomicMeasure, generate, support_line, validate_measure
from .diagnostics import (
    bucket_decomposition_report,
    bump_report,
    carleson_check,
    collar_measure,
    compactness_table,
    paraproduct_coefficients,
    paraproduct_eval,
    testing_scan,
)
from .parallel import resolve_threads


@dataclass
class RunConfig:
    command: str
    measure: str | None = None
    generator: dict | None = None
    kernel: str = "cauchy"
    gamma: float | None = None
    bigQ: int = 10
    grids: list = field(default_factory=lambda: ["std"])
    levels: tuple | None = None
    M: tuple | None = None
    depth: int | None = None
    theta: float | None = None
    delta: float = 1.0
    eps: float = 0.1
    out: str = "."
    threads: int | None = None
    seed: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["version"] = __version__
        return d


def parse_range(text: str) -> tuple:
    """'A..B' -> (A, B) inclusive."""
    a, _, b = text.partition("..")
    if not _:
        v = int(a)
        return (v, v)
    return int(a), int(b)


def build_kernel(cfg: RunConfig):
    name = cfg.kernel
    if name.startswith("cauchy-trunc"):
        if cfg.gamma is None:
            raise ValidationError("cauchy-trunc requires --gamma")
        name = "cauchy"
    if name != "cauchy":
        raise ValidationError(f"unknown kernel {cfg.kernel!r} (library API supports custom kernels)")
    K = cauchy_kernel()
    if cfg.gamma is not None:
        K = truncate(K, TruncationParams(gamma=cfg.gamma, bigN=cfg.bigQ))
    return K


def required_boundary_dims(n: int, alpha: float) -> list:
    """k = n - [alpha] + (1 if alpha integral) grids: r = n, n-1, ..., n-k+1."""
    k = n - math.floor(alpha) + (1 if alpha == math.floor(alpha) else 0)
    return list(range(n, n - k, -1))


def validate_config(cfg: RunConfig, mu: AtomicMeasure | None) -> list:
    diags = []
    if mu is not None:
        for issue in validate_measure(mu):
            diags.append({"level": "error", "message": issue})
        rset = required_boundary_dims(mu.dim, mu.alpha)
        diags.append({
            "level": "info",
            "message": f"testing requires {len(rset)} grid dimension(s): r in {rset}",
        })
        if cfg.levels is not None and cfg.levels[1] > mu.resolution_level:
            diags.append({
                "level": "error",
                "message": (
                    f"levels beyond the resolution level {mu.resolution_level} "
                    "are not faithful"
                ),
            })
        if cfg.gamma is not None and not (0 < cfg.gamma < 2.0 ** (cfg.bigQ + 1)):
            diags.append({"level": "error", "message": "gamma outside (0, side(Q))"})
    return diags


class OutputWriter:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list = []
        self.t0 = time.monotonic()

    def config_header(self) -> str:
        return json.dumps(self.cfg.to_json(), sort_keys=True)

    def write_csv(self, name: str, rows) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# config: {self.config_header()}\n")
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow(row)
        self.files.append(name)
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        payload = dict(payload)
        payload["config"] = self.cfg.to_json()
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        self.files.append(name)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.files.append(name)
        return path

    def manifest(self) -> Path:
        path = self.dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump(
                {
                    "config": self.cfg.to_json(),
                    "library_version": __version__,
                    "wall_time_s": time.monotonic() - self.t0,
                    "outputs": self.files,
                },
                fh,
                sort_keys=True,
                indent=1,
            )
        return path


def _svg(ms, series, verdict) -> str:
    width, height, pad = 480, 320, 40
    top = max(max(v) for v in series.values()) or 1.0
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-size="13">verdict: {verdict}</text>',
    ]
    colors = {"sup_f_t": "#1b6ca8", "sup_rho_mu": "#a83232"}
    for name, vals in series.items():
        pts = []
        for i, (m, v) in enumerate(zip(ms, vals)):
            x = pad + (width - 2 * pad) * (i / max(len(ms) - 1, 1))
            y = height - pad - (height - 2 * pad) * (v / top)
            pts.append(f"{x:.1f},{y:.1f}")
        lines.append(
            f'<polyline fill="none" stroke="{colors[name]}" stroke-width="2" '
            f'points="{" ".join(pts)}"/>'
        )
    for i, m in enumerate(ms):
        x = pad + (width - 2 * pad) * (i / max(len(ms) - 1, 1))
        lines.append(
            f'<text x="{x:.1f}" y="{height - pad + 16}" font-size="11" '
            f'text-anchor="middle">M={m}</text>'
        )
    lines.append(
        f'<text x="{pad}" y="{height - 8}" font-size="11" fill="#1b6ca8">sup_f_t</text>'
    )
    lines.append(
        f'<text x="{pad + 80}" y="{height - 8}" font-size="11" fill="#a83232">'
        "sup_rho_mu</text>"
    )
    lines.append("</svg>")
    return "\n".join(lines)


def fail_json(err: Exception, code: int) -> None:
    payload = err.to_json() if isinstance(err, NhcaError) else {
        "error": type(err).__name__, "message": str(err),
    }
    click.echo(json.dumps(payload, sort_keys=True), err=True)
    sys.exit(code)


def guarded(fn):
    """Map library errors to the documented exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InternalError, AssertionError) as err:
            fail_json(err, 3)
        except NhcaError as err:
            fail_json(err, 2)

    wrapper.__name__ = fn.__name__
    return wrapper


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Testing-condition scans and compactness diagnostics for CZ operators
    on atomic measures."""


def common_options(fn):
    fn = click.option("--measure", "measure_path", type=click.Path(exists=True),
                      required=True)(fn)
    fn = click.option("--kernel", default="cauchy", show_default=True)(fn)
    fn = click.option("--gamma", type=float, default=None)(fn)
    fn = click.option("--bigQ", "bigq", type=int, default=10, show_default=True)(fn)
    fn = click.option("--out", default=".", show_default=True)(fn)
    fn = click.option("--threads", type=int, default=None)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    return fn


@main.group()
def measure():
    """Generate and validate measure files."""


@measure.command("gen")
@click.option("--kind", type=click.Choice(["segment", "square", "cantor4"]), required=True)
@click.option("--atoms", type=int, default=2**14, show_default=True)
@click.option("--generation", type=int, default=4, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--out", "out_path", required=True)
@guarded
def measure_gen(kind, atoms, generation, alpha, out_path):
    if kind == "segment":
        mu = generate("segment", n_atoms=atoms)
    elif kind == "square":
        side = max(2, int(round(math.sqrt(atoms))))
        mu = generate("square", n_cells=side, alpha=alpha)
    else:
        mu = generate("cantor4", generation=generation)
    mu.save(out_path)
    click.echo(f"wrote {out_path}: {mu.n_atoms} atoms, label={mu.label}")


@measure.command("check")
@click.option("--measure", "measure_path", type=click.Path(exists=True), required=True)
@guarded
def measure_check(measure_path):
    mu = AtomicMeasure.load(measure_path)
    cfg = RunConfig(command="measure check", measure=measure_path)
    diags = validate_config(cfg, mu)
    for d in diags:
        click.echo(json.dumps(d, sort_keys=True))
    if any(d["level"] == "error" for d in diags):
        raise ValidationError("measure failed validation")
    click.echo("ok")


@main.group()
def haar():
    """Wavelet-system self-checks."""


@haar.command("check")
@click.option("--measure", "measure_path", type=click.Path(exists=True), required=True)
@click.option("--out", default=".", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def haar_check(measure_path, out, seed):
    mu = AtomicMeasure.load(measure_path)
    cfg = RunConfig(command="haar check", measure=measure_path, out=out, seed=seed)
    writer = OutputWriter(cfg)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=mu.n_atoms)
    res = parseval_residual(mu, f)
    cmap = analyze(mu, f)
    rec = synthesize(mu, cmap)
    rec_err = float(np.max(np.abs(rec - remove_quadrant_means(mu, f))))
    report = {
        "parseval_residual": res,
        "reconstruction_error": rec_err,
        "coefficients": len(cmap),
        "level_range": list(cmap.level_range),
    }
    writer.write_json("haar_check.json", report)
    writer.write_csv("coefficients.csv",
                     [("grid", "level", "corner", "re", "im"), *cmap.to_csv_rows()])
    writer.manifest()
    click.echo(json.dumps(report, sort_keys=True))
    if res > 1e-10 or rec_err > 1e-10:
        raise InternalError("haar self-check failed")


@main.command("scan")
@common_options
@click.option("--grids", default="std", show_default=True,
              help="comma-separated families: std, sh<i>, bd<r>")
@click.option("--levels", default="0..4", show_default=True)
@click.option("--dilations", default="1", show_default=True)
@guarded
def scan_cmd(measure_path, kernel, gamma, bigq, out, threads, seed, grids, levels, dilations):
    mu = AtomicMeasure.load(measure_path)
    lv = parse_range(levels)
    cfg = RunConfig(
        command="scan", measure=measure_path, kernel=kernel, gamma=gamma,
        bigQ=bigq, grids=grids.split(","), levels=lv, out=out,
        threads=threads, seed=seed,
    )
    diags = validate_config(cfg, mu)
    if any(d["level"] == "error" for d in diags):
        raise ValidationError("; ".join(d["message"] for d in diags if d["level"] == "error"))
    K = build_kernel(cfg)
    writer = OutputWriter(cfg)
    dil = tuple(int(d) for d in dilations.split(","))
    frozen = None
    y0 = support_line(mu)
    if y0 is not None and any(g.startswith("bd") for g in cfg.grids):
        frozen = {1: [y0]}
    for family in cfg.grids:
        res = testing_scan(
            K, mu, family, range(lv[0], lv[1] + 1), dil,
            frozen_values=frozen, threads=threads,
        )
        writer.write_csv(f"scan_{family}.csv", res.csv_rows())
    writer.manifest()
    click.echo(f"scan complete: {len(cfg.grids)} family file(s) in {out}")


@main.command("compact")
@common_options
@click.option("--M", "m_range", default="2..5", show_default=True)
@click.option("--grids", default="std", show_default=True)
@click.option("--delta", type=float, default=1.0, show_default=True)
@guarded
def compact_cmd(measure_path, kernel, gamma, bigq, out, threads, seed, m_range, grids, delta):
    mu = AtomicMeasure.load(measure_path)
    m_lo, m_hi = parse_range(m_range)
    cfg = RunConfig(
        command="compact", measure=measure_path, kernel=kernel, gamma=gamma,
        bigQ=bigq, grids=grids.split(","), M=(m_lo, m_hi), delta=delta,
        out=out, threads=threads, seed=seed,
    )
    K = build_kernel(cfg)
    writer = OutputWriter(cfg)
    table = compactness_table(
        K, mu, range(m_lo, m_hi + 1), delta, families=cfg.grids, threads=threads
    )
    writer.write_json("compactness.json", table.to_json())
    writer.write_text("compactness.svg", _svg(
        [r["M"] for r in table.rows],
        {"sup_f_t": [r["sup_f_t"] for r in table.rows],
         "sup_rho_mu": [r["sup_rho_mu"] for r in table.rows]},
        table.verdict,
    ))
    writer.manifest()
    click.echo(f"verdict: {table.verdict}")


@main.command("bump")
@common_options
@click.option("--mode", type=click.Choice(["separated", "nested"]), default="separated",
              show_default=True)
@click.option("--depth", type=int, default=5, show_default=True)
@click.option("--theta", type=float, default=None)
@click.option("--delta", type=float, default=None,
              help="runs delta=1.0 and delta=0.9 when omitted")
@guarded
def bump_cmd(measure_path, kernel, gamma, bigq, out, threads, seed, mode, depth, theta, delta):
    mu = AtomicMeasure.load(measure_path)
    cfg = RunConfig(
        command="bump", measure=measure_path, kernel=kernel, gamma=gamma,
        bigQ=bigq, depth=depth, theta=theta, delta=delta if delta else 1.0,
        out=out, threads=threads, seed=seed,
    )
    K = build_kernel(cfg)
    writer = OutputWriter(cfg)
    deltas = [delta] if delta is not None else [1.0, 0.9]
    summary = {}
    for d in deltas:
        rep = bump_report(K, mu, mode, depth, theta=theta, delta=d)
        writer.write_csv(f"bump_{mode}_delta{d}.csv", rep.csv_rows())
        summary[f"delta={d}"] = {
            "sup_ratio": rep.sup_ratio, "pairs": rep.pairs, "excluded": rep.excluded,
        }
    writer.write_json("bump_summary.json", summary)
    writer.manifest()
    click.echo(json.dumps(summary, sort_keys=True))


@main.command("para")
@common_options
@click.option("--theta", type=float, default=None)
@guarded
def para_cmd(measure_path, kernel, gamma, bigq, out, threads, seed, theta):
    mu = AtomicMeasure.load(measure_path)
    cfg = RunConfig(
        command="para", measure=measure_path, kernel=kernel, gamma=gamma,
        bigQ=bigq, theta=theta, out=out, threads=threads, seed=seed,
    )
    K = build_kernel(cfg)
    writer = OutputWriter(cfg)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=mu.n_atoms)
    g = rng.normal(size=mu.n_atoms)
    lo, hi = mu.bbox()
    half = 2.0 ** math.ceil(math.log2(max(np.abs(lo).max(), np.abs(hi).max()) + 1))
    Q = Box((-half,) * mu.dim, (half,) * mu.dim)
    res = paraproduct_eval(K, mu, f, g, Q, theta=theta, seed=seed)
    payload = {
        "Pi": [res["Pi"].real, res["Pi"].imag],
        "Pi_prime": [res["Pi_prime"].real, res["Pi_prime"].imag],
        "telescope_residual": res["telescope_residual"],
        "theta": res["theta"],
    }
    writer.write_json("paraproducts.json", payload)
    writer.manifest()
    click.echo(json.dumps(payload, sort_keys=True))
    if res["telescope_residual"] > 1e-10:
        raise InternalError("localized telescope identity failed")


@main.command("collar")
@click.option("--measure", "measure_path", type=click.Path(exists=True), required=True)
@click.option("--bigQ", "bigq", type=int, default=3, show_default=True,
              help="collars are built inside Q = [0, 2^bigQ)^n")
@click.option("--N0", "n0", type=int, default=1, show_default=True)
@click.option("--theta", type=float, default=0.1, show_default=True)
@click.option("--depth", type=int, default=None)
@click.option("--out", default=".", show_default=True)
@guarded
def collar_cmd(measure_path, bigq, n0, theta, depth, out):
    mu = AtomicMeasure.load(measure_path)
    cfg = RunConfig(command="collar", measure=measure_path, bigQ=bigq,
                    theta=theta, depth=depth, out=out)
    writer = OutputWriter(cfg)
    Q = CubeId(GridRef.standard(mu.dim), -bigq, tuple([0] * mu.dim))
    depth = depth or (mu.resolution_level + bigq)
    res = collar_measure(mu, Q, n0, theta, range(n0 + 1, depth + 1))
    payload = {
        "masses": [[k, m] for k, m in res["masses"]],
        "skeleton_atoms_flag": res["skeleton_atoms_flag"],
        "theta": theta,
        "N0": n0,
    }
    writer.write_json("collar.json", payload)
    writer.manifest()
    click.echo(json.dumps(payload, sort_keys=True))


@main.command("buckets")
@common_options
@click.option("--M", "m_window", type=int, default=2, show_default=True)
@click.option("--theta", type=float, default=None)
@click.option("--depth", type=int, default=None)
@guarded
def buckets_cmd(measure_path, kernel, gamma, bigq, out, threads, seed, m_window, theta, depth):
    mu = AtomicMeasure.load(measure_path)
    cfg = RunConfig(
        command="buckets", measure=measure_path, kernel=kernel, gamma=gamma,
        bigQ=bigq, M=(m_window, m_window), theta=theta, depth=depth,
        out=out, threads=threads, seed=seed,
    )
    K = build_kernel(cfg)
    writer = OutputWriter(cfg)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=mu.n_atoms)
    g = rng.normal(size=mu.n_atoms)
    rep = bucket_decomposition_report(K, mu, f, g, m_window, theta=theta, depth=depth)
    writer.write_json("buckets.json", rep.to_json())
    writer.manifest()
    click.echo(json.dumps({"residual": rep.residual, "pairs": rep.pairs}, sort_keys=True))
    if rep.residual > 1e-8:
        raise InternalError(f"bucket residual {rep.residual} exceeds 1e-8")


if __name__ == "__main__":
    main()
