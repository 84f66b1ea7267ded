"""Command-line driver.

    hillspec <command> [--config cfg.json] [flags]

Flags override values from the JSON config file.  Artifacts go to --out, else
$HILLSPEC_OUT, else ./hillspec_out.  Every CSV starts with a ``# config=`` line
holding the resolved config; JSON artifacts carry ``schema_version`` and
``config`` keys; SVGs embed the config in <metadata>.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import acceptance, expansion, floquet, hill, singular
from .potential import from_spec

SCHEMA_VERSION = 1
OUT_ENV = "HILLSPEC_OUT"
MIN_T_POINTS = 16
MIN_X_POINTS = 8

log = logging.getLogger("hillspec")


@dataclass
class RunConfig:
    potential: dict = field(default_factory=lambda: {"name": "mathieu", "a": 1.0, "b": 2.0})
    t_points: int = 256
    x_points: int = 101
    n_max: int = 8
    K: int | None = None
    h: float = expansion.H_DEFAULT
    delta_seq: list | None = None
    root_tol: float = hill.ROOT_TOL
    quad_order: int = expansion.PANEL_ORDER
    merge_rel: float = hill.MERGE_REL
    out_dir: str | None = None
    options: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("root_tol", "merge_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.h < expansion.H_MAX:
            raise ValueError(f"h must lie in (0, {expansion.H_MAX:.5f})")
        if self.t_points < MIN_T_POINTS:
            raise ValueError(f"t_points must be >= {MIN_T_POINTS}")
        if self.x_points < MIN_X_POINTS:
            raise ValueError(f"x_points must be >= {MIN_X_POINTS}")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.quad_order < 2:
            raise ValueError("quad_order must be >= 2")

    def resolved(self) -> dict:
        d = asdict(self)
        d["out_dir"] = str(self.output_dir())
        return d

    def output_dir(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_ENV) or "hillspec_out")

    def q(self):
        return from_spec(self.potential)


# ---------------------------------------------------------------------------
# config parsing


def parse_named(text: str) -> dict:
    """'optical:V=0.5' or '{"name": ...}' -> dict.  Values parse as JSON, then complex."""
    text = text.strip()
    if text.startswith("{"):
        return json.loads(text)
    name, _, rest = text.partition(":")
    out = {"name": name}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        try:
            val = json.loads(v)
        except json.JSONDecodeError:
            val = str(complex(v.replace("i", "j")))
        out[k.strip()] = val
    return out


def build_config(args) -> RunConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = RunConfig(**{k: v for k, v in data.items() if k in RunConfig.__dataclass_fields__})
    if args.potential:
        cfg.potential = parse_named(args.potential)
    for name in ("t_points", "x_points", "n_max", "K", "h", "root_tol", "quad_order", "merge_rel"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if args.delta_seq:
        cfg.delta_seq = [float(d) for d in args.delta_seq.split(",")]
    if args.out:
        cfg.out_dir = args.out
    for k, v in vars(args).items():
        if k.startswith("opt_") and v is not None:
            cfg.options[k[4:]] = v
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# artifacts


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_default)


def _default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, (complex, np.complexfloating)):
        return [float(o.real), float(o.imag)]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def write_json(path: Path, payload: dict, cfg: RunConfig) -> Path:
    body = {"schema_version": SCHEMA_VERSION, "config": cfg.resolved(), **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def stamp_csv(path: Path, cfg: RunConfig) -> Path:
    """Prepend the resolved config as a comment line."""
    body = path.read_text()
    path.write_text(f"# config={_dumps(cfg.resolved())}\n" + body)
    return path


def write_svg(path: Path, series, title: str, xlabel: str, ylabel: str, cfg: RunConfig,
              width: int = 640, height: int = 400) -> Path:
    """Static line chart; series is a list of (label, x, y)."""
    pad = 50
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f"<metadata>{_escape(_dumps(cfg.resolved()))}</metadata>",
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
           'fill="none" stroke="black"/>',
           f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{_escape(title)}</text>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{_escape(xlabel)}</text>',
           f'<text x="14" y="{height / 2}" transform="rotate(-90 14 {height / 2})" text-anchor="middle" '
           f'font-size="12">{_escape(ylabel)}</text>',
           f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0:.4g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 14}" text-anchor="end" font-size="10">{x1:.4g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{y0:.4g}</text>',
           f'<text x="{pad - 4}" y="{pad + 8}" text-anchor="end" font-size="10">{y1:.4g}</text>']
    for i, (label, x, y) in enumerate(series):
        x, y = np.asarray(x, float), np.asarray(y, float)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if np.isfinite(a) and np.isfinite(b))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{pts}"><title>'
                   f"{_escape(str(label))}</title></polyline>")
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def t_grid(cfg: RunConfig) -> np.ndarray:
    n = cfg.t_points
    return -np.pi + 2 * np.pi * np.arange(1, n + 1) / n


# ---------------------------------------------------------------------------
# commands


def cmd_discriminant(cfg: RunConfig, out: Path) -> dict:
    q = cfg.q()
    o = cfg.options
    lam = np.linspace(float(o.get("lam_min", -10.0)), float(o.get("lam_max", 100.0)), int(o.get("lam_points", 400)))
    from .fundsol import grid_size_for
    F = hill.discriminant(q, lam, grid_size_for(q, float(np.abs(lam).max())))
    path = out / "discriminant.csv"
    with open(path, "w") as fh:
        fh.write("lambda,re_F,im_F\n")
        for lv, fv in zip(lam, F):
            fh.write(f"{lv!r},{float(fv.real)!r},{float(fv.imag)!r}\n")
    stamp_csv(path, cfg)
    series = [("Re F", lam, F.real), ("+2", lam[[0, -1]], [2, 2]), ("-2", lam[[0, -1]], [-2, -2])]
    if np.abs(F.imag).max() > 0:
        series.insert(1, ("Im F", lam, F.imag))
    write_svg(out / "discriminant.svg", series, "Hill discriminant", "lambda", "F", cfg)
    return {"csv": str(path), "svg": str(out / "discriminant.svg"), "points": len(lam)}


def cmd_bands(cfg: RunConfig, out: Path) -> dict:
    q = cfg.q()
    bands = hill.trace_bands(q, cfg.n_max, t_grid(cfg))
    path = out / "bands.csv"
    hill.write_bands_csv(bands, path)
    stamp_csv(path, cfg)
    write_svg(out / "bands.svg", [(f"n={b.n}", b.t_grid, b.lambdas.real) for b in bands],
              "Bloch bands", "t", "Re lambda", cfg)
    return {"csv": str(path), "svg": str(out / "bands.svg"), "bands": len(bands),
            "collisions": int(sum(b.collision_flags.sum() for b in bands))}


def cmd_alpha(cfg: RunConfig, out: Path) -> dict:
    q = cfg.q()
    t = t_grid(cfg)
    bands = hill.trace_bands(q, cfg.n_max, t)
    rows = []
    curves = {b.n: [] for b in bands}
    for i, tt in enumerate(t):
        lams = [b.lambdas[i] for b in bands]
        for b, alpha in zip(bands, _alphas(q, tt, lams)):
            rows.append((b.n, tt, alpha))
            curves[b.n].append(abs(alpha))
    path = out / "alpha.csv"
    floquet.write_alpha_csv(rows, path)
    stamp_csv(path, cfg)
    write_svg(out / "alpha.svg", [(f"n={n}", t, v) for n, v in curves.items()], "|alpha_n(t)|", "t",
              "|alpha|", cfg)
    mins = {n: float(np.nanmin(v)) for n, v in curves.items()}
    return {"csv": str(path), "svg": str(out / "alpha.svg"), "min_abs_alpha": mins}


def _alphas(q, t, lams):
    """alpha per eigenvalue; NaN at a semisimple double eigenvalue, where it is undefined."""
    try:
        return [T.alpha for T in floquet.eigen_triples(q, t, lams, allow_underflow=True)]
    except floquet.DegenerateFormulaError:
        out = []
        for lam in lams:
            try:
                out.append(floquet.eigen_triples(q, t, [lam], allow_underflow=True)[0].alpha)
            except floquet.DegenerateFormulaError:
                out.append(complex(np.nan, np.nan))
        return out


def cmd_singularities(cfg: RunConfig, out: Path) -> dict:
    q = cfg.q()
    pts = singular.find_spectral_singularities(q, cfg.n_max)
    recs = singular.ess_groups(q, cfg.n_max)
    singular.write_singularities_csv(pts, out / "singularities.csv")
    stamp_csv(out / "singularities.csv", cfg)
    payload = {"singularities": [{"n": p.n, "t": p.t, "lambda": p.lam, "abs_alpha": p.alpha_abs} for p in pts],
               "ess": [r.to_json() for r in recs]}
    write_json(out / "singularities.json", payload, cfg)
    return {"json": str(out / "singularities.json"), "count": len(pts),
            "ess": [list(r.member_set) for r in recs if r.verdict == "ESS"]}


def cmd_critical_v(cfg: RunConfig, out: Path) -> dict:
    o = cfg.options
    lo, hi = o.get("interval") or (0.3, 1.0)
    Vs = singular.critical_V((float(lo), float(hi)), pair_hint=o.get("pair"))
    for V in Vs:
        print(f"V = {V:.12f}")
    write_json(out / "critical_v.json", {"interval": [lo, hi], "critical_V": Vs}, cfg)
    return {"json": str(out / "critical_v.json"), "critical_V": Vs}


def cmd_spectrality(cfg: RunConfig, out: Path) -> dict:
    o = cfg.options
    if "a" in o or "b" in o:
        a, b = complex(o.get("a", cfg.potential.get("a", 0))), complex(o.get("b", cfg.potential.get("b", 0)))
    else:
        a, b = complex(cfg.potential.get("a", 0)), complex(cfg.potential.get("b", 0))
    exact = Fraction(o["exact_alpha"]) if o.get("exact_alpha") else None
    v = singular.mathieu_spectrality(a, b, exact_alpha=exact, N_search=int(o.get("n_search", 1000)))
    print(v.verdict)
    write_json(out / "spectrality.json", {"verdict": v.to_json()}, cfg)
    return {"json": str(out / "spectrality.json"), "verdict": v.verdict}


def cmd_expand(cfg: RunConfig, out: Path) -> dict:
    q = cfg.q()
    o = cfg.options
    f = expansion.test_function_from_spec(parse_named(o.get("function") or "gaussian:center=0.5,width=0.1"))
    plan = expansion.GroupingPlan(h=cfg.h, delta_seq=tuple(cfg.delta_seq) if cfg.delta_seq else None,
                                  panel_order=cfg.quad_order)
    x = np.linspace(0.0, q.declared_period, cfg.x_points)
    fn = expansion.reconstruct_lambda if o.get("domain") == "lambda" else expansion.reconstruct_t
    rep = fn(f, q, plan=plan, n_max=cfg.n_max, x_grid=x, K=cfg.K, grid_size=o.get("grid_size"))
    rep.to_csv(out / "expansion.csv")
    stamp_csv(out / "expansion.csv", cfg)
    write_json(out / "expansion.json", {"summary": rep.summary()}, cfg)
    write_svg(out / "expansion.svg", [("f", rep.x, rep.f.real), ("reconstruction", rep.x, rep.reconstruction.real)],
              f"{rep.mode} reconstruction", "x", "Re", cfg)
    print(f"residual = {rep.residual:.3e}")
    return {"json": str(out / "expansion.json"), "residual": rep.residual}


def cmd_verify(cfg: RunConfig, out: Path) -> dict:
    only = cfg.options.get("only")
    nums = [int(n) for n in str(only).split(",")] if only else None
    res = acceptance.run(nums)
    write_json(out / "verify.json", {"results": [asdict(r) for r in res]}, cfg)
    return {"json": str(out / "verify.json"), "passed": sum(r.passed for r in res), "total": len(res),
            "_status": 0 if all(r.passed for r in res) else 3}


COMMANDS = {
    "discriminant": cmd_discriminant,
    "bands": cmd_bands,
    "alpha": cmd_alpha,
    "singularities": cmd_singularities,
    "critical-v": cmd_critical_v,
    "spectrality": cmd_spectrality,
    "expand": cmd_expand,
    "verify": cmd_verify,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hillspec", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--potential", help="e.g. 'mathieu:a=1,b=2', 'optical:V=0.5', 'zero' or a JSON object")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./hillspec_out)")
    p.add_argument("--t-points", dest="t_points", type=int)
    p.add_argument("--x-points", dest="x_points", type=int)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--delta-seq", dest="delta_seq", help="comma-separated decreasing cutoffs")
    p.add_argument("--root-tol", dest="root_tol", type=float)
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--merge-rel", dest="merge_rel", type=float)
    g = p.add_argument_group("command options")
    g.add_argument("--lam-min", dest="opt_lam_min", type=float)
    g.add_argument("--lam-max", dest="opt_lam_max", type=float)
    g.add_argument("--lam-points", dest="opt_lam_points", type=int)
    g.add_argument("--interval", dest="opt_interval", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--pair", dest="opt_pair", type=int)
    g.add_argument("--a", dest="opt_a")
    g.add_argument("--b", dest="opt_b")
    g.add_argument("--exact-alpha", dest="opt_exact_alpha", help="rational arg(ab)/pi, e.g. 1/3")
    g.add_argument("--n-search", dest="opt_n_search", type=int)
    g.add_argument("--function", dest="opt_function", help="e.g. 'gaussian:center=0.5,width=0.1'")
    g.add_argument("--domain", dest="opt_domain", choices=["t", "lambda"])
    g.add_argument("--grid-size", dest="opt_grid_size", type=int)
    g.add_argument("--only", dest="opt_only", help="acceptance criteria to run, e.g. 1,2,3")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = None
    try:
        cfg = build_config(args)
        out = cfg.output_dir()
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out)
        status = result.pop("_status", 0)
        print(_dumps({"schema_version": SCHEMA_VERSION, "command": args.command, "status": "ok", **result}))
        return status
    except Exception as exc:  # any module error becomes machine-readable output
        err = {"schema_version": SCHEMA_VERSION, "command": args.command, "status": "error",
               "error": type(exc).__name__, "message": str(exc),
               "config": cfg.resolved() if cfg is not None else None}
        if args.verbose:
            err["traceback"] = traceback.format_exc()
        print(_dumps(err), file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1


if __name__ == "__main__":
    sys.exit(main())
