"""Batch experiment driver: config-driven builds, checks, CSV and SVG output.

Configuration is plain key = value text with one section per module
(configparser syntax).  Every run writes a JSON manifest listing the config
hash, per-check results with measured constants, and a content hash for
each emitted file.  CSV uses '.' decimals, ',' separators, a mandatory
header row, and 17-significant-digit floats, so identical configs produce
byte-identical tables.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .averages import averaged_field, lil_ratio_profile, weighted_average_I
from .counterexample import (
    Overrides,
    Sampler,
    StoppingConstruction,
    bloch_step_norm,
    choose_params,
    envelope_bound,
    growth_envelope,
    haar_coefficient_bound,
    level_set_measure,
    make_mother_wavelet,
    paper_level_threshold,
    parseval_identity_check,
    proposition_witness,
    qfl_threshold,
    quadratic_lower_bound,
    sample_active_intervals,
    sample_survivor_leaves,
)
from .errors import ConstructionError
from .harmonic import GraphDomain, constant_field, growth_norm, lacunary_series, strip_points, synthetic_field
from .martingale import bloch_to_martingale, li_bounds_check, quadratic_function, quadratic_function_brute, table_to_csv, tower_defect
from .util import fmt17, sha256_bytes, sha256_file, trend_free
from .weights import parse_weight_token, scale_sequence, weight_invariants_report


class CheckLog:
    """Collects named pass/fail results with measured values."""

    def __init__(self):
        self.checks = []

    def record(self, name: str, passed: bool, **measured) -> bool:
        self.checks.append({"name": name, "passed": bool(passed),
                            "measured": {k: _jsonable(v) for k, v in measured.items()}})
        tag = "PASS" if passed else "FAIL"
        extra = "  ".join(f"{k}={_fmt(v)}" for k, v in measured.items())
        print(f"{tag:<5} {name:<44} {extra}")
        return passed

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def load_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if path is not None:
        text = Path(path).read_text()
        cfg.read_string(text)
        cfg._source_text = text  # kept for hashing
    else:
        cfg._source_text = ""
    return cfg


def apply_cli_overrides(cfg: configparser.ConfigParser, overrides: list) -> None:
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        section, option = key.split(".", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section.strip(), option.strip(), value.strip())


def config_hash(cfg: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cfg.write(buf)
    return sha256_bytes(buf.getvalue().encode())


class Manifest:
    def __init__(self, cfg: configparser.ConfigParser):
        self.data = {
            "version": __version__,
            "config_sha256": config_hash(cfg),
            "wall_clock_s": None,
            "checks": [],
            "files": {},
        }
        self._t0 = time.time()

    def add_file(self, path: Path) -> None:
        self.data["files"][path.name] = sha256_file(path)

    def write(self, out_dir: Path, log: CheckLog) -> Path:
        self.data["checks"] = log.checks
        self.data["wall_clock_s"] = round(time.time() - self._t0, 3)
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("output", "dir", fallback="out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_field(cfg, seed_override=None):
    kind = cfg.get("field", "kind", fallback="lacunary")
    w = parse_weight_token(cfg.get("weights", "token", fallback="w0"))
    if kind == "lacunary":
        depth = cfg.getint("field", "depth", fallback=12)
        seed = seed_override if seed_override is not None else cfg.getint("field", "seed", fallback=0)
        return lacunary_series(w, depth, seed=seed), w
    if kind == "constant":
        return constant_field(cfg.getfloat("field", "value", fallback=1.0)), w
    if kind == "weight_profile":
        return synthetic_field(lambda x, y: w(np.maximum(y, 1e-300))), w
    raise ValueError(f"unknown field kind {kind!r}")


def _delta_grid(cfg):
    hi = cfg.getint("samples", "delta_exp_max", fallback=12)
    step = cfg.getint("samples", "delta_exp_step", fallback=1)
    return [2.0 ** -k for k in range(1, hi + 1, step)]


def _x_grid(cfg):
    n = cfg.getint("samples", "x_count", fallback=16)
    return [(i + 0.5) / n for i in range(n)]


# -- subcommands --------------------------------------------------------------


def cmd_weights_check(args, cfg) -> int:
    log = CheckLog()
    token = cfg.get("weights", "token", fallback="w0")
    w = parse_weight_token(token)
    rep = weight_invariants_report(w)
    log.record("non-increasing", rep["non_increasing"])
    log.record("unit above one", rep["unit_above_one"])
    log.record("doubling", rep["doubling_ok"], measured=rep["doubling_measured"],
               declared=rep["doubling_declared"])
    log.record("continuity", rep["continuity_ok"], max_jump=rep["max_relative_jump_on_fine_grid"])
    log.record("grows toward 0", rep["strictly_growing_toward_0"])
    if w.unbounded:
        K = 2 if w.label == "w0" else 10
        seq = scale_sequence(w, K)
        ok = all(s2 < s1 for s1, s2 in zip(seq.s, seq.s[1:]))
        log.record(f"scale sequence K={K}", ok, s_last=seq.s[-1], alpha_last=seq.alpha[-1])
    if args.out:
        out = _out_dir(args, cfg)
        man = Manifest(cfg)
        man.write(out, log)
    return 0 if log.all_passed else 1


def cmd_field_build(args, cfg) -> int:
    log = CheckLog()
    out = _out_dir(args, cfg)
    man = Manifest(cfg)
    u, w = build_field(cfg, args.seed)
    dom = GraphDomain.flat()
    pts = strip_points(dom, np.linspace(0, 1, 33), np.logspace(-12, 1, 27, base=2.0))
    gn = growth_norm(u, dom, w, pts)
    log.record("growth norm finite", math.isfinite(gn) and gn > 0.0, growth_norm=gn)
    if u.kind in ("lacunary", "poisson", "constant"):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(20):
            x, y = rng.uniform(0, 1), rng.uniform(0.05, 1.0)
            res = abs(u.laplacian_residual(x, y, 1e-4 * y))
            worst = max(worst, res * y ** 2 / (1.0 + abs(u.eval(x, y))))
        log.record("harmonicity residual", worst <= 1e-3, worst_scaled=worst)
    rows = ["x,y,u"]
    for x in np.linspace(0.0, 1.0, 9):
        for y in np.logspace(-6, 0, 7, base=2.0):
            rows.append(f"{fmt17(x)},{fmt17(y)},{fmt17(u.eval(float(x), float(y)))}")
    path = out / "field_samples.csv"
    path.write_text("\n".join(rows) + "\n")
    man.add_file(path)
    man.write(out, log)
    return 0 if log.all_passed else 1


def cmd_average_profile(args, cfg) -> int:
    log = CheckLog()
    out = _out_dir(args, cfg)
    man = Manifest(cfg)
    u, w = build_field(cfg, args.seed)
    dom = GraphDomain.flat()
    deltas = _delta_grid(cfg)
    tol = args.tol or 1e-8
    rows = ["x,delta,value,ratio,ratio_valid"]
    worst_ratio = 0.0
    for x in _x_grid(cfg):
        prof = lil_ratio_profile(u, dom, w, x, deltas, tol)
        worst_ratio = max(worst_ratio, prof.max_valid_ratio())
        for d, v, r, ok in zip(prof.deltas, prof.values, prof.ratios, prof.ratio_valid):
            rtxt = fmt17(r) if ok else "nan"
            rows.append(f"{fmt17(x)},{fmt17(d)},{fmt17(v)},{rtxt},{int(ok)}")
    path = out / "profiles.csv"
    path.write_text("\n".join(rows) + "\n")
    man.add_file(path)
    log.record("profiles computed", True, max_valid_ratio=worst_ratio,
               n_rows=len(rows) - 1)
    man.write(out, log)
    return 0 if log.all_passed else 1


def cmd_martingale(args, cfg) -> int:
    log = CheckLog()
    out = _out_dir(args, cfg)
    man = Manifest(cfg)
    u, w = build_field(cfg, args.seed)
    dom = GraphDomain.flat()
    K = cfg.getint("martingale", "levels", fallback=8)
    seq = scale_sequence(w, K)
    # the martingale shadows the Bloch approximant H, not the raw field
    H = averaged_field(u, w)
    table = bloch_to_martingale(H.eval, dom, seq)
    path = out / "martingale.csv"
    path.write_text(table_to_csv(table))
    man.add_file(path)
    log.record("table built", True, levels=table.depth,
               max_defect=max(table.defects) if table.defects else 0.0)
    if args.command == "martingale" and args.mode == "check":
        defects = [tower_defect(table, k) for k in range(table.depth - 1)]
        log.record("defects finite", all(math.isfinite(d) for d in defects),
                   max_defect=max(defects))
        rng = np.random.default_rng(1)
        worst = 0.0
        for t in rng.uniform(0.01, 1.0, 5):
            for k in range(table.depth):
                a = quadratic_function(table, k, float(t))
                b = quadratic_function_brute(table, k, float(t))
                worst = max(worst, abs(a - b))
        log.record("quadratic brute-force equivalence", worst < 1e-10, worst=worst)
        xs = _x_grid(cfg)
        tol = args.tol or 1e-8
        I_vals = np.array([[weighted_average_I(u, dom, w, x, seq.s[k], tol)
                            for x in xs] for k in range(table.depth)])
        res = li_bounds_check(table, I_vals, xs)
        log.record("approximation trend-free", trend_free(res.per_level_approx),
                   sup=res.approx_sup)
        log.record("step trend-free", trend_free(res.per_level_step),
                   sup=res.step_sup)
    man.write(out, log)
    return 0 if log.all_passed else 1


def _counterexample_state(cfg):
    phi = make_mother_wavelet()
    w = parse_weight_token(cfg.get("counterexample", "weight", fallback="pow:0.111111"))
    betas_txt = cfg.get("counterexample", "betas", fallback="")
    ov = Overrides(
        relax_bracketing=cfg.getboolean("counterexample", "relax_bracketing", fallback=False),
        relax_j0=cfg.getboolean("counterexample", "relax_j0", fallback=False),
        force_a=cfg.getint("counterexample", "a", fallback=None) if cfg.get(
            "counterexample", "a", fallback=None) else None,
        force_betas=tuple(int(tok) for tok in betas_txt.split(",")) if betas_txt else None,
        stopping_enabled=cfg.getboolean("counterexample", "stopping", fallback=True),
        depth_budget=cfg.getint("counterexample", "depth_budget", fallback=600),
    )
    j_max = cfg.getint("counterexample", "j_max", fallback=3)
    sup_rule = cfg.get("counterexample", "sup_rule", fallback="center")
    params = choose_params(phi, w, j_max, ov, sup_rule)
    return phi, StoppingConstruction(phi, params)


def cmd_counterexample(args, cfg) -> int:
    log = CheckLog()
    out = _out_dir(args, cfg)
    man = Manifest(cfg)
    phi, state = _counterexample_state(cfg)
    p = state.params
    log.record("params", True, a=p.a, j0=p.j0, betas=list(p.betas),
               relaxations=list(p.relaxations))
    n_level = cfg.getint("counterexample", "level_samples", fallback=4096)
    samp = Sampler("grid", n_level)
    rows = ["generation,threshold,measure"]
    if args.mode == "check":
        half = 0.5 * abs(phi.haar_pairing)
        thinning_honored = 2.0 ** (1 - p.a) * phi.deriv_sup <= 0.25 * abs(phi.haar_pairing)
        for j in range(1, p.generations):
            end = p.beta(j + 1)
            if end <= 14:
                step = max(bloch_step_norm(state, k, Sampler("grid", 1024))
                           for k in range(1, end + 1))
                log.record(f"step norm gen {j}", step <= 1.0 + 1e-12, sup=step)
                env = growth_envelope(state, end, Sampler("grid", 2048))
                log.record(f"envelope gen {j}", env <= envelope_bound(state, end),
                           sup=env, bound=envelope_bound(state, end))
                log.record(f"parseval gen {j}",
                           parseval_identity_check(state, j, min(end, 12)) < 1e-8)
            sample = sample_active_intervals(state, j, 100, seed=7)
            if sample and thinning_honored:
                mn = haar_coefficient_bound(state, j, sample)
                log.record(f"coefficient floor gen {j}", mn >= half - 1e-8,
                           min_b=mn, floor=half)
            surv = sample_survivor_leaves(state, j, 100, seed=8)
            if surv:
                q = quadratic_lower_bound(state, j, surv[:30])
                log.record(f"quadratic mass gen {j}", q >= qfl_threshold(state, j) - 1e-9,
                           min_mass=q, threshold=qfl_threshold(state, j))
            thr = paper_level_threshold(state, j)
            m = level_set_measure(state, j, thr, samp)
            rows.append(f"{j},{fmt17(thr)},{fmt17(m.value)}")
            log.record(f"level set gen {j}", m.value >= 0.1, threshold=thr,
                       measure=m.value)
        wa = cfg.getfloat("counterexample", "witness_A", fallback=4.0)
        nw = cfg.getint("counterexample", "witness_samples", fallback=160)
        for k in range(2, p.generations + 1):
            try:
                mw = proposition_witness(state, k, wa, Sampler("grid", nw), tol=5e-3)
            except ValueError as exc:
                log.record(f"witness gen {k}", True, skipped=str(exc)[:60])
                continue
            log.record(f"witness gen {k}", mw.value >= 0.1, A=wa, measure=mw.value)
    snap = out / "construction.csv"
    snap.write_text(state.snapshot_csv())
    man.add_file(snap)
    meas = out / "level_sets.csv"
    meas.write_text("\n".join(rows) + "\n")
    man.add_file(meas)
    man.write(out, log)
    return 0 if log.all_passed else 1


def cmd_experiment_lil(args, cfg) -> int:
    log = CheckLog()
    out = _out_dir(args, cfg)
    man = Manifest(cfg)
    w = parse_weight_token(cfg.get("weights", "token", fallback="w0"))
    n_fields = cfg.getint("experiment", "fields", fallback=8)
    depth = cfg.getint("field", "depth", fallback=12)
    base_seed = args.seed if args.seed is not None else cfg.getint("field", "seed", fallback=0)
    deltas = _delta_grid(cfg)
    xs = _x_grid(cfg)
    dom = GraphDomain.flat()
    tol = args.tol or 1e-7
    gpts = strip_points(dom, np.linspace(0, 2 * math.pi, 256, endpoint=False),
                        np.logspace(-14, 1, 31, base=2.0))
    rows = ["seed,x,delta,value,ratio,ratio_valid"]
    sup_ratio = 0.0
    sup_growth = 0.0
    for i in range(n_fields):
        u = lacunary_series(w, depth, seed=base_seed + i)
        gn = growth_norm(u, dom, w, gpts)
        sup_growth = max(sup_growth, gn)
        for x in xs:
            prof = lil_ratio_profile(u, dom, w, x, deltas, tol)
            sup_ratio = max(sup_ratio, prof.max_valid_ratio())
            for d, v, r, ok in zip(prof.deltas, prof.values, prof.ratios, prof.ratio_valid):
                rtxt = fmt17(r) if ok else "nan"
                rows.append(f"{base_seed + i},{fmt17(x)},{fmt17(d)},{fmt17(v)},{rtxt},{int(ok)}")
    path = out / "lil_experiment.csv"
    path.write_text("\n".join(rows) + "\n")
    man.add_file(path)
    threshold = 10.0 * sup_growth
    log.record("lil ratio bounded", sup_ratio <= threshold, sup_ratio=sup_ratio,
               threshold=threshold, growth_norm=sup_growth)
    man.write(out, log)
    return 0 if log.all_passed else 1


def emit_plot(csv_path: Path, x_col: str, y_col: str, out_path: Path) -> None:
    """Deterministic SVG polyline plot of one CSV column against another."""
    text = Path(csv_path).read_text().strip().split("\n")
    header = text[0].split(",")
    if x_col not in header or y_col not in header:
        missing = x_col if x_col not in header else y_col
        raise ValueError(f"column {missing!r} not in {csv_path}")
    xi, yi = header.index(x_col), header.index(y_col)
    pts = []
    for line in text[1:]:
        cells = line.split(",")
        try:
            x, y = float(cells[xi]), float(cells[yi])
        except ValueError:
            continue
        if math.isfinite(x) and math.isfinite(y):
            pts.append((x, y))
    W, H, M = 800, 500, 60
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<line x1="{M}" y1="{H - M}" x2="{W - M}" y2="{H - M}" stroke="black"/>',
            f'<line x1="{M}" y1="{M}" x2="{M}" y2="{H - M}" stroke="black"/>']
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        sx = (W - 2 * M) / (x1 - x0 if x1 > x0 else 1.0)
        sy = (H - 2 * M) / (y1 - y0 if y1 > y0 else 1.0)
        coords = " ".join(
            f"{M + (x - x0) * sx:.2f},{H - M - (y - y0) * sy:.2f}" for x, y in pts)
        body.append(f'<polyline points="{coords}" fill="none" stroke="steelblue" '
                    f'stroke-width="1.5"/>')
        body.append(f'<text x="{M}" y="{H - M + 30}" font-size="12">{x_col}: '
                    f'[{fmt17(x0)}, {fmt17(x1)}]</text>')
        body.append(f'<text x="{M}" y="{M - 10}" font-size="12">{y_col}: '
                    f'[{fmt17(y0)}, {fmt17(y1)}]</text>')
    body.append("</svg>")
    Path(out_path).write_text("\n".join(body) + "\n")


def cmd_plot(args, cfg) -> int:
    out = _out_dir(args, cfg)
    target = out / (Path(args.csv).stem + ".svg")
    emit_plot(Path(args.csv), args.x_col, args.y_col, target)
    print(f"wrote {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lilavg",
                                 description="weighted-average LIL experiments")
    ap.add_argument("--config", default=None, help="plain-text config path")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--tol", type=float, default=None)
    ap.add_argument("--override", action="append", default=[],
                    metavar="SECTION.KEY=VALUE")
    sub = ap.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="weight family checks")
    w.add_argument("mode", choices=["check"])
    f = sub.add_parser("field", help="build a test field")
    f.add_argument("mode", choices=["build"])
    a = sub.add_parser("average", help="weighted-average profiles")
    a.add_argument("mode", choices=["profile"])
    m = sub.add_parser("martingale", help="surrogate martingale tables")
    m.add_argument("mode", choices=["build", "check"])
    ce = sub.add_parser("counterexample", help="stopping-time construction")
    ce.add_argument("mode", choices=["build", "check"])
    ex = sub.add_parser("experiment", help="batch experiments")
    ex.add_argument("mode", choices=["lil"])
    pl = sub.add_parser("plot", help="CSV column plot to SVG")
    pl.add_argument("csv")
    pl.add_argument("x_col")
    pl.add_argument("y_col")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config)
        apply_cli_overrides(cfg, args.override)
        if args.command == "weights":
            return cmd_weights_check(args, cfg)
        if args.command == "field":
            return cmd_field_build(args, cfg)
        if args.command == "average":
            return cmd_average_profile(args, cfg)
        if args.command == "martingale":
            return cmd_martingale(args, cfg)
        if args.command == "counterexample":
            return cmd_counterexample(args, cfg)
        if args.command == "experiment":
            return cmd_experiment_lil(args, cfg)
        if args.command == "plot":
            return cmd_plot(args, cfg)
        return 2
    except (ValueError, ConstructionError, OSError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
