"""Command-line runner: detect, eigengap, experiment and oracle subcommands.

Exit codes: 0 success, 1 failed check or pipeline failure, 2 I/O or usage error.
Every output depends only on the inputs and --seed, so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fluidgraph, tdrw
from .cluster import (BASELINES, PipelineParams, baseline_communities, baseline_laplacian,
                      detect_communities, eigengap_report, heat_affinity)
from .data import (append_noise_features, apply_imbalance, apply_missing,
                   gen_blocks, gen_toy, load_csv, mark_zeros_missing, normalize_minmax)
from .errors import FluidError, ParameterError, ParseError
from .metrics import score_report, unit_ari
from .relevance import RelevanceParams, build_permeability

KERNELS = ("gaussian", "euclidean", "linear", "poly")
EXPERIMENTS = ("missing", "imbalance", "corrupt", "kernel-ablation")

# flag name -> (type, default); the config file uses the same keys
SETTINGS = {
    "input": (str, None),
    "gen": (str, None),
    "labels": (bool, False),
    "header": (bool, False),
    "zeros_missing": (bool, False),
    "seed": (int, 0),
    "reps": (int, 20),
    "bins": (int, 16),
    "ridge": (float, 1e-8),
    "sensitivity": (float, 1.0),
    "restarts": (int, 10),
    "out": (str, "."),
    "mp": (str, "0.08,0.1,0.15"),
    "class": (int, 1),
    "frac": (float, None),
    "snr": (float, 20.0),
    "kernel": (str, "gaussian"),
    "kernel_l": (float, 1.0),
    "kernel_a": (float, 1.0),
    "kernel_b": (float, 2.0),
    "k": (int, None),
    "export_matrices": (bool, False),
    "v_plus": (float, None),
    "v_minus": (float, None),
    "b_plus": (float, 1.0),
    "b_minus": (float, 1.0),
    "dt": (float, 1e-3),
    "paths": (int, 100_000),
    "skip_mc": (bool, False),
}


class UsageError(Exception):
    pass


def _coerce(key, raw):
    kind, _ = SETTINGS[key]
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def read_config(path) -> dict:
    """key=value lines; blank lines and '#' comments are skipped."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_settings(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = {k: d for k, (_, d) in SETTINGS.items()}
    if args.config:
        cfg.update(read_config(args.config))
    for key in SETTINGS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


# --------------------------------------------------------------------------
# datasets


def parse_gen_spec(spec: str):
    """'toy' or 'blocks[,k=3][,sizes=20/20/20][,n=30][,noise=0.05]'."""
    name, *parts = [p.strip() for p in spec.split(",")]
    opts = {}
    for part in parts:
        if "=" not in part:
            raise UsageError(f"bad generator option {part!r}")
        key, value = part.split("=", 1)
        opts[key.strip()] = value.strip()
    if name == "toy":
        if opts:
            raise UsageError("the toy generator takes no options")
        return lambda seed: gen_toy(seed)
    if name == "blocks":
        try:
            k = int(opts.pop("k", 3))
            sizes = tuple(int(s) for s in opts.pop("sizes", "/".join(["20"] * k)).split("/"))
            n = int(opts.pop("n", 30))
            noise = float(opts.pop("noise", 0.05))
        except ValueError as exc:
            raise UsageError(f"bad generator spec {spec!r}: {exc}") from None
        if opts:
            raise UsageError(f"unknown generator options {sorted(opts)}")
        if len(sizes) != k:
            raise UsageError(f"sizes lists {len(sizes)} classes but k={k}")
        return lambda seed: gen_blocks(k, sizes, n, noise, seed)
    raise UsageError(f"unknown generator {name!r} (expected toy or blocks)")


def dataset_source(cfg):
    """Returns a function seed -> (Dataset, GroundTruth or None)."""
    if (cfg["input"] is None) == (cfg["gen"] is None):
        raise UsageError("give exactly one of --input or --gen")
    if cfg["gen"] is not None:
        return parse_gen_spec(cfg["gen"])
    d, gt = load_csv(cfg["input"], has_labels=cfg["labels"], header=cfg["header"])
    if cfg["zeros_missing"]:
        d = mark_zeros_missing(d)
    return lambda seed: (d, gt)


def pipeline_params(cfg, seed=None) -> PipelineParams:
    if cfg["kernel"] not in KERNELS:
        raise UsageError(f"unknown kernel {cfg['kernel']!r}")
    rel = RelevanceParams(bins=cfg["bins"], ridge=cfg["ridge"], sensitivity=cfg["sensitivity"],
                          kernel=cfg["kernel"], kernel_l=cfg["kernel_l"], kernel_a=cfg["kernel_a"],
                          kernel_b=cfg["kernel_b"], restarts=cfg["restarts"])
    return PipelineParams(relevance=rel, restarts=cfg["restarts"],
                          seed=cfg["seed"] if seed is None else seed, k=cfg["k"])


def rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep, 0x5EED]).generate_state(1)[0])


# --------------------------------------------------------------------------
# output helpers


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(f"{float(x):.17g}")
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_json(path: Path, obj):
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, np.ndarray):
            return [clean(v) for v in o.tolist()]
        return _fmt(o)
    path.write_text(json.dumps(clean(obj), sort_keys=True, indent=1) + "\n")


def write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(_fmt(v)) if isinstance(v, float) else _fmt(v) for v in row])


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def mean_sd(xs):
    xs = np.asarray(xs, dtype=float)
    sd = float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0
    return {"mean": float(xs.mean()), "sd": sd, "n": int(len(xs))}


# --------------------------------------------------------------------------
# commands


def cmd_detect(cfg):
    d, gt = dataset_source(cfg)(cfg["seed"])
    det = detect_communities(d, pipeline_params(cfg))
    out = _outdir(cfg)
    write_rows(out / "partition.csv", ["sample", "cluster"],
               [(i, int(c)) for i, c in enumerate(det.partition.labels)])
    write_rows(out / "spectrum.csv", ["index", "f_norm_eigval", "f_eigval"],
               [(i, float(a), float(b)) for i, (a, b) in
                enumerate(zip(det.embedding.eigvals, det.f_eigvals))])
    det.permeability.write_tsv(out / "relevant.tsv")
    if cfg["export_matrices"]:
        fluidgraph.write_matrix_csv(out / "q.csv", det.q.q)
        fluidgraph.write_matrix_csv(out / "f.csv", det.laplacian.f)
    report = {"K_F": det.k, "NC": det.nc,
              "eigengaps": list(eigengap_report(det.f_eigvals, det.k)) if len(det.f_eigvals) >= det.k + 2 else None}
    if gt is not None:
        report["scores"] = score_report(det.q, det.partition.labels, gt.labels)
        report["ari_unit"] = unit_ari(det.partition.labels, gt.labels)
    write_json(out / "report.json", report)
    print(f"K_F={det.k} NC={det.nc:.6g} -> {out}")
    return 0


def cmd_eigengap(cfg):
    d, gt = dataset_source(cfg)(cfg["seed"])
    if gt is None:
        raise UsageError("eigengap needs ground-truth labels (--labels or --gen)")
    k_c = gt.k
    det = detect_communities(d, pipeline_params(cfg))
    rows = [("fluid",) + eigengap_report(det.f_eigvals, k_c)]
    nd = normalize_minmax(d)
    for kind in BASELINES:
        if kind == "self_tuning" and nd.sample_count < 8:
            print("warning: fewer than 8 samples, self_tuning row skipped", file=sys.stderr)
            continue
        _, ev = baseline_laplacian(nd, kind)
        rows.append((kind,) + eigengap_report(ev, k_c))
    table = [(m, a, b, a / b if b > 0 else math.inf) for m, a, b in rows]
    out = _outdir(cfg)
    write_rows(out / "eigengap.csv", ["method", "gap_k", "gap_k1", "ratio"], table)
    for m, a, b, r in table:
        print(f"{m:14s} gap_k={a:.6g} gap_k1={b:.6g} ratio={r:.6g}")
    return 0


def _score_rows(tag, rep, q, labels, gt):
    s = score_report(q, labels, gt.labels)
    return [tag, rep, int(labels.max()), unit_ari(labels, gt.labels)] + [s[k] for k in sorted(s)]


def _score_header(extra):
    keys = sorted(score_report(np.ones((3, 3)) - np.eye(3), np.array([1, 1, 2]), np.array([1, 2, 2])))
    return extra + ["method", "rep", "k", "ari_unit"] + keys


def _need_labels(gt):
    if gt is None:
        raise UsageError("this experiment needs ground-truth labels (--labels or --gen)")


def _parse_mp(text):
    try:
        vals = [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --mp list {text!r}") from None
    if not vals or any(not 0 <= v < 1 for v in vals):
        raise UsageError("--mp values must lie in [0, 1)")
    return vals


def experiment_missing(cfg, source):
    rows = []
    for mp in _parse_mp(cfg["mp"]):
        for rep in range(cfg["reps"]):
            s = rep_seed(cfg["seed"], rep)
            d, gt = source(s)
            _need_labels(gt)
            dm = apply_missing(normalize_minmax(d), mp, s)
            det = detect_communities(dm, pipeline_params(cfg, s))
            rows.append([mp] + _score_rows("fluid", rep, det.q, det.partition.labels, gt))
            base = baseline_communities(dm, "normalized", s, cfg["restarts"], k=cfg["k"])
            w = heat_affinity(normalize_minmax(dm).values, "normalized")
            rows.append([mp] + _score_rows("normalized", rep, w, base.labels, gt))
    return _score_header(["m_p"]), rows


def experiment_imbalance(cfg, source):
    frac = 0.6 if cfg["frac"] is None else cfg["frac"]
    rows = []
    for rep in range(cfg["reps"]):
        s = rep_seed(cfg["seed"], rep)
        d, gt = source(s)
        _need_labels(gt)
        di, gi = apply_imbalance(d, gt, cfg["class"], frac, s)
        det = detect_communities(di, pipeline_params(cfg, s))
        share = float(np.mean(gi.labels == cfg["class"]))
        rows.append([share] + _score_rows("fluid", rep, det.q, det.partition.labels, gi))
        base = baseline_communities(di, "normalized", s, cfg["restarts"], k=cfg["k"])
        w = heat_affinity(normalize_minmax(di).values, "normalized")
        rows.append([share] + _score_rows("normalized", rep, w, base.labels, gi))
    return _score_header(["target_share"]), rows


def _clean_fraction(relevant, injected):
    chosen = np.concatenate([np.asarray(r) for r in relevant])
    return float(np.mean(~np.isin(chosen, list(injected))))


def experiment_corrupt(cfg, source):
    frac = 0.3 if cfg["frac"] is None else cfg["frac"]
    rows = []
    for rep in range(cfg["reps"]):
        s = rep_seed(cfg["seed"], rep)
        d, gt = source(s)
        dn, rec = append_noise_features(normalize_minmax(d), frac, cfg["snr"], s)
        det = detect_communities(dn, pipeline_params(cfg, s))
        row = [rep, len(rec.injected_indices), _clean_fraction(det.permeability.relevant, rec.injected_indices)]
        row.append(unit_ari(det.partition.labels, gt.labels) if gt is not None else "")
        rows.append(row)
    return ["rep", "injected", "clean_fraction", "ari_unit"], rows


def experiment_kernel_ablation(cfg, source):
    frac = 0.3 if cfg["frac"] is None else cfg["frac"]
    rows = []
    for kernel in KERNELS:
        params = pipeline_params(dict(cfg, kernel=kernel))
        for rep in range(cfg["reps"]):
            s = rep_seed(cfg["seed"], rep)
            d, _ = source(s)
            dn, rec = append_noise_features(normalize_minmax(d), frac, cfg["snr"], s)
            perm = build_permeability(normalize_minmax(dn), replace(params.relevance, seed=s))
            rows.append([kernel, rep, _clean_fraction(perm.relevant, rec.injected_indices)])
    return ["kernel", "rep", "clean_fraction"], rows


def _summarize(kind, header, rows):
    summary = {}
    if kind in ("missing", "imbalance"):
        lead = header[0]
        for row in rows:
            rec = dict(zip(header, row))
            key = f"{rec['method']}" if kind == "imbalance" else f"{rec['method']}@{rec[lead]}"
            summary.setdefault(key, {"ari_unit": [], "mari_degree": [], "mnmi_degree": []})
            for metric in ("ari_unit", "mari_degree", "mnmi_degree"):
                summary[key][metric].append(rec[metric])
        return {k: {m: mean_sd(v) for m, v in d.items()} for k, d in summary.items()}
    if kind == "corrupt":
        fr = [r[2] for r in rows]
        return {"clean_fraction": mean_sd(fr), "min": min(fr), "max": max(fr)}
    by_kernel = {}
    for kernel, _, fr in rows:
        by_kernel.setdefault(kernel, []).append(fr)
    return {k: dict(mean_sd(v), min=min(v), max=max(v)) for k, v in by_kernel.items()}


def cmd_experiment(cfg, kind):
    if cfg["reps"] < 1:
        raise UsageError("--reps must be at least 1")
    source = dataset_source(cfg)
    run = {"missing": experiment_missing, "imbalance": experiment_imbalance,
           "corrupt": experiment_corrupt, "kernel-ablation": experiment_kernel_ablation}[kind]
    header, rows = run(cfg, source)
    out = _outdir(cfg)
    stem = kind.replace("-", "_")
    write_rows(out / f"{stem}_rows.csv", header, rows)
    summary = _summarize(kind, header, rows)
    write_json(out / f"{stem}_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_oracle(cfg):
    if cfg["v_plus"] is None or cfg["v_minus"] is None:
        raise UsageError("oracle needs --v-plus and --v-minus")
    try:
        p = tdrw.TdrwParams(cfg["v_plus"], cfg["v_minus"], cfg["b_plus"], cfg["b_minus"],
                            cfg["dt"], max(1, cfg["paths"]), cfg["seed"])
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    analytic = tdrw.splitting_probability_analytic(p)
    closed_form = fluidgraph.transition_probability(p.v_plus, p.v_minus, p.b_plus, p.b_minus)
    mc = se = None
    if not cfg["skip_mc"]:
        try:
            mc, se = tdrw.splitting_probability_mc(p)
        except ParameterError as exc:
            raise UsageError(str(exc)) from None
    line = {"params": {"v_plus": p.v_plus, "v_minus": p.v_minus, "b_plus": p.b_plus,
                       "b_minus": p.b_minus, "dt": p.dt, "paths": p.paths, "seed": p.seed},
            "analytic": analytic, "closed_form": closed_form, "mc": mc, "se": se}
    print(json.dumps({k: (v if not isinstance(v, float) else _fmt(v)) for k, v in line.items()},
                     sort_keys=True))
    return 1 if abs(analytic - closed_form) > 1e-10 else 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file; flags override it")
    src = common.add_mutually_exclusive_group()
    src.add_argument("--input", help="CSV dataset")
    src.add_argument("--gen", help="generator: 'toy' or 'blocks,k=3,sizes=20/20/20,n=30,noise=0.05'")
    common.add_argument("--labels", action="store_const", const=True, help="last CSV column holds class labels")
    common.add_argument("--header", action="store_const", const=True, help="CSV has a header row")
    common.add_argument("--zeros-missing", dest="zeros_missing", action="store_const", const=True,
                        help="treat exact zeros in the CSV as missing entries")
    common.add_argument("--seed", type=int)
    common.add_argument("--bins", type=int)
    common.add_argument("--ridge", type=float)
    common.add_argument("--sensitivity", type=float, help="kneedle sensitivity")
    common.add_argument("--restarts", type=int)
    common.add_argument("--kernel", choices=KERNELS)
    common.add_argument("--kernel-l", dest="kernel_l", type=float)
    common.add_argument("--kernel-a", dest="kernel_a", type=float)
    common.add_argument("--kernel-b", dest="kernel_b", type=float)
    common.add_argument("--k", type=int, help="fix the cluster count")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="fluidcd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("detect", parents=[common], help="run the community-detection pipeline")
    p.add_argument("--export-matrices", dest="export_matrices", action="store_const", const=True)
    sub.add_parser("eigengap", parents=[common], help="fluid vs heat-kernel eigengaps")
    p = sub.add_parser("experiment", parents=[common], help="repeated perturbation experiments")
    p.add_argument("kind", choices=EXPERIMENTS)
    p.add_argument("--reps", type=int)
    p.add_argument("--mp", help="comma-separated missing fractions")
    p.add_argument("--class", dest="class", type=int, help="class id boosted by the imbalance protocol")
    p.add_argument("--frac", type=float)
    p.add_argument("--snr", type=float)
    p = sub.add_parser("oracle", parents=[common], help="check the transition formula against the oracle")
    p.add_argument("--v-plus", dest="v_plus", type=float)
    p.add_argument("--v-minus", dest="v_minus", type=float)
    p.add_argument("--b-plus", dest="b_plus", type=float)
    p.add_argument("--b-minus", dest="b_minus", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--skip-mc", dest="skip_mc", action="store_const", const=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        cfg = resolve_settings(args)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "eigengap":
            return cmd_eigengap(cfg)
        if args.command == "experiment":
            return cmd_experiment(cfg, args.kind)
        return cmd_oracle(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"input error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except FluidError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
