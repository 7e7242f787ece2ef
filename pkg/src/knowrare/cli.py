"""Command-line entry point: ``knowrare <subcommand> [--config PATH] [--out DIR] [--seed N] [--jobs N]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Every nonzero exit after the output root is known leaves ``error.json``
(stage, error class, message) in that root.
"""
import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, KnowRareError, MissingFile
from .kgembed import SelectionResult, save_embeddings
from .model import load_model, save_model
from .pipeline import ABLATIONS, Experiment, load_source, synth_spec, train_config, write_run
from .preprocess import save_processed
from .synthgen import generate, write_synth
from .train import adapt, evaluate

SWEEP_AXES = {
    "source_fraction": "select.source_fraction",
    "edge_retention": "kg.edge_retention",
    "train_fraction": "dataset.target_train_fraction",
}

SEARCH_SPACE = {
    "base_lr": ("uniform", 1e-5, 1e-3),
    "disc_lr": ("uniform", 1e-5, 1e-3),
    "batch_size": ("choice", (16, 32, 64, 128)),
    "lam": ("choice", (0.005, 0.01, 0.02, 0.1)),
    "disc_update_freq": ("int", 1, 5),
}


class Stage:
    name = "startup"


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x):
    return "" if x is None else repr(float(x))


# -- ICD-9-CM chapters ------------------------------------------------------

_CHAPTERS = ((1, 139), (140, 239), (240, 279), (280, 289), (290, 319), (320, 389), (390, 459), (460, 519),
             (520, 579), (580, 629), (630, 679), (680, 709), (710, 739), (740, 759), (760, 779), (780, 799),
             (800, 999))


def chapter(code):
    """Chapter label of a level-3 ICD-9-CM code ("V" and "E" codes form their own chapters)."""
    code = str(code).strip().upper()
    if code[:1] in ("V", "E"):
        return code[0]
    n = int(code[:3])
    for lo, hi in _CHAPTERS:
        if lo <= n <= hi:
            return f"{lo:03d}-{hi:03d}"
    raise ValueError(f"not an ICD-9 code: {code}")


def explain(selection, stays):
    """Rows per source (stay count, positives, chapter flag) and the fraction of distinct-chapter sources."""
    tchap = chapter(selection.target)
    rows = []
    for code, cos in selection.sources:
        mine = [s for s in stays if s.condition == code]
        rows.append({
            "code": code,
            "cosine": cos,
            "n_stays": len(mine),
            "n_positive": sum(bool(s.outcome.positive) for s in mine),
            "chapter": chapter(code),
            "distinct_chapter": chapter(code) != tchap,
        })
    distinct = sum(r["distinct_chapter"] for r in rows)
    return rows, distinct / selection.k


# -- multi-run drivers ----------------------------------------------------------

def _seed_variants(args):
    """Worker: every variant for one seed, sharing that seed's cached stages."""
    config, seed, variants = args
    cache = {}
    out = []
    for label, overrides, select_block, flags in variants:
        cfg = config
        for dotted, value in overrides:
            cfg = cfgmod.override(cfg, dotted, value)
        key = cfgmod.canonical({k: cfg[k] for k in ("dataset", "preprocess", "kg", "embed")})
        exp = cache.get(key)
        if exp is None:
            base = next((e for e in cache.values() if e.config["dataset"] == cfg["dataset"]
                         and e.config["preprocess"] == cfg["preprocess"]), None)
            exp = cache[key] = Experiment(cfg, seed, data=base.data if base else None)
        result = exp.run({**cfg["select"], **(select_block or {})}, **{**cfg["train"], **flags})
        out.append((label, seed, result.metrics["auprc"], result.metrics["auroc"], result.record.signature()))
    return out


def run_grid(config, seeds, variants, jobs=1, on_seed=None):
    """Run ``variants`` for each seed (one worker per seed); results ordered by seed."""
    tasks = [(config, s, variants) for s in sorted(seeds)]
    results = []
    if jobs <= 1:
        for t in tasks:
            rows = _seed_variants(t)
            results += rows
            if on_seed:
                on_seed(rows)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rows in pool.map(_seed_variants, tasks):
                results += rows
                if on_seed:
                    on_seed(rows)
    return results


def _aggregate(rows, label):
    mine = [r for r in rows if r[0] == label]
    auprc = np.array([r[2] for r in mine])
    auroc = np.array([r[3] for r in mine])
    return float(auprc.mean()), float(auprc.std()), float(auroc.mean()), float(auroc.std())


def sweep(config, axis, grid, seeds, out_csv, jobs=1):
    """Sweep one axis; per-seed rows are flushed as each seed completes."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    if not grid:
        raise ConfigError("sweep grid is empty")
    if any(not 0 < g <= 1 for g in grid):
        raise ConfigError("sweep grid values must lie in (0, 1]")
    dotted = SWEEP_AXES[axis]
    # a fractional target share replaces any fixed target stay count
    extra = [("dataset.target_train_stays", None)] if axis == "train_fraction" else []
    variants = [(g, [(dotted, g)] + extra, None, {}) for g in grid]
    fh = open(out_csv, "w", newline="", encoding="utf-8")
    w = csv.writer(fh)
    w.writerow(["axis_value", "seed", "auprc", "auroc", "auprc_std", "auroc_std"])

    def flush(rows):
        for g, seed, auprc, auroc, _ in rows:
            w.writerow([repr(float(g)), seed, _fmt(auprc), _fmt(auroc), "", ""])
        fh.flush()

    try:
        rows = run_grid(config, seeds, variants, jobs, flush)
        summary = []
        for g in grid:
            pm, ps, rm, rs = _aggregate(rows, g)
            w.writerow([repr(float(g)), "mean", _fmt(pm), _fmt(rm), _fmt(ps), _fmt(rs)])
            summary.append((g, pm, ps, rm, rs))
        return summary
    finally:
        fh.close()


def ablate(config, seeds, out_dir, jobs=1):
    variants = [(name, [], None, flags) for name, flags in ABLATIONS.items()]
    rows = run_grid(config, seeds, variants, jobs)
    table = []
    for name in ABLATIONS:
        pm, ps, rm, rs = _aggregate(rows, name)
        table.append({"variant": name, "auroc_mean": rm, "auroc_std": rs, "auprc_mean": pm, "auprc_std": ps})
    with open(Path(out_dir) / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "auroc_mean", "auroc_std", "auprc_mean", "auprc_std"])
        for r in table:
            w.writerow([r["variant"], *(_fmt(r[k]) for k in ("auroc_mean", "auroc_std", "auprc_mean", "auprc_std"))])
    with open(Path(out_dir) / "ablation_runs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "auprc", "auroc"])
        for name, seed, auprc, auroc, _ in rows:
            w.writerow([name, seed, _fmt(auprc), _fmt(auroc)])
    lines = ["| Variant | AUROC | AUPRC |", "|---|---|---|"]
    lines += [f"| {r['variant']} | {r['auroc_mean']:.3f} ({r['auroc_std']:.3f}) | {r['auprc_mean']:.3f} ({r['auprc_std']:.3f}) |"
              for r in table]
    (Path(out_dir) / "ablation.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table, rows


def search(config, budget, seed, out_dir):
    """Random search over the adaptation hyperparameters, scored by target validation AUPRC."""
    rng = np.random.default_rng([seed, 601])
    exp = Experiment(config, seed)
    trials = []
    for i in range(budget):
        params = {}
        for name, (kind, *spec) in SEARCH_SPACE.items():
            if kind == "uniform":
                params[name] = float(rng.uniform(spec[0], spec[1]))
            elif kind == "int":
                params[name] = int(rng.integers(spec[0], spec[1] + 1))
            else:
                params[name] = spec[0][int(rng.integers(len(spec[0])))]
        result = exp.run(**params)
        best = result.record.best_epoch["adapt"]
        val = [r for r in result.record.phase("adapt") if r["epoch"] == best][0]
        trials.append({"trial": i, **params, "val_auprc": float(val["val_auprc"]), "test_auprc": result.metrics["auprc"]})
    with open(Path(out_dir) / "search.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(trials[0]))
        w.writeheader()
        w.writerows(trials)
    best = max(trials, key=lambda t: (t["val_auprc"], -t["trial"]))
    _write_json(Path(out_dir) / "search_best.json", best)
    return best


# -- argument parsing ----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--out", type=Path, help="output root (default: config 'out')")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweep/ablate")
    parser = argparse.ArgumentParser(prog="knowrare", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "preprocess", "build-kg", "embed-kg", "pretrain", "run"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("select", parents=[common])
    p.add_argument("--k", type=int)
    p = sub.add_parser("adapt", parents=[common])
    p.add_argument("--selection", type=Path, help="selection.json to adapt with (default: recompute)")
    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--checkpoint", type=Path, help="best.knwr to evaluate (default: <out>/checkpoints/best.knwr)")
    p = sub.add_parser("sweep", parents=[common])
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--grid", required=True, help="comma-separated values in (0, 1]")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p = sub.add_parser("ablate", parents=[common])
    p.add_argument("--seeds", default="0,1,2,3,4")
    p = sub.add_parser("explain", parents=[common])
    p.add_argument("--selection", type=Path, required=True)
    p = sub.add_parser("search", parents=[common])
    p.add_argument("--budget", type=int, default=30)
    return parser


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def _resolve(args):
    user = cfgmod.load(args.config) if args.config else {}
    if args.seed is not None:
        user = {**user, "seed": args.seed}
    return cfgmod.resolve(user)


def dispatch(args, config, out):
    cmd = args.command
    seed = config["seed"]
    Stage.name = cmd
    if cmd == "synth":
        if config["dataset"]["manifest"]:
            raise ConfigError("synth needs a dataset.synth block, not a manifest")
        spec = synth_spec(config, seed)
        stays, truth = generate(spec)
        path = write_synth(out, spec, stays, truth)
        print(f"wrote {len(stays)} stays to {path}")
        return
    if cmd in ("sweep", "ablate"):
        seeds = _int_list(args.seeds)
        if not seeds:
            raise ConfigError("no seeds given")
        if cmd == "sweep":
            summary = sweep(config, args.axis, _float_list(args.grid), seeds, out / "sweep.csv", args.jobs)
            for g, pm, ps, rm, rs in summary:
                print(f"{args.axis}={g:g}  AUPRC {pm:.3f} ({ps:.3f})  AUROC {rm:.3f} ({rs:.3f})")
        else:
            ablate(config, seeds, out, args.jobs)
            print((out / "ablation.md").read_text(encoding="utf-8"), end="")
        return
    if cmd == "explain":
        if not args.selection.exists():
            raise MissingFile(f"no selection file at {args.selection}")
        selection = SelectionResult.load(args.selection)
        stays, _, _ = load_source(config, seed)
        rows, frac = explain(selection, stays)
        with open(out / "explain.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print(f"{sum(r['distinct_chapter'] for r in rows)} of {selection.k} sources outside the target's chapter "
              f"(fraction distinct {frac:.3f})")
        return
    if cmd == "search":
        best = search(config, args.budget, seed, out)
        print(json.dumps(best, sort_keys=True))
        return

    exp = Experiment(config, seed)
    chash = cfgmod.config_hash(config)
    _write_json(out / "config.json", config)
    if cmd == "preprocess":
        (out / "processed").mkdir(exist_ok=True)
        for name, pset in exp.data.sets.items():
            save_processed(out / "processed" / name, pset, exp.data.prep, chash)
        print(f"target {exp.data.target}: " + ", ".join(f"{k} {len(v)}" for k, v in exp.data.sets.items()))
    elif cmd == "build-kg":
        exp.graph.to_tsv(out / "kg.tsv")
        print(f"{len(exp.graph.nodes)} nodes, {len(exp.graph.edges)} edges")
    elif cmd == "embed-kg":
        save_embeddings(out / "embeddings.csv", exp.embedding)
    elif cmd == "select":
        selection = exp.selection({"k": args.k} if args.k else None)
        selection.save(out / "selection.json")
        print(" ".join(selection.codes))
    elif cmd == "pretrain":
        model, record = exp.pretrained
        (out / "checkpoints").mkdir(exist_ok=True)
        save_model(out / "checkpoints" / "pretrain.knwr", model, {"config_hash": chash})
        record.to_csv(out / "record.csv")
    elif cmd == "adapt":
        selection = SelectionResult.load(args.selection) if args.selection else exp.selection()
        tc = train_config(config, seed)
        model, record = adapt(exp.pretrained[0], exp.data.target, selection, exp.data.sets["train"],
                              exp.data.sets["valid"], tc)
        (out / "checkpoints").mkdir(exist_ok=True)
        selection.save(out / "selection.json")
        save_model(out / "checkpoints" / "best.knwr", model,
                   {"config_hash": chash, "selection_sha256": cfgmod.sha256_file(out / "selection.json")})
        record.to_csv(out / "record.csv")
    elif cmd == "evaluate":
        ckpt = args.checkpoint or out / "checkpoints" / "best.knwr"
        if not Path(ckpt).exists():
            raise MissingFile(f"no checkpoint at {ckpt}")
        metrics = evaluate(load_model(ckpt), exp.data.sets["test"], exp.data.target)
        _write_json(out / "metrics.json", metrics)
        print(f"AUROC {metrics['auroc']:.4f}  AUPRC {metrics['auprc']:.4f}")
    elif cmd == "run":
        result = exp.run()
        write_run(out, config, exp, result)
        print(f"target {exp.data.target}  k={result.selection.k}  AUROC {result.metrics['auroc']:.4f}  "
              f"AUPRC {result.metrics['auprc']:.4f}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = None
    Stage.name = "config"
    try:
        config = _resolve(args)
        out = Path(args.out) if args.out else Path(config["out"])
        out.mkdir(parents=True, exist_ok=True)
        dispatch(args, config, out)
        return 0
    except ConfigError as exc:
        code = 2
        err = exc
    except (KnowRareError, ValueError, OSError) as exc:
        code = 1
        err = exc
    if out is None and args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    if out is not None:
        _write_json(out / "error.json", {"stage": Stage.name, "error": type(err).__name__, "message": str(err)})
    print(f"knowrare {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
