"""End-to-end experiment runs: data preparation, graph, embedding, selection, training, evaluation.

An :class:`Experiment` caches the seed-level artefacts (prepared data, graph,
embedding, pretrained encoder) so that ablations and sweep points sharing a
seed reuse them instead of recomputing.
"""
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .cohort import Cohort, CohortSplit, Task, filter_cohort, load_cohort, restrict_condition, split_cohort
from .condkg import build_graph
from .errors import ConfigError, UnknownCondition
from .kgembed import SelectionResult, default_k, rank_sources, select_sources, train_tucker
from .model import init_model, save_model
from .preprocess import WindowConfig, preprocess_splits
from .synthgen import VARIABLES, SynthSpec, generate
from .train import TrainConfig, adapt, evaluate, pretrain


@dataclass
class Prepared:
    cohort: Cohort
    split: CohortSplit
    sets: dict
    prep: object
    target: str
    task: Task
    truth: object = None

    @property
    def train_stays(self):
        return self.split.select(self.cohort, "train")


@dataclass
class RunResult:
    selection: SelectionResult
    pretrained: object
    model: object
    record: object
    metrics: dict


def synth_spec(config, seed):
    block = dict(config["dataset"]["synth"] or {})
    if block.get("seed") is None:
        block["seed"] = seed
    for key in ("clusters", "counts", "rare"):
        if key in block:
            block[key] = tuple(tuple(v) for v in block[key])
    if "patients_per_condition" in block:
        block["patients_per_condition"] = tuple(block["patients_per_condition"])
    block.setdefault("task", config["eval"]["task"])
    try:
        return SynthSpec(**block)
    except ValueError as exc:
        raise ConfigError(f"config error at dataset/synth: {exc}") from None


def load_source(config, seed):
    """Raw cohort, synthetic ground truth (or None) and the default target code."""
    ds = config["dataset"]
    if ds["manifest"]:
        cohort = load_cohort(ds["manifest"])
        return cohort, None, None
    spec = synth_spec(config, seed)
    stays, truth = generate(spec)
    return Cohort(stays, VARIABLES[: spec.n_vars], Task.parse(spec.task)), truth, truth.codes[0]


def rarest(split, cohort):
    counts = {}
    for s in split.select(cohort, "train"):
        counts[s.condition] = counts.get(s.condition, 0) + 1
    return min(counts, key=lambda c: (counts[c], c))


def prepare(config, seed):
    """Filter, split, shrink the target's training stays, then preprocess."""
    ds = config["dataset"]
    raw, truth, default_target = load_source(config, seed)
    cohort = filter_cohort(raw, ds["min_hours"], ds["min_patients"])
    split = split_cohort(cohort, ds["fractions"], seed)
    present = {s.condition for s in split.select(cohort, "train")}
    target = ds["target"] or (default_target if default_target in present else rarest(split, cohort))
    if target not in present:
        raise UnknownCondition(f"target {target} has no training stays after filtering")

    train = split.select(cohort, "train")
    n_target = sum(s.condition == target for s in train)
    keep = ds["target_train_stays"]
    if keep is None and ds["target_train_fraction"] < 1.0:
        keep = max(1, round(ds["target_train_fraction"] * n_target))
    if keep is not None and keep < n_target:
        kept = {s.stay_id for s in restrict_condition(train, target, keep, seed)}
        dropped = {s.stay_id for s in train if s.stay_id not in kept}
        cohort = Cohort([s for s in cohort if s.stay_id not in dropped], cohort.variables, cohort.task)
        split = CohortSplit([i for i in split.train if i not in dropped], split.valid, split.test, split.fractions)

    task = Task.parse(config["eval"]["task"]) if cohort.task is None else cohort.task
    p = config["preprocess"]
    windows = WindowConfig(p["window_minutes"], p["window_count"], p["anchor"])
    sets, prep = preprocess_splits(cohort, split, windows, task)
    return Prepared(cohort, split, sets, prep, target, task, truth)


def train_config(config, seed, **flags):
    return TrainConfig.from_dict({**config["train"], "seed": seed, **flags})


def resolve_k(select_block, n_conditions):
    """Number of sources from ``k``, ``source_fraction`` (of the non-target pool) or ``fraction``."""
    n_sources = n_conditions - 1
    if select_block.get("k") is not None:
        return min(int(select_block["k"]), n_sources)
    if select_block.get("source_fraction") is not None:
        k = math.ceil(select_block["source_fraction"] * n_sources - 1e-9)
        return int(min(max(k, 1), n_sources))
    return default_k(n_conditions, select_block["fraction"])


class Experiment:
    """One (config, seed) pair with lazily built, cached shared stages."""

    def __init__(self, config, seed=None, data=None):
        self.config = config
        self.seed = config["seed"] if seed is None else seed
        if data is not None:
            self.__dict__["data"] = data

    @cached_property
    def data(self):
        return prepare(self.config, self.seed)

    @cached_property
    def graph(self):
        kg = self.config["kg"]
        return build_graph(self.data.sets["train"], self.data.train_stays, kg["edge_retention"], kg["prune_fraction"])

    @cached_property
    def embedding(self):
        e = self.config["embed"]
        return train_tucker(self.graph, e["d"], e["epochs"], e["lr"], e["negatives"], self.seed, e["batch_size"])

    @cached_property
    def pretrained(self):
        tc = train_config(self.config, self.seed)
        sets = self.data.sets
        model = init_model(sets["train"].X.shape[2], sets["train"].C.shape[1], self.data.task, 1, tc.hidden, self.seed)
        return pretrain(model, sets["train"], sets["valid"], tc)

    def selection(self, select_block=None, random_selection=False):
        block = {**self.config["select"], **(select_block or {})}
        nodes = self.embedding.nodes
        k = resolve_k(block, len(nodes))
        target = self.data.target
        if random_selection:
            ranked = rank_sources(self.embedding, target)
            rng = np.random.default_rng([self.seed, 501])
            pick = sorted(rng.choice(len(ranked), k, replace=False))
            return SelectionResult(target, [ranked[i] for i in pick])
        return select_sources(self.embedding, target, k)

    def run(self, select_block=None, **flags):
        """Adapt and evaluate one variant; ``flags`` override the train block."""
        tc = train_config(self.config, self.seed, **flags)
        selection = self.selection(select_block, tc.random_selection)
        sets = self.data.sets
        if tc.no_pretrain:
            base = init_model(sets["train"].X.shape[2], sets["train"].C.shape[1], self.data.task, 1, tc.hidden, self.seed)
            pre_record = pretrain(base, sets["train"], sets["valid"], tc)[1]
        else:
            base, pre_record = self.pretrained
        model, record = adapt(base, self.data.target, selection, sets["train"], sets["valid"], tc)
        metrics = evaluate(model, sets["test"], self.data.target)
        record = replace(pre_record, rows=list(pre_record.rows), best_epoch=dict(pre_record.best_epoch)).extend(record)
        record.test_metrics = metrics
        return RunResult(selection, base, model, record, metrics)


BASELINES = {
    "single": {"no_pretrain": True, "no_adaptation": True},
    "pooled": {"no_pretrain": True, "no_selection": True, "lam": 0.0},
}

ABLATIONS = {
    "w/o Domain Selection": {"no_selection": True},
    "w/o Pre-training": {"no_pretrain": True},
    "w/o Domain Adaptation": {"no_adaptation": True},
    "KnowRare": {},
}


def write_run(out_dir, config, exp, result):
    """Persist a run: resolved config, selection, checkpoints, per-epoch record, final metrics."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sel_path = out / "selection.json"
    result.selection.save(sel_path)
    sel_hash = cfgmod.sha256_file(sel_path)
    chash = cfgmod.config_hash(config)
    save_model(out / "checkpoints" / "pretrain.knwr", result.pretrained, {"config_hash": chash})
    save_model(out / "checkpoints" / "best.knwr", result.model, {"config_hash": chash, "selection_sha256": sel_hash})
    result.record.to_csv(out / "record.csv")
    payload = dict(result.metrics)
    payload.update(target=exp.data.target, seed=exp.seed, k=result.selection.k, config_hash=chash,
                   best_epoch=dict(sorted(result.record.best_epoch.items())))
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


# Synthetic rare-target benchmark: two planted clusters with unrelated outcome
# rules and indistinguishable marginals, a large target condition (for a
# stable test set) cut down to 12 training stays.
BENCHMARK = {
    "dataset": {
        "synth": {"n_clusters": 2, "counts": [[0, 800]], "cluster_shift": 0.0, "label_window": 3},
        "target_train_stays": 12,
    },
    "train": {"hidden": 32, "pretrain_epochs": 30, "batch_size": 16, "base_lr": 0.003, "disc_lr": 0.003},
}
