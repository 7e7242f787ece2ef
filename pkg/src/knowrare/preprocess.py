"""Window aggregation, three-stage imputation and train-split z-scoring."""
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .cohort import SPLIT_NAMES, Task
from .nncore.container import load_tensors, save_tensors

STD_FLOOR = 1e-6
# remaining length-of-stay bin edges in days: <1, 1-2, ..., 6-7, 7-10, 10-14, >14
LOS_EDGES_DAYS = (1, 2, 3, 4, 5, 6, 7, 10, 14)


@dataclass(frozen=True)
class WindowConfig:
    window_minutes: int = 120
    window_count: int = 24
    anchor: str = "last_hours"

    def __post_init__(self):
        if self.window_minutes <= 0 or self.window_count <= 0:
            raise ValueError("window_minutes and window_count must be positive")
        if self.anchor not in ("first_hours", "last_hours"):
            raise ValueError(f"unknown anchor {self.anchor!r}")


MIMIC_WINDOWS = WindowConfig(120, 24, "last_hours")
EICU_WINDOWS = WindowConfig(60, 24, "first_hours")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class ProcessedStay:
    x: np.ndarray
    context: np.ndarray
    condition: str
    outcome: object


@dataclass
class ProcessedSet:
    """A split stacked into arrays: ``X`` (N, T, F), ``C`` (N, ctx), ``y`` (N,) or (N, L)."""

    X: np.ndarray
    C: np.ndarray
    y: np.ndarray
    conditions: np.ndarray
    stay_ids: list
    patient_ids: list
    task: Task

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i):
        return ProcessedStay(self.X[i], self.C[i], str(self.conditions[i]), self.y[i])

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return ProcessedSet(
            self.X[index],
            self.C[index],
            self.y[index],
            self.conditions[index],
            [self.stay_ids[i] for i in index],
            [self.patient_ids[i] for i in index],
            self.task,
        )

    def where(self, conditions):
        wanted = set(conditions)
        return self.subset([i for i, c in enumerate(self.conditions) if c in wanted])

    def counts(self):
        codes, n = np.unique(self.conditions, return_counts=True)
        return {str(c): int(k) for c, k in zip(codes, n)}

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        return ProcessedSet(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.C for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.conditions for p in parts]),
            [s for p in parts for s in p.stay_ids],
            [s for p in parts for s in p.patient_ids],
            parts[0].task,
        )


def aggregate_windows(stay, window_minutes, window_count, anchor="last_hours"):
    """Mean of observed values per (window, variable); NaN where a window has none.

    Windows are half-open except that an observation exactly at the span end
    counts towards the last window. Returns ``(x, mask)`` with mask True at
    missing cells.
    """
    span = window_minutes * window_count
    start = stay.stay_hours * 60.0 - span if anchor == "last_hours" else 0.0
    n_raw, n_vars = stay.series.shape
    rows, cols = np.nonzero(~stay.mask)
    x = kernels.window_means(
        stay.timestamps[rows],
        cols.astype(np.int64),
        stay.series[rows, cols],
        float(start),
        float(window_minutes),
        int(window_count),
        int(n_vars),
    )
    return x, np.isnan(x)


def impute(x_masked, fill_means):
    """Forward fill, then backward fill, then the training-set variable mean."""
    return kernels.fill_missing(x_masked, fill_means)


def fit_fill_means(train_windows):
    """Per-variable mean over observed train-split window values (0 for never-observed)."""
    stacked = np.concatenate([w.reshape(-1, w.shape[-1]) for w in train_windows])
    seen = ~np.isnan(stacked)
    counts = seen.sum(axis=0)
    sums = np.where(seen, stacked, 0.0).sum(axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def fit_norm_stats(train_x):
    """Population mean/std per variable over every train cell; std floored at 1e-6."""
    flat = np.asarray(train_x, dtype=np.float64)
    if flat.size == 0:
        raise ValueError("training split is empty")
    flat = flat.reshape(-1, flat.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return NormStats(mean, np.maximum(std, STD_FLOOR))


def normalize(x, stats):
    return (x - stats.mean) / stats.std


def denormalize(x, stats):
    return x * stats.std + stats.mean


def bin_los(remaining_hours):
    """Index of the remaining-LoS interval (0..9)."""
    days = remaining_hours / 24.0
    return int(np.searchsorted(LOS_EDGES_DAYS, days, side="right"))


@dataclass
class Preprocessor:
    """Everything learnt from the training split; applied unchanged to valid/test."""

    windows: WindowConfig
    fill_means: np.ndarray
    norm: NormStats
    age_mean: float
    age_std: float

    def to_json(self):
        return {
            "windows": asdict(self.windows),
            "fill_means": self.fill_means.tolist(),
            "norm": self.norm.to_json(),
            "age_mean": self.age_mean,
            "age_std": self.age_std,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            WindowConfig(**d["windows"]),
            np.asarray(d["fill_means"], dtype=np.float64),
            NormStats.from_json(d["norm"]),
            d["age_mean"],
            d["age_std"],
        )

    @classmethod
    def fit(cls, train_stays, windows):
        raw = [aggregate_windows(s, windows.window_minutes, windows.window_count, windows.anchor)[0] for s in train_stays]
        fill = fit_fill_means(raw)
        imputed = np.stack([impute(w, fill) for w in raw])
        ages = np.array([s.context[0] for s in train_stays])
        ages = ages[~np.isnan(ages)]
        age_mean = float(ages.mean()) if ages.size else 0.0
        age_std = float(max(ages.std(), STD_FLOOR)) if ages.size else 1.0
        return cls(windows, fill, fit_norm_stats(imputed), age_mean, age_std)

    def context(self, stay):
        c = np.array(stay.context, dtype=np.float64)
        c[0] = 0.0 if np.isnan(c[0]) else (c[0] - self.age_mean) / self.age_std
        return c

    def transform(self, stays, task):
        w = self.windows
        X = np.empty((len(stays), w.window_count, len(self.fill_means)))
        for i, s in enumerate(stays):
            x, _ = aggregate_windows(s, w.window_minutes, w.window_count, w.anchor)
            X[i] = normalize(impute(x, self.fill_means), self.norm)
        C = np.stack([self.context(s) for s in stays]) if stays else np.empty((0, 0))
        y = np.array([s.outcome.value for s in stays], dtype=np.int64)
        return ProcessedSet(
            X,
            C,
            y,
            np.array([s.condition for s in stays], dtype="<U3"),
            [s.stay_id for s in stays],
            [s.patient_id for s in stays],
            task,
        )


def preprocess_splits(stays, split, windows, task):
    """Fit on the train split and transform all three; returns ``(sets, preprocessor)``."""
    train = split.select(stays, "train")
    prep = Preprocessor.fit(train, windows)
    sets = {name: prep.transform(split.select(stays, name), task) for name in SPLIT_NAMES}
    return sets, prep


def save_processed(path, pset, prep, config_hash=""):
    """``path`` without extension; writes ``path.knwr`` and ``path.json``."""
    codes = sorted(set(pset.conditions.tolist()))
    code_idx = {c: i for i, c in enumerate(codes)}
    save_tensors(
        f"{path}.knwr",
        {
            "x": pset.X,
            "context": pset.C,
            "labels": pset.y.astype(np.float64),
            "condition_index": np.array([code_idx[c] for c in pset.conditions], dtype=np.float64),
        },
    )
    sidecar = {
        "task": pset.task.name,
        "conditions": codes,
        "stay_ids": pset.stay_ids,
        "patient_ids": pset.patient_ids,
        "preprocessor": prep.to_json(),
        "config_hash": config_hash,
    }
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_processed(path):
    t = load_tensors(f"{path}.knwr")
    with open(f"{path}.json", encoding="utf-8") as fh:
        side = json.load(fh)
    codes = np.array(side["conditions"], dtype="<U3")
    pset = ProcessedSet(
        t["x"],
        t["context"],
        t["labels"].astype(np.int64),
        codes[t["condition_index"].astype(np.int64)] if len(codes) else np.array([], dtype="<U3"),
        side["stay_ids"],
        side["patient_ids"],
        Task.parse(side["task"]),
    )
    return pset, Preprocessor.from_json(side["preprocessor"]), side
