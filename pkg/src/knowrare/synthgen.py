"""Synthetic multi-condition ICU cohorts with planted condition-similarity structure.

Conditions are grouped into clusters. Members of a cluster share AR(1)
latent dynamics, a drug vocabulary, co-diagnosis partners and the logistic
outcome rule, so transferring from same-cluster conditions is informative
while transferring from other clusters is not.
"""
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cohort import GENDERS, RACES, CohortStay, OutcomeLabel, Task, encode_context, restrict_condition, write_cohort
from .errors import Infeasible

VARIABLES = (
    "heart_rate", "sbp", "dbp", "map", "resp_rate", "spo2", "temperature", "glucose",
    "albumin", "anion_gap", "bicarbonate", "bilirubin", "creatinine", "hematocrit",
)
# rough clinical centre/scale per variable, so raw data is not already z-scored
_BASE = np.array([85, 120, 65, 85, 18, 96, 37, 130, 3.2, 12, 24, 1.0, 1.2, 32], dtype=float)
_SCALE = np.array([15, 20, 12, 12, 5, 3, 0.7, 40, 0.6, 4, 4, 1.2, 0.9, 5], dtype=float)


@dataclass(frozen=True)
class SynthSpec:
    n_conditions: int = 20
    clusters: tuple = ()  # tuple of tuples of condition indices; empty = contiguous equal blocks
    n_clusters: int = 4
    patients_per_condition: tuple = (40, 80)
    counts: tuple = ()  # ((condition_index, n_patients), ...) overriding the range
    rare: tuple = ()  # ((condition_index, n_stays), ...) applied after generation
    n_vars: int = 8
    horizon: int = 24  # raw hourly rows per stay
    anchor: str = "first_hours"
    noise_sigma: float = 1.0
    obs_noise: float = 0.1
    missing_rate: float = 0.3
    cluster_shift: float = 1.0
    label_strength: float = 3.0
    label_bias: float = -0.5
    label_window: int = 0  # outcome reads the latent mean over the last this-many hours; 0 = whole horizon
    condition_jitter: float = 0.05
    drug_pool: int = 12
    drug_keep: float = 0.8
    codiag_same_cluster: float = 0.7
    task: str = "binary"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.label_window <= self.horizon:
            raise ValueError("label_window must lie in [0, horizon]")
        if self.n_conditions < 1 or self.n_vars < 1 or self.horizon < 1:
            raise ValueError("counts in a SynthSpec must be positive")
        if self.n_vars > len(VARIABLES):
            raise ValueError(f"at most {len(VARIABLES)} variables")
        lo, hi = self.patients_per_condition
        if not 1 <= lo <= hi:
            raise ValueError("patients_per_condition must be a positive range")
        members = sorted(i for c in self.cluster_members() for i in c)
        if members != list(range(self.n_conditions)):
            raise ValueError("clusters must partition the conditions")

    def cluster_members(self):
        if self.clusters:
            return tuple(tuple(c) for c in self.clusters)
        blocks = np.array_split(np.arange(self.n_conditions), self.n_clusters)
        return tuple(tuple(int(i) for i in b) for b in blocks if len(b))

    def cluster_of(self):
        return {i: g for g, members in enumerate(self.cluster_members()) for i in members}

    def codes(self):
        rng = np.random.default_rng([self.seed, 101])
        picks = rng.choice(np.arange(1, 1000), self.n_conditions, replace=False)
        return [f"{int(p):03d}" for p in picks]

    def condition_counts(self):
        rng = np.random.default_rng([self.seed, 102])
        lo, hi = self.patients_per_condition
        counts = [int(n) for n in rng.integers(lo, hi + 1, size=self.n_conditions)]
        for idx, n in self.counts:
            counts[idx] = int(n)
        return counts

    def index_of(self, condition):
        return condition if isinstance(condition, (int, np.integer)) else self.codes().index(condition)


@dataclass
class SynthTruth:
    codes: list
    cluster_of: dict  # code -> cluster id
    true_similarity: np.ndarray = field(repr=False)

    def to_json(self):
        return {
            "codes": self.codes,
            "cluster_of": self.cluster_of,
            "true_similarity": self.true_similarity.tolist(),
        }


def _stationary_mean_var(coef, sigma, steps):
    """Variance of the time-average of a stationary AR(1) over ``steps`` points."""
    lags = np.arange(1, steps)
    acf_sum = ((1 - lags / steps)[:, None] * coef[None, :] ** lags[:, None]).sum(axis=0)
    return sigma**2 / (1 - coef**2) * (1 + 2 * acf_sum) / steps


def ar1_batch(n, steps, n_vars, coef, sigma, rng):
    """``n`` stationary AR(1) sequences ``z[t+1] = coef * z[t] + sigma * eps``, shape (n, steps, n_vars)."""
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (n_vars,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n_vars,))
    if np.any(np.abs(coef) >= 1):
        raise ValueError("AR(1) coefficient must satisfy |coef| < 1")
    z = np.empty((n, steps, n_vars))
    z[:, 0] = rng.normal(size=(n, n_vars)) * sigma / np.sqrt(1 - coef**2)
    for t in range(1, steps):
        z[:, t] = coef * z[:, t - 1] + sigma * rng.normal(size=(n, n_vars))
    return z


def _cluster_params(spec):
    rng = np.random.default_rng([spec.seed, 103])
    F = spec.n_vars
    width = Task.parse(spec.task).width
    rows = 1 if spec.task == "binary" else width
    params = []
    for _ in spec.cluster_members():
        rule = rng.normal(size=(rows, F))
        rule /= np.linalg.norm(rule, axis=1, keepdims=True)
        params.append(
            {
                "coef": rng.uniform(0.3, 0.9, size=F),
                "sigma": spec.noise_sigma * rng.uniform(0.6, 1.6, size=F),
                "shift": spec.cluster_shift * rng.normal(size=F),
                "rule": rule,
                "drugs": rng.permutation(spec.drug_pool),
            }
        )
    return params


def _condition_params(spec, cluster, idx):
    rng = np.random.default_rng([spec.seed, 104, idx])
    j = spec.condition_jitter
    rule = cluster["rule"] + j * rng.normal(size=cluster["rule"].shape)
    rule /= np.linalg.norm(rule, axis=1, keepdims=True)
    n_keep = max(1, int(round(spec.drug_keep * spec.drug_pool)))
    return {
        "coef": np.clip(cluster["coef"] + j * rng.normal(size=cluster["coef"].shape), -0.95, 0.95),
        "sigma": cluster["sigma"] * np.exp(j * rng.normal(size=cluster["sigma"].shape)),
        "shift": cluster["shift"] + j * rng.normal(size=cluster["shift"].shape),
        "rule": rule,
        "drugs": np.sort(rng.choice(spec.drug_pool, n_keep, replace=False)),
    }


def _label(task, rule, score_vec, rng, strength, bias):
    task = Task.parse(task)
    if task.kind == "binary":
        logit = strength * float(rule[0] @ score_vec) + bias
        return OutcomeLabel(task, int(rng.random() < 1.0 / (1.0 + np.exp(-logit))))
    logits = strength * (rule @ score_vec)
    if task.kind == "multiclass":
        p = np.exp(logits - logits.max())
        return OutcomeLabel(task, int(rng.choice(task.n, p=p / p.sum())))
    bits = rng.random(task.n) < 1.0 / (1.0 + np.exp(-(logits + bias)))
    return OutcomeLabel(task, tuple(int(b) for b in bits))


def generate(spec):
    """Build the cohort and its ground truth; byte-identical for a given spec."""
    codes = spec.codes()
    members = spec.cluster_members()
    cluster_of = spec.cluster_of()
    counts = spec.condition_counts()
    cparams = _cluster_params(spec)
    F, T = spec.n_vars, spec.horizon
    stays = []
    for idx, code in enumerate(codes):
        g = cluster_of[idx]
        p = _condition_params(spec, cparams[g], idx)
        rng = np.random.default_rng([spec.seed, 105, idx])
        n = counts[idx]
        z = ar1_batch(n, T, F, p["coef"], p["sigma"], rng)
        w = spec.label_window or T
        zbar_sd = np.sqrt(_stationary_mean_var(p["coef"], p["sigma"], w))
        mates = [m for m in members[g] if m != idx]
        others = [m for m in range(spec.n_conditions) if m != idx]
        for k in range(n):
            latent = p["shift"] + z[k] / (p["sigma"] / np.sqrt(1 - p["coef"] ** 2))
            obs = latent + spec.obs_noise * rng.normal(size=(T, F))
            series = _BASE[:F] + _SCALE[:F] * obs
            mask = rng.random((T, F)) < spec.missing_rate
            series = np.where(mask, np.nan, series)
            hours = float(T + rng.uniform(0, 3 * T))
            if spec.anchor == "first_hours":
                minutes = 60.0 * np.arange(T) + 30.0
            else:
                minutes = hours * 60.0 - 60.0 * T + 60.0 * np.arange(T) + 30.0
            outcome = _label(spec.task, p["rule"], z[k, T - w :].mean(axis=0) / zbar_sd, rng, spec.label_strength, spec.label_bias)
            if mates and rng.random() < spec.codiag_same_cluster:
                partner = mates[rng.integers(len(mates))]
            elif others:
                partner = others[rng.integers(len(others))]
            else:
                partner = idx
            used = p["drugs"][rng.random(p["drugs"].size) < 0.5]
            drugs = frozenset(f"drug_c{g}_{int(d):02d}" for d in cparams[g]["drugs"][used])
            age = float(np.clip(rng.normal(65, 15), 18, 95))
            gender = GENDERS[rng.integers(len(GENDERS))]
            race = RACES[rng.integers(len(RACES))]
            stays.append(
                CohortStay(
                    stay_id=f"s{code}-{k:04d}",
                    patient_id=f"p{code}-{k:04d}",
                    series=series,
                    mask=mask,
                    timestamps=minutes,
                    context=encode_context(round(age, 1), gender, race),
                    condition=code,
                    outcome=outcome,
                    stay_hours=round(hours, 3),
                    drugs=drugs,
                    diagnoses=frozenset({code, codes[partner]}),
                    raw_icd=f"{code}.{int(rng.integers(100)):02d}",
                )
            )
    for idx, n in spec.rare:
        stays = restrict_condition(stays, codes[idx], n, seed=spec.seed)
    sim = np.zeros((spec.n_conditions, spec.n_conditions))
    for m in members:
        sim[np.ix_(m, m)] = 1.0
    truth = SynthTruth(codes, {codes[i]: g for i, g in cluster_of.items()}, sim)
    return stays, truth


def make_rare(spec, condition, n):
    """Spec whose ``condition`` keeps only ``n`` stays, at least one with a positive outcome."""
    idx = spec.index_of(condition)
    current = spec.condition_counts()[idx]
    if not 1 <= n <= current:
        raise ValueError(f"n must lie in [1, {current}], got {n}")
    rare = tuple((i, k) for i, k in spec.rare if i != idx)
    if n == current:
        return replace(spec, rare=rare)
    new = replace(spec, rare=rare + ((idx, n),))
    stays, _ = generate(replace(spec, rare=rare))
    code = spec.codes()[idx]
    if not any(s.outcome.positive for s in stays if s.condition == code):
        raise Infeasible(f"condition {code} has no positive outcome sample")
    return new


def write_synth(out_dir, spec, stays, truth):
    """Emit the cohort as a CSV manifest plus ``truth.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    manifest = write_cohort(stays, VARIABLES[: spec.n_vars], out_dir, spec.task)
    payload = truth.to_json()
    payload["spec"] = asdict(spec)
    (out_dir / "truth.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
