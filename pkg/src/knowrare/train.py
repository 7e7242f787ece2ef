"""Two-step training: condition-agnostic pretraining, then adversarial adaptation to a target."""
import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import MissingDomain, UndefinedMetric
from .metrics import task_metrics
from .model import (
    ADAPT_PREFIXES,
    PRETRAIN_PREFIXES,
    DomainBatch,
    discriminator_objective,
    encoder_objective,
    normalize_weights,
    output_probs,
    predict,
    prediction_loss,
    pretrain_loss_and_grad,
    propensity_weight,
    reset_discriminator,
)
from .nncore import AdamState, LrSchedule, adam_step

BATCH_SIZES = (16, 32, 64, 128)


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    base_lr: float = 1e-3
    disc_lr: float = 1e-3
    lam: float = 0.01
    disc_update_freq: int = 1
    pretrain_epochs: int = 100
    pretrain_patience: int = 10
    hidden: int = 128
    seed: int = 0
    no_selection: bool = False
    no_pretrain: bool = False
    no_adaptation: bool = False
    random_selection: bool = False

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.disc_update_freq < 1:
            raise ValueError("disc_update_freq must be at least 1")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    best_epoch: dict = field(default_factory=dict)  # phase -> epoch index
    test_metrics: dict = field(default_factory=dict)

    COLUMNS = ("phase", "epoch", "lr", "train_loss", "pred_loss", "dom_loss", "disc_loss",
               "val_loss", "val_auprc", "val_auroc", "wall_time")

    def add(self, **row):
        self.rows.append({c: row.get(c, float("nan")) for c in self.COLUMNS})

    def phase(self, name):
        return [r for r in self.rows if r["phase"] == name]

    def signature(self):
        """Everything except wall-clock time, for reproducibility comparisons."""
        def canon(v):
            # NaN never equals itself; map it to None so signatures compare
            return None if isinstance(v, float) and math.isnan(v) else v
        return [tuple(canon(r[c]) for c in self.COLUMNS if c != "wall_time") for r in self.rows], dict(self.best_epoch)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in self.COLUMNS])

    def extend(self, other):
        self.rows += other.rows
        self.best_epoch.update(other.best_epoch)
        return self


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _chunks(n, size=512):
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def pretrain(model, train_set, valid_set, config):
    """Next-step pretraining over every training stay; returns the best-validation-loss parameters."""
    record = RunRecord()
    if config.no_pretrain:
        return model, record
    rng = np.random.default_rng([config.seed, 401])
    schedule = LrSchedule(config.base_lr)
    state = AdamState()
    keys = list(model.group(*PRETRAIN_PREFIXES))
    best = {k: model.params[k].copy() for k in keys}
    best_loss, best_epoch = math.inf, -1
    start = time.perf_counter()
    for epoch in range(config.pretrain_epochs):
        lr = schedule(epoch)
        total = 0.0
        for idx in _batches(len(train_set), config.batch_size, rng):
            loss, grads = pretrain_loss_and_grad(model, train_set.X[idx], train_set.C[idx])
            adam_step(state, model.params, grads, lr)
            total += loss * len(idx)
        val = _mean_over_chunks(lambda i: pretrain_loss_and_grad(model, valid_set.X[i], valid_set.C[i], False)[0], len(valid_set))
        record.add(phase="pretrain", epoch=epoch, lr=lr, train_loss=total / len(train_set), val_loss=val,
                   wall_time=time.perf_counter() - start)
        if val < best_loss:
            best_loss, best_epoch = val, epoch
            best = {k: model.params[k].copy() for k in keys}
        elif epoch - best_epoch >= config.pretrain_patience:
            break
    model.load_state(best)
    record.best_epoch["pretrain"] = best_epoch
    return model, record


def _mean_over_chunks(fn, n):
    if n == 0:
        return float("nan")
    total = 0.0
    for idx in _chunks(n):
        total += fn(idx) * len(idx)
    return total / n


def predict_probs(model, pset):
    if len(pset) == 0:
        return np.empty((0, model.task.width))
    logits = np.concatenate([predict(model, pset.X[i], pset.C[i]) for i in _chunks(len(pset))])
    return output_probs(model.task, logits)


def adaptation_pool(target, selection, all_conditions, config):
    """Ordered domain list; the target is always last."""
    if config.no_adaptation:
        return [target]
    if config.no_selection:
        return sorted(c for c in all_conditions if c != target) + [target]
    return [c for c in selection.codes if c != target] + [target]


def adapt(model, target, selection, train_set, valid_set, config):
    """Adversarial fine-tuning on the selected sources plus the target.

    Each mini-batch first runs ``disc_update_freq`` discriminator steps on
    the batch's detached representations, then one encoder/classifier step
    on ``L_pred - lam * L_dom`` with propensity-weighted prediction loss.
    Early stopping follows the target's validation AUPRC.
    """
    if selection is not None and selection.target != target:
        raise ValueError(f"selection was made for {selection.target}, not {target}")
    all_conditions = sorted(set(train_set.conditions.tolist()))
    pool = adaptation_pool(target, selection, all_conditions, config)
    counts = train_set.counts()
    missing = [c for c in pool if counts.get(c, 0) == 0]
    if missing:
        raise MissingDomain(f"no training samples for {missing}")
    lam = 0.0 if config.no_adaptation else config.lam
    model = model.copy()
    reset_discriminator(model, len(pool), config.seed)

    data = train_set.where(pool)
    domain_of = {c: i for i, c in enumerate(pool)}
    domain_ids = np.array([domain_of[c] for c in data.conditions], dtype=np.int64)
    pool_counts = {c: counts[c] for c in pool}
    raw_weights = np.array([propensity_weight(c, pool_counts) for c in data.conditions])
    target_valid = valid_set.where([target])

    rng = np.random.default_rng([config.seed, 402])
    schedule = LrSchedule(config.base_lr)
    enc_state, disc_state = AdamState(), AdamState()
    theta_keys = list(model.group(*ADAPT_PREFIXES))
    phi_keys = list(model.group("disc"))
    snapshot = lambda: {k: model.params[k].copy() for k in theta_keys + phi_keys}  # noqa: E731
    best, best_score, best_epoch = snapshot(), -math.inf, -1
    record = RunRecord()
    start = time.perf_counter()
    for epoch in range(config.max_epochs):
        lr = schedule(epoch)
        disc_lr = config.disc_lr * lr / config.base_lr
        sums = {"train_loss": 0.0, "pred_loss": 0.0, "dom_loss": 0.0, "disc_loss": 0.0}
        for idx in _batches(len(data), config.batch_size, rng):
            batch = DomainBatch(data.X[idx], data.C[idx], data.y[idx], domain_ids[idx],
                                normalize_weights(raw_weights[idx]))
            disc_losses = []

            def disc_hook(h_T, logits):
                for _ in range(config.disc_update_freq):
                    loss, grads = discriminator_objective(model, h_T, logits, batch.domain_id)
                    adam_step(disc_state, model.params, grads, disc_lr)
                    disc_losses.append(loss)

            value, grads, info = encoder_objective(model, batch, lam, disc_hook if lam > 0 else None)
            adam_step(enc_state, model.params, grads, lr)
            sums["train_loss"] += value * len(idx)
            sums["pred_loss"] += info["pred_loss"] * len(idx)
            sums["dom_loss"] += info["dom_loss"] * len(idx)
            sums["disc_loss"] += (disc_losses[-1] if disc_losses else float("nan")) * len(idx)
        val = _validate(model, target_valid)
        record.add(phase="adapt", epoch=epoch, lr=lr, wall_time=time.perf_counter() - start,
                   **{k: v / len(data) for k, v in sums.items()}, **val)
        score = val["val_auprc"] if not math.isnan(val["val_auprc"]) else -val["val_loss"]
        if score > best_score:
            best, best_score, best_epoch = snapshot(), score, epoch
        elif epoch - best_epoch >= config.patience:
            break
    model.load_state(best)
    record.best_epoch["adapt"] = best_epoch
    return model, record


def _validate(model, vset):
    out = {"val_loss": float("nan"), "val_auprc": float("nan"), "val_auroc": float("nan")}
    if len(vset) == 0:
        return out
    logits = np.concatenate([predict(model, vset.X[i], vset.C[i]) for i in _chunks(len(vset))])
    out["val_loss"] = prediction_loss(model.task, logits, vset.y)[0]
    probs = output_probs(model.task, logits)
    try:
        m = task_metrics(model.task, probs, vset.y)
        out["val_auprc"], out["val_auroc"] = m["auprc"], m["auroc"]
    except UndefinedMetric:
        pass
    return out


def evaluate(model, test_set, target=None):
    """AUROC/AUPRC on the target condition's test stays (all stays when ``target`` is None)."""
    tset = test_set if target is None else test_set.where([target])
    if len(tset) == 0:
        raise UndefinedMetric(f"no test stays for {target}")
    return task_metrics(model.task, predict_probs(model, tset), tset.y)


def run_seeds(pipeline, seeds):
    """Per-metric mean and population std of ``pipeline(seed)`` over sorted ``seeds``."""
    seeds = sorted(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    results = [pipeline(s) for s in seeds]
    out = {}
    for key in results[0]:
        vals = [r[key] for r in results]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            out[key] = (float(np.mean(vals)), float(np.std(vals)))
    return out


def config_dict(config):
    return asdict(config)
