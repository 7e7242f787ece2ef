"""The encoder/decoder/classifier/discriminator network and its objectives.

Parameter names follow the checkpoint layout: ``f_temp.*`` (LSTM),
``f_cont.*`` (context MLP), ``f_proj.*`` (fusion affine), ``f_dec.*``
(next-step decoder), ``clf.*`` (outcome classifier), ``disc.*`` (joint
domain discriminator).
"""
import json
from dataclasses import dataclass

import numpy as np

from .cohort import Task
from .errors import DegenerateSequence, ShapeMismatch, UnknownCondition
from .nncore import (
    bce_multilabel,
    cross_entropy,
    init_affine,
    init_lstm,
    init_mlp,
    load_tensors,
    logistic,
    lstm_backward,
    lstm_forward,
    mlp_backward,
    mlp_forward,
    mse,
    prefixed,
    save_tensors,
    softmax,
    softmax_backward,
    subparams,
)

ENCODER_PREFIXES = ("f_temp", "f_cont", "f_proj")
ADAPT_PREFIXES = ENCODER_PREFIXES + ("clf",)
PRETRAIN_PREFIXES = ENCODER_PREFIXES + ("f_dec",)


@dataclass
class KnowRareModel:
    params: dict
    n_vars: int
    n_context: int
    task: Task
    n_domains: int
    hidden: int

    def copy(self):
        return KnowRareModel(
            {k: v.copy() for k, v in self.params.items()},
            self.n_vars, self.n_context, self.task, self.n_domains, self.hidden,
        )

    def group(self, *prefixes):
        return {k: v for k, v in self.params.items() if k.split(".", 1)[0] in prefixes}

    def load_state(self, params):
        for k, v in params.items():
            self.params[k][...] = v

    def meta(self):
        return {
            "task": self.task.name,
            "F": self.n_vars,
            "C": self.n_context,
            "n_domains": self.n_domains,
            "n_sources": self.n_domains - 1,
            "hidden": self.hidden,
        }


def init_model(n_vars, n_context, task, n_domains=1, hidden=128, seed=0):
    task = Task.parse(task)
    rng = np.random.default_rng([seed, 301])
    H, out = hidden, task.width
    params = {}
    params.update(prefixed(init_lstm(rng, n_vars, H), "f_temp"))
    params.update(prefixed(init_mlp(rng, n_context, H, H), "f_cont"))
    params.update(prefixed(init_affine(rng, 2 * H, H), "f_proj"))
    params.update(prefixed(init_mlp(rng, H, H, n_vars), "f_dec"))
    params.update(prefixed(init_mlp(rng, H, H, out), "clf"))
    model = KnowRareModel(params, n_vars, n_context, task, n_domains, hidden)
    reset_discriminator(model, n_domains, seed)
    return model


def reset_discriminator(model, n_domains, seed=0):
    """Fresh discriminator with one output per domain; nothing else changes."""
    rng = np.random.default_rng([seed, 302])
    for k in [k for k in model.params if k.startswith("disc.")]:
        del model.params[k]
    model.params.update(prefixed(init_mlp(rng, model.hidden + model.task.width, model.hidden, n_domains), "disc"))
    model.n_domains = n_domains
    return model


# -- encoder ----------------------------------------------------------------

def encode_forward(model, x, context, last_only=False):
    """Fused representation per step (B, T, H), or only the final step (B, H)."""
    p = model.params
    x = np.asarray(x, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != model.n_vars:
        raise ShapeMismatch(f"expected x of shape (B, T, {model.n_vars}), got {x.shape}")
    if context.shape != (x.shape[0], model.n_context):
        raise ShapeMismatch(f"expected context of shape ({x.shape[0]}, {model.n_context}), got {context.shape}")
    H = model.hidden
    hs, lstm_cache = lstm_forward(subparams(p, "f_temp"), x)
    ctx_emb, cont_cache = mlp_forward(subparams(p, "f_cont"), context)
    W = p["f_proj.W"]
    # context embedding is time-invariant: project once, broadcast over steps
    ctx_part = ctx_emb @ W[H:] + p["f_proj.b"]
    if last_only:
        h = hs[:, -1] @ W[:H] + ctx_part
    else:
        h = hs @ W[:H] + ctx_part[:, None, :]
    return h, (lstm_cache, cont_cache, hs, ctx_emb, last_only)


def encode_backward(model, cache, dh):
    p = model.params
    lstm_cache, cont_cache, hs, ctx_emb, last_only = cache
    H = model.hidden
    W = p["f_proj.W"]
    if last_only:
        dctx_part = dh
        dhs = np.zeros_like(hs)
        dhs[:, -1] = dh @ W[:H].T
        dW_top = hs[:, -1].T @ dh
    else:
        dctx_part = dh.sum(axis=1)
        dhs = dh @ W[:H].T
        dW_top = hs.reshape(-1, H).T @ dh.reshape(-1, H)
    grads = {
        "f_proj.W": np.concatenate([dW_top, ctx_emb.T @ dctx_part]),
        "f_proj.b": dctx_part.sum(axis=0),
    }
    _, g_cont = mlp_backward(subparams(p, "f_cont"), cont_cache, dctx_part @ W[H:].T)
    _, g_temp = lstm_backward(subparams(p, "f_temp"), lstm_cache, dhs)
    grads.update(prefixed(g_cont, "f_cont"))
    grads.update(prefixed(g_temp, "f_temp"))
    return grads


def encode(model, x, context):
    return encode_forward(model, x, context)[0]


# -- pretraining ----------------------------------------------------------

def pretrain_loss_and_grad(model, x, context, need_grad=True):
    """Next-step reconstruction error averaged over batch, steps and variables."""
    if x.shape[1] < 2:
        raise DegenerateSequence("next-step pretraining needs at least two time steps")
    h, enc_cache = encode_forward(model, x, context)
    dec = subparams(model.params, "f_dec")
    pred, dec_cache = mlp_forward(dec, h[:, :-1])
    loss, dpred = mse(pred, x[:, 1:])
    if not need_grad:
        return loss, None
    dh_in, g_dec = mlp_backward(dec, dec_cache, dpred)
    dh = np.zeros_like(h)
    dh[:, :-1] = dh_in
    grads = encode_backward(model, enc_cache, dh)
    grads.update(prefixed(g_dec, "f_dec"))
    return loss, grads


def pretrain_loss(model, x, context):
    return pretrain_loss_and_grad(model, x, context, need_grad=False)[0]


# -- prediction -------------------------------------------------------------

def predict(model, x, context):
    h_T, _ = encode_forward(model, x, context, last_only=True)
    return mlp_forward(subparams(model.params, "clf"), h_T)[0]


def output_probs(task, logits):
    return logistic(logits) if task.kind == "multilabel" else softmax(logits)


def _probs_backward(task, probs, dprobs):
    if task.kind == "multilabel":
        return dprobs * probs * (1.0 - probs)
    return softmax_backward(probs, dprobs)


def prediction_loss(task, logits, y, weight=1.0):
    if task.kind == "multilabel":
        return bce_multilabel(logits, y, weight)
    return cross_entropy(logits, y, weight)


# -- propensity weighting ---------------------------------------------------

def propensity_weight(condition, train_counts):
    """Raw inverse prevalence ``1 / p(v)`` of a condition within the adaptation pool."""
    if condition not in train_counts or train_counts[condition] <= 0:
        raise UnknownCondition(condition)
    total = sum(train_counts.values())
    return total / train_counts[condition]


def normalize_weights(weights):
    w = np.asarray(weights, dtype=np.float64)
    return w / w.mean()


@dataclass
class DomainBatch:
    x: np.ndarray
    context: np.ndarray
    y: np.ndarray
    domain_id: np.ndarray
    sample_weight: np.ndarray


# -- adversarial objectives -------------------------------------------------

def total_loss(pred_loss, dom_loss, lam):
    """Encoder-side objective: prediction loss minus the weighted domain loss."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return pred_loss - lam * dom_loss


def _disc_input(model, h_T, logits):
    probs = output_probs(model.task, logits)
    return np.concatenate([h_T, probs], axis=1), probs


def domain_loss_and_grad(model, h_T, logits, domain_ids):
    """Domain cross-entropy of the discriminator on ``[h_T, probs(logits)]``.

    Returns ``(loss, disc grads, d loss / d h_T, d loss / d logits)``.
    """
    disc = subparams(model.params, "disc")
    if disc["W2"].shape[1] != model.n_domains:
        raise ShapeMismatch("discriminator width differs from the number of domains")
    inp, probs = _disc_input(model, h_T, logits)
    out, cache = mlp_forward(disc, inp)
    loss, dout = cross_entropy(out, domain_ids)
    dinp, g = mlp_backward(disc, cache, dout)
    H = model.hidden
    dlogits = _probs_backward(model.task, probs, dinp[:, H:])
    return loss, prefixed(g, "disc"), dinp[:, :H], dlogits


def domain_loss(model, h_T, logits, domain_ids):
    return domain_loss_and_grad(model, h_T, logits, domain_ids)[0]


def encoder_objective(model, batch, lam, disc_hook=None):
    """``L_pred - lam * L_dom`` with gradients for encoder and classifier (discriminator fixed).

    ``disc_hook(h_T, logits)``, if given, runs after the forward pass and
    before the adversarial term is evaluated, so discriminator updates can
    reuse this batch's representations. Returns ``(value, grads, info)``.
    """
    h_T, enc_cache = encode_forward(model, batch.x, batch.context, last_only=True)
    clf = subparams(model.params, "clf")
    logits, clf_cache = mlp_forward(clf, h_T)
    if disc_hook is not None:
        disc_hook(h_T, logits)
    l_pred, dlogits = prediction_loss(model.task, logits, batch.y, batch.sample_weight)
    l_dom = float("nan")
    dh_extra = 0.0
    if lam > 0:
        l_dom, _, dh_dom, dlogits_dom = domain_loss_and_grad(model, h_T, logits, batch.domain_id)
        dlogits = dlogits - lam * dlogits_dom
        dh_extra = -lam * dh_dom
    dh, g_clf = mlp_backward(clf, clf_cache, dlogits)
    grads = encode_backward(model, enc_cache, dh + dh_extra)
    grads.update(prefixed(g_clf, "clf"))
    value = l_pred if lam == 0 else total_loss(l_pred, l_dom, lam)
    return value, grads, {"h_T": h_T, "logits": logits, "pred_loss": l_pred, "dom_loss": l_dom}


def discriminator_objective(model, h_T, logits, domain_ids):
    loss, grads, _, _ = domain_loss_and_grad(model, h_T, logits, domain_ids)
    return loss, grads


# -- checkpoints ------------------------------------------------------------

def save_model(path, model, extra=None):
    """``path`` is the ``.knwr`` file; a ``.json`` sidecar with shapes and task sits beside it."""
    save_tensors(path, dict(sorted(model.params.items())))
    meta = model.meta()
    meta.update(extra or {})
    with open(str(path).removesuffix(".knwr") + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_model(path):
    params = load_tensors(path)
    with open(str(path).removesuffix(".knwr") + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    return KnowRareModel(params, meta["F"], meta["C"], Task.parse(meta["task"]), meta["n_domains"], meta["hidden"])
