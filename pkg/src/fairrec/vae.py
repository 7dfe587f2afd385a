"""Multinomial VAE for collaborative filtering, user- or item-oriented.

Architecture: input -> tanh hidden -> (mu, logvar) -> z -> tanh hidden -> logits,
with a multinomial likelihood over the input coordinates. Inputs are
L2-normalised per row and passed through inverted dropout at train time.

The minimised objective for a batch of ``B`` rows is::

    -(1/B) * sum_r [recon_r - beta * kl_r] + gamma * F

where ``F`` is the mean absolute gap between each group's mean
reconstruction log-likelihood and the batch mean.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from fairrec.dataset import Interactions
from fairrec.grouping import Grouping
from fairrec.numerics import (
    AdamState,
    NumericalError,
    Params,
    adam_step,
    dropout_mask,
    load_checkpoint,
    log_softmax,
    rng_stream,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

USER_BASED = "user_based"
ITEM_BASED = "item_based"
_SCORE_CHUNK = 512


@dataclass
class VaeConfig:
    hidden: int = 300
    latent: int = 17
    epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-3
    beta: float = 1e-4
    gamma: float = 3e-3
    dropout: float = 0.2
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss: float
    fairness: float
    kl: float


@dataclass
class VaeModel:
    orientation: str
    input_dim: int
    hidden: int
    latent: int
    params: Params
    beta: float = 1e-4
    gamma: float = 3e-3
    dropout: float = 0.2
    # item indices covered by an item-based model (rows it was trained on)
    items: np.ndarray | None = None
    steps: int = 0
    trace: list[EpochStats] = field(default_factory=list)

    def __post_init__(self):
        if self.orientation not in (USER_BASED, ITEM_BASED):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        expected = param_shapes(self.input_dim, self.hidden, self.latent)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")


@dataclass
class GroupedVaeEnsemble:
    """One item-based VAE per artist-popularity group plus one for the least popular tracks."""

    artist_models: list[VaeModel]
    least_track_model: VaeModel


class VaeTrainingError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


def param_shapes(input_dim: int, hidden: int, latent: int) -> dict[str, tuple[int, ...]]:
    return {
        "enc_w": (input_dim, hidden), "enc_b": (hidden,),
        "mu_w": (hidden, latent), "mu_b": (latent,),
        "lv_w": (hidden, latent), "lv_b": (latent,),
        "dec_w": (latent, hidden), "dec_b": (hidden,),
        "out_w": (hidden, input_dim), "out_b": (input_dim,),
    }


def init_params(input_dim: int, hidden: int, latent: int, rng: np.random.Generator) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    params = {}
    for name, shape in param_shapes(input_dim, hidden, latent).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def new_model(orientation: str, input_dim: int, config: VaeConfig, rng: np.random.Generator, items=None) -> VaeModel:
    return VaeModel(
        orientation, input_dim, config.hidden, config.latent,
        init_params(input_dim, config.hidden, config.latent, rng),
        beta=config.beta, gamma=config.gamma, dropout=config.dropout,
        items=None if items is None else np.asarray(items, dtype=np.int64),
    )


# -- forward pieces ------------------------------------------------------------

def _as_batch(x) -> np.ndarray:
    if sp.issparse(x):
        x = x.toarray()
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / np.where(norm > 0, norm, 1.0)


def encode(model: VaeModel, x, rng: np.random.Generator | None = None, training: bool = False, mask=None):
    """Return ``(mu, logvar)`` for one row or a batch of rows."""
    p = model.params
    x = _as_batch(x)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input has {x.shape[1]} columns, model expects {model.input_dim}")
    if mask is None:
        mask = dropout_mask(x.shape, model.dropout, rng, training=training)
    h = np.tanh(_normalize_rows(x) * mask @ p["enc_w"] + p["enc_b"])
    return h @ p["mu_w"] + p["mu_b"], h @ p["lv_w"] + p["lv_b"]


def reparameterize(mu, logvar, noise) -> np.ndarray:
    return mu + np.exp(0.5 * logvar) * noise


def decode(model: VaeModel, z) -> np.ndarray:
    """Logits over the input coordinates."""
    p = model.params
    return np.tanh(z @ p["dec_w"] + p["dec_b"]) @ p["out_w"] + p["out_b"]


def multinomial_log_likelihood(x, log_probs) -> np.ndarray | float:
    """``sum_i x_i log pi_i`` per row (scalar for 1-d input)."""
    return (np.asarray(x, dtype=np.float64) * log_probs).sum(axis=-1)


def kl_to_standard_normal(mu, logvar) -> np.ndarray | float:
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return 0.5 * (mu * mu + np.exp(logvar) - logvar - 1.0).sum(axis=-1)


def fairness_penalty(per_row_recon, row_groups) -> tuple[float, np.ndarray]:
    """Mean over present groups of ``|group mean recon - batch mean recon|``.

    Returns the penalty and its (sub)gradient with respect to each row's
    reconstruction term; ``sign(0)`` is taken as 0.
    """
    recon = np.asarray(per_row_recon, dtype=np.float64)
    groups = np.asarray(row_groups)
    n = len(recon)
    overall = recon.mean()
    present, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    group_means = np.bincount(inverse, weights=recon) / counts
    gaps = group_means - overall
    penalty = float(np.abs(gaps).mean())
    signs = np.sign(gaps)
    grad = (signs[inverse] / counts[inverse] - signs.sum() / n) / len(present)
    return penalty, grad


# -- objective -----------------------------------------------------------------

def sample_noise(model: VaeModel, batch_size: int, rng: np.random.Generator):
    """Dropout mask and reparameterisation noise for one training batch."""
    mask = dropout_mask((batch_size, model.input_dim), model.dropout, rng, training=True)
    eps = rng.standard_normal((batch_size, model.latent))
    return mask, eps


def objective(params: Params, x: np.ndarray, mask: np.ndarray, eps: np.ndarray,
              beta: float, gamma: float = 0.0, row_groups=None):
    """Loss, gradients and per-row statistics with all randomness supplied.

    Returns ``(loss, grads, stats)`` where ``stats`` holds per-row ``recon``
    and ``kl`` arrays and the scalar ``fairness`` penalty.
    """
    B = x.shape[0]
    xin = _normalize_rows(x) * mask
    h1 = np.tanh(xin @ params["enc_w"] + params["enc_b"])
    mu = h1 @ params["mu_w"] + params["mu_b"]
    logvar = h1 @ params["lv_w"] + params["lv_b"]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    h2 = np.tanh(z @ params["dec_w"] + params["dec_b"])
    logp = log_softmax(h2 @ params["out_w"] + params["out_b"])

    recon = multinomial_log_likelihood(x, logp)
    kl = kl_to_standard_normal(mu, logvar)
    d_recon = np.full(B, -1.0 / B)
    fairness = 0.0
    if gamma > 0 and row_groups is not None:
        fairness, d_fair = fairness_penalty(recon, row_groups)
        d_recon = d_recon + gamma * d_fair
    loss = float(-recon.mean() + beta * kl.mean() + gamma * fairness)

    d_logits = d_recon[:, None] * (x - x.sum(axis=1, keepdims=True) * np.exp(logp))
    grads = {"out_w": h2.T @ d_logits, "out_b": d_logits.sum(axis=0)}
    d_a2 = (d_logits @ params["out_w"].T) * (1.0 - h2 * h2)
    grads["dec_w"] = z.T @ d_a2
    grads["dec_b"] = d_a2.sum(axis=0)
    d_z = d_a2 @ params["dec_w"].T
    d_mu = d_z + (beta / B) * mu
    d_lv = d_z * eps * 0.5 * std + (beta / B) * 0.5 * (std * std - 1.0)
    grads["mu_w"], grads["mu_b"] = h1.T @ d_mu, d_mu.sum(axis=0)
    grads["lv_w"], grads["lv_b"] = h1.T @ d_lv, d_lv.sum(axis=0)
    d_a1 = (d_mu @ params["mu_w"].T + d_lv @ params["lv_w"].T) * (1.0 - h1 * h1)
    grads["enc_w"], grads["enc_b"] = xin.T @ d_a1, d_a1.sum(axis=0)
    return loss, grads, {"recon": recon, "kl": kl, "fairness": fairness}


def _check_finite(loss, x, stats):
    if not np.isfinite(loss):
        raise NumericalError(
            f"non-finite loss {loss} on batch of {x.shape[0]} rows "
            f"(row sums {x.sum(axis=1).min():.0f}..{x.sum(axis=1).max():.0f}, "
            f"recon finite: {np.isfinite(stats['recon']).all()}, kl finite: {np.isfinite(stats['kl']).all()})"
        )


def elbo_loss(model: VaeModel, batch, rng: np.random.Generator | None = None, noise=None):
    """Negated beta-ELBO averaged over the batch.

    Pass ``noise=(mask, eps)`` to freeze dropout and reparameterisation draws.
    Returns ``(loss, grads, per_row_recon)``.
    """
    x = _as_batch(batch)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    mask, eps = noise if noise is not None else sample_noise(model, x.shape[0], rng)
    loss, grads, stats = objective(model.params, x, mask, eps, model.beta)
    _check_finite(loss, x, stats)
    return loss, grads, stats["recon"]


def regularized_loss(model: VaeModel, batch, row_groups, rng: np.random.Generator | None = None, noise=None):
    """Negated beta-ELBO plus ``gamma`` times the group fairness penalty.

    Returns ``(loss, grads)``.
    """
    x = _as_batch(batch)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    mask, eps = noise if noise is not None else sample_noise(model, x.shape[0], rng)
    loss, grads, stats = objective(model.params, x, mask, eps, model.beta, model.gamma, row_groups)
    _check_finite(loss, x, stats)
    return loss, grads


# -- training ------------------------------------------------------------------

def train(
    rows,
    config: VaeConfig,
    orientation: str = ITEM_BASED,
    row_groups=None,
    items=None,
    tag: str = "vae",
    epochs: int | None = None,
) -> VaeModel:
    """Fit a VAE on the rows of ``rows`` (dense array or CSR matrix).

    ``row_groups`` gives the fairness group of every row; without it the
    penalty is inactive. ``tag`` names the RNG streams so differently
    tagged models from one seed draw independent numbers.
    """
    X = sp.csr_matrix(rows, dtype=np.float64) if not sp.issparse(rows) else rows.tocsr().astype(np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on zero rows")
    groups = None if row_groups is None else np.asarray(row_groups)
    if groups is not None and len(groups) != n:
        raise ValueError("row_groups length differs from number of rows")
    model = new_model(orientation, X.shape[1], config, rng_stream(config.seed, tag, "init"), items=items)
    rng = rng_stream(config.seed, tag, "train")
    state = AdamState(lr=config.lr)
    params = model.params
    for epoch in range(epochs if epochs is not None else config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = X[idx].toarray()
            mask, eps = sample_noise(model, len(idx), rng)
            g = groups[idx] if groups is not None else None
            loss, grads, stats = objective(params, x, mask, eps, model.beta, model.gamma, g)
            if not np.isfinite(loss):
                raise VaeTrainingError(f"{tag}: non-finite loss at epoch {epoch}, step {state.step}", model.trace)
            params, state = adam_step(params, grads, state)
            sums += len(idx) * np.array([loss, stats["fairness"], stats["kl"].mean()])
        model.trace.append(EpochStats(epoch, *(sums / n)))
        logger.debug("%s epoch %d loss %.4f", tag, epoch, model.trace[-1].loss)
    model.params = params
    model.steps = state.step
    return model


def train_grouped(
    train_data: Interactions,
    artist_grouping: Grouping,
    track_grouping: Grouping,
    config: VaeConfig,
    least_track_config: VaeConfig | None = None,
    extra_epochs_least_popular: int = 2,
    least_track_group: int = 0,
) -> GroupedVaeEnsemble:
    """Train one item-based VAE per artist group plus a least-popular-track VAE.

    Artist group 0 (least popular) receives ``extra_epochs_least_popular``
    additional epochs. Fairness groups are the track-popularity groups.
    """
    if least_track_config is None:
        least_track_config = VaeConfig(**{**asdict(config), "latent": 15})
    item_rows = train_data.to_csr().T.tocsr()
    sizes = artist_grouping.sizes()
    empty = [artist_grouping.labels[g] for g in range(artist_grouping.n_groups) if sizes[g] == 0]
    if empty:
        raise ValueError(
            f"artist popularity groups {empty} are empty; regenerate the corpus or choose different artist edges"
        )
    models = []
    for g in range(artist_grouping.n_groups):
        items = artist_grouping.members(g)
        epochs = config.epochs + (extra_epochs_least_popular if g == 0 else 0)
        models.append(train(
            item_rows[items], config, ITEM_BASED,
            row_groups=track_grouping.assignment[items], items=items,
            tag=f"artist-group-{g}", epochs=epochs,
        ))
    tail = track_grouping.members(least_track_group)
    if len(tail) == 0:
        raise ValueError(f"track popularity group {track_grouping.labels[least_track_group]!r} is empty")
    least = train(
        item_rows[tail], least_track_config, ITEM_BASED,
        row_groups=None, items=tail, tag="least-track",
    )
    return GroupedVaeEnsemble(models, least)


# -- scoring -------------------------------------------------------------------

def predict_probs(model: VaeModel, rows) -> np.ndarray:
    """Deterministic (eval-mode) multinomial probabilities for each row."""
    X = rows if sp.issparse(rows) else sp.csr_matrix(_as_batch(rows))
    X = X.tocsr()
    out = np.empty((X.shape[0], model.input_dim))
    for start in range(0, X.shape[0], _SCORE_CHUNK):
        x = X[start:start + _SCORE_CHUNK].toarray()
        mu, _ = encode(model, x, training=False)
        out[start:start + _SCORE_CHUNK] = np.exp(log_softmax(decode(model, mu)))
    return out


def score_matrix(model: VaeModel, train_data: Interactions) -> tuple[np.ndarray, np.ndarray]:
    """User x item scores over the model's items, seen items set to ``-inf``.

    Returns ``(scores, items)`` where column ``k`` of ``scores`` belongs to
    item ``items[k]``.
    """
    X = train_data.to_csr()
    if model.orientation == USER_BASED:
        if model.input_dim != train_data.n_items:
            raise ValueError("user-based model input dimension differs from catalog size")
        items = np.arange(train_data.n_items)
        scores = predict_probs(model, X)
    else:
        if model.input_dim != train_data.n_users:
            raise ValueError("item-based model input dimension differs from number of users")
        items = np.arange(train_data.n_items) if model.items is None else model.items
        scores = predict_probs(model, X.T.tocsr()[items]).T.copy()
    seen = X[:, items].toarray() > 0
    scores[seen] = -np.inf
    return scores, items


def score_items_for_user(model: VaeModel, u: int, train_data: Interactions) -> np.ndarray:
    """Full-length score vector for user ``u``; uncovered and seen items are ``-inf``."""
    if not 0 <= u < train_data.n_users:
        raise IndexError(f"unknown user index {u}")
    out = np.full(train_data.n_items, -np.inf)
    if model.orientation == USER_BASED:
        out[:] = predict_probs(model, train_data.to_csr()[u])[0]
    else:
        items = np.arange(train_data.n_items) if model.items is None else model.items
        probs = predict_probs(model, train_data.to_csr().T.tocsr()[items])
        out[items] = probs[:, u]
    out[train_data.row(u)] = -np.inf
    return out


def ensemble_scores(ensemble: GroupedVaeEnsemble, train_data: Interactions) -> np.ndarray:
    """User x item score matrix where each item is scored by its artist-group model."""
    full = np.full((train_data.n_users, train_data.n_items), -np.inf)
    for model in ensemble.artist_models:
        scores, items = score_matrix(model, train_data)
        full[:, items] = scores
    return full


def rank_items(scores: np.ndarray, k: int | None = None) -> np.ndarray:
    """Descending order of ``scores`` along the last axis; lower index wins ties."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order if k is None else order[..., :k]


# -- persistence ---------------------------------------------------------------

def save_model(model: VaeModel, path) -> None:
    tensors = dict(model.params)
    if model.items is not None:
        tensors["items"] = model.items
    meta = {
        "kind": "vae", "orientation": model.orientation, "input_dim": model.input_dim,
        "hidden": model.hidden, "latent": model.latent, "beta": model.beta, "gamma": model.gamma,
        "dropout": model.dropout, "steps": model.steps,
        "trace": [asdict(t) for t in model.trace],
    }
    save_checkpoint(path, tensors, meta)


def load_model(path) -> VaeModel:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "vae":
        raise ValueError(f"{path} does not hold a VAE checkpoint")
    items = tensors.pop("items", None)
    return VaeModel(
        meta["orientation"], meta["input_dim"], meta["hidden"], meta["latent"], tensors,
        beta=meta["beta"], gamma=meta["gamma"], dropout=meta["dropout"], items=items,
        steps=meta["steps"], trace=[EpochStats(**t) for t in meta["trace"]],
    )


def write_training_curve(model: VaeModel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "F", "KL"])
        for t in model.trace:
            writer.writerow([t.epoch, repr(t.loss), repr(t.fairness), repr(t.kl)])
