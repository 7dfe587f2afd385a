"""Matrix factorization trained with the BPR pairwise loss.

Instead of weight decay, a factor matrix whose largest absolute entry
exceeds 1 after an update is rescaled by that entry.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from fairrec.dataset import Interactions
from fairrec.numerics import NumericalError, load_checkpoint, log_sigmoid, rng_stream, save_checkpoint, sigmoid

logger = logging.getLogger(__name__)


@dataclass
class BprConfig:
    dim: int = 64
    epochs: int = 10
    batch_size: int = 8192
    lr: float = 0.001
    init_std: float = 0.1
    normalize: str = "matrix"  # or "row"
    seed: int = 0


@dataclass
class BprModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    losses: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]


def init_model(n_users: int, n_items: int, config: BprConfig, rng: np.random.Generator) -> BprModel:
    model = BprModel(
        rng.normal(0.0, config.init_std, (n_users, config.dim)),
        rng.normal(0.0, config.init_std, (n_items, config.dim)),
    )
    _max_normalize(model.user_factors, config.normalize)
    _max_normalize(model.item_factors, config.normalize)
    return model


def sample_triplets(train: Interactions, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` (user, positive, negative) triplets as an ``(n, 3)`` int array.

    Users are uniform over those with at least one positive and at least one
    unseen item; positives are uniform within the user's row; negatives are
    rejection-sampled uniformly from unseen items.
    """
    lengths = train.row_lengths
    eligible = np.flatnonzero((lengths > 0) & (lengths < train.n_items))
    if len(eligible) == 0:
        raise ValueError("no user has both a positive and an unseen item")
    users = eligible[rng.integers(0, len(eligible), n)]
    pos = train.indices[train.indptr[users] + np.floor(rng.random(n) * lengths[users]).astype(np.int64)]
    csr = train.to_csr()
    neg = rng.integers(0, train.n_items, n)
    clash = np.asarray(csr[users, neg]).ravel() > 0
    while clash.any():
        redo = np.flatnonzero(clash)
        neg[redo] = rng.integers(0, train.n_items, len(redo))
        clash[redo] = np.asarray(csr[users[redo], neg[redo]]).ravel() > 0
    return np.stack([users, pos, neg], axis=1)


def sample_triplet(train: Interactions, rng: np.random.Generator) -> tuple[int, int, int]:
    u, i, j = sample_triplets(train, 1, rng)[0]
    return int(u), int(i), int(j)


def bpr_loss_and_grads(user_factors, item_factors, triplets):
    """Summed ``-log sigmoid(<u, i - j>)`` over triplets and its gradients.

    Returns ``(loss, grad_user_factors, grad_item_factors)``; rows that occur
    several times in the batch accumulate their contributions.
    """
    u, i, j = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    pu, qi, qj = user_factors[u], item_factors[i], item_factors[j]
    s = np.einsum("nd,nd->n", pu, qi - qj)
    loss = float(-log_sigmoid(s).sum())
    coef = -sigmoid(-s)[:, None]
    gu = np.zeros_like(user_factors)
    gi = np.zeros_like(item_factors)
    np.add.at(gu, u, coef * (qi - qj))
    np.add.at(gi, i, coef * pu)
    np.add.at(gi, j, -coef * pu)
    return loss, gu, gi


def _max_normalize(factors: np.ndarray, mode: str = "matrix") -> None:
    if mode == "matrix":
        peak = np.abs(factors).max() if factors.size else 0.0
        if peak > 1.0:
            factors /= peak
    elif mode == "row":
        peaks = np.abs(factors).max(axis=1, keepdims=True)
        np.divide(factors, peaks, out=factors, where=peaks > 1.0)
    else:
        raise ValueError(f"unknown normalisation mode {mode!r}")


def bpr_step(model: BprModel, triplets, lr: float = 0.001, normalize: str = "matrix") -> float:
    """One gradient step on a batch of triplets, in place. Returns the batch loss."""
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    loss, gu, gi = bpr_loss_and_grads(model.user_factors, model.item_factors, triplets)
    if not (np.isfinite(loss) and np.isfinite(gu).all() and np.isfinite(gi).all()):
        raise NumericalError("non-finite BPR update")
    model.user_factors -= lr * gu
    model.item_factors -= lr * gi
    _max_normalize(model.user_factors, normalize)
    _max_normalize(model.item_factors, normalize)
    return loss


def train_bpr(train: Interactions, config: BprConfig) -> BprModel:
    """Each epoch draws ``nnz`` triplets and consumes them in ``batch_size`` chunks."""
    if train.nnz == 0:
        raise ValueError("cannot train BPR on empty interactions")
    model = init_model(train.n_users, train.n_items, config, rng_stream(config.seed, "bpr", "init"))
    rng = rng_stream(config.seed, "bpr", "train")
    for epoch in range(config.epochs):
        triplets = sample_triplets(train, train.nnz, rng)
        total = 0.0
        for start in range(0, len(triplets), config.batch_size):
            total += bpr_step(model, triplets[start:start + config.batch_size], config.lr, config.normalize)
        model.losses.append(total / len(triplets))
        logger.debug("bpr epoch %d mean loss %.5f", epoch, model.losses[-1])
    return model


def bpr_scores(model: BprModel, train: Interactions) -> np.ndarray:
    scores = model.user_factors @ model.item_factors.T
    scores[train.to_csr().toarray() > 0] = -np.inf
    return scores


def bpr_top1(model: BprModel, u: int, train: Interactions) -> int:
    """Highest-scoring unseen item for ``u``; the lower index wins ties."""
    scores = model.item_factors @ model.user_factors[u]
    scores[train.row(u)] = -np.inf
    return int(np.argmax(scores))


def bpr_top1_all(model: BprModel, train: Interactions) -> np.ndarray:
    return np.argmax(bpr_scores(model, train), axis=1)


def pairwise_auc(model: BprModel, train: Interactions) -> float:
    """Mean over users of the fraction of (seen, unseen) pairs ordered correctly."""
    scores = model.user_factors @ model.item_factors.T
    seen = train.to_csr().toarray() > 0
    aucs = []
    for u in range(train.n_users):
        pos, neg = scores[u, seen[u]], scores[u, ~seen[u]]
        if len(pos) and len(neg):
            aucs.append((pos[:, None] > neg[None, :]).mean())
    return float(np.mean(aucs))


def save_model(model: BprModel, path) -> None:
    save_checkpoint(
        path,
        {"user_factors": model.user_factors, "item_factors": model.item_factors},
        {"kind": "bprmf", "losses": model.losses},
    )


def load_model(path) -> BprModel:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "bprmf":
        raise ValueError(f"{path} does not hold a BPRMF checkpoint")
    return BprModel(tensors["user_factors"], tensors["item_factors"], list(meta["losses"]))
