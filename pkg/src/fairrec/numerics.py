"""Dense numerical substrate shared by the VAE and BPR models.

Matrices are plain float64 ``numpy.ndarray`` objects. Everything that
draws randomness takes an explicit ``numpy.random.Generator``; there is no
module-level RNG.
"""
from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

CHECKPOINT_VERSION = 1

Params = dict[str, np.ndarray]


class NumericalError(ValueError):
    """Raised when a computation produces or receives non-finite values."""


def rng_stream(seed: int, *names: str | int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *names)``.

    String components are hashed with CRC32 so stream identity does not
    depend on ``PYTHONHASHSEED``.
    """
    key = [int(seed)]
    for name in names:
        key.append(zlib.crc32(name.encode()) if isinstance(name, str) else int(name))
    return np.random.default_rng(np.random.SeedSequence(key))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with the row max subtracted first."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(x))


def dropout_mask(shape, rate: float, rng: np.random.Generator, training: bool = True) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``.

    With ``training=False`` the mask is all ones and no randomness is consumed.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr, self.beta1, self.beta2, self.epsilon, self.step,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params: Params, grads: Mapping[str, np.ndarray], state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update. Returns new parameter and state objects."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {name!r}")
    new = state.copy()
    new.step += 1
    bc1 = 1.0 - new.beta1 ** new.step
    bc2 = 1.0 - new.beta2 ** new.step
    out = dict(params)
    for name, g in grads.items():
        m = new.m.get(name)
        v = new.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = new.beta1 * m + (1.0 - new.beta1) * g
        v = new.beta2 * v + (1.0 - new.beta2) * g * g
        new.m[name], new.v[name] = m, v
        out[name] = params[name] - new.lr * (m / bc1) / (np.sqrt(v / bc2) + new.epsilon)
    return out, new


def finite_diff_check(
    loss_fn: Callable[[Params], float],
    params: Params,
    epsilon: float,
    analytic_grads: Mapping[str, np.ndarray],
    floor: float = 1e-6,
    order: int = 2,
) -> float:
    """Max relative error between ``analytic_grads`` and central differences.

    Per coordinate the error is ``|analytic - numeric| / max(|numeric|, floor)``;
    ``floor`` keeps coordinates whose true gradient is ~0 from dividing by noise.
    ``order=4`` uses the five-point stencil, whose smaller truncation error
    allows a larger ``epsilon`` and hence less round-off in the loss.
    """
    if order == 2:
        offsets, weights = (1.0, -1.0), (0.5, -0.5)
    elif order == 4:
        offsets, weights = (2.0, 1.0, -1.0, -2.0), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)
    else:
        raise ValueError("order must be 2 or 4")
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = np.asarray(analytic_grads[name]).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            numeric = 0.0
            for off, w in zip(offsets, weights):
                flat[idx] = orig + off * epsilon
                numeric += w * loss_fn(params)
            flat[idx] = orig
            numeric /= epsilon
            err = abs(g[idx] - numeric) / max(abs(numeric), floor)
            worst = max(worst, err)
    return worst


# -- checkpoints -------------------------------------------------------------

def _encode_tensor(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    dtype = "<f8" if a.dtype.kind == "f" else "<i8"
    return {
        "dtype": dtype,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(dtype).tobytes()).decode("ascii"),
    }


def _decode_tensor(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(blob["shape"]).copy()


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Write tensors as shape-tagged little-endian base64 inside a JSON document."""
    doc = {
        "format": "fairrec-checkpoint",
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "tensors": {k: _encode_tensor(v) for k, v in sorted(tensors.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_checkpoint(path: str | Path) -> tuple[Params, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "fairrec-checkpoint":
        raise ValueError(f"{path}: not a fairrec checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {doc.get('version')} does not match supported version {CHECKPOINT_VERSION}"
        )
    tensors = {k: _decode_tensor(v) for k, v in doc["tensors"].items()}
    return tensors, doc["meta"]
