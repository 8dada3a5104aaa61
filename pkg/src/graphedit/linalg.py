"""Dense numerics: stable softmax/KL/cross-entropy, Adam, and a finite-difference oracle.

All arithmetic is float64. Gradients elsewhere in the package are hand-derived and
checked against :func:`finite_diff_grad`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import InvalidInputError, OracleError

KL_FLOOR = 1e-12


def _as_mask(mask, n: int) -> np.ndarray:
    """Normalise a boolean mask or an index array to sorted int indices."""
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise InvalidInputError(f"boolean mask has shape {mask.shape}, expected ({n},)")
        idx = np.flatnonzero(mask)
    else:
        idx = mask.astype(np.int64, copy=False).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise InvalidInputError("mask index out of range")
    if idx.size == 0:
        raise InvalidInputError("mask is empty")
    return idx


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("softmax_rows: non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("log_softmax_rows: non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mean_kl(p: np.ndarray, q: np.ndarray, mask=None) -> float:
    """Mean over masked rows of KL(p_i || q_i); q is floored at ``KL_FLOOR``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise InvalidInputError(f"mean_kl: shape mismatch {p.shape} vs {q.shape}")
    idx = np.arange(p.shape[0]) if mask is None else _as_mask(mask, p.shape[0])
    ps, qs = p[idx], np.maximum(q[idx], KL_FLOOR)
    pos = ps > 0
    terms = np.zeros_like(ps)
    terms[pos] = ps[pos] * (np.log(ps[pos]) - np.log(qs[pos]))
    # tiny negative values are round-off around an exact zero
    return max(float(terms.sum(axis=1).mean()), 0.0)


def kl_logits_grad(logits: np.ndarray, ref_log_probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row KL(softmax(logits) || exp(ref_log_probs)) and its gradient w.r.t. logits."""
    logp = log_softmax_rows(logits)
    p = np.exp(logp)
    r = logp - ref_log_probs
    kl = (p * r).sum(axis=1)
    grad = p * (r - kl[:, None])
    return kl, grad


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask=None) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over masked rows and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise InvalidInputError(f"labels shape {labels.shape} does not match {n} rows")
    idx = np.arange(n) if mask is None else _as_mask(mask, n)
    lab = labels[idx].astype(np.int64)
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        raise InvalidInputError(f"label out of range [0, {c})")
    logp = log_softmax_rows(logits[idx])
    rows = np.arange(idx.size)
    loss = float(-logp[rows, lab].mean())
    g = np.exp(logp)
    g[rows, lab] -= 1.0
    grad = np.zeros_like(logits)
    grad[idx] = g / idx.size
    return loss, grad


@dataclass
class ParameterSet:
    """Named float64 tensors with trainable flags; insertion order is significant."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.tensors:
            raise InvalidInputError(f"duplicate parameter name {name!r}")
        self.tensors[name] = np.array(value, dtype=np.float64, copy=True)
        self.trainable[name] = bool(trainable)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self, trainable_only: bool = False) -> list[str]:
        return [k for k in self.tensors if self.trainable[k] or not trainable_only]

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            {k: np.array(v, dtype=np.float64, copy=True) for k, v in self.tensors.items()},
            dict(self.trainable),
        )

    def frozen(self) -> "ParameterSet":
        """Copy with every flag false and read-only storage."""
        out = self.copy()
        for k, v in out.tensors.items():
            v.setflags(write=False)
            out.trainable[k] = False
        return out

    def num_values(self, trainable_only: bool = True) -> int:
        return sum(self.tensors[k].size for k in self.names(trainable_only))


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Tensors flagged non-trainable are never touched, even if a gradient is supplied.
    """
    for name, g in grads.items():
        if name not in params.tensors:
            raise InvalidInputError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params.tensors[name].shape:
            raise InvalidInputError(
                f"gradient shape {np.shape(g)} != parameter shape {params.tensors[name].shape} for {name!r}"
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in params.names(trainable_only=True):
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params.tensors[name])
            state.v[name] = np.zeros_like(params.tensors[name])
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params.tensors[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def finite_diff_grad(
    f: Callable[[ParameterSet], float],
    params: ParameterSet,
    eps: float = 1e-5,
    names: list[str] | None = None,
) -> dict[str, np.ndarray]:
    """Central differences with per-entry step ``eps * max(1, |theta|)``.

    Slow (two evaluations per scalar); intended for tests only.
    """
    work = params.copy()
    out: dict[str, np.ndarray] = {}
    for name in names if names is not None else work.names(trainable_only=True):
        t = work.tensors[name]
        est = np.zeros_like(t)
        flat, eflat = t.reshape(-1), est.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = f(work)
            flat[i] = orig - h
            fm = f(work)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise OracleError(f"non-finite evaluation perturbing {name}[{i}]")
            eflat[i] = (fp - fm) / (2.0 * h)
        out[name] = est
    return out


def max_relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray], floor: float = 1e-5) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries.

    Central differences carry ~1e-11 absolute round-off for O(1) losses, so entries
    far below ``floor`` are judged on absolute error (tol * floor) instead.
    """
    worst = 0.0
    for k, a in analytic.items():
        n = numeric[k]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
