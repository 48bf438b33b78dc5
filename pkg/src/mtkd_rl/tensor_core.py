"""Dense float64 numeric substrate: matrices, activations, losses, SGD and a
finite-difference gradient oracle.

Matrices are plain 2-D ``numpy.float64`` arrays. Loss functions are per-row:
they return a length-``rows`` loss vector together with the gradient of each
row's loss with respect to that row of the input (callers average over the
batch themselves).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, LabelIndexError, ParameterError, ShapeError

DTYPE = np.float64


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=DTYPE)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


@dataclass
class ParamTensor:
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    momentum_buffer: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = as_matrix(self.value).copy()
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape or self.momentum_buffer.shape != self.value.shape:
            raise ShapeError("value, grad and momentum_buffer must share a shape")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated in inner-index order.

    Each output entry is ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``, the same
    sequence of roundings as a naive triple loop, so results do not depend on
    the BLAS build or thread count.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=DTYPE)
    tmp = np.empty_like(out)
    for k in range(a.shape[1]):
        np.multiply(a[:, k : k + 1], b[k : k + 1, :], out=tmp)
        out += tmp
    return out


def relu(x) -> np.ndarray:
    return np.maximum(as_matrix(x), 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    x = as_matrix(x)
    upstream = as_matrix(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"relu_backward shape mismatch: {x.shape} vs {upstream.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def softmax_rows(x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] < 1:
        raise ShapeError("softmax needs at least one column")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x) -> np.ndarray:
    x = as_matrix(x)
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels, rows: int, cols: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != rows:
        raise ShapeError(f"expected {rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= cols):
        bad = labels[(labels < 0) | (labels >= cols)][0]
        raise LabelIndexError(f"label {int(bad)} outside [0, {cols})")
    return labels.astype(np.int64)


def cross_entropy(logits, labels):
    """Per-row ``-log softmax(logits)[label]`` and its gradient ``softmax - onehot``."""
    logits = as_matrix(logits)
    labels = _check_labels(labels, *logits.shape)
    rows = np.arange(logits.shape[0])
    logp = log_softmax_rows(logits)
    loss = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad


def kl_divergence(student_logits, teacher_logits, temperature: float = 1.0):
    """``tau^2 * KL(softmax(t/tau) || softmax(s/tau))`` per row, with the
    gradient taken with respect to the student logits."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    s = as_matrix(student_logits)
    t = as_matrix(teacher_logits)
    if s.shape != t.shape:
        raise ShapeError(f"kl_divergence shape mismatch: {s.shape} vs {t.shape}")
    tau = float(temperature)
    log_ps = log_softmax_rows(s / tau)
    log_pt = log_softmax_rows(t / tau)
    pt = np.exp(log_pt)
    loss = (pt * (log_pt - log_ps)).sum(axis=1) * tau * tau
    # clip tiny negative round-off; KL is non-negative
    loss = np.maximum(loss, 0.0)
    grad = tau * (np.exp(log_ps) - pt)
    return loss, grad


def mse(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    cols = a.shape[1]
    return (diff * diff).mean(axis=1), 2.0 * diff / cols


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=DTYPE).ravel()
    b = np.asarray(b, dtype=DTYPE).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_rows(a, b) -> np.ndarray:
    """Row-wise cosine similarity of two equally shaped matrices."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows shape mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm row")
    return np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)


def sgd_step(params: Sequence[ParamTensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """Momentum SGD (``buf = mu*buf + g + wd*p; p -= lr*buf``), then zero grads."""
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    for p in params:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.value
        if momentum:
            p.momentum_buffer *= momentum
            p.momentum_buffer += g
            g = p.momentum_buffer
        p.value -= lr * g
        p.zero_grad()


def finite_diff_grad(scalar_fn: Callable[[], float], params, epsilon: float = 1e-5):
    """Central-difference gradient of ``scalar_fn()`` for every entry of ``params``.

    ``params`` holds ParamTensors or float arrays that ``scalar_fn`` reads;
    entries are perturbed in place and restored.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    grads = []
    for p in params:
        arr = p.value if isinstance(p, ParamTensor) else p
        g = np.zeros_like(arr, dtype=DTYPE)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            f_plus = float(scalar_fn())
            flat[idx] = orig - epsilon
            f_minus = float(scalar_fn())
            flat[idx] = orig
            gflat[idx] = (f_plus - f_minus) / (2.0 * epsilon)
        grads.append(g)
    return grads


def rel_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``||a - n|| / max(||a||, ||n||)``."""
    a = np.asarray(analytic, dtype=DTYPE).ravel()
    n = np.asarray(numeric, dtype=DTYPE).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
