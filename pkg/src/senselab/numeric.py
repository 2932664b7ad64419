"""Dense float64 kernels with analytic gradients, plus a finite-difference checker.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Use
:func:`as_matrix` wherever a value crosses a trust boundary; it is the checked
constructor that rejects NaN/Inf.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


class DimensionError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Return ``data`` as a finite C-contiguous float64 matrix.

    1-D input is treated as a single row. ``rows``/``cols`` are checked when given.
    """
    m = np.array(data, dtype=np.float64, order="C", copy=True)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got {m.ndim}-D")
    if rows is not None and m.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(m))[0])
        raise NonFiniteError(f"non-finite value at {bad}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's max."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of ``targets`` under row-wise softmax of ``logits``.

    Returns ``(loss, dlogits)`` where ``dlogits = (softmax - onehot) / batch``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, v = logits.shape
    if targets.shape[0] != n:
        raise DimensionError(f"{targets.shape[0]} targets for {n} rows")
    if n and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id out of range [0, {v})")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    log_probs = z[rows, targets] - np.log(s[:, 0])
    loss = float(-log_probs.mean())
    dlogits = e / s
    dlogits[rows, targets] -= 1.0
    dlogits /= n
    return loss, dlogits


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    max_rel_error: float
    worst: tuple | None  # (param name, index) of the largest error
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.threshold

    @property
    def failing(self) -> tuple | None:
        return None if self.passed else self.worst

    def __str__(self) -> str:
        verdict = "ok" if self.passed else f"FAIL at {self.worst}"
        return f"{self.name}: max rel err {self.max_rel_error:.3e} (<= {self.threshold:g}) {verdict}"


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(a, n))


def grad_check(
    f: Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    point: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    threshold: float = 1e-4,
    name: str = "op",
) -> GradCheckReport:
    """Compare ``f``'s analytic gradient with central differences at ``point``.

    ``f`` maps a dict of arrays to ``(value, grads)`` with ``grads`` keyed like
    ``point``. Every coordinate of every array is perturbed.
    """
    work = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    _, grads = f(work)
    grads = {k: np.array(g, dtype=np.float64) for k, g in grads.items()}
    worst_err, worst_at = 0.0, None
    for key, arr in work.items():
        flat = arr.reshape(-1)
        numeric = np.empty(flat.shape[0])
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = f(work)
            flat[i] = orig - epsilon
            down, _ = f(work)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * epsilon)
        err = relative_error(grads[key].reshape(-1), numeric)
        if err.size and err.max() > worst_err:
            j = int(err.argmax())
            worst_err, worst_at = float(err[j]), (
                key, tuple(int(x) for x in np.unravel_index(j, arr.shape)))
    return GradCheckReport(name, worst_err, worst_at, threshold)
