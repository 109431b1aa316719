"""Dense/sparse matrices and a reverse-mode tape over a small op vocabulary.

Every value is a 2-D float64 matrix; scalars are ``(1, 1)``. A ``Tensor``
built without a tape is a constant. Ops record onto the tape of their
inputs, so a forward pass with constants only records nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels


class NumericalError(FloatingPointError):
    """A non-finite value appeared in an op output."""


def _check_finite(arr: np.ndarray, kind: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values produced by {kind}")
    return arr


class SparseMatrix:
    """Immutable CSR matrix built from coordinate triplets.

    Triplets are sorted by (row, col); duplicate coordinates are rejected.
    """

    __slots__ = ("shape", "indptr", "indices", "data", "_t")

    def __init__(self, shape, rows, cols, values):
        n_rows, n_cols = int(shape[0]), int(shape[1])
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("triplet arrays differ in length")
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError(f"triplet index out of range for shape {(n_rows, n_cols)}")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows) > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate entry at ({rows[i]}, {cols[i]})")
        _check_finite(values, "SparseMatrix")
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
        self.shape = (n_rows, n_cols)
        self.indptr = indptr
        self.indices = np.ascontiguousarray(cols)
        self.data = np.ascontiguousarray(values)
        self._t = None

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        arr = np.asarray(arr, dtype=np.float64)
        r, c = np.nonzero(arr)
        return cls(arr.shape, r, c, arr[r, c])

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls((n, n), idx, idx, np.ones(n))

    @property
    def nnz(self) -> int:
        return len(self.data)

    @property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    def triplets(self):
        return self.rows, self.indices.copy(), self.data.copy()

    @property
    def T(self) -> "SparseMatrix":
        if self._t is None:
            t = SparseMatrix((self.shape[1], self.shape[0]), self.indices, self.rows, self.data)
            t._t = self
            self._t = t
        return self._t

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.indices] = self.data
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.data, minlength=self.shape[0])

    def row_normalize(self) -> "SparseMatrix":
        """Scale each row to sum to one; all-zero rows stay zero."""
        sums = self.row_sums()
        scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
        return SparseMatrix(self.shape, self.rows, self.indices, self.data * scale[self.rows])

    def dot(self, dense: np.ndarray) -> np.ndarray:
        dense = np.ascontiguousarray(dense, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != self.shape[1]:
            raise ValueError(f"spmm shape mismatch: {self.shape} x {dense.shape}")
        return kernels.csr_matmat(self.indptr, self.indices, self.data, dense, self.shape[0])

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))

    __hash__ = None

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


class Tensor:
    __slots__ = ("data", "tape", "id")

    def __init__(self, data, tape: "Tape | None" = None, _id: int = -1):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.id = _id

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = "const" if self.tape is None else f"id={self.id}"
        return f"Tensor(shape={self.shape}, {tag})"


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(frozen=True)
class OpRecord:
    kind: str
    input_ids: tuple
    output_id: int
    backward: Backward


class Tape:
    """Ordered record of ops; ``gradient`` replays it in reverse once."""

    def __init__(self):
        self.records: list[OpRecord] = []
        self._next_id = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def variable(self, data) -> Tensor:
        return Tensor(np.array(data, dtype=np.float64), self, self._new_id())

    def watch(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {name: self.variable(value) for name, value in params.items()}

    def emit(self, kind: str, inputs: Sequence[Tensor], out: np.ndarray,
             backward: Backward) -> Tensor:
        _check_finite(out, kind)
        tracked = [t for t in inputs if t.tape is not None]
        if any(t.tape is not self for t in tracked):
            raise ValueError(f"{kind}: inputs recorded on different tapes")
        result = Tensor(out, self, self._new_id())
        ids = tuple(t.id if t.tape is self else None for t in inputs)
        self.records.append(OpRecord(kind, ids, result.id, backward))
        return result

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if seed is None:
            if output.data.size != 1:
                raise ValueError("backward from a non-scalar needs an explicit seed")
            seed = np.ones_like(output.data)
        grads: dict[int, np.ndarray] = {output.id: np.asarray(seed, dtype=np.float64)}
        for rec in reversed(self.records):
            g = grads.get(rec.output_id)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for tid, ig in zip(rec.input_ids, in_grads):
                if tid is None or ig is None:
                    continue
                if tid in grads:
                    grads[tid] = grads[tid] + ig
                else:
                    grads[tid] = ig
        return grads

    def gradient(self, output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``output`` w.r.t. ``wrt``; zeros where unreached."""
        grads = self.backward(output)
        return [grads.get(t.id, np.zeros_like(t.data)) if t.tape is self
                else np.zeros_like(t.data) for t in wrt]


def _tape_of(*tensors: Tensor) -> Tape | None:
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def _record(kind, inputs, out, backward) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(_check_finite(out, kind))
    return tape.emit(kind, inputs, out, backward)


def _as_rows(mask, n: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        if m.shape != (n,):
            raise ValueError(f"row mask of length {m.shape} for {n} rows")
        rows = np.flatnonzero(m)
    else:
        rows = m.astype(np.int64).ravel()
        if len(rows) and (rows.min() < 0 or rows.max() >= n):
            raise ValueError("row index out of range")
    if len(rows) == 0:
        raise ValueError("empty row mask")
    return rows


# ---------------------------------------------------------------- ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    """Sparse times dense; the sparse operand is a constant."""
    out = s.dot(d.data)
    return _record("spmm", (d,), out, lambda g: (s.T.dot(g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a ``(1, c)`` row or ``(1, 1)`` scalar."""
    if b.shape != a.shape and not (b.shape[0] == 1 and b.shape[1] in (1, a.shape[1])):
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    shape_b = b.shape

    def backward(g):
        gb = g
        if shape_b != g.shape:
            gb = g.sum(axis=0, keepdims=True)
            if shape_b[1] == 1:
                gb = gb.sum(axis=1, keepdims=True)
        return g, gb

    return _record("add", (a, b), a.data + b.data, backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; the identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_rows(x: Tensor) -> Tensor:
    out = _log_softmax(x.data)
    p = np.exp(out)
    return _record("log_softmax_rows", (x,), out,
                   lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def cross_entropy(logits: Tensor, labels, row_mask=None) -> Tensor:
    """Mean over masked rows of ``-log softmax(logits)[label]``."""
    n, m = logits.shape
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} rows")
    rows = _as_rows(np.ones(n, bool) if row_mask is None else row_mask, n)
    y = labels[rows]
    if y.min() < 0 or y.max() >= m:
        raise ValueError(f"labels outside [0, {m})")
    lsm = _log_softmax(logits.data[rows])
    loss = -lsm[np.arange(len(rows)), y].mean()

    def backward(g):
        d = np.exp(lsm)
        d[np.arange(len(rows)), y] -= 1.0
        full = np.zeros((n, m))
        full[rows] = d * (g[0, 0] / len(rows))
        return (full,)

    return _record("cross_entropy", (logits,), np.array([[loss]]), backward)


def kl_div(student_logits: Tensor, teacher_logits: Tensor, row_mask=None,
           temperature: float = 1.0) -> Tensor:
    """Mean over masked rows of KL(softmax(teacher) || softmax(student)).

    Differentiable in both arguments; detach the teacher to make it a target.
    ``temperature`` divides both logit sets and rescales the loss by its square.
    """
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"kl_div shape mismatch: {student_logits.shape} vs {teacher_logits.shape}")
    n, m = student_logits.shape
    rows = _as_rows(np.ones(n, bool) if row_mask is None else row_mask, n)
    t = float(temperature)
    log_q = _log_softmax(student_logits.data[rows] / t)
    log_p = _log_softmax(teacher_logits.data[rows] / t)
    p = np.exp(log_p)
    per_row = (p * (log_p - log_q)).sum(axis=1)
    # clamp the round-off negatives of identical rows
    value = max(per_row.mean(), 0.0) * t * t

    def backward(g):
        c = g[0, 0] * t / len(rows)
        gs = np.zeros((n, m))
        gt = np.zeros((n, m))
        gs[rows] = (np.exp(log_q) - p) * c
        gt[rows] = p * (log_p - log_q - per_row[:, None]) * c
        return gs, gt

    return _record("kl_div", (student_logits, teacher_logits), np.array([[value]]), backward)


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)
