"""ELLPACK matrices, precision-tagged vectors and the kernels acting on them.

Kernels optionally charge a :class:`TrafficCounter` with the bytes they move.
The byte model is exact for the stored formats: a sparse product reads every
stored value and index (padding included), gathers one vector entry per
stored value and writes one entry per row. Column indices are 32-bit.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from mpgmg import _kernels
from mpgmg.precision import (DEFAULT_POLICY, FP64, PrecisionTag,
                             is_representable, round_array)

__all__ = ['UsageError', 'EllMatrix', 'PVector', 'TrafficCounter', 'spmv',
           'residual', 'axpy', 'vec_multiply', 'update_residuum_correction',
           'cast_vector', 'norm2', 'dot', 'dump_matrix', 'load_matrix']

INDEX_BYTES = 4


class UsageError(ValueError):
    """Raised when operands are inconsistent (shape, precision, arguments)."""


@dataclass
class TrafficCounter:
    """Bytes and flops charged by kernels.

    ``bytes_read`` includes ``index_bytes_read``; value bytes are everything
    else.
    """

    bytes_read: int = 0
    bytes_written: int = 0
    flops: int = 0
    index_bytes_read: int = 0

    @property
    def value_bytes(self):
        return self.bytes_read + self.bytes_written - self.index_bytes_read

    def add(self, read=0, written=0, flops=0, index=0):
        self.bytes_read += read + index
        self.bytes_written += written
        self.flops += flops
        self.index_bytes_read += index

    def reset(self):
        self.bytes_read = self.bytes_written = self.flops = 0
        self.index_bytes_read = 0

    def __iadd__(self, other):
        self.bytes_read += other.bytes_read
        self.bytes_written += other.bytes_written
        self.flops += other.flops
        self.index_bytes_read += other.index_bytes_read
        return self

    def copy(self):
        return TrafficCounter(self.bytes_read, self.bytes_written,
                              self.flops, self.index_bytes_read)


@dataclass
class PVector:
    """Vector whose entries are values of ``precision``.

    ``data`` is a float64 array; use :meth:`as_native` for an array of the
    native dtype.
    """

    data: np.ndarray
    precision: PrecisionTag = FP64

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 1:
            raise UsageError("PVector data must be one-dimensional")
        self.precision = PrecisionTag.parse(self.precision)

    @classmethod
    def from_values(cls, values, precision=FP64, policy=DEFAULT_POLICY):
        """Round arbitrary binary64 values into ``precision``."""
        precision = PrecisionTag.parse(precision)
        return cls(round_array(values, precision, policy), precision)

    @classmethod
    def zeros(cls, n, precision=FP64):
        return cls(np.zeros(n), precision)

    def __len__(self):
        return self.data.size

    def copy(self):
        return PVector(self.data.copy(), self.precision)

    def as_native(self):
        return self.data.astype(self.precision.dtype)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def is_consistent(self):
        return bool(np.all(is_representable(self.data, self.precision)))


@dataclass
class EllMatrix:
    """Sparse matrix in ELLPACK layout.

    ``values`` and ``col_index`` are ``(n_rows, row_width)`` arrays. Stored
    entries of a row are sorted by column; padding slots hold value zero and
    the row's diagonal column (its first stored column for non-square
    matrices).
    """

    values: np.ndarray
    col_index: np.ndarray
    n_cols: int
    precision: PrecisionTag = FP64
    label: str = field(default='', compare=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.col_index = np.ascontiguousarray(self.col_index, dtype=np.int32)
        self.precision = PrecisionTag.parse(self.precision)
        if self.values.shape != self.col_index.shape or self.values.ndim != 2:
            raise UsageError("values and col_index must share a 2-D shape")
        if self.col_index.size and (self.col_index.min() < 0
                                    or self.col_index.max() >= self.n_cols):
            raise UsageError("column index out of range")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def row_width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_scipy(cls, matrix, precision=FP64, row_width=None,
                   policy=DEFAULT_POLICY, label=''):
        """Convert any scipy sparse matrix; values are rounded to
        ``precision``."""
        csr = sp.csr_matrix(matrix)
        csr.sort_indices()
        n_rows, n_cols = csr.shape
        counts = np.diff(csr.indptr)
        width = int(counts.max()) if n_rows else 0
        if row_width is not None:
            if row_width < width:
                raise UsageError(f"row_width {row_width} < {width} nonzeros")
            width = row_width
        rows = np.repeat(np.arange(n_rows), counts)
        slot = np.arange(csr.nnz) - np.repeat(csr.indptr[:-1], counts)

        if n_rows == n_cols:
            pad_col = np.arange(n_rows)
        elif csr.nnz == 0:
            pad_col = np.zeros(n_rows, dtype=int)
        else:
            pad_col = np.where(counts > 0, csr.indices[
                np.minimum(csr.indptr[:-1], max(csr.nnz - 1, 0))], 0)
        cols = np.repeat(pad_col[:, None], width, axis=1)
        vals = np.zeros((n_rows, width))
        cols[rows, slot] = csr.indices
        vals[rows, slot] = csr.data
        vals = round_array(vals, precision, policy)
        return cls(vals, cols, n_cols, precision, label)

    @classmethod
    def from_dense(cls, dense, precision=FP64, policy=DEFAULT_POLICY):
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=float)),
                              precision, policy=policy)

    def to_scipy(self):
        rows = np.repeat(np.arange(self.n_rows), self.row_width)
        return sp.csr_matrix(
            (self.values.ravel(), (rows, self.col_index.ravel())),
            shape=self.shape)

    def to_dense(self):
        return self.to_scipy().toarray()

    def diagonal(self):
        mask = self.col_index == np.arange(self.n_rows)[:, None]
        return np.where(mask, self.values, 0.0).sum(axis=1)

    def astype(self, precision, policy=DEFAULT_POLICY):
        """Copy with values rounded to ``precision``."""
        precision = PrecisionTag.parse(precision)
        return EllMatrix(round_array(self.values, precision, policy),
                         self.col_index.copy(), self.n_cols, precision,
                         self.label)

    @property
    def max_abs(self):
        return float(np.abs(self.values).max()) if self.values.size else 0.0


def _charge_spmv(counter, A, x_prec, y_prec):
    if counter is None:
        return
    nnz = A.n_rows * A.row_width
    counter.add(read=nnz * (A.precision.bytes_per_value
                            + x_prec.bytes_per_value),
                written=A.n_rows * y_prec.bytes_per_value,
                flops=2 * nnz, index=nnz * INDEX_BYTES)


def _check_same(a, b, what):
    if len(a) != len(b):
        raise UsageError(f"{what}: length mismatch {len(a)} != {len(b)}")
    if a.precision is not b.precision:
        raise UsageError(f"{what}: precision mismatch "
                         f"{a.precision} != {b.precision}")


def _check_matvec(A, x, what):
    if A.n_cols != len(x):
        raise UsageError(f"{what}: matrix has {A.n_cols} columns, "
                         f"vector has {len(x)} entries")
    if A.precision is not x.precision:
        raise UsageError(f"{what}: precision mismatch "
                         f"{A.precision} != {x.precision}")


def spmv(A, x, policy=DEFAULT_POLICY, counter=None):
    """``A @ x`` in the precision shared by ``A`` and ``x``."""
    _check_matvec(A, x, 'spmv')
    p = A.precision
    y = np.empty(A.n_rows)
    _kernels.spmv(A.values, A.col_index, x.data, y, p.code,
                  policy.accumulation_code(p), policy.fused_multiply_add,
                  policy.flush_subnormals_to_zero)
    _charge_spmv(counter, A, p, p)
    return PVector(y, p)


def residual(A, u, b, policy=DEFAULT_POLICY, counter=None):
    """``b - A @ u`` rounded like ``axpy(-1, spmv(A, u), b)``."""
    _check_matvec(A, u, 'residual')
    _check_same(u, b, 'residual')
    p = A.precision
    out = np.empty(A.n_rows)
    _kernels.residual(A.values, A.col_index, u.data, b.data, out, p.code,
                      policy.accumulation_code(p), policy.fused_multiply_add,
                      policy.flush_subnormals_to_zero)
    if counter is not None:
        _charge_spmv(counter, A, p, p)
        counter.add(read=A.n_rows * p.bytes_per_value, flops=A.n_rows)
    return PVector(out, p)


def axpy(alpha, x, y, policy=DEFAULT_POLICY, counter=None):
    """``y + alpha * x``; ``alpha`` is rounded to the vectors' precision."""
    _check_same(x, y, 'axpy')
    p = x.precision
    a = float(round_array(np.array([alpha]), p, policy)[0])
    out = np.empty(len(x))
    _kernels.axpy(a, x.data, y.data, out, p.code, policy.fused_multiply_add,
                  policy.flush_subnormals_to_zero)
    if counter is not None:
        n = len(x)
        counter.add(read=2 * n * p.bytes_per_value,
                    written=n * p.bytes_per_value, flops=2 * n)
    return PVector(out, p)


def vec_multiply(a, b, policy=DEFAULT_POLICY, counter=None):
    """Entrywise product."""
    _check_same(a, b, 'vec_multiply')
    p = a.precision
    out = np.empty(len(a))
    _kernels.vec_multiply(a.data, b.data, out, p.code,
                          policy.flush_subnormals_to_zero)
    if counter is not None:
        n = len(a)
        counter.add(read=2 * n * p.bytes_per_value,
                    written=n * p.bytes_per_value, flops=n)
    return PVector(out, p)


def update_residuum_correction(r, u, A, c, alpha, counter=None):
    """Fused update ``u + alpha*c`` and ``r - alpha*A@c`` in binary64.

    ``c`` may be of any precision; it is read widened. ``r``, ``u`` and ``A``
    must be binary64.
    """
    if A.precision is not FP64 or r.precision is not FP64 \
            or u.precision is not FP64:
        raise UsageError("update_residuum_correction needs binary64 r, u, A")
    if not (A.n_rows == A.n_cols == len(r) == len(u) == len(c)):
        raise UsageError("update_residuum_correction: dimension mismatch")
    r_out = np.empty(len(r))
    u_out = np.empty(len(u))
    _kernels.update_residuum_correction(A.values, A.col_index, c.data, r.data,
                                        u.data, float(alpha), r_out, u_out)
    if counter is not None:
        n, nnz = A.n_rows, A.n_rows * A.row_width
        cb = c.precision.bytes_per_value
        counter.add(read=nnz * (8 + cb) + n * (cb + 16), written=16 * n,
                    flops=2 * nnz + 4 * n, index=nnz * INDEX_BYTES)
    return PVector(r_out), PVector(u_out)


def cast_vector(x, target, scale=1.0, policy=DEFAULT_POLICY, counter=None):
    """Round ``x / scale`` (evaluated in binary64) to ``target``."""
    scale = float(scale)
    if not np.isfinite(scale) or scale <= 0.0:
        raise UsageError(f"scale must be positive and finite, got {scale}")
    target = PrecisionTag.parse(target)
    out = np.empty(len(x))
    _kernels.cast(x.data, out, scale, target.code,
                  policy.flush_subnormals_to_zero)
    if counter is not None:
        n = len(x)
        counter.add(read=n * x.precision.bytes_per_value,
                    written=n * target.bytes_per_value,
                    flops=n if scale != 1.0 else 0)
    return PVector(out, target)


def dot(x, y, counter=None):
    """Inner product accumulated in binary64 in index order."""
    if len(x) != len(y):
        raise UsageError("dot: length mismatch")
    if counter is not None:
        counter.add(read=len(x) * (x.precision.bytes_per_value
                                   + y.precision.bytes_per_value),
                    flops=2 * len(x))
    return float(_kernels.dot(x.data, y.data))


def norm2(x, counter=None):
    """Euclidean norm accumulated in binary64."""
    if counter is not None:
        counter.add(read=len(x) * x.precision.bytes_per_value,
                    flops=2 * len(x))
    return float(np.sqrt(_kernels.dot(x.data, x.data)))


def dump_matrix(A, path):
    """Write ``A`` as text: a header line, then one line per row.

    Header: ``n_rows n_cols row_width precision``. Each row line lists
    ``col:value`` pairs with values in ``repr`` form (exact round trip).
    """
    with open(path, 'w') as fh:
        fh.write(f"{A.n_rows} {A.n_cols} {A.row_width} {A.precision.value}\n")
        for vals, cols in zip(A.values, A.col_index):
            fh.write(' '.join(f"{c}:{float(v)!r}"
                              for c, v in zip(cols, vals)))
            fh.write('\n')


def load_matrix(path):
    with open(path) as fh:
        n_rows, n_cols, width, prec = fh.readline().split()
        n_rows, n_cols, width = int(n_rows), int(n_cols), int(width)
        vals = np.zeros((n_rows, width))
        cols = np.zeros((n_rows, width), dtype=np.int32)
        for i in range(n_rows):
            for k, item in enumerate(fh.readline().split()):
                c, v = item.split(':')
                cols[i, k] = int(c)
                vals[i, k] = float(v)
    return EllMatrix(vals, cols, n_cols, PrecisionTag(prec))
