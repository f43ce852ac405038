"""Compiled loops behind :mod:`mpgmg.sparse` and :mod:`mpgmg.multigrid`.

Every kernel takes the integer precision code of its output and rounds each
elementary operation through :func:`mpgmg.precision.round_to` /
:func:`mpgmg.precision.fma_to`. Reductions run in a fixed order, so results
are bitwise reproducible.
"""
import numba as nb

from mpgmg.precision import fma_to, round_to

_jit = {'nogil': True, 'cache': True}


@nb.njit(inline='always', **_jit)
def _row_dot(vals, cols, x, i, acc_code, fused, ftz):
    acc = 0.0
    for k in range(vals.shape[1]):
        acc = fma_to(vals[i, k], x[cols[i, k]], acc, acc_code, fused, ftz)
    return acc


@nb.njit(**_jit)
def spmv(vals, cols, x, y, code, acc_code, fused, ftz):
    for i in range(vals.shape[0]):
        acc = _row_dot(vals, cols, x, i, acc_code, fused, ftz)
        y[i] = round_to(acc, code, ftz)


@nb.njit(**_jit)
def residual(vals, cols, u, b, out, code, acc_code, fused, ftz):
    # out = b - A u, i.e. axpy(-1, A u, b)
    for i in range(vals.shape[0]):
        s = round_to(_row_dot(vals, cols, u, i, acc_code, fused, ftz),
                     code, ftz)
        out[i] = round_to(b[i] - s, code, ftz)


@nb.njit(**_jit)
def axpy(alpha, x, y, out, code, fused, ftz):
    for i in range(x.size):
        out[i] = fma_to(alpha, x[i], y[i], code, fused, ftz)


@nb.njit(**_jit)
def vec_multiply(a, b, out, code, ftz):
    for i in range(a.size):
        out[i] = round_to(a[i] * b[i], code, ftz)


@nb.njit(**_jit)
def cast(x, out, scale, code, ftz):
    for i in range(x.size):
        out[i] = round_to(x[i] / scale, code, ftz)


@nb.njit(**_jit)
def dot(x, y):
    s = 0.0
    for i in range(x.size):
        s += x[i] * y[i]
    return s


@nb.njit(**_jit)
def update_residuum_correction(vals, cols, c, r, u, alpha, r_out, u_out):
    # binary64 only: u' = u + alpha c, r' = r - alpha A c
    neg = -alpha
    for i in range(vals.shape[0]):
        s = 0.0
        for k in range(vals.shape[1]):
            s = vals[i, k] * c[cols[i, k]] + s
        r_out[i] = neg * s + r[i]
        u_out[i] = alpha * c[i] + u[i]


@nb.njit(**_jit)
def jacobi_sweep(vals, cols, u, b, inv_diag, omega, out, code, acc_code,
                 fused, ftz):
    # out = u + omega * inv_diag * (b - A u), composed of the same roundings
    # as spmv, axpy(-1), vec_multiply and axpy(omega).
    for i in range(vals.shape[0]):
        s = round_to(_row_dot(vals, cols, u, i, acc_code, fused, ftz),
                     code, ftz)
        r = round_to(b[i] - s, code, ftz)
        d = round_to(inv_diag[i] * r, code, ftz)
        out[i] = fma_to(omega, d, u[i], code, fused, ftz)


@nb.njit(**_jit)
def prolongate_add(vals, cols, c, u, scale, out, coarse_code, acc_code,
                   fine_code, fused, ftz):
    # out = u + cast_fine(scale * (P c)), P c evaluated in the coarse format
    for i in range(vals.shape[0]):
        y = round_to(_row_dot(vals, cols, c, i, acc_code, fused, ftz),
                     coarse_code, ftz)
        t = round_to(y * scale, fine_code, ftz)
        out[i] = round_to(u[i] + t, fine_code, ftz)
