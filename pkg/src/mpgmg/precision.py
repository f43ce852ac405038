"""Floating-point formats and emulated low-precision arithmetic.

Binary16 and binary32 arithmetic is emulated on binary64 values: every
elementary operation is evaluated in binary64 and the result is rounded to
the target format (round-to-nearest, ties to even). Containers throughout the
package therefore hold ``float64`` arrays whose entries are exactly
representable in the format named by their :class:`PrecisionTag`.

The scalar helpers ``round_to`` and ``fma_to`` are numba-compiled so the
sparse kernels can inline them; they are also callable from Python.
"""
import enum
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    'PrecisionTag', 'ArithmeticPolicy', 'Fp16Value', 'DEFAULT_POLICY',
    'round_to_fp16', 'fp16_add', 'fp16_mul', 'fp16_fma', 'widen',
    'round_array', 'is_representable', 'FP16', 'FP32', 'FP64',
]

# Integer codes used inside compiled kernels.
CODE_FP16 = 0
CODE_FP32 = 1
CODE_FP64 = 2

FP16_MIN_NORMAL = 2.0**-14
FP16_MAX = 65504.0
FP32_MIN_NORMAL = 2.0**-126

_jit = {'nogil': True, 'cache': True}


class PrecisionTag(enum.Enum):
    """IEEE 754 binary format used by a container or a grid level."""

    FP16 = 'fp16'
    FP32 = 'fp32'
    FP64 = 'fp64'

    @property
    def bytes_per_value(self):
        return {'fp16': 2, 'fp32': 4, 'fp64': 8}[self.value]

    @property
    def code(self):
        return {'fp16': CODE_FP16, 'fp32': CODE_FP32,
                'fp64': CODE_FP64}[self.value]

    @property
    def dtype(self):
        return {'fp16': np.float16, 'fp32': np.float32,
                'fp64': np.float64}[self.value]

    @property
    def unit_roundoff(self):
        return {'fp16': 2.0**-11, 'fp32': 2.0**-24,
                'fp64': 2.0**-53}[self.value]

    @property
    def min_normal(self):
        return float(np.finfo(self.dtype).tiny)

    @property
    def max_finite(self):
        return float(np.finfo(self.dtype).max)

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        return cls(str(name).lower())

    def __str__(self):
        return self.name


FP16 = PrecisionTag.FP16
FP32 = PrecisionTag.FP32
FP64 = PrecisionTag.FP64


@dataclass(frozen=True)
class ArithmeticPolicy:
    """Rounding behaviour of emulated binary16/binary32 arithmetic.

    ``flush_subnormals_to_zero`` replaces subnormal binary16 and binary32
    results by a signed zero. ``fused_multiply_add`` makes ``a*b + c`` round
    once instead of twice. ``fp16_accumulation`` selects the format of the
    running sum in binary16 sparse products (``FP16`` rounds every partial
    sum, ``FP32`` keeps it in binary32 and rounds once at the end).

    Binary64 arithmetic is always native and unfused.
    """

    flush_subnormals_to_zero: bool = True
    fused_multiply_add: bool = True
    fp16_accumulation: PrecisionTag = PrecisionTag.FP16

    def __post_init__(self):
        acc = PrecisionTag.parse(self.fp16_accumulation)
        if acc not in (FP16, FP32):
            raise ValueError("fp16_accumulation must be FP16 or FP32")
        object.__setattr__(self, 'fp16_accumulation', acc)

    def accumulation_code(self, precision):
        if precision is FP16:
            return self.fp16_accumulation.code
        return precision.code


DEFAULT_POLICY = ArithmeticPolicy()


# Compiled scalar primitives

@nb.njit(inline='always', **_jit)
def round_fp16(x, ftz):
    """Round a binary64 value to the nearest binary16 value."""
    bits = np.float64(x).view(np.int64)
    ex = (bits >> 52) & 0x7FF
    if ex == 0x7FF:
        return x
    if ex == 0:
        return math.copysign(0.0, x)
    if ex >= 1023 + 16:
        return math.copysign(math.inf, x)
    # Exponent of the binary16 ulp; fixed at 2**-24 in the subnormal range.
    ue = max(ex - 1023, -14) - 10
    shifter = np.int64(((ue + 1075) << 52) | (1 << 51)).view(np.float64)
    r = (abs(x) + shifter) - shifter
    if r > FP16_MAX:
        r = math.inf
    elif ftz and r < FP16_MIN_NORMAL:
        r = 0.0
    return math.copysign(r, x)


@nb.njit(inline='always', **_jit)
def round_fp32(x, ftz):
    """Round a binary64 value to the nearest binary32 value."""
    r = np.float64(np.float32(x))
    if ftz and r != 0.0 and abs(r) < FP32_MIN_NORMAL:
        return math.copysign(0.0, x)
    return r


@nb.njit(inline='always', **_jit)
def round_to(x, code, ftz):
    if code == CODE_FP16:
        return round_fp16(x, ftz)
    if code == CODE_FP32:
        return round_fp32(x, ftz)
    return x


@nb.njit(inline='always', **_jit)
def _sum_round_to_odd(p, c):
    # p + c rounded to odd in binary64; rounding that result again to a
    # format with at most 51 significand bits equals one correct rounding.
    s = p + c
    bb = s - p
    err = (p - (s - bb)) + (c - bb)
    if err != 0.0:
        bits = np.float64(s).view(np.int64)
        if bits & 1 == 0:
            if (err > 0.0) == (s > 0.0):
                bits += 1
            else:
                bits -= 1
            s = np.int64(bits).view(np.float64)
    return s


@nb.njit(inline='always', **_jit)
def fma_to(a, b, c, code, fused, ftz):
    """``a*b + c`` in the format ``code``; operands must be representable."""
    if code == CODE_FP64:
        return a * b + c
    if not fused:
        return round_to(round_to(a * b, code, ftz) + c, code, ftz)
    # a*b is exact in binary64 for binary16/binary32 operands.
    if code == CODE_FP16:
        # With binary16 operands the binary64 sum never lands on a binary16
        # rounding boundary it did not start on, so one extra rounding is safe.
        return round_fp16(a * b + c, ftz)
    return round_fp32(_sum_round_to_odd(a * b, c), ftz)


@nb.njit(**_jit)
def _round_array(x, out, code, ftz):
    for i in range(x.size):
        out[i] = round_to(x[i], code, ftz)


def round_array(x, precision, policy=DEFAULT_POLICY):
    """Round every entry of ``x`` to ``precision``; returns a float64 copy."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _round_array(x.ravel(), out.ravel(), PrecisionTag.parse(precision).code,
                 policy.flush_subnormals_to_zero)
    return out


def is_representable(x, precision):
    """True where the entries of ``x`` are values of ``precision``."""
    x = np.asarray(x, dtype=np.float64)
    precision = PrecisionTag.parse(precision)
    with np.errstate(over='ignore'):
        back = x.astype(precision.dtype).astype(np.float64)
    return (back == x) | (np.isnan(back) & np.isnan(x))


# Scalar binary16 values

_NAN16 = 0x7E00


@dataclass(frozen=True)
class Fp16Value:
    """A binary16 number given by its 16-bit pattern."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"not a 16-bit pattern: {self.bits!r}")

    @classmethod
    def from_float(cls, x, policy=DEFAULT_POLICY):
        return round_to_fp16(x, policy)

    @classmethod
    def _from_representable(cls, value):
        if math.isnan(value):
            return cls(_NAN16)
        return cls(int(np.float16(value).view(np.uint16)))

    def __float__(self):
        return widen(self)

    @property
    def is_subnormal(self):
        return (self.bits & 0x7C00) == 0 and (self.bits & 0x03FF) != 0

    @property
    def is_nan(self):
        return (self.bits & 0x7C00) == 0x7C00 and (self.bits & 0x03FF) != 0

    def __repr__(self):
        return f"Fp16Value(0x{self.bits:04x} = {widen(self)!r})"


def round_to_fp16(x, policy=DEFAULT_POLICY):
    """Nearest binary16 to the binary64 scalar ``x`` (ties to even)."""
    r = round_fp16(float(x), policy.flush_subnormals_to_zero)
    return Fp16Value._from_representable(r)


def widen(x):
    """Exact binary64 value of a binary16 number."""
    return float(np.uint16(x.bits).view(np.float16))


def fp16_add(a, b, policy=DEFAULT_POLICY):
    return round_to_fp16(widen(a) + widen(b), policy)


def fp16_mul(a, b, policy=DEFAULT_POLICY):
    return round_to_fp16(widen(a) * widen(b), policy)


def fp16_fma(a, b, c, policy=DEFAULT_POLICY):
    """``a*b + c``; one rounding if the policy fuses, two otherwise."""
    r = fma_to(widen(a), widen(b), widen(c), CODE_FP16,
               policy.fused_multiply_add, policy.flush_subnormals_to_zero)
    return Fp16Value._from_representable(r)
