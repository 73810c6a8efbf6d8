"""Bit-exact bfloat16 rounding and the quantization-step model.

BF16 keeps the float32 exponent (8 bits, bias 127) and a 7-bit fraction, so
every normalized value carries 8 significant bits. Rounding here goes
straight from float64 to the 8-bit significand with round-half-to-even; it
never passes through float32, which would double-round.

Subnormals, infinities and NaN are outside the supported domain and raise
:class:`~geoflow.errors.DomainError`. Zero is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

BIAS = 127
FRACTION_BITS = 7
MIN_NORMAL = 2.0**-126
# 0x7F7F: exponent 254, fraction 127
MAX_FINITE = (2.0 - 2.0**-7) * 2.0**127


@dataclass(frozen=True)
class Bf16Value:
    sign_bit: int
    exponent: int
    fraction: int

    def __post_init__(self):
        if self.sign_bit not in (0, 1):
            raise ValueError(f"sign_bit must be 0 or 1, got {self.sign_bit}")
        if not 0 <= self.exponent <= 255:
            raise ValueError(f"exponent out of 8-bit range: {self.exponent}")
        if not 0 <= self.fraction < 2**FRACTION_BITS:
            raise ValueError(f"fraction out of 7-bit range: {self.fraction}")

    @property
    def bits(self) -> int:
        return (self.sign_bit << 15) | (self.exponent << 7) | self.fraction

    @classmethod
    def from_bits(cls, bits: int) -> Bf16Value:
        bits = int(bits)
        if not 0 <= bits < 2**16:
            raise ValueError(f"not a 16-bit pattern: {bits}")
        return cls((bits >> 15) & 1, (bits >> 7) & 0xFF, bits & 0x7F)

    @property
    def is_normal(self) -> bool:
        return 1 <= self.exponent <= 254

    def decode(self) -> float:
        """(-1)^S * 2^(E-127) * (1.F)_2 for normal values; exact in float64."""
        sign = -1.0 if self.sign_bit else 1.0
        if self.exponent == 0:
            if self.fraction == 0:
                return sign * 0.0
            raise DomainError("subnormal BF16 encodings are not modeled")
        if self.exponent == 255:
            raise DomainError("infinity/NaN BF16 encodings are not modeled")
        mantissa = 1.0 + self.fraction / 2**FRACTION_BITS
        return sign * float(np.ldexp(mantissa, self.exponent - BIAS))


@dataclass(frozen=True)
class StepModel:
    """Quantization step ``delta_v`` in the normalized [-1, 1] label space.

    The default, 1/256, is the full BF16 grid spacing in the worst binade
    [0.5, 1). Round-to-nearest conversion actually errs by at most half of
    that; :meth:`round_to_nearest` gives the tighter model.
    """

    delta_v: float = 1.0 / 256

    def __post_init__(self):
        if not (0.0 < self.delta_v <= 2.0**-FRACTION_BITS):
            raise ValueError(f"delta_v must be in (0, 2^-7], got {self.delta_v}")

    @classmethod
    def spacing(cls) -> StepModel:
        return cls(1.0 / 256)

    @classmethod
    def round_to_nearest(cls) -> StepModel:
        return cls(1.0 / 512)


def _check_domain(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError("BF16 rounding requires finite input")
    ax = np.abs(x)
    if np.any((ax > 0) & (ax < MIN_NORMAL)):
        raise DomainError("subnormal magnitudes are outside the modeled BF16 range")


def bf16_round(x) -> np.ndarray:
    """Round float64 values to the nearest BF16 value (ties to even), returned as float64.

    Works on scalars and arrays; the result is always an ndarray.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_domain(x)
    m, e = np.frexp(x)  # x = m * 2**e, 0.5 <= |m| < 1
    # m * 256 has 8 integer bits; np.rint rounds half to even.
    r = np.ldexp(np.rint(m * 2.0 ** (FRACTION_BITS + 1)), e - (FRACTION_BITS + 1))
    if np.any(np.abs(r) > MAX_FINITE):
        raise DomainError("value overflows the BF16 range")
    return r


def round_to_bf16(x: float) -> Bf16Value:
    """Nearest BF16 encoding of a finite scalar (round-half-to-even)."""
    r = float(bf16_round(float(x)))
    sign = 1 if np.signbit(r) else 0
    if r == 0.0:
        return Bf16Value(sign, 0, 0)
    m, e = np.frexp(abs(r))
    # |r| = (2m) * 2^(e-1), 2m in [1, 2)
    fraction = int(round((2.0 * m - 1.0) * 2**FRACTION_BITS))
    return Bf16Value(sign, int(e) - 1 + BIAS, fraction)


def decode(value: Bf16Value) -> float:
    return value.decode()


def ulp_at(x) -> np.ndarray | float:
    """BF16 grid spacing in the binade containing ``x``: 2^(floor(log2|x|) - 7)."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("ulp_at requires finite input")
    if np.any(np.abs(arr) < MIN_NORMAL):
        raise DomainError("ulp_at is defined only on normalized magnitudes")
    _, e = np.frexp(arr)
    out = np.ldexp(1.0, e - 1 - FRACTION_BITS)
    return float(out) if out.ndim == 0 else out


def measured_roundtrip_error(x) -> np.ndarray | float:
    """|x - bf16(x)| for |x| <= 1."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0):
        raise DomainError("measured_roundtrip_error expects |x| <= 1")
    out = np.abs(arr - bf16_round(arr))
    return float(out) if out.ndim == 0 else out
