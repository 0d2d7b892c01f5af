"""
Arithmetic in the finite field GF(2^8).

Elements are bytes. Addition is XOR; multiplication is polynomial
multiplication reduced by the irreducible polynomial
x^8 + x^4 + x^3 + x + 1 (``0x11B``).

Products are looked up in a 256 x 256 table that is built once at import
from log/antilog tables over the generator ``0x03``. The tables are an
internal detail; ``peasant_mul`` is the bit-by-bit reference they are
checked against.

Rows are ``numpy`` arrays of ``uint8``::

    payload = combine(coefficients, rows)    # sum of coefficients[j] * rows[j]
"""
from typing import Sequence, Union

import numpy as np

POLYNOMIAL = 0x11B
# 0x02 is not a generator of the multiplicative group under 0x11B.
GENERATOR = 0x03
ORDER = 256

ByteVector = Union[np.ndarray, bytes, bytearray, Sequence[int]]


def peasant_mul(a: int, b: int, poly: int = POLYNOMIAL) -> int:
    """
    Shift-and-XOR multiply, reduced by ``poly``.
    Slow; used to build and to cross-check the lookup tables.
    """
    result = 0
    while b:
        if b & 1:
            result ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= poly
    return result & 0xFF


def _build_tables():
    exp = np.zeros(510, dtype=np.uint8)
    log = np.zeros(ORDER, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = peasant_mul(x, GENERATOR)
    if x != 1:
        raise RuntimeError(f"{GENERATOR:#x} does not generate GF(256) under {POLYNOMIAL:#x}")
    exp[255:] = exp[:255]

    mul = exp[log[:, None] + log[None, :]]
    mul[0, :] = 0
    mul[:, 0] = 0

    inv = np.zeros(ORDER, dtype=np.uint8)
    inv[1:] = exp[(255 - log[1:]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _build_tables()


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(256)")
    return int(INV[a])


def as_vector(x: ByteVector) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.uint8, copy=False)
    if isinstance(x, (bytes, bytearray)):
        return np.frombuffer(bytes(x), dtype=np.uint8)
    return np.asarray(x, dtype=np.uint8)


def combine(coefficients: ByteVector, rows: np.ndarray) -> np.ndarray:
    """
    Linear combination ``sum_j coefficients[j] * rows[j]``.

    ``rows`` is a 2-d ``uint8`` array with one row per coefficient.
    """
    coefficients = as_vector(coefficients)
    if rows.ndim != 2 or rows.shape[0] != coefficients.size:
        raise ValueError(
            f"need {coefficients.size} rows, got array of shape {rows.shape}"
        )
    if rows.shape[1] == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.bitwise_xor.reduce(MUL[coefficients[:, None], rows], axis=0)
