import numpy as np
import pytest

from ctcpsim.gf256 import (
    INV,
    MUL,
    as_vector,
    combine,
    gf_inv,
    gf_mul,
    peasant_mul,
)


def test_known_products():
    assert gf_mul(0x53, 0xCA) == 0x01
    assert gf_mul(0x02, 0x80) == 0x1B
    assert gf_mul(0x57, 0x83) == 0xC1


def test_table_matches_peasant_multiply():
    for a in range(256):
        for b in range(256):
            assert MUL[a, b] == peasant_mul(a, b)


def test_inverse():
    for a in range(1, 256):
        assert gf_mul(a, gf_inv(a)) == 1
        assert INV[a] == gf_inv(a)
    assert gf_inv(1) == 1
    with pytest.raises(ZeroDivisionError):
        gf_inv(0)


def test_field_axioms_sampled():
    rng = np.random.default_rng(0)
    a, b, c = (rng.integers(0, 256, 5000) for _ in range(3))
    assert (MUL[a, b] == MUL[b, a]).all()
    assert (MUL[a, MUL[b, c]] == MUL[MUL[a, b], c]).all()
    assert (MUL[a, b ^ c] == MUL[a, b] ^ MUL[a, c]).all()
    assert (MUL[a, 1] == a).all()
    assert (MUL[a, 0] == 0).all()


def test_as_vector():
    assert as_vector(b"\x01\x02").tolist() == [1, 2]
    assert as_vector([3, 255]).dtype == np.uint8
    x = np.array([7], dtype=np.uint8)
    assert as_vector(x) is x


def test_combine():
    rows = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint8)
    out = combine([1, 0], rows)
    assert out.tolist() == [1, 2, 3]
    out = combine([3, 7], rows)
    expected = [gf_mul(3, a) ^ gf_mul(7, b) for a, b in zip(rows[0], rows[1])]
    assert out.tolist() == expected
    # a row added to itself cancels
    assert combine([5, 5], np.stack([rows[0], rows[0]])).tolist() == [0, 0, 0]
    assert combine([1, 1], np.zeros((2, 0), dtype=np.uint8)).size == 0
    with pytest.raises(ValueError):
        combine([1, 2, 3], rows)
