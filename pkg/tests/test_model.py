import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimodet.model import (QAM16, QAM64, QPSK, ComplexSystem, Constellation, Kind, ber,
                           bit_errors, gray_bits, noise_variance, parse_kind, quantize,
                           sample_instance, to_complex, to_real)

ALL = [QPSK, QAM16, QAM64]


@pytest.mark.parametrize("c, q, omega, energy", [
    (QPSK, 1, [0], 2.0),
    (QAM16, 3, [-2, 0, 2], 10.0),
    (QAM64, 7, [-6, -4, -2, 0, 2, 4, 6], 42.0),
])
def test_constellation_tables(c, q, omega, energy):
    assert c.q == q == c.alphabet.max()
    np.testing.assert_array_equal(c.omega, omega)
    assert c.symbol_energy == energy
    np.testing.assert_array_equal(c.alphabet, -c.alphabet[::-1])
    np.testing.assert_array_equal(np.diff(c.alphabet), 2.0)
    assert len(c.omega) == c.size - 1


def test_parse_kind_aliases():
    assert parse_kind("16-QAM") is Kind.QAM16
    assert parse_kind("qpsk") is Kind.QPSK
    assert parse_kind(2) is Kind.QAM64
    assert Constellation.from_kind("64QAM") == QAM64
    with pytest.raises(ValueError):
        parse_kind("8PSK")


def test_to_real_identity_channel():
    real = to_real(ComplexSystem(np.array([[1 + 0j]]), np.array([1 + 1j]), np.zeros(1),
                                 np.array([1 + 1j])))
    np.testing.assert_array_equal(real.H, np.eye(2))
    np.testing.assert_array_equal(real.y, [1, 1])


def test_to_real_rotation():
    H = np.array([[1j]])
    s = np.array([1 + 0j])
    real = to_real(ComplexSystem(H, s, np.zeros(1), H @ s))
    np.testing.assert_array_equal(real.y, [0, 1])
    np.testing.assert_array_equal(real.H @ real.s_true, [0, 1])


def test_to_real_matches_complex_product(rng):
    H = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    s = rng.choice([-1, 1], 2) + 1j * rng.choice([-1, 1], 2)
    real = to_real(ComplexSystem(H, s, np.zeros(2), H @ s))
    assert real.H.shape == (4, 4)
    prod = H @ s
    np.testing.assert_allclose(real.H @ real.s_true, np.concatenate([prod.real, prod.imag]),
                               atol=1e-14)


def test_round_trip_to_complex(rng):
    sys = sample_instance(3, 5, QAM16, 7.0, 5)
    back = to_complex(sys)
    again = to_real(back, QAM16, sys.noise_var)
    np.testing.assert_array_equal(again.H, sys.H)
    np.testing.assert_allclose(again.y, sys.y, atol=1e-14)
    np.testing.assert_array_equal(again.s_true, sys.s_true)


def test_noiseless_instance():
    sys = sample_instance(4, 4, QPSK, np.inf, 0)
    assert sys.noise_var == 0.0
    np.testing.assert_array_equal(sys.y, sys.H @ sys.s_true)


def test_noise_variance_unit_energy():
    # 16 / 10**1.2
    value = noise_variance(16, 12.0, 1.0)
    assert value == pytest.approx(1.0095317511683093, rel=1e-12)
    assert value == pytest.approx(1.00949, rel=1e-4)


def test_noise_variance_uses_alphabet_energy():
    sys = sample_instance(16, 16, QPSK, 12.0, 0)
    assert sys.noise_var == pytest.approx(2 * 1.0095317511683093, rel=1e-12)


def test_sample_instance_deterministic():
    a = sample_instance(4, 6, QAM64, 3.0, 99)
    b = sample_instance(4, 6, QAM64, 3.0, 99)
    np.testing.assert_array_equal(a.H, b.H)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.s_true, b.s_true)


def test_sample_instance_rejects_wide_system():
    with pytest.raises(ValueError):
        sample_instance(4, 3, QPSK, 10.0, 0)


def test_channel_and_noise_statistics():
    sys = sample_instance(1, 100_000, QPSK, 5.0, 3)
    back = to_complex(sys)
    assert 0.97 <= np.mean(np.abs(back.H) ** 2) <= 1.03
    assert np.mean(np.abs(back.n) ** 2) == pytest.approx(sys.noise_var, rel=0.03)
    assert set(np.unique(sys.s_true)) <= {-1.0, 1.0}


@pytest.mark.parametrize("c, v, expected", [
    (QPSK, 0.3, 1.0),
    (QAM16, 1.7, 1.0),
    (QPSK, 0.0, -1.0),
    (QAM16, 2.0, 1.0),
    (QAM16, -2.0, -1.0),
    (QAM64, 100.0, 7.0),
    (QAM64, -6.2, -7.0),
])
def test_quantize_examples(c, v, expected):
    assert quantize(np.array([v]), c)[0] == expected


@given(st.lists(st.floats(-20, 20, allow_nan=False), min_size=1, max_size=16),
       st.sampled_from(ALL))
def test_quantize_nearest_and_idempotent(values, c):
    v = np.array(values)
    out = quantize(v, c)
    np.testing.assert_array_equal(quantize(out, c), out)
    dist = np.abs(v[:, None] - c.alphabet[None, :])
    np.testing.assert_allclose(np.abs(out - v), dist.min(axis=1), atol=1e-12)


@pytest.mark.parametrize("c", ALL)
def test_gray_neighbours_differ_in_one_bit(c):
    table = gray_bits(c)
    assert len({tuple(r) for r in table}) == c.size
    assert np.all(np.sum(table[1:] != table[:-1], axis=1) == 1)


def test_ber_examples():
    s = np.ones(32)
    assert ber(s, s) == 0.0
    d = s.copy()
    d[5] = -1
    assert ber(d, s, QPSK) == 1 / 32
    assert bit_errors(np.array([-1.0]), np.array([-3.0]), QAM16) == (1, 2)


def test_ber_length_mismatch():
    with pytest.raises(ValueError):
        bit_errors(np.ones(3), np.ones(4))
