import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wickgibbs import torus
from wickgibbs.errors import AliasingError, RangeError
from wickgibbs.torus import SpectralField


def test_lattice_counts_and_order():
    assert len(torus.lattice(0)) == 1
    assert len(torus.lattice(1)) == 5
    assert len(torus.lattice(2)) == 13
    m = torus.lattice(5)
    assert np.all(np.lexsort((m[:, 1], m[:, 0])) == np.arange(len(m)))
    with pytest.raises(RangeError):
        torus.lattice(-1)


def test_sigma_n_direct_sum():
    for N in (0, 1, 3, 7):
        ref = sum(1.0 / (1 + a * a + b * b) for a in range(-N, N + 1) for b in range(-N, N + 1) if a * a + b * b <= N * N)
        assert torus.sigma_n(N) == pytest.approx(ref, rel=1e-14)


def test_sigma_grows_like_2pi_log():
    r = [torus.sigma_n(N) / np.log(N) for N in (256, 512)]
    assert 5.5 < r[0] < 7.0 and 5.5 < r[1] < 7.0


def test_sampling_is_deterministic_and_batch_invariant():
    a = torus.sample_gff(7, 4, 5)
    b = torus.sample_gff(7, 4, 2, start=3)
    c = torus.sample_gff(7, 4, start=4)
    assert np.array_equal(a.coeffs[3:], b.coeffs)
    assert np.array_equal(a.coeffs[4], c.coeffs)
    assert not np.array_equal(a.coeffs, torus.sample_gff(8, 4, 5).coeffs)


def test_prefix_property_across_cutoffs():
    small = torus.sample_gff(3, 4, 6)
    big = torus.sample_gff(3, 9, 6)
    assert np.array_equal(torus.restrict(big.coeffs, 9, 4), small.coeffs)


def test_gff_second_moments():
    f = torus.sample_gff(11, 3, 20000)
    emp = np.mean(np.abs(f.coeffs) ** 2, axis=0)
    want = 1 / torus.bracket_sq(3)
    se = np.std(np.abs(f.coeffs) ** 2, axis=0) / np.sqrt(20000)
    assert np.all(np.abs(emp - want) < 4 * se)
    # real/imag parts independent with variance 1/2 each
    g = torus.sample_noise(11, 2, 20000).gaussians
    assert abs(np.mean(g.real**2) - 0.5) < 0.02
    assert abs(np.mean(g.real * g.imag)) < 0.02


def test_restrict_extend_roundtrip():
    f = torus.sample_gff(1, 3)
    e = torus.extend(f.coeffs, 3, 6)
    assert np.array_equal(torus.restrict(e, 6, 3), f.coeffs)
    with pytest.raises(RangeError):
        torus.restrict(f.coeffs, 3, 5)


def test_physical_spectral_roundtrip():
    f = torus.sample_gff(5, 6, 3)
    for G in (13, 16, 30):
        back = torus.to_spectral(torus.to_physical(f, G), 6)
        assert np.allclose(back.coeffs, f.coeffs, atol=1e-12)
    with pytest.raises(AliasingError):
        torus.to_physical(f, 12)


def test_to_physical_single_mode_orientation():
    f = SpectralField.from_modes(2, {(1, 0): 1.0})
    v = torus.to_physical(f, 8)
    x = 2 * np.pi * np.arange(8) / 8
    assert np.allclose(v, np.exp(1j * x)[:, None] * np.ones(8)[None, :])


def test_parseval_and_mass():
    f = torus.sample_gff(2, 5)
    v = torus.to_physical(f, 16)
    assert torus.grid_mean(np.abs(v) ** 2) == pytest.approx(f.mass(), rel=1e-12)
    assert torus.inner(f, f).real == pytest.approx(f.mass())


def test_gamma_kernel_diagonal_is_sigma():
    k = torus.gamma_kernel(2, 6)
    assert torus.gamma_eval(k, np.zeros(2)).real == pytest.approx(torus.sigma_n(6))
    x = np.array([0.4, -1.1])
    # gamma(x - y) = E[u(x) conj u(y)]
    f = torus.sample_gff(4, 6, 40000)
    ux = f.coeffs @ np.exp(1j * torus.lattice(6) @ x)
    u0 = f.coeffs.sum(axis=1)
    emp = np.mean(ux * np.conj(u0))
    assert abs(emp - torus.gamma_eval(k, x)) < 5 * np.std(ux * np.conj(u0)) / np.sqrt(40000)


def test_eta_is_unit_and_represents_field():
    x = np.array([1.0, 2.0])
    eta = torus.eta_n(x, 5)
    assert torus.inner(eta, eta).real == pytest.approx(1.0)
    noise = torus.sample_noise(3, 5)
    u = torus.gff_from_noise(noise)
    ux = np.sum(u.coeffs * np.exp(1j * torus.lattice(5) @ x))
    # u_N(x) = sigma_N^{1/2} conj(W_eta)
    w = torus.white_noise_functional(eta, noise)
    assert np.conj(w) * np.sqrt(torus.sigma_n(5)) == pytest.approx(ux)


def test_white_noise_covariance_is_inner_product():
    noise = torus.sample_noise(9, 2, 50000)
    f = SpectralField.from_modes(2, {(0, 0): 0.6, (1, 0): 0.8})
    h = SpectralField.from_modes(2, {(0, 0): 0.6j, (0, 1): 0.8})
    wf = torus.white_noise_functional(f, noise)
    wh = torus.white_noise_functional(h, noise)
    emp = np.mean(wf * np.conj(wh))
    assert abs(emp - torus.inner(f, h)) < 0.02


def test_white_noise_rejects_outside_support():
    noise = torus.sample_noise(1, 1)
    f = SpectralField.from_modes(3, {(2, 2): 1.0})
    with pytest.raises(RangeError):
        torus.white_noise_functional(f, noise)


@given(st.integers(0, 6), st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_serialization_roundtrip(N, seed):
    f = torus.sample_gff(seed, N)
    assert np.array_equal(SpectralField.from_bytes(f.to_bytes()).coeffs, f.coeffs)
    g = SpectralField.from_json(f.to_json())
    assert np.array_equal(g.coeffs, f.coeffs)


def test_bytes_layout():
    f = SpectralField.from_modes(1, {(0, 1): 2 + 3j})
    data = f.to_bytes()
    assert data[:4] == b"WGF1"
    assert len(data) == 12 + 5 * 24
    with pytest.raises(ValueError):
        SpectralField.from_bytes(b"XXXX" + data[4:])


def test_field_shape_checked():
    with pytest.raises(RangeError):
        SpectralField(2, np.zeros(7))
    with pytest.raises(RangeError):
        SpectralField.from_modes(1, {(1, 1): 1.0})
