"""Causal space-time mollifier: kernels, convolutions, consistency."""
import numpy as np
import pytest
from scipy.integrate import quad

from incplast.mollify import (
    HistoryTooShortError,
    Kernels,
    delta_density,
    exponential_time_samples,
    mollified_gradient,
    space_convolve,
    time_convolve_discrete,
    truncated_gaussian_density,
)


def _delta_kernels(cell_volume=1.0, nkappa=8, tau=0.1, lam=2.0):
    return Kernels(
        exponential_time_samples(lam, tau, nkappa), delta_density(cell_volume), cell_volume
    )


def test_exponential_samples():
    lam, tau, n = 2.0, 0.25, 6
    k = exponential_time_samples(lam, tau, n)
    assert k.shape == (7,)
    assert np.array_equal(k, lam * np.exp(-lam * tau * np.arange(7)))
    with pytest.raises(ValueError):
        exponential_time_samples(0.0, tau, n)
    with pytest.raises(ValueError):
        exponential_time_samples(lam, -0.1, n)


def test_gaussian_density_normalized_and_truncated():
    for h, radius in ((0.5, 1.0), (0.25, 0.5), (0.1, 0.35)):
        phi = truncated_gaussian_density((h, h, h), radius)
        assert all(m % 2 == 1 for m in phi.shape)
        assert np.all(phi >= 0.0)
        assert abs(phi.sum() * h**3 - 1.0) <= 1e-12
    # cubic radius-2 stencil: the corner sits at distance 2h*sqrt(3) > radius
    phi = truncated_gaussian_density((0.5, 0.5, 0.5), 1.0)
    assert phi.shape == (5, 5, 5)
    assert phi[0, 0, 0] == 0.0
    assert phi[2, 2, 2] > 0.0


def test_kernels_validation():
    ok_phi = delta_density(1.0)
    with pytest.raises(ValueError):
        Kernels(np.array([1.0, -0.5]), ok_phi, 1.0)
    with pytest.raises(ValueError):
        Kernels(np.ones(3), 2.0 * ok_phi, 1.0)  # mass 2, not normalized
    with pytest.raises(ValueError):
        Kernels(np.ones(3), np.full((2, 1, 1), 0.5), 1.0)  # even extent
    with pytest.raises(ValueError):
        Kernels(np.ones(3), ok_phi, -1.0)


def test_presets():
    k = Kernels.presets(decay_rate=2.0, tau=0.1, nsteps=10, cell_sizes=(0.25, 0.25, 0.25))
    assert k.time_preset == "exponential"
    assert k.space_preset == "gaussian"
    assert k.stencil_radius == (2, 2, 2)
    assert k.kappa.shape == (11,)
    local = Kernels.presets(2.0, 0.1, 10, (0.25, 0.25, 0.25), radius_cells=0)
    assert local.space_preset == "delta"
    assert local.stencil_radius == (0, 0, 0)


def test_delta_stencil_is_identity():
    rng = np.random.default_rng(80)
    field = rng.standard_normal((5, 4, 3, 3, 3))
    out = space_convolve(field, _delta_kernels(cell_volume=0.125))
    np.testing.assert_allclose(out, field, rtol=0, atol=1e-14)


def test_constant_field_interior_exact_boundary_attenuated():
    n, h = 6, 0.5
    kern = Kernels.presets(1.0, 0.1, 4, (h, h, h))
    const = np.arange(9.0).reshape(3, 3) + 1.0
    field = np.broadcast_to(const, (n, n, n, 3, 3)).copy()
    out = space_convolve(field, kern)
    for c in ((2, 2, 2), (3, 2, 3), (2, 3, 3)):
        np.testing.assert_allclose(out[c], const, rtol=1e-12)
    # corner keeps only the stencil mass that falls inside the box
    r = kern.stencil_radius[0]
    inside = kern.phi[r:, r:, r:].sum() * kern.cell_volume
    assert inside < 1.0
    np.testing.assert_allclose(out[0, 0, 0], inside * const, rtol=1e-12)


def test_space_convolve_linearity():
    rng = np.random.default_rng(81)
    kern = Kernels.presets(1.0, 0.1, 4, (0.25, 0.25, 0.25))
    f = rng.standard_normal((5, 5, 5, 3, 3))
    g = rng.standard_normal((5, 5, 5, 3, 3))
    lhs = space_convolve(1.7 * f - 0.4 * g, kern)
    rhs = 1.7 * space_convolve(f, kern) - 0.4 * space_convolve(g, kern)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_space_convolve_guards():
    kern = Kernels.presets(1.0, 0.1, 4, (0.25, 0.25, 0.25))
    with pytest.raises(ValueError):
        space_convolve(np.zeros((4, 4, 4, 3)), kern)
    with pytest.raises(ValueError):
        space_convolve(np.zeros((1, 1, 1, 3, 3)), kern)  # stencil wider than grid


def test_time_convolution_values():
    tau = 0.3
    kern = Kernels(np.ones(9), delta_density(1.0), 1.0)
    ones = [np.array(1.0)] * 9
    assert time_convolve_discrete(ones, 0, tau, kern) == 0.0
    for i in (1, 2, 5):
        assert time_convolve_discrete(ones, i, tau, kern) == pytest.approx((i + 1) * tau)
    rng = np.random.default_rng(82)
    kern2 = Kernels(rng.uniform(0.1, 1.0, size=6), delta_density(1.0), 1.0)
    hist = [rng.standard_normal((2, 3, 3)) for _ in range(6)]
    i = 4
    manual = sum(tau * kern2.kappa[j] * hist[i - j] for j in range(i + 1))
    np.testing.assert_allclose(time_convolve_discrete(hist, i, tau, kern2), manual, atol=1e-14)


def test_time_convolution_causality_mutation():
    rng = np.random.default_rng(83)
    kern = Kernels(rng.uniform(0.1, 1.0, size=8), delta_density(1.0), 1.0)
    hist = [rng.standard_normal((4, 3, 3)) for _ in range(8)]
    before = time_convolve_discrete(hist, 4, 0.2, kern)
    for k in (5, 6, 7):
        hist[k] = hist[k] + 1e3 * rng.standard_normal((4, 3, 3))
    after = time_convolve_discrete(hist, 4, 0.2, kern)
    assert np.array_equal(before, after)


def test_time_convolution_guards():
    kern = Kernels(np.ones(3), delta_density(1.0), 1.0)
    hist = [np.array(1.0)] * 3
    with pytest.raises(HistoryTooShortError):
        time_convolve_discrete([], 0, 0.1, kern)
    with pytest.raises(HistoryTooShortError):
        time_convolve_discrete(hist[:2], 2, 0.1, kern)
    with pytest.raises(ValueError):
        time_convolve_discrete([np.array(1.0)] * 4, 3, 0.1, kern)  # kernel too short
    with pytest.raises(ValueError):
        time_convolve_discrete(hist, -1, 0.1, kern)
    with pytest.raises(ValueError):
        time_convolve_discrete(hist, 1, 0.0, kern)


def test_time_convolution_linearity():
    rng = np.random.default_rng(84)
    kern = Kernels(rng.uniform(0.1, 1.0, size=6), delta_density(1.0), 1.0)
    h1 = [rng.standard_normal((3, 3)) for _ in range(6)]
    h2 = [rng.standard_normal((3, 3)) for _ in range(6)]
    mixed = [0.6 * a + 2.5 * b for a, b in zip(h1, h2)]
    lhs = time_convolve_discrete(mixed, 5, 0.2, kern)
    rhs = 0.6 * time_convolve_discrete(h1, 5, 0.2, kern) + 2.5 * time_convolve_discrete(
        h2, 5, 0.2, kern
    )
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_space_time_commutation():
    rng = np.random.default_rng(85)
    kern = Kernels.presets(2.0, 0.1, 6, (0.25, 0.25, 0.25))
    hist = [rng.standard_normal((4, 4, 4, 3, 3)) for _ in range(5)]
    time_then_space = space_convolve(time_convolve_discrete(hist, 4, 0.1, kern), kern)
    space_then_time = time_convolve_discrete(
        [space_convolve(w, kern) for w in hist], 4, 0.1, kern
    )
    np.testing.assert_allclose(time_then_space, space_then_time, atol=1e-13)


def test_mollified_gradient_step_one_is_zero():
    rng = np.random.default_rng(86)
    kern = Kernels.presets(2.0, 0.1, 6, (0.25, 0.25, 0.25))
    hist = [rng.standard_normal((4, 4, 4, 3, 3))]
    out = mollified_gradient(hist, 1, 0.1, kern)
    assert np.array_equal(out, np.zeros_like(hist[0]))


def test_mollified_gradient_index_shift():
    # step i consumes the convolution at index i-1: with a delta space stencil
    # and history w_0..w_{i-1}, step 3 sees tau*(k0*w2 + k1*w1 + k2*w0)
    rng = np.random.default_rng(87)
    tau = 0.2
    kern = _delta_kernels(cell_volume=1.0, nkappa=6, tau=tau, lam=1.5)
    hist = [rng.standard_normal((2, 2, 2, 3, 3)) for _ in range(3)]
    out = mollified_gradient(hist, 3, tau, kern)
    k = kern.kappa
    manual = tau * (k[0] * hist[2] + k[1] * hist[1] + k[2] * hist[0])
    np.testing.assert_allclose(out, manual, atol=1e-14)


def test_mollified_gradient_zero_history_and_guards():
    kern = Kernels.presets(2.0, 0.1, 6, (0.25, 0.25, 0.25))
    zeros = [np.zeros((4, 4, 4, 3, 3))] * 4
    assert np.array_equal(mollified_gradient(zeros, 4, 0.1, kern), zeros[0])
    with pytest.raises(HistoryTooShortError):
        mollified_gradient(zeros[:2], 3, 0.1, kern)
    with pytest.raises(ValueError):
        mollified_gradient(zeros, 0, 0.1, kern)


def test_time_discretization_error_halves():
    # smooth scalar probe against an adaptive-quadrature reference: the
    # endpoint-sampled sum has a first-order error, so halving tau halves it
    lam, horizon = 2.0, 1.0
    probe = lambda t: 1.2 + np.sin(1.5 * t)
    ref, _ = quad(
        lambda s: lam * np.exp(-lam * s) * probe(horizon - s), 0.0, horizon, epsabs=1e-13
    )
    errs = []
    for n in (10, 20, 40):
        tau = horizon / n
        kern = Kernels(exponential_time_samples(lam, tau, n), delta_density(1.0), 1.0)
        hist = [np.array(probe(j * tau)) for j in range(n + 1)]
        errs.append(abs(float(time_convolve_discrete(hist, n, tau, kern)) - ref))
    for coarse, fine in zip(errs, errs[1:]):
        assert 0.4 <= fine / coarse <= 0.6


def test_space_discretization_consistency():
    # fixed physical kernel, halving cells; for a quadratic field the interior
    # convolution is F(x) + tr(C) * (second moment), exactly, because odd
    # stencil moments vanish by mirror symmetry -- so the error against the
    # continuous kernel is |tr C| times the second-moment gap
    radius, sigma = 0.25, 0.125
    num, _ = quad(lambda r: r**4 * np.exp(-r * r / (2 * sigma**2)), 0, radius, epsabs=1e-14)
    den, _ = quad(lambda r: r**2 * np.exp(-r * r / (2 * sigma**2)), 0, radius, epsabs=1e-14)
    m2_cont = num / den / 3.0

    rng = np.random.default_rng(88)
    cmat = rng.standard_normal((3, 3))
    field_errs, moment_errs = [], []
    for n in (8, 16):
        h = 1.0 / n
        phi = truncated_gaussian_density((h, h, h), radius, sigma)
        kern = Kernels(np.ones(2), phi, h**3)
        cs = (np.arange(n) + 0.5) * h
        x2 = cs[:, None, None] ** 2 + cs[None, :, None] ** 2 + cs[None, None, :] ** 2
        field = x2[..., None, None] * cmat[None, None, None]
        out = space_convolve(field, kern)
        r = kern.stencil_radius[0]
        mid = n // 2
        exact = (x2[mid, mid, mid] + 3.0 * m2_cont) * cmat
        field_errs.append(np.abs(out[mid, mid, mid] - exact).max())
        # interior affine exactness: odd moments vanish
        lin = cs[:, None, None, None, None] * np.ones((n, n, n, 3, 3))
        lin_out = space_convolve(lin, kern)
        np.testing.assert_allclose(lin_out[mid, mid, mid], lin[mid, mid, mid], atol=1e-12)
    for n in (16, 32, 64):
        h = 1.0 / n
        phi = truncated_gaussian_density((h, h, h), radius, sigma)
        r = phi.shape[0] // 2
        ax = np.arange(-r, r + 1) * h
        m2_disc = (phi * ax[:, None, None] ** 2).sum() * h**3
        moment_errs.append(abs(m2_disc - m2_cont))
    # coarse step is pre-asymptotic (truncation-shell wobble), then first order
    assert field_errs[1] <= 1.8 * field_errs[0]
    assert moment_errs[1] / moment_errs[0] <= 0.55
    assert 0.15 <= moment_errs[2] / moment_errs[1] <= 0.45
    assert moment_errs[2] < field_errs[0]
