import math

import numpy as np
import pytest
from scipy import integrate

from migrants import kernels as K
from migrants.configuration import TorusWindow


def test_tophat_values():
    k = K.tophat(2.0, 1.0)
    assert K.kernel_value(k, 0.5) == 2.0
    assert K.kernel_value(k, 1.5) == 0.0


def test_gaussian_value_1d():
    k = K.gaussian(1.0, 1.0, d=1)
    assert K.kernel_value(k, 1.0) == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        K.kernel_value(K.tophat(1.0, 1.0), -0.1)


def test_l1_norm_closed_forms():
    assert K.kernel_l1_norm(K.tophat(2.0, 1.0, d=1)) == pytest.approx(4.0)
    assert K.kernel_l1_norm(K.tophat(1.0, 1.0, d=2)) == pytest.approx(math.pi)


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5])
def test_gaussian_untruncated_mass_1d(sigma):
    k = K.gaussian(1.0, sigma, d=1, eps_cut=0.0)
    assert math.isinf(k.cutoff_radius)
    # quadrature oracle over the whole line
    ref, _ = integrate.quad(lambda r: math.exp(-r * r / (2 * sigma * sigma)), -np.inf, np.inf,
                            epsabs=1e-14, epsrel=1e-13)
    assert K.kernel_l1_norm(k) == pytest.approx(ref, rel=1e-10)
    assert ref == pytest.approx(sigma * math.sqrt(2 * math.pi), rel=1e-10)


def test_background_has_no_l1_norm():
    with pytest.raises(ValueError):
        K.kernel_l1_norm(K.constant(1.0))


def test_sup_norms():
    assert K.kernel_sup_norm(K.tophat(3.0, 2.0)) == 3.0
    assert K.kernel_sup_norm(K.gaussian(1.5, 1.0)) == 1.5
    assert K.kernel_sup_norm(K.constant(0.7)) == 0.7


@pytest.mark.parametrize("family", ["tophat", "gaussian", "exponential"])
@pytest.mark.parametrize("d", [1, 2])
def test_quadrature_reproduces_l1_norm(family, d):
    k = K.Kernel(family, 1.3, 0.7, d)
    R = k.cutoff_radius
    if d == 1:
        ref, _ = integrate.quad(lambda r: 2 * k(r), 0, R, epsrel=1e-12, limit=200)
    else:
        ref, _ = integrate.quad(lambda r: 2 * math.pi * r * k(r), 0, R, epsrel=1e-12, limit=200)
    assert K.kernel_l1_norm(k) == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("family", ["gaussian", "exponential"])
def test_truncation_not_renormalised(family):
    k = K.Kernel(family, 1.0, 1.0, 2, eps_cut=1e-6)
    assert k(k.cutoff_radius * 0.999) > 0
    assert k(k.cutoff_radius * 1.001) == 0.0
    assert k(k.cutoff_radius * 0.999) == pytest.approx(1e-6, rel=0.05)
    assert 0 < k.truncated_mass <= 1e-4  # mass beyond the cut is tiny but not put back
    full = K.Kernel(family, 1.0, 1.0, 2, eps_cut=0.0)
    assert K.kernel_l1_norm(k) < K.kernel_l1_norm(full)


def test_profile_monotone():
    r = np.linspace(0, 6, 500)
    for fam in ("tophat", "gaussian", "exponential"):
        v = K.Kernel(fam, 1.0, 1.0, 2).profile(r)
        assert np.all(np.diff(v) <= 0)


def test_background_cosine_mode():
    k = K.constant(1.0, 2, modulation=0.5, wavevector=(1, 0))
    assert k.at(np.array([0.0, 3.0]), 10.0) == pytest.approx(1.5)
    assert k.at(np.array([5.0, 3.0]), 10.0) == pytest.approx(0.5)
    assert k.integral_over_torus(10.0) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        K.constant(1.0, 2, modulation=2.0, wavevector=(1, 0))


def test_classification_examples():
    assert K.classify_competition(K.tophat(1, 1), K.gaussian(1, 2)).regime is K.Competition.LONG
    assert K.classify_competition(K.gaussian(1, 2), K.tophat(1, 1)).regime is K.Competition.SHORT
    c = K.classify_competition(K.tophat(1, 1), K.tophat(1, 1))
    assert c.regime is K.Competition.LONG and c.theta == pytest.approx(1.0)


def test_classification_empty_probe():
    with pytest.raises(ValueError):
        K.classify_competition(K.tophat(1, 1), K.tophat(1, 1), probe_radii=[])


def test_classification_zero_attraction_is_long():
    assert K.classify_competition(K.zero(), K.tophat(1, 1)).regime is K.Competition.LONG


def test_model_params_caches_masses_and_checks_window():
    w = TorusWindow(10.0, 2)
    p = K.ModelParams(K.gaussian(1.0, 0.5), K.tophat(2.0, 1.0), K.constant(1.0), K.constant(0.5), w)
    assert p.A_plus == pytest.approx(2 * math.pi * 0.25 * (1 - 1e-6), rel=1e-12)
    assert p.A_minus == pytest.approx(2 * math.pi, rel=1e-12)
    with pytest.raises(ValueError):
        K.ModelParams(K.tophat(1.0, 6.0), K.zero(), K.constant(1.0), K.constant(1.0), w)
    with pytest.raises(ValueError):
        K.ModelParams(K.tophat(1.0, 1.0, d=1), K.zero(), K.constant(1.0), K.constant(1.0), w)
