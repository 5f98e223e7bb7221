import json
import math

import numpy as np
import pytest
from scipy import stats

from migrants.combinatorics import touchard
from migrants.configuration import Box, TorusWindow
from migrants.estimators import (count_law, dispersion_index, empirical_moment, pair_correlation,
                                 subpoisson_certificate, summarize)

L = 10.0
WINDOW = TorusWindow(L, 2)
BOX = Box((0.0, 0.0), (5.0, 5.0))


def poisson_ensemble(rng, intensity, reps, window=WINDOW):
    V = window.volume
    return [rng.random((rng.poisson(intensity * V), window.dimension)) * window.side_length
            for _ in range(reps)]


def clustered_ensemble(rng, parents_per_area, reps):
    """Parents Poisson, each with Poisson(5) offspring in a disc of radius 0.3."""
    out = []
    for _ in range(reps):
        pts = []
        for c in rng.random((rng.poisson(parents_per_area * L * L), 2)) * L:
            k = rng.poisson(5)
            r = 0.3 * np.sqrt(rng.random(k))
            phi = 2 * np.pi * rng.random(k)
            pts.append((c + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)) % L)
        out.append(np.concatenate(pts) if pts else np.empty((0, 2)))
    return out


def lattice_pattern():
    g = np.arange(10) + 0.5
    return np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)


def test_count_law_basics():
    law = count_law([np.empty((0, 2))] * 5, BOX)
    assert law.pmf.tolist() == [1.0]
    rng = np.random.default_rng(0)
    ens = poisson_ensemble(rng, 1.0, 50)
    law = count_law(ens, BOX)
    counts = [BOX.count(s) for s in ens]
    assert law.histogram.sum() == 50
    assert law.mean == pytest.approx(np.mean(counts), abs=1e-12)
    assert law.moment(3) == pytest.approx(np.mean(np.array(counts, float) ** 3), rel=1e-12)


def test_count_law_errors():
    with pytest.raises(ValueError):
        count_law([], BOX)
    with pytest.raises(ValueError):
        count_law([np.zeros((1, 2))], BOX)


def test_count_law_poisson_gof():
    rng = np.random.default_rng(1)
    counts = rng.poisson(12.5, size=4000)
    law = count_law(counts)
    n = np.arange(len(law.histogram))
    expected = stats.poisson.pmf(n, 12.5) * 4000
    keep = expected >= 5
    obs, exp = law.histogram[keep].astype(float), expected[keep]
    exp *= obs.sum() / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_empirical_moment():
    assert empirical_moment([2, 2, 2], None, 0).value == 1.0
    assert empirical_moment([2, 2, 2], None, 1).value == 2.0
    rng = np.random.default_rng(2)
    counts = rng.poisson(3.0, size=3000)
    for n in range(1, 5):
        e = empirical_moment(counts, None, n)
        assert e.lo <= touchard(n, 3.0) <= e.hi


def test_dispersion_index():
    assert dispersion_index([3, 3, 3, 3]).value == 0.0
    rng = np.random.default_rng(3)
    e = dispersion_index(rng.poisson(20, size=10_000))
    assert e.contains(1.0)
    nb = rng.negative_binomial(5, 0.2, size=2000)
    assert dispersion_index(nb).lo > 1.0
    with pytest.warns(RuntimeWarning):
        assert math.isnan(dispersion_index([0, 0, 0]).value)


def test_pair_correlation_poisson_is_flat():
    rng = np.random.default_rng(4)
    ens = poisson_ensemble(rng, 1.0, 200)
    pc = pair_correlation(ens, np.linspace(0.0, 4.0, 17), WINDOW, n_boot=500)
    z = np.abs(pc.g - 1.0) / pc.se
    # 16 bins: more than one beyond 4 SE would be very unusual
    assert np.sum(z > 4) <= 1
    assert np.sum((pc.ci_lo <= 1) & (1 <= pc.ci_hi)) >= 13


def test_pair_correlation_hard_core_and_single_pair():
    pts = lattice_pattern()  # minimum separation 1
    pc = pair_correlation([pts, pts], [0.0, 0.5, 0.99, 1.01], WINDOW, n_boot=10)
    assert pc.g[0] == 0.0 and pc.g[1] == 0.0 and pc.g[2] > 0
    two = np.array([[1.0, 1.0], [1.0, 2.3]])
    pc = pair_correlation([two], [0.0, 0.5, 1.0, 1.5, 2.0], WINDOW, n_boot=10)
    assert pc.pair_counts.tolist() == [0, 0, 1, 0]


def test_pair_correlation_bins_beyond_half_window():
    with pytest.raises(ValueError):
        pair_correlation([np.zeros((2, 2))], [0.0, 6.0], WINDOW)


def test_certificate_poisson_passes():
    rng = np.random.default_rng(5)
    rep = subpoisson_certificate(poisson_ensemble(rng, 1.0, 500), BOX)
    assert rep.passed, rep.violations()
    assert rep.tests == 12 and rep.alpha_per_test == pytest.approx(0.05 / 12)


def test_certificate_clustered_fails_at_second_moment():
    rng = np.random.default_rng(6)
    rep = subpoisson_certificate(clustered_ensemble(rng, 0.2, 500), BOX)
    assert not rep.passed
    assert "moment n=2" in rep.violations()


def test_certificate_lattice_passes():
    rep = subpoisson_certificate([lattice_pattern()] * 300, BOX)
    assert rep.passed and rep.dispersion == 0.0


def test_certificate_needs_replicates():
    with pytest.raises(ValueError):
        subpoisson_certificate([lattice_pattern()] * 10, BOX)


def test_certificate_kappa_matches_first_moment():
    rng = np.random.default_rng(7)
    ens = poisson_ensemble(rng, 0.8, 250)
    rep = subpoisson_certificate(ens, BOX)
    assert rep.kappa_hat * BOX.volume == pytest.approx(empirical_moment(ens, BOX, 1).value, rel=1e-12)
    json.loads(rep.to_json())


def test_summary_consistency():
    rng = np.random.default_rng(8)
    ens = poisson_ensemble(rng, 1.0, 40)
    s = summarize(ens, 1.0, [BOX], WINDOW, n_max=4, r_bins=[0, 1, 2], n_boot=100)
    box = s.boxes[0]
    hist = np.array(box["histogram"])
    assert hist.sum() == 40
    n = np.arange(len(hist))
    for m in box["moments"]:
        assert m["value"] == pytest.approx((n ** m["n"] * hist).sum() / 40, rel=1e-12)
    assert box["dispersion"]["value"] >= 0
    assert len(s.pair_correlation["g"]) == 2
