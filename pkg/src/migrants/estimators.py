"""Ensemble statistics of box counts and pair distances.

An ensemble at a fixed time is a sequence of ``(n_i, d)`` position arrays,
one per replicate. Confidence intervals are percentile bootstraps over
replicates.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .combinatorics import log_stirling_factor, touchard
from .configuration import Box, TorusWindow, pairwise_torus_distances

DEFAULT_BOOT = 1000
MIN_CERTIFICATE_REPLICATES = 200


class Estimate(NamedTuple):
    value: float
    lo: float
    hi: float

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def box_counts(snapshots: Sequence[np.ndarray], box: Box) -> np.ndarray:
    """N_box for every replicate."""
    return np.array([box.count(s) if len(s) else 0 for s in snapshots], dtype=np.int64)


def _counts(snapshots_or_counts, box: Box | None) -> np.ndarray:
    if box is None:
        return np.asarray(snapshots_or_counts, dtype=np.int64)
    return box_counts(snapshots_or_counts, box)


def _resample(counts: np.ndarray, n_boot: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(counts), size=(n_boot, len(counts)))
    return counts[idx]


def _percentile_ci(stats: np.ndarray, confidence: float) -> tuple[float, float]:
    a = 0.5 * (1.0 - confidence)
    lo, hi = np.quantile(stats, [a, 1.0 - a])
    return float(lo), float(hi)


@dataclass
class CountLaw:
    histogram: np.ndarray  # histogram[n] = replicates with n points in the box
    replicates: int

    @property
    def pmf(self) -> np.ndarray:
        return self.histogram / self.replicates

    @property
    def mean(self) -> float:
        n = np.arange(len(self.histogram))
        return float((n * self.histogram).sum() / self.replicates)

    def moment(self, order: int) -> float:
        n = np.arange(len(self.histogram), dtype=float)
        return float((n ** order * self.histogram).sum() / self.replicates)


def count_law(snapshots, box: Box | None = None) -> CountLaw:
    """Empirical law of the box count across replicates.

    Pass ``box=None`` to give the counts directly.
    """
    counts = _counts(snapshots, box)
    if len(counts) == 0:
        raise ValueError("empty ensemble")
    if len(counts) < 2:
        raise ValueError("a count law needs at least two replicates")
    return CountLaw(np.bincount(counts), len(counts))


def empirical_moment(snapshots, box: Box | None, n: int, n_boot: int = DEFAULT_BOOT,
                     confidence: float = 0.95, seed=0) -> Estimate:
    """Sample mean of N_box^n with a bootstrap interval."""
    if not 0 <= n <= 8:
        raise ValueError("moment order must lie in [0, 8]")
    counts = _counts(snapshots, box).astype(float)
    if len(counts) == 0:
        raise ValueError("empty ensemble")
    if n == 0:
        return Estimate(1.0, 1.0, 1.0)
    value = float(np.mean(counts ** n))
    boot = (_resample(counts, n_boot, seed) ** n).mean(axis=1)
    return Estimate(value, *_percentile_ci(boot, confidence))


def _dispersion(samples: np.ndarray) -> np.ndarray:
    mean = samples.mean(axis=-1)
    var = samples.var(axis=-1, ddof=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return var / mean


def dispersion_index(snapshots, box: Box | None = None, n_boot: int = DEFAULT_BOOT,
                     confidence: float = 0.95, seed=0) -> Estimate:
    """Variance-to-mean ratio of the box count (1 for Poisson).

    Undefined for a zero mean; that case is flagged with a warning and NaNs.
    """
    counts = _counts(snapshots, box).astype(float)
    if len(counts) < 2:
        raise ValueError("dispersion needs at least two replicates")
    if counts.mean() == 0:
        warnings.warn("dispersion index undefined: mean count is zero", RuntimeWarning, stacklevel=2)
        return Estimate(math.nan, math.nan, math.nan)
    value = float(_dispersion(counts))
    boot = _dispersion(_resample(counts, n_boot, seed))
    boot = boot[np.isfinite(boot)]
    return Estimate(value, *_percentile_ci(boot, confidence))


def shell_measure(r_lo: float, r_hi: float, d: int) -> float:
    if d == 1:
        return 2.0 * (r_hi - r_lo)
    return math.pi * (r_hi * r_hi - r_lo * r_lo)


@dataclass
class PairCorrelation:
    r_lo: np.ndarray
    r_hi: np.ndarray
    g: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    se: np.ndarray
    pair_counts: np.ndarray  # summed over replicates
    expected: np.ndarray  # Poisson reference, summed over replicates

    @property
    def r_mid(self) -> np.ndarray:
        return 0.5 * (self.r_lo + self.r_hi)

    def rows(self):
        return zip(self.r_mid, self.g, self.ci_lo, self.ci_hi)


def pair_correlation(snapshots: Sequence[np.ndarray], r_bins, window: TorusWindow,
                     n_boot: int = DEFAULT_BOOT, confidence: float = 0.95, seed=0) -> PairCorrelation:
    """Pair correlation by pair counting on the torus.

    For each bin the observed number of pairs at that torus distance is
    divided by the Poisson expectation ``N (N - 1) / 2 * shell / |T|`` given
    the replicate's own point count; numerator and denominator are summed
    over replicates before dividing.
    """
    edges = np.asarray(r_bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("r_bins must be increasing nonnegative bin edges")
    L, d = window.side_length, window.dimension
    if edges[-1] > 0.5 * L:
        raise ValueError("bins must not extend beyond half the window side")
    shells = np.array([shell_measure(a, b, d) for a, b in zip(edges[:-1], edges[1:])])
    obs = np.zeros((len(snapshots), len(shells)))
    exp = np.zeros_like(obs)
    for i, pts in enumerate(snapshots):
        n = len(pts)
        if n >= 2:
            obs[i] = np.histogram(pairwise_torus_distances(pts, L), bins=edges)[0]
        exp[i] = 0.5 * n * (n - 1) * shells / window.volume
    tot_obs, tot_exp = obs.sum(axis=0), exp.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = tot_obs / tot_exp
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(snapshots), size=(n_boot, len(snapshots)))
    with np.errstate(invalid="ignore", divide="ignore"):
        boot = obs[idx].sum(axis=1) / exp[idx].sum(axis=1)
    a = 0.5 * (1.0 - confidence)
    lo, hi = np.nanquantile(boot, [a, 1.0 - a], axis=0)
    se = np.nanstd(boot, axis=0, ddof=1)
    return PairCorrelation(edges[:-1], edges[1:], g, lo, hi, se, tot_obs, tot_exp)


@dataclass
class CertificateRow:
    n: int
    empirical_pmf: float
    pmf_ci_lo: float
    pmf_bound: float
    pmf_violation: bool
    empirical_moment: float
    moment_ci_lo: float
    poisson_moment: float
    moment_violation: bool


@dataclass
class CertificateReport:
    verdict: str
    kappa_hat: float
    volume: float
    replicates: int
    confidence: float
    tests: int
    alpha_per_test: float
    dispersion: float
    dispersion_ci_lo: float
    dispersion_violation: bool
    rows: list[CertificateRow] = field(default_factory=list)
    note: str = ("finite-sample statistical check of the count-law and moment bounds at "
                 "n <= n_max; it can refute but not prove sub-Poissonicity")

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def violations(self) -> list[str]:
        out = [f"pmf n={r.n}" for r in self.rows if r.pmf_violation]
        out += [f"moment n={r.n}" for r in self.rows if r.moment_violation]
        if self.dispersion_violation:
            out.append("dispersion")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violations"] = self.violations()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _log_bound(n: int, mass) -> np.ndarray:
    mass = np.asarray(mass, dtype=float)
    with np.errstate(divide="ignore"):
        logm = np.where(mass > 0, np.log(np.where(mass > 0, mass, 1.0)), -np.inf)
    return log_stirling_factor(n) + n * logm - mass - math.lgamma(n + 1)


def subpoisson_certificate(snapshots, box: Box | None, n_max: int = 6, confidence: float = 0.95,
                           n_boot: int = DEFAULT_BOOT, seed=0,
                           min_replicates: int = MIN_CERTIFICATE_REPLICATES,
                           volume: float | None = None) -> CertificateReport:
    """Check the box-count law against the Poisson benchmarks with fitted intensity.

    The intensity is fitted from the mean count. For each n <= n_max the
    empirical P(N = n) is compared with ``n! (e/n)^n`` times the Poisson
    probability, and the n-th raw moment with the Touchard polynomial; the
    dispersion index is compared with 1. A test is violated when the lower
    end of the one-sided bootstrap interval of (empirical - bound) is above
    zero. The level is Bonferroni-split over all tests.
    """
    counts = _counts(snapshots, box).astype(float)
    R = len(counts)
    if R < min_replicates:
        raise ValueError(f"certificate needs at least {min_replicates} replicates, got {R}")
    V = box.volume if box is not None else float(volume)
    tests = 2 * n_max  # pmf n=1..n_max, moments n=2..n_max, dispersion
    alpha = (1.0 - confidence) / tests
    mean = counts.mean()
    boot = _resample(counts, n_boot, seed)
    boot_mean = boot.mean(axis=1)

    def lower(diff):
        return float(np.quantile(diff, alpha))

    rows = []
    for n in range(1, n_max + 1):
        p_hat = float(np.mean(counts == n))
        bound = float(np.exp(_log_bound(n, mean)))
        p_boot = (boot == n).mean(axis=1)
        d_pmf = p_boot - np.exp(_log_bound(n, boot_mean))
        pmf_lo = lower(d_pmf)
        m_hat = float(np.mean(counts ** n))
        t_n = touchard(n, mean)
        if n >= 2:
            d_mom = (boot ** n).mean(axis=1) - np.array([touchard(n, m) for m in boot_mean])
            mom_lo = lower(d_mom)
            mom_bad = mom_lo > 1e-12 * max(t_n, 1.0)
        else:
            mom_lo, mom_bad = 0.0, False
        rows.append(CertificateRow(n, p_hat, pmf_lo + bound, bound, bool(pmf_lo > 1e-12),
                                   m_hat, float(mom_lo + t_n), float(t_n), bool(mom_bad)))
    if mean > 0:
        disp = float(_dispersion(counts))
        disp_lo = float(np.nanquantile(_dispersion(boot), alpha))
    else:
        disp, disp_lo = 0.0, 0.0
    disp_bad = disp_lo > 1.0 + 1e-12
    bad = disp_bad or any(r.pmf_violation or r.moment_violation for r in rows)
    return CertificateReport(
        verdict="FAIL" if bad else "PASS",
        kappa_hat=float(mean / V), volume=float(V), replicates=R, confidence=confidence,
        tests=tests, alpha_per_test=alpha, dispersion=disp, dispersion_ci_lo=disp_lo,
        dispersion_violation=bool(disp_bad), rows=rows,
    )


@dataclass
class EnsembleStats:
    """Per-time, per-box summary of an ensemble."""

    time: float
    replicates: int
    boxes: list[dict] = field(default_factory=list)
    pair_correlation: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(snapshots: Sequence[np.ndarray], time: float, boxes: Sequence[Box],
              window: TorusWindow, n_max: int = 6, r_bins=None, confidence: float = 0.95,
              n_boot: int = DEFAULT_BOOT, seed=0) -> EnsembleStats:
    stats = EnsembleStats(float(time), len(snapshots))
    for k, box in enumerate(boxes):
        counts = box_counts(snapshots, box)
        entry = {
            "box": {"lo": list(box.lo), "hi": list(box.hi), "volume": box.volume},
            "histogram": np.bincount(counts).tolist() if len(counts) else [],
            "mean": float(counts.mean()) if len(counts) else math.nan,
        }
        moments = []
        for n in range(0, n_max + 1):
            e = empirical_moment(counts, None, n, n_boot, confidence, seed)
            moments.append({"n": n, "value": e.value, "ci": [e.lo, e.hi]})
        entry["moments"] = moments
        if len(counts) >= 2 and counts.mean() > 0:
            e = dispersion_index(counts, None, n_boot, confidence, seed)
            entry["dispersion"] = {"value": e.value, "ci": [e.lo, e.hi]}
        else:
            entry["dispersion"] = None
        stats.boxes.append(entry)
    if r_bins is not None:
        pc = pair_correlation(snapshots, r_bins, window, n_boot, confidence, seed)
        stats.pair_correlation = {
            "r_mid": pc.r_mid.tolist(), "g": pc.g.tolist(),
            "ci_lo": pc.ci_lo.tolist(), "ci_hi": pc.ci_hi.tolist(),
            "pair_counts": pc.pair_counts.tolist(),
        }
    return stats
