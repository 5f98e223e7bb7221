"""Randomised identity checks for the combinatorial and K-transform layers."""

from __future__ import annotations

import math

import numpy as np

from . import kernels as K
from .combinatorics import poisson_mgf, poisson_mgf_series
from .configuration import Box, TorusWindow
from .ktransform import (FiniteFunction, QuadratureGrid, ThetaFunction, check_duality,
                         f_theta_eval, moment_identity_check)

DUALITY_TOL = 1e-9
MGF_RTOL = 1e-10


def random_interaction_kernel(rng: np.random.Generator, d: int) -> K.Kernel:
    family = rng.choice(K.INTERACTION_FAMILIES)
    amp = float(rng.uniform(0.1, 2.0))
    scale = float(rng.uniform(0.3, 1.5))
    return K.Kernel(str(family), amp, scale, d)


def random_background(rng: np.random.Generator, d: int) -> K.Kernel:
    amp = float(rng.uniform(0.1, 2.0))
    if rng.random() < 0.5:
        return K.constant(amp, d)
    wave = tuple(int(v) for v in rng.integers(-2, 3, size=d))
    if not any(wave):
        wave = (1,) + wave[1:]
    return K.constant(amp, d, float(rng.uniform(0, amp)), wave, float(rng.uniform(0, 2 * math.pi)))


def random_model(rng: np.random.Generator, d: int, side_length: float = 50.0) -> K.ModelParams:
    return K.ModelParams(random_interaction_kernel(rng, d), random_interaction_kernel(rng, d),
                         random_background(rng, d), random_background(rng, d),
                         TorusWindow(side_length, d))


def random_finite_function(rng: np.random.Generator, support: Box, n_max: int = 3) -> FiniteFunction:
    """Symmetric components: a product of single-point profiles plus a pair term."""
    d = support.dimension
    lo = np.asarray(support.lo)
    comps = {0: float(rng.normal())}
    for n in range(1, n_max + 1):
        c_prod, c_pair = rng.normal(size=2)
        freq = rng.uniform(0.5, 2.0, size=d)
        shift = rng.uniform(0, 2 * math.pi, size=d)
        width = rng.uniform(0.3, 1.0)

        def comp(xs, c_prod=c_prod, c_pair=c_pair, freq=freq, shift=shift, width=width):
            single = np.prod(np.cos(freq * (xs - lo) + shift), axis=-1)  # (..., n)
            out = c_prod * np.prod(single, axis=-1)
            k = xs.shape[-2]
            if k >= 2:
                diff = xs[..., :, None, :] - xs[..., None, :, :]
                r2 = np.sum(diff * diff, axis=-1)
                iu = np.triu_indices(k, 1)
                out = out + c_pair * np.sum(np.exp(-r2[..., iu[0], iu[1]] / width), axis=-1)
            return out

        comps[n] = comp
    return FiniteFunction(comps, support)


def duality_residuals(seed: int, instances: int = 20, nodes_per_axis: int = 12) -> list[dict]:
    """``|L KG - K Lhat G|`` over random models, functions and configurations."""
    rng = np.random.default_rng([seed, 1])
    out = []
    for i in range(instances):
        d = int(rng.integers(1, 3))
        support = Box((0.0,) * d, (2.0,) * d)
        p = random_model(rng, d)
        G = random_finite_function(rng, support, n_max=int(rng.integers(1, 4)))
        size = int(rng.integers(0, 5))
        gamma = rng.uniform(-0.5, 2.5, size=(size, d))
        quad = QuadratureGrid(support, nodes_per_axis if d == 2 else 4 * nodes_per_axis)
        res = check_duality(G, gamma, p, quad)
        out.append({"instance": i, "dimension": d, "points": size, "residual": res})
    return out


def moment_identity_failures(seed: int, configs: int = 50) -> tuple[int, int]:
    """Number of (configuration, n) pairs checked and how many disagree."""
    rng = np.random.default_rng([seed, 2])
    box = Box((0.0, 0.0), (1.0, 1.0))
    checked = failed = 0
    for _ in range(configs):
        k = int(rng.integers(0, 13))
        inside = rng.random((k, 2))
        outside = rng.uniform(1.0, 2.0, size=(int(rng.integers(0, 4)), 2))
        gamma = np.concatenate([inside, outside])
        for n in range(9):
            lhs, rhs = moment_identity_check(n, box, gamma)
            checked += 1
            failed += lhs != rhs
    return checked, failed


# 30 terms reach 1e-10 for |beta| <= 0.5 up to mass 4; for beta < 0 the
# alternating series loses digits to cancellation beyond mass 2
MGF_GRID = tuple((b, m) for b in (0.1, 0.25, 0.5) for m in (0.1, 0.5, 1.0, 2.0, 4.0)) + \
    tuple((b, m) for b in (-0.5, -0.25) for m in (0.1, 0.5, 1.0, 2.0))


def mgf_relative_errors(grid=MGF_GRID) -> list[dict]:
    out = []
    for beta, m in grid:
        exact = poisson_mgf(beta, m)
        series = poisson_mgf_series(beta, m, terms=30)
        out.append({"beta": beta, "mass": m, "rel_error": abs(series - exact) / exact})
    return out


def f_theta_monte_carlo(seed: int, kappa: float = 1.0, samples: int = 20000, depth: float = 0.6,
                        side: float = 3.0, d: int = 2) -> dict:
    """Mean of ``prod (1 + theta)`` over Poisson(kappa) samples vs ``exp(kappa int theta)``."""
    rng = np.random.default_rng([seed, 3])
    support = Box((0.0,) * d, (side,) * d)
    theta = ThetaFunction(support, depth, "bump")
    window = Box((-1.0,) * d, (side + 1.0,) * d)  # theta vanishes outside its support
    counts = rng.poisson(kappa * window.volume, size=samples)
    lo, hi = np.asarray(window.lo), np.asarray(window.hi)
    vals = np.array([f_theta_eval(theta, lo + rng.random((c, d)) * (hi - lo)) for c in counts])
    mean, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))
    target = math.exp(kappa * theta.integral)
    return {"mean": mean, "se": se, "target": target, "z": (mean - target) / se}


def run_suite(seed: int = 0, duality_instances: int = 20, moment_configs: int = 50,
              mc_samples: int = 20000) -> dict:
    duality = duality_residuals(seed, duality_instances)
    checked, failed = moment_identity_failures(seed, moment_configs)
    mgf = mgf_relative_errors()
    ftheta = f_theta_monte_carlo(seed, samples=mc_samples)
    max_dual = max((r["residual"] for r in duality), default=0.0)
    max_mgf = max(r["rel_error"] for r in mgf)
    checks = {
        "duality": {"max_residual": max_dual, "threshold": DUALITY_TOL, "ok": max_dual <= DUALITY_TOL},
        "moment_identity": {"checked": checked, "mismatches": failed, "threshold": 0, "ok": failed == 0},
        "poisson_mgf": {"max_rel_error": max_mgf, "threshold": MGF_RTOL, "ok": max_mgf <= MGF_RTOL},
        "f_theta": {**ftheta, "threshold_se": 3.0, "ok": abs(ftheta["z"]) <= 3.0},
    }
    return {"seed": seed, "checks": checks, "duality_instances": duality, "mgf": mgf,
            "ok": all(c["ok"] for c in checks.values())}
