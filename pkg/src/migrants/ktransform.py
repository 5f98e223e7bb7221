"""Functions on finite configurations and the K-transform machinery.

These are small-cardinality numerical checks of the analytic layer:
``(KG)(gamma) = sum_{eta subset gamma} G(eta)``, the Lebesgue-Poisson
integral, the product functionals ``e_n`` and ``F^theta``, and the lifted
generator ``Lhat`` with ``L K = K Lhat``. Everything here lives in R^d (no
periodic wrap); integrals over newcomer positions use a shared midpoint
grid so both sides of an identity see the same discretisation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .combinatorics import stirling2
from .configuration import Box, Configuration
from .kernels import Kernel, ModelParams

K_TRANSFORM_CAP = 24
LP_MAX_POINTS = 20_000_000


def _as_points(gamma, d: int | None = None) -> np.ndarray:
    if isinstance(gamma, Configuration):
        return gamma.positions()
    arr = np.asarray(gamma, dtype=float)
    if arr.size == 0:
        return np.empty((0, d or (arr.shape[-1] if arr.ndim == 2 else 1)))
    if arr.ndim == 1:
        arr = arr.reshape(-1, d or 1)
    return arr


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product midpoint rule on a box."""

    box: Box
    nodes_per_axis: int = 32
    nodes: np.ndarray = field(init=False, repr=False)
    weight: float = field(init=False)

    def __post_init__(self):
        m = int(self.nodes_per_axis)
        if m < 1:
            raise ValueError("need at least one node per axis")
        axes = [lo + (np.arange(m) + 0.5) * (hi - lo) / m for lo, hi in zip(self.box.lo, self.box.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        object.__setattr__(self, "nodes", np.stack([g.ravel() for g in mesh], axis=-1))
        object.__setattr__(self, "weight", self.box.volume / m ** self.box.dimension)

    @property
    def dimension(self) -> int:
        return self.box.dimension

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.weight)


Component = Callable[[np.ndarray], np.ndarray]


class FiniteFunction:
    """A bounded function on finite configurations with bounded support.

    ``components[n]`` maps a stack of n-point configurations, shape
    ``(..., n, d)``, to values of shape ``(...)`` and must be symmetric in
    its points; ``components[0]`` is the value on the empty configuration.
    Values are forced to zero when a point leaves ``support`` or the
    cardinality exceeds ``max(components)``.
    """

    def __init__(self, components: Mapping[int, Component | float], support: Box,
                 bound: float | None = None):
        self.components = dict(components)
        self.support = support
        self.dimension = support.dimension
        self.n_max = max(self.components, default=0)
        self.bound = bound

    def value0(self) -> float:
        c = self.components.get(0, 0.0)
        return float(c() if callable(c) else c)

    def batch(self, etas: np.ndarray) -> np.ndarray:
        """Evaluate on a stack of configurations of equal size, shape ``(m, n, d)``."""
        etas = np.asarray(etas, dtype=float)
        m, n = etas.shape[0], etas.shape[1]
        if n == 0:
            return np.full(m, self.value0())
        comp = self.components.get(n)
        if comp is None:
            return np.zeros(m)
        inside = np.all((etas >= self.support.lo) & (etas < self.support.hi), axis=(1, 2))
        out = np.zeros(m)
        if inside.any():
            out[inside] = comp(etas[inside]) if callable(comp) else comp
        return out

    def __call__(self, eta) -> float:
        pts = _as_points(eta, self.dimension)
        return float(self.batch(pts[None, :, :])[0])


@dataclass(frozen=True)
class ThetaFunction:
    """A profile with values in (-1, 0] and compact support.

    ``shape='constant'`` is ``-depth`` on the box, ``shape='bump'`` is
    ``-depth * prod_i sin^2(pi (x_i - lo_i) / (hi_i - lo_i))``.
    """

    support: Box
    depth: float
    shape: str = "bump"

    def __post_init__(self):
        if not 0.0 <= self.depth < 1.0:
            raise ValueError("depth must lie in [0, 1) so that theta > -1")
        if self.shape not in ("constant", "bump"):
            raise ValueError(f"unknown theta shape {self.shape!r}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.support.lo), np.asarray(self.support.hi)
        inside = np.all((x >= lo) & (x < hi), axis=-1)
        if self.shape == "constant":
            val = np.full(inside.shape, -self.depth)
        else:
            val = -self.depth * np.prod(np.sin(np.pi * (x - lo) / (hi - lo)) ** 2, axis=-1)
        return np.where(inside, val, 0.0)

    @property
    def l1_norm(self) -> float:
        factor = 1.0 if self.shape == "constant" else 0.5 ** self.support.dimension
        return self.depth * self.support.volume * factor

    @property
    def integral(self) -> float:
        return -self.l1_norm


def k_transform(G: FiniteFunction, gamma, cap: int = K_TRANSFORM_CAP) -> float:
    """Sum of ``G`` over all subsets of ``gamma``.

    Only points inside the support of ``G`` and subsets of size at most
    ``G.n_max`` can contribute, so the enumeration is pruned to those.
    """
    pts = _as_points(gamma, G.dimension)
    if len(pts) > cap:
        raise ValueError(f"configuration of size {len(pts)} exceeds the enumeration cap {cap}")
    inside = pts[G.support.contains(pts)] if len(pts) else pts
    total = G.value0()
    for n in range(1, min(G.n_max, len(inside)) + 1):
        idx = np.array(list(itertools.combinations(range(len(inside)), n)))
        total += float(G.batch(inside[idx]).sum())
    return total


def _k_transform_with_node(G: FiniteFunction, pts: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """``(KG)(gamma + x)`` for every node ``x``, by full subset enumeration of gamma + x."""
    n = len(pts)
    m = len(nodes)
    out = np.full(m, G.value0())
    for size in range(1, n + 2):
        for combo in itertools.combinations(range(n + 1), size):
            if n in combo:
                base = pts[list(combo[:-1])]
                stack = np.concatenate(
                    [np.broadcast_to(base, (m,) + base.shape), nodes[:, None, :]], axis=1)
                out += G.batch(stack)
            else:
                out += G.batch(pts[list(combo)][None])[0]
    return out


def e_n_eval(theta: ThetaFunction, n: int, eta) -> float:
    """Product of theta over eta when |eta| == n, else 0."""
    pts = _as_points(eta, theta.support.dimension)
    if len(pts) != n:
        return 0.0
    if n == 0:
        return 1.0
    return float(np.prod(theta(pts)))


def e_n_function(theta: ThetaFunction, n: int) -> FiniteFunction:
    """``e_n(theta; .)`` as a :class:`FiniteFunction`."""
    comps: dict[int, Component | float] = {0: 1.0} if n == 0 else {0: 0.0}
    if n > 0:
        comps[n] = lambda xs: np.prod(theta(xs), axis=-1)
    return FiniteFunction(comps, theta.support, bound=theta.depth ** n)


def e_series_function(theta: ThetaFunction, n_max: int) -> FiniteFunction:
    """``sum_{n <= n_max} e_n(theta; .)``."""
    comps: dict[int, Component | float] = {0: 1.0}
    for n in range(1, n_max + 1):
        comps[n] = lambda xs: np.prod(theta(xs), axis=-1)
    return FiniteFunction(comps, theta.support, bound=1.0)


def f_theta_eval(theta: ThetaFunction, gamma) -> float:
    """``prod_{x in gamma} (1 + theta(x))``."""
    pts = _as_points(gamma, theta.support.dimension)
    if len(pts) == 0:
        return 1.0
    return float(np.prod(1.0 + theta(pts)))


def lebesgue_poisson_integral(G: FiniteFunction, weight: float = 1.0, nodes_per_axis: int = 32,
                              max_points: int = LP_MAX_POINTS) -> float:
    """``G(empty) + sum_n weight^n / n! * int G^(n)`` by tensor midpoint quadrature on the support."""
    if G.n_max > 4:
        raise ValueError("Lebesgue-Poisson quadrature supports components up to n = 4")
    quad = QuadratureGrid(G.support, nodes_per_axis)
    grid = quad.nodes
    m = len(grid)
    total = G.value0()
    for n in range(1, G.n_max + 1):
        if n not in G.components:
            continue
        size = m ** n
        if size > max_points:
            raise MemoryError(f"{size} quadrature points for n={n} exceed the limit {max_points}")
        acc = 0.0
        # chunk over the first coordinate block to bound memory
        rest = m ** (n - 1)
        chunk = max(1, min(m, 2_000_000 // max(rest, 1)))
        tails = (np.array(list(itertools.product(range(m), repeat=n - 1)), dtype=np.intp)
                 if n > 1 else np.empty((1, 0), dtype=np.intp))
        for start in range(0, m, chunk):
            heads = np.arange(start, min(start + chunk, m))
            idx = np.concatenate(
                [np.repeat(heads, len(tails))[:, None], np.tile(tails, (len(heads), 1))], axis=1)
            acc += float(G.batch(grid[idx]).sum())
        total += weight ** n / math.factorial(n) * acc * quad.weight ** n
    return total


def _pair_sum(kernel: Kernel, x: np.ndarray, others: np.ndarray) -> np.ndarray:
    """``sum_{y in others} kernel(|x - y|)`` for each row of ``x``."""
    x = np.atleast_2d(x)
    if len(others) == 0 or kernel.is_null:
        return np.zeros(len(x))
    r = np.linalg.norm(x[:, None, :] - others[None, :, :], axis=-1)
    return kernel.profile(r).sum(axis=1)


def _bg(k: Kernel, x: np.ndarray, p: ModelParams) -> np.ndarray:
    return np.broadcast_to(k.at(np.atleast_2d(x), p.window.side_length), (len(np.atleast_2d(x)),))


def lhat_terms(G: FiniteFunction, eta, p: ModelParams, quad: QuadratureGrid | None = None
               ) -> tuple[float, float, float, float]:
    """The four pieces of ``(Lhat G)(eta)``: arrival, relocation, diagonal loss, competition."""
    quad = quad or QuadratureGrid(G.support)
    pts = _as_points(eta, G.dimension)
    n = len(pts)
    nodes, w = quad.nodes, quad.weight
    m = len(nodes)

    def with_node(base):
        return np.concatenate([np.broadcast_to(base, (m,) + base.shape), nodes[:, None, :]], axis=1)

    e_plus = _bg(p.b_plus, nodes, p) + _pair_sum(p.a_plus, nodes, pts)
    a1 = float(np.sum(e_plus * G.batch(with_node(pts))) * w)
    a2 = 0.0
    a3_rate = 0.0
    a4 = 0.0
    g_eta = G(pts)
    for i in range(n):
        rest = np.delete(pts, i, axis=0)
        attract = p.a_plus.profile(np.linalg.norm(nodes - pts[i], axis=-1))
        a2 += float(np.sum(attract * G.batch(with_node(rest))) * w)
        comp = float(_pair_sum(p.a_minus, pts[i], rest)[0])
        a3_rate += float(_bg(p.b_minus, pts[i], p)[0]) + comp
        a4 -= comp * G(rest)
    return a1, a2, -a3_rate * g_eta, a4


def lhat_apply(G: FiniteFunction, eta, p: ModelParams, quad: QuadratureGrid | None = None) -> float:
    """``(Lhat G)(eta)``, the generator lifted through the K-transform."""
    return float(sum(lhat_terms(G, eta, p, quad)))


def generator_on_k(G: FiniteFunction, gamma, p: ModelParams, quad: QuadratureGrid | None = None
                   ) -> float:
    """``(L KG)(gamma)`` straight from the generator: arrival integral plus departures."""
    quad = quad or QuadratureGrid(G.support)
    pts = _as_points(gamma, G.dimension)
    F = k_transform(G, pts)
    # outside the support of G the arrival increment KG(gamma + x) - KG(gamma) vanishes
    gain = _k_transform_with_node(G, pts, quad.nodes) - F
    e_plus = _bg(p.b_plus, quad.nodes, p) + _pair_sum(p.a_plus, quad.nodes, pts)
    arrivals = float(np.sum(e_plus * gain) * quad.weight)
    departures = 0.0
    for i in range(len(pts)):
        rest = np.delete(pts, i, axis=0)
        e_minus = float(_bg(p.b_minus, pts[i], p)[0] + _pair_sum(p.a_minus, pts[i], rest)[0])
        departures += e_minus * (F - k_transform(G, rest))
    return arrivals - departures


def k_of_lhat(G: FiniteFunction, gamma, p: ModelParams, quad: QuadratureGrid | None = None) -> float:
    """``(K Lhat G)(gamma)`` by enumerating every subset (Lhat G is not support-limited)."""
    quad = quad or QuadratureGrid(G.support)
    pts = _as_points(gamma, G.dimension)
    total = 0.0
    for size in range(len(pts) + 1):
        for combo in itertools.combinations(range(len(pts)), size):
            total += lhat_apply(G, pts[list(combo)], p, quad)
    return total


def check_duality(G: FiniteFunction, gamma, p: ModelParams, quad: QuadratureGrid | None = None
                  ) -> float:
    """``|(L KG)(gamma) - (K Lhat G)(gamma)|`` on a shared quadrature grid."""
    pts = _as_points(gamma, G.dimension)
    if len(pts) > 5:
        raise ValueError("duality check is limited to configurations of at most 5 points")
    quad = quad or QuadratureGrid(G.support)
    return abs(generator_on_k(G, pts, p, quad) - k_of_lhat(G, pts, p, quad))


def moment_identity_check(n: int, box: Box, gamma) -> tuple[int, int]:
    """``N^n`` against ``sum_l l! S(n, l) #{l-subsets of gamma in the box}`` in exact integers."""
    if not 0 <= n <= 8:
        raise ValueError("moment order must lie in [0, 8]")
    pts = _as_points(gamma, box.dimension)
    inside = [tuple(x) for x in pts[box.contains(pts)]] if len(pts) else []
    count = len(inside)
    if count > 12:
        raise ValueError("at most 12 points in the box")
    lhs = count ** n
    rhs = 0
    for l in range(0 if n == 0 else 1, n + 1):
        subsets = sum(1 for _ in itertools.combinations(inside, l))
        rhs += math.factorial(l) * stirling2(n, l) * subsets
    return lhs, rhs
