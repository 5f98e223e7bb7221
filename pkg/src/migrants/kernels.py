"""Interaction and background kernels of the immigration-emigration model.

Interaction kernels (``a_plus``, ``a_minus``) are radial profiles on R^d with
closed-form L1 and sup norms. They are truncated at a cutoff radius beyond
which the profile is below ``eps_cut`` times its peak; the truncation is *not*
renormalised and the lost fraction is kept in ``truncated_mass``.

Background kernels (``b_plus``, ``b_minus``) are bounded functions on the
torus: a constant plus at most one cosine mode.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

INTERACTION_FAMILIES = ("tophat", "gaussian", "exponential")
BACKGROUND_FAMILY = "constant-background"
FAMILIES = INTERACTION_FAMILIES + (BACKGROUND_FAMILY,)

DEFAULT_EPS_CUT = 1e-6


def _ball_volume(r: float, d: int) -> float:
    if d == 1:
        return 2.0 * r
    if d == 2:
        return math.pi * r * r
    raise ValueError(f"unsupported dimension {d}")


@dataclass(frozen=True)
class Kernel:
    """A nonnegative kernel.

    ``scale`` is the radius for ``tophat``, the standard deviation for
    ``gaussian`` and the decay length for ``exponential``. For the
    background family ``modulation`` and ``wavevector`` describe an optional
    cosine mode ``modulation * cos(2 pi k.x / L + phase)``.
    """

    family: str
    amplitude: float
    scale: float = 1.0
    dimension: int = 2
    eps_cut: float = DEFAULT_EPS_CUT
    modulation: float = 0.0
    wavevector: tuple[int, ...] = ()
    phase: float = 0.0
    cutoff_radius: float = field(init=False)
    truncated_mass: float = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not self.amplitude >= 0.0:
            raise ValueError("amplitude must be nonnegative")
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.eps_cut < 1.0:
            raise ValueError("eps_cut must lie in [0, 1)")
        if self.family == BACKGROUND_FAMILY:
            if abs(self.modulation) > self.amplitude:
                raise ValueError("cosine modulation larger than the constant part")
            if self.modulation != 0.0 and len(self.wavevector) != self.dimension:
                raise ValueError("wavevector must have one integer per axis")
            if self.modulation != 0.0 and not any(self.wavevector):
                raise ValueError("wavevector must be nonzero")
            object.__setattr__(self, "wavevector", tuple(int(k) for k in self.wavevector))
            object.__setattr__(self, "cutoff_radius", math.inf)
            object.__setattr__(self, "truncated_mass", 0.0)
            return
        rcut = self._cutoff()
        object.__setattr__(self, "cutoff_radius", rcut)
        full = self._mass(math.inf)
        object.__setattr__(
            self, "truncated_mass", 0.0 if full == 0.0 else 1.0 - self._mass(rcut) / full
        )

    @property
    def is_background(self) -> bool:
        return self.family == BACKGROUND_FAMILY

    @property
    def is_null(self) -> bool:
        """True when the kernel vanishes identically."""
        return self.amplitude == 0.0

    def _cutoff(self) -> float:
        if self.amplitude == 0.0:
            return 0.0
        if self.family == "tophat":
            return self.scale
        if self.eps_cut == 0.0:
            return math.inf
        if self.family == "gaussian":
            return self.scale * math.sqrt(2.0 * math.log(1.0 / self.eps_cut))
        return self.scale * math.log(1.0 / self.eps_cut)

    def _mass(self, radius: float) -> float:
        """L1 mass of the profile restricted to the ball of the given radius."""
        a, s, d = self.amplitude, self.scale, self.dimension
        if a == 0.0:
            return 0.0
        if self.family == "tophat":
            return a * _ball_volume(min(radius, s), d)
        if self.family == "gaussian":
            if d == 1:
                return a * s * math.sqrt(2.0 * math.pi) * math.erf(radius / (s * math.sqrt(2.0)))
            return a * 2.0 * math.pi * s * s * -math.expm1(-(radius * radius) / (2.0 * s * s))
        # exponential
        u = radius / s
        if d == 1:
            return a * 2.0 * s * -math.expm1(-u)
        tail = 0.0 if math.isinf(u) else math.exp(-u) * (1.0 + u)
        return a * 2.0 * math.pi * s * s * (1.0 - tail)

    def profile(self, r):
        """Vectorised radial profile including truncation."""
        r = np.asarray(r, dtype=float)
        a, s = self.amplitude, self.scale
        if self.family == BACKGROUND_FAMILY:
            return np.full_like(r, a)
        if self.family == "tophat":
            out = np.where(r <= s, a, 0.0)
        elif self.family == "gaussian":
            out = a * np.exp(-(r * r) / (2.0 * s * s))
        else:
            out = a * np.exp(-r / s)
        return np.where(r <= self.cutoff_radius, out, 0.0)

    def __call__(self, r: float) -> float:
        # scalar fast path used inside the event loop
        if r > self.cutoff_radius:
            return 0.0
        f = self.family
        if f == "tophat":
            return self.amplitude
        if f == "gaussian":
            return self.amplitude * math.exp(-(r * r) / (2.0 * self.scale * self.scale))
        if f == "exponential":
            return self.amplitude * math.exp(-r / self.scale)
        return self.amplitude

    # background evaluation on the torus
    def at(self, x, side_length: float):
        """Background value at position(s) ``x`` on a torus of side ``side_length``."""
        x = np.asarray(x, dtype=float)
        if self.modulation == 0.0:
            return np.full(x.shape[:-1] if x.ndim > 1 else (), self.amplitude)[()]
        k = np.asarray(self.wavevector, dtype=float)
        arg = 2.0 * math.pi * (x @ k) / side_length + self.phase
        return self.amplitude + self.modulation * np.cos(arg)

    def integral_over_torus(self, side_length: float) -> float:
        """Integral of a background kernel over the torus (the cosine mode integrates to 0)."""
        if not self.is_background:
            raise ValueError("integral over the torus is defined for background kernels")
        return self.amplitude * side_length ** self.dimension

    def sample_radius(self, u: float) -> float:
        """Inverse-CDF draw of the displacement length for density proportional to the kernel.

        ``u`` is uniform on [0, 1). In d=2 the radial density carries the
        2 pi r Jacobian. The 2-d exponential case has no closed-form inverse
        and is handled by :meth:`sample_radius_rng`.
        """
        s, R, d = self.scale, self.cutoff_radius, self.dimension
        if self.family == "tophat":
            return R * u if d == 1 else R * math.sqrt(u)
        if self.family == "gaussian":
            if d == 1:
                top = math.erf(R / (s * math.sqrt(2.0))) if math.isfinite(R) else 1.0
                return s * math.sqrt(2.0) * float(special.erfinv(u * top))
            top = -math.expm1(-(R * R) / (2.0 * s * s)) if math.isfinite(R) else 1.0
            return s * math.sqrt(-2.0 * math.log1p(-u * top))
        if self.family == "exponential" and d == 1:
            top = -math.expm1(-R / s) if math.isfinite(R) else 1.0
            return -s * math.log1p(-u * top)
        raise NotImplementedError(f"no closed-form inverse for {self.family} in d={d}")


def kernel_value(k: Kernel, r: float) -> float:
    """Radial profile value of ``k`` at distance ``r`` (0 beyond the cutoff)."""
    if r < 0:
        raise ValueError("distance must be nonnegative")
    return k(float(r))


def kernel_l1_norm(k: Kernel) -> float:
    """Integral of the truncated profile over R^d."""
    if k.is_background:
        raise ValueError("background kernels have no finite L1 norm")
    return k._mass(k.cutoff_radius)


def kernel_sup_norm(k: Kernel) -> float:
    if k.is_background:
        return k.amplitude + abs(k.modulation)
    return k.amplitude


# convenience constructors, mirroring how kernels are written in configs
def tophat(amplitude: float, radius: float, d: int = 2) -> Kernel:
    return Kernel("tophat", amplitude, radius, d)


def gaussian(amplitude: float, scale: float, d: int = 2, eps_cut: float = DEFAULT_EPS_CUT) -> Kernel:
    return Kernel("gaussian", amplitude, scale, d, eps_cut)


def exponential(amplitude: float, scale: float, d: int = 2, eps_cut: float = DEFAULT_EPS_CUT) -> Kernel:
    return Kernel("exponential", amplitude, scale, d, eps_cut)


def constant(amplitude: float, d: int = 2, modulation: float = 0.0,
             wavevector: Sequence[int] = (), phase: float = 0.0) -> Kernel:
    return Kernel(BACKGROUND_FAMILY, amplitude, 1.0, d,
                  modulation=modulation, wavevector=tuple(wavevector), phase=phase)


def zero(d: int = 2) -> Kernel:
    """The identically vanishing interaction kernel."""
    return Kernel("tophat", 0.0, 1.0, d)


class Competition(enum.Enum):
    LONG = "long"
    SHORT = "short"
    INDETERMINATE = "indeterminate"


class CompetitionClass(NamedTuple):
    regime: Competition
    theta: float  # min of a_minus / a_plus over the probes where a_plus > 0


def default_probe_radii(a_plus: Kernel, a_minus: Kernel, count: int = 64) -> np.ndarray:
    reach = max(a_plus.cutoff_radius, a_minus.cutoff_radius)
    if not math.isfinite(reach):
        reach = 10.0 * max(a_plus.scale, a_minus.scale)
    if reach == 0.0:
        reach = max(a_plus.scale, a_minus.scale)
    return np.concatenate([[0.0], np.geomspace(1e-3 * reach, 2.0 * reach, count - 1)])


def classify_competition(a_plus: Kernel, a_minus: Kernel, probe_radii=None,
                         theta_floor: float = 1e-6) -> CompetitionClass:
    """Numerically decide between long and short competition.

    Long: ``a_minus >= theta * a_plus`` at every probe with some
    ``theta >= theta_floor``. Short: some probe has ``a_plus > 0`` and
    ``a_minus == 0``, or the ratio falls below ``theta_floor`` and is still
    decreasing at the outermost probe inside the support of ``a_plus``.
    """
    if a_plus.is_background or a_minus.is_background:
        raise ValueError("competition classes are defined for interaction kernels")
    if a_plus.dimension != a_minus.dimension:
        raise ValueError("kernels must share the dimension")
    if probe_radii is None:
        probe_radii = default_probe_radii(a_plus, a_minus)
    r = np.sort(np.asarray(probe_radii, dtype=float))
    if r.size == 0:
        raise ValueError("empty probe list")
    if np.any(r < 0):
        raise ValueError("probe radii must be nonnegative")
    ap = a_plus.profile(r)
    am = a_minus.profile(r)
    inside = ap > 0
    if not inside.any():
        return CompetitionClass(Competition.LONG, math.inf)
    if np.any(am[inside] == 0.0):
        return CompetitionClass(Competition.SHORT, 0.0)
    ratio = am[inside] / ap[inside]
    theta = float(ratio.min())
    if theta >= theta_floor:
        return CompetitionClass(Competition.LONG, theta)
    if ratio.size >= 2 and ratio[-1] == theta and ratio[-1] < ratio[-2]:
        return CompetitionClass(Competition.SHORT, theta)
    return CompetitionClass(Competition.INDETERMINATE, theta)


@dataclass(frozen=True)
class ModelParams:
    """The four kernels plus the torus they live on."""

    a_plus: Kernel
    a_minus: Kernel
    b_plus: Kernel
    b_minus: Kernel
    window: "TorusWindow"  # noqa: F821 - defined in configuration
    A_plus: float = field(init=False)
    A_minus: float = field(init=False)

    def __post_init__(self):
        d = self.window.dimension
        for name in ("a_plus", "a_minus", "b_plus", "b_minus"):
            k = getattr(self, name)
            if k.dimension != d:
                raise ValueError(f"{name} has dimension {k.dimension}, window has {d}")
        for name in ("a_plus", "a_minus"):
            if getattr(self, name).is_background:
                raise ValueError(f"{name} must be an interaction kernel")
        for name in ("b_plus", "b_minus"):
            if not getattr(self, name).is_background:
                raise ValueError(f"{name} must be a background kernel")
        if not self.window.side_length > 2.0 * self.interaction_range:
            raise ValueError(
                f"window side {self.window.side_length} must exceed twice the interaction "
                f"range {self.interaction_range}"
            )
        object.__setattr__(self, "A_plus", kernel_l1_norm(self.a_plus))
        object.__setattr__(self, "A_minus", kernel_l1_norm(self.a_minus))

    @property
    def dimension(self) -> int:
        return self.window.dimension

    @property
    def interaction_range(self) -> float:
        return max(self.a_plus.cutoff_radius, self.a_minus.cutoff_radius)

    @property
    def background_birth_mass(self) -> float:
        return self.b_plus.integral_over_torus(self.window.side_length)

    def competition(self) -> CompetitionClass:
        return classify_competition(self.a_plus, self.a_minus)
