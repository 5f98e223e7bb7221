"""Grid solver for the mean-field kinetic equation of the density.

The default right-hand side is

    d rho/dt = (b_plus - b_minus) rho + a_plus * rho - rho (a_minus * rho)

with ``*`` the convolution on the torus. ``immigration="source"`` switches
the background arrival term to ``b_plus - b_minus rho``, the first-moment
closure of the particle dynamics, which is what the simulator's mean
density follows when interactions vanish.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import Kernel, ModelParams

log = logging.getLogger(__name__)

IMMIGRATION_FORMS = ("proportional", "source")
NEGATIVE_TOL = 1e-6
CLIP_FLOOR = -1e-12
MIN_DT = 1e-12
MAX_CLIP_FRACTION = 1e-3


class StiffnessError(RuntimeError):
    """Step halving went below the minimum step size."""


@dataclass
class DensityField:
    values: np.ndarray
    side_length: float
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (1, 2) or len(set(self.values.shape)) != 1:
            raise ValueError("density must live on a cubic 1-d or 2-d lattice")

    @classmethod
    def constant(cls, value: float, nodes: int, side_length: float, dimension: int = 2,
                 time: float = 0.0) -> "DensityField":
        return cls(np.full((nodes,) * dimension, float(value)), side_length, time)

    @property
    def dimension(self) -> int:
        return self.values.ndim

    @property
    def nodes(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return self.side_length / self.nodes

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    def coordinates(self) -> np.ndarray:
        """Node positions, shape ``values.shape + (d,)``."""
        axis = np.arange(self.nodes) * self.spacing
        mesh = np.meshgrid(*([axis] * self.dimension), indexing="ij")
        return np.stack(mesh, axis=-1)

    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def mean(self) -> float:
        return float(self.values.mean())

    def same_grid(self, other: "DensityField") -> bool:
        return self.values.shape == other.values.shape and self.side_length == other.side_length


def lattice_offsets(nodes: int, side_length: float, dimension: int) -> np.ndarray:
    """Minimum-image distance of each lattice offset from the origin."""
    h = side_length / nodes
    j = np.arange(nodes)
    delta = np.where(j <= nodes // 2, j, j - nodes) * h
    mesh = np.meshgrid(*([delta] * dimension), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


@dataclass
class TabulatedKernel:
    """A radial kernel sampled at cell centres and multiplied by the cell volume."""

    kernel: Kernel
    nodes: int
    side_length: float
    dimension: int
    weights: np.ndarray = field(init=False, repr=False)
    spectrum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = lattice_offsets(self.nodes, self.side_length, self.dimension)
        h = self.side_length / self.nodes
        self.weights = self.kernel.profile(r) * h ** self.dimension
        self.spectrum = np.fft.rfftn(self.weights)

    @property
    def lattice_mass(self) -> float:
        return float(self.weights.sum())

    def matches(self, f: DensityField) -> bool:
        return (f.nodes, f.side_length, f.dimension) == (self.nodes, self.side_length, self.dimension)


def tabulate(k: Kernel | np.ndarray, f: DensityField) -> TabulatedKernel:
    return TabulatedKernel(k, f.nodes, f.side_length, f.dimension)


def circular_convolve(f: DensityField, k: TabulatedKernel | Kernel) -> DensityField:
    """``sum_y k(x - y) rho(y) h^d`` on the periodic lattice, via FFT."""
    if isinstance(k, Kernel):
        k = tabulate(k, f)
    if not k.matches(f):
        raise ValueError("kernel table and density live on different grids")
    out = np.fft.irfftn(np.fft.rfftn(f.values) * k.spectrum, s=f.values.shape, axes=range(f.values.ndim))
    return DensityField(out, f.side_length, f.time)


class KineticModel:
    """Kernels and backgrounds tabulated once on a fixed lattice."""

    def __init__(self, p: ModelParams, nodes: int, immigration: str = "proportional"):
        if immigration not in IMMIGRATION_FORMS:
            raise ValueError(f"immigration must be one of {IMMIGRATION_FORMS}")
        self.params = p
        self.immigration = immigration
        L, d = p.window.side_length, p.dimension
        probe = DensityField.constant(0.0, nodes, L, d)
        self.a_plus = tabulate(p.a_plus, probe)
        self.a_minus = tabulate(p.a_minus, probe)
        x = probe.coordinates()
        self.b_plus = np.broadcast_to(p.b_plus.at(x, L), probe.values.shape).copy()
        self.b_minus = np.broadcast_to(p.b_minus.at(x, L), probe.values.shape).copy()
        self.nodes, self.side_length, self.dimension = nodes, L, d

    @property
    def lattice_masses(self) -> dict:
        return {"A_plus": self.a_plus.lattice_mass, "A_minus": self.a_minus.lattice_mass,
                "A_plus_exact": self.params.A_plus, "A_minus_exact": self.params.A_minus}

    def _conv(self, values: np.ndarray, k: TabulatedKernel) -> np.ndarray:
        return np.fft.irfftn(np.fft.rfftn(values) * k.spectrum, s=values.shape, axes=range(values.ndim))

    def rhs_values(self, rho: np.ndarray) -> np.ndarray:
        if self.immigration == "proportional":
            out = (self.b_plus - self.b_minus) * rho
        else:
            out = self.b_plus - self.b_minus * rho
        if not self.params.a_plus.is_null:
            out = out + self._conv(rho, self.a_plus)
        if not self.params.a_minus.is_null:
            out = out - rho * self._conv(rho, self.a_minus)
        return out

    def rhs(self, rho: DensityField) -> DensityField:
        if (rho.nodes, rho.side_length, rho.dimension) != (self.nodes, self.side_length, self.dimension):
            raise ValueError("density is not on the model grid")
        return DensityField(self.rhs_values(rho.values), rho.side_length, rho.time)

    def stability_dt(self, rho0: DensityField) -> float:
        spread = float(np.max(np.abs(self.b_plus - self.b_minus)))
        scale = spread + self.params.A_plus + self.params.A_minus * float(rho0.values.max()) * 4.0
        return 0.5 / scale if scale > 0 else math.inf


def ke_rhs(rho: DensityField, p: ModelParams, immigration: str = "proportional") -> DensityField:
    """Time derivative of the density under the kinetic equation."""
    return KineticModel(p, rho.nodes, immigration).rhs(rho)


@dataclass
class Trajectory:
    times: list[float]
    fields: list[DensityField]
    steps: int = 0
    halvings: int = 0
    clip_events: int = 0
    lattice_masses: dict = field(default_factory=dict)

    def rows(self):
        for t, f in zip(self.times, self.fields):
            yield t, f.mean(), float(f.values.min()), float(f.values.max())

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["time", "mean_density", "min", "max"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def _rk4(model: KineticModel, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = model.rhs_values(y)
    k2 = model.rhs_values(y + 0.5 * dt * k1)
    k3 = model.rhs_values(y + 0.5 * dt * k2)
    k4 = model.rhs_values(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rho0: DensityField, p: ModelParams, t_end: float, dt: float | None = None,
              snapshot_times: Sequence[float] | None = None, immigration: str = "proportional",
              model: KineticModel | None = None) -> Trajectory:
    """Classical RK4 with fixed step, halving a step that would go negative.

    Values in ``[-1e-6, 0)`` after a step are clipped to zero and counted;
    more than 0.1% clipped node-steps over the run is an error.
    """
    model = model or KineticModel(p, rho0.nodes, immigration)
    dt_max = model.stability_dt(rho0)
    if dt is None:
        dt = dt_max
    elif dt > dt_max:
        log.warning("dt=%g above the stability heuristic %g; using the latter", dt, dt_max)
        dt = dt_max
    if not t_end >= 0:
        raise ValueError("t_end must be nonnegative")
    marks = sorted(set(float(t) for t in (snapshot_times if snapshot_times is not None else [t_end])))
    if marks and (marks[0] < 0 or marks[-1] > t_end):
        raise ValueError("snapshot times must lie in [0, t_end]")
    traj = Trajectory([], [], lattice_masses=model.lattice_masses)
    y = rho0.values.copy()
    t = rho0.time
    node_count = y.size
    for mark in marks:
        target = rho0.time + mark
        while t < target:
            h = min(dt, target - t)
            if target - (t + h) < 1e-12 * max(1.0, abs(target)):
                h = target - t
            y, t = _advance(model, y, t, h, traj)
        traj.times.append(mark)
        traj.fields.append(DensityField(y.copy(), rho0.side_length, t))
    if traj.steps and traj.clip_events > MAX_CLIP_FRACTION * node_count * traj.steps:
        raise RuntimeError(f"persistent negativity: {traj.clip_events} clipped node-steps")
    return traj


def _advance(model: KineticModel, y: np.ndarray, t: float, h: float, traj: Trajectory):
    new = _rk4(model, y, h)
    if new.min() < -NEGATIVE_TOL:
        if h / 2 < MIN_DT:
            raise StiffnessError(f"step size fell below {MIN_DT} at t={t}")
        traj.halvings += 1
        y, t = _advance(model, y, t, h / 2, traj)
        return _advance(model, y, t, h / 2, traj)
    neg = new < 0
    if neg.any():
        traj.clip_events += int(np.count_nonzero(new < CLIP_FLOOR))
        new = np.where(neg, 0.0, new)
    traj.steps += 1
    return new, t + h


def homogeneous_fixed_point(p: ModelParams, immigration: str = "proportional"):
    """Positive spatially constant equilibrium of the kinetic equation.

    Returns ``None`` when every positive homogeneous solution decays to
    zero and ``math.inf`` when it grows without bound (no competition).
    """
    for k in (p.b_plus, p.b_minus):
        if k.modulation != 0.0:
            raise ValueError("homogeneous fixed point needs constant backgrounds")
    bp, bm, Ap, Am = p.b_plus.amplitude, p.b_minus.amplitude, p.A_plus, p.A_minus
    if immigration == "proportional":
        growth = bp - bm + Ap
        if Am > 0:
            return growth / Am if growth > 0 else None
        return math.inf if growth > 0 else None
    # source form: Am rho^2 + (bm - Ap) rho - bp = 0
    lin = Ap - bm
    if Am > 0:
        disc = lin * lin + 4.0 * Am * bp
        root = (lin + math.sqrt(disc)) / (2.0 * Am)
        return root if root > 0 else None
    if lin < 0:
        return bp / -lin if bp > 0 else None
    return math.inf if (lin > 0 or bp > 0) else None


def write_field_dump(path_stem, f: DensityField) -> None:
    """Binary row-major float64 values plus a JSON header next to them."""
    np.ascontiguousarray(f.values, dtype="<f8").tofile(f"{path_stem}.bin")
    header = {"dims": list(f.values.shape), "h": f.spacing, "time": f.time,
              "dtype": "float64-le", "order": "row-major"}
    with open(f"{path_stem}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True)


def read_field_dump(path_stem, side_length: float | None = None) -> DensityField:
    with open(f"{path_stem}.json") as fh:
        header = json.load(fh)
    values = np.fromfile(f"{path_stem}.bin", dtype="<f8").reshape(header["dims"])
    L = side_length if side_length is not None else header["h"] * header["dims"][0]
    return DensityField(values, L, header["time"])
