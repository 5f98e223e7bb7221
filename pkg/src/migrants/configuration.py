"""Finite point configurations on a periodic window with a cell-list index."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class TorusWindow:
    side_length: float
    dimension: int = 2

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")

    @property
    def volume(self) -> float:
        return self.side_length ** self.dimension

    def wrap(self, x):
        return np.mod(x, self.side_length)


def torus_distance(x, y, w: TorusWindow) -> float:
    """Euclidean distance under the minimum-image convention."""
    L = w.side_length
    acc = 0.0
    for a, b in zip(np.atleast_1d(x), np.atleast_1d(y)):
        dx = abs(float(a) - float(b)) % L
        if dx > L - dx:
            dx = L - dx
        acc += dx * dx
    return math.sqrt(acc)


def pairwise_torus_distances(points: np.ndarray, L: float) -> np.ndarray:
    """Condensed vector of all pair distances (i < j) on the torus."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        return np.empty(0)
    i, j = np.triu_indices(n, k=1)
    diff = np.abs(pts[i] - pts[j]) % L
    diff = np.minimum(diff, L - diff)
    return np.sqrt((diff * diff).sum(axis=1))


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box ``[lo, hi)``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))
        if len(self.lo) != len(self.hi):
            raise ValueError("box corners must have the same dimension")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box must have positive extent on every axis")

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def count(self, points) -> int:
        return int(self.contains(points).sum())


class Configuration:
    """A finite point set on a torus with a cell-list spatial index.

    Points are addressed by integer ids that are never reused. The cell side
    is at least ``cell_side`` (normally the largest interaction cutoff), so a
    fixed-radius query up to that radius scans at most 3^d cells.
    """

    def __init__(self, window: TorusWindow, cell_side: float):
        self.window = window
        L = window.side_length
        if not cell_side > 0 or not math.isfinite(cell_side):
            cell_side = L
        self.cells_per_axis = max(1, int(L // cell_side))
        self.cell_side = L / self.cells_per_axis
        self.points: dict[int, tuple[float, ...]] = {}
        self.cell_of: dict[int, tuple[int, ...]] = {}
        self.cell_index: dict[tuple[int, ...], set[int]] = {}
        self.generation_counter = 0
        self._neighbor_cells: dict[tuple[int, ...], tuple[tuple[int, ...], ...]] = {}

    @classmethod
    def from_points(cls, window: TorusWindow, cell_side: float, points) -> "Configuration":
        cfg = cls(window, cell_side)
        for p in np.asarray(points, dtype=float).reshape(-1, window.dimension):
            cfg.insert(p)
        return cfg

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[int]:
        return iter(self.points)

    def __contains__(self, pid: int) -> bool:
        return pid in self.points

    def cell_key(self, x: Sequence[float]) -> tuple[int, ...]:
        m, h = self.cells_per_axis, self.cell_side
        return tuple(min(int(c / h), m - 1) for c in x)

    def insert(self, x) -> int:
        L = self.window.side_length
        pos = tuple(float(c) % L for c in (x if isinstance(x, tuple) else np.atleast_1d(x)))
        if any(c >= L for c in pos):  # -tiny % L rounds to L
            pos = tuple(0.0 if c >= L else c for c in pos)
        if len(pos) != self.window.dimension:
            raise ValueError("position has the wrong dimension")
        pid = self.generation_counter
        self.generation_counter += 1
        key = self.cell_key(pos)
        self.points[pid] = pos
        self.cell_of[pid] = key
        self.cell_index.setdefault(key, set()).add(pid)
        return pid

    def remove(self, pid: int) -> tuple[float, ...]:
        pos = self.points.pop(pid)
        key = self.cell_of.pop(pid)
        members = self.cell_index[key]
        members.discard(pid)
        if not members:
            del self.cell_index[key]
        return pos

    def positions(self) -> np.ndarray:
        """Point coordinates as an (n, d) array in insertion order."""
        if not self.points:
            return np.empty((0, self.window.dimension))
        return np.array(list(self.points.values()), dtype=float)

    def ids(self) -> list[int]:
        return list(self.points)

    def _cells_around(self, key: tuple[int, ...], rings: int = 1) -> tuple[tuple[int, ...], ...]:
        cached = self._neighbor_cells.get((key, rings))
        if cached is None:
            m = self.cells_per_axis
            span = range(-rings, rings + 1) if 2 * rings + 1 < m else range(m)
            offsets = itertools.product(span, repeat=len(key))
            cached = tuple(sorted({tuple((k + o) % m for k, o in zip(key, off)) for off in offsets}))
            self._neighbor_cells[(key, rings)] = cached
        return cached

    def iter_neighbors(self, x: Sequence[float], R: float, exclude: int | None = None
                       ) -> Iterator[tuple[int, float]]:
        """Yield ``(id, distance)`` for resident points within torus distance ``R`` of ``x``.

        Radii above the cell side are served by scanning more rings of cells.
        """
        rings = 1 if R <= self.cell_side else math.ceil(R / self.cell_side)
        L = self.window.side_length
        half = 0.5 * L
        points = self.points
        cell_index = self.cell_index
        if len(x) == 1:
            x0 = x[0]
            for key in self._cells_around(self.cell_key(x), rings):
                for pid in cell_index.get(key, ()):
                    if pid == exclude:
                        continue
                    dx = abs(points[pid][0] - x0)
                    if dx > half:
                        dx = L - dx
                    if dx <= R:
                        yield pid, dx
        else:
            x0, x1 = x[0], x[1]
            R2 = R * R
            for key in self._cells_around(self.cell_key(x), rings):
                members = cell_index.get(key)
                if not members:
                    continue
                for pid in members:
                    if pid == exclude:
                        continue
                    p = points[pid]
                    dx = abs(p[0] - x0)
                    if dx > half:
                        dx = L - dx
                    dy = abs(p[1] - x1)
                    if dy > half:
                        dy = L - dy
                    r2 = dx * dx + dy * dy
                    if r2 <= R2:
                        yield pid, math.sqrt(r2)

    def rebuilt_index(self) -> dict[tuple[int, ...], set[int]]:
        """Cell index recomputed from scratch (for consistency checks)."""
        index: dict[tuple[int, ...], set[int]] = {}
        for pid, pos in self.points.items():
            index.setdefault(self.cell_key(pos), set()).add(pid)
        return index


def neighbors_within(cfg: Configuration, x, R: float, exclude: int | None = None
                     ) -> list[tuple[int, float]]:
    """Points within torus distance ``R`` of ``x``, sorted by id.

    Pass ``exclude`` to drop a resident point (typically the query point).
    """
    if R > cfg.cell_side * (1 + 1e-12):
        raise ValueError(f"query radius {R} exceeds cell side {cfg.cell_side}")
    pos = tuple(float(c) for c in np.atleast_1d(x))
    return sorted(cfg.iter_neighbors(pos, R, exclude))


def count_in_box(cfg: Configuration, box: Box) -> int:
    """Number of points of ``cfg`` in ``box``."""
    L = cfg.window.side_length
    if any(l < 0 or h > L for l, h in zip(box.lo, box.hi)):
        raise ValueError("box must lie inside the window")
    return box.count(cfg.positions())


def poisson_points(window: TorusWindow, intensity: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson sample restricted to the window."""
    n = rng.poisson(intensity * window.volume)
    return rng.random((n, window.dimension)) * window.side_length


SNAPSHOT_COLUMNS = ("replicate_id", "time", "point_id")


def write_snapshots_csv(path, rows: Iterable[tuple[int, float, int, Sequence[float]]],
                        dimension: int, header_comment: str | None = None) -> None:
    """Write snapshot rows ``(replicate_id, time, point_id, position)``."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_COLUMNS + tuple(f"x{i + 1}" for i in range(dimension)))
        for rep, t, pid, pos in rows:
            w.writerow([rep, repr(float(t)), pid, *(repr(float(c)) for c in pos)])


def read_snapshots_csv(path) -> dict[float, dict[int, np.ndarray]]:
    """Inverse of :func:`write_snapshots_csv`: ``{time: {replicate_id: (n, d) array}}``.

    Replicates listed without points at a time (marker rows with ``point_id``
    equal to -1) are kept as empty arrays.
    """
    out: dict[float, dict[int, list]] = {}
    dim = None
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader)
        dim = len(header) - len(SNAPSHOT_COLUMNS)
        for row in reader:
            rep, t, pid = int(row[0]), float(row[1]), int(row[2])
            reps = out.setdefault(t, {})
            pts = reps.setdefault(rep, [])
            if pid >= 0:
                pts.append([float(v) for v in row[3:]])
    return {
        t: {rep: np.array(p, dtype=float).reshape(-1, dim) for rep, p in sorted(reps.items())}
        for t, reps in sorted(out.items())
    }
