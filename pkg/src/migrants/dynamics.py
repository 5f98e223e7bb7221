"""Exact event-driven simulation of the immigration-emigration dynamics on a torus.

Newcomers arrive at ``x`` with rate density ``b_plus(x) + sum_y a_plus(x - y)``
and a resident at ``x`` leaves with rate ``b_minus(x) + sum_{y != x} a_minus(x - y)``.
The direct Gillespie method is used; per-particle death rates are kept in a
cache that is updated incrementally from the neighbours within the cutoff of
``a_minus``.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .configuration import Configuration, TorusWindow, poisson_points
from .kernels import Kernel, ModelParams

DEFAULT_EVENT_CAP = 100_000_000
DRIFT_CHECK_EVERY = 10_000
DRIFT_RTOL = 1e-9


class ExplosionSuspected(RuntimeError):
    """A replicate exceeded its hard event cap."""


class RateDriftError(RuntimeError):
    """Incrementally maintained death rates disagree with a recomputation."""


class EventKind(enum.Enum):
    BIRTH = "birth"
    DEATH = "death"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    time: float
    position: tuple[float, ...]
    point_id: int


class RandomStream:
    """Buffered uniform draws on top of a numpy Generator.

    Scalar draws from a Generator cost about a microsecond each; pulling
    them in blocks keeps the event loop cheap while staying deterministic.
    """

    def __init__(self, rng: np.random.Generator | int | None = None, block: int = 4096):
        self.generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._block = block
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.generator.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def as_stream(rng) -> RandomStream:
    return rng if isinstance(rng, RandomStream) else RandomStream(rng)


def replicate_seed(master_seed: int, replicate_id: int) -> np.random.SeedSequence:
    """Independent, worker-count-free seed for one replicate."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replicate_id),))


def index_cell_side(p: ModelParams) -> float:
    """Cell side for the spatial index: the competition cutoff, which is the
    only radius queried per event."""
    if not p.a_minus.is_null:
        return p.a_minus.cutoff_radius
    return p.interaction_range or p.window.side_length


def new_configuration(p: ModelParams, points=None) -> Configuration:
    cfg = Configuration(p.window, index_cell_side(p))
    if points is not None:
        for x in np.asarray(points, dtype=float).reshape(-1, p.dimension):
            cfg.insert(tuple(x))
    return cfg


def _background(k: Kernel, x, L: float) -> float:
    if k.modulation == 0.0:
        return k.amplitude
    return float(k.at(np.asarray(x, dtype=float), L))


def immigration_rate_at(x, cfg: Configuration, p: ModelParams) -> float:
    """Rate density for a newcomer at ``x`` given the configuration."""
    pos = tuple(float(c) for c in np.atleast_1d(x))
    rate = _background(p.b_plus, pos, p.window.side_length)
    if not p.a_plus.is_null:
        for _, r in cfg.iter_neighbors(pos, p.a_plus.cutoff_radius):
            rate += p.a_plus(r)
    return rate


def emigration_rate_at(x, cfg_without_x: Configuration, p: ModelParams) -> float:
    """Leaving rate of a particle at ``x``; ``x`` must not be in the configuration."""
    pos = tuple(float(c) for c in np.atleast_1d(x))
    rate = _background(p.b_minus, pos, p.window.side_length)
    if not p.a_minus.is_null:
        for _, r in cfg_without_x.iter_neighbors(pos, p.a_minus.cutoff_radius):
            rate += p.a_minus(r)
    return rate


class RateCache:
    """Per-particle death rates and the total birth rate.

    Rates live in a dense array (slot order, swap-with-last on removal) so
    the death selection is a single cumulative sum.
    """

    def __init__(self, p: ModelParams, cfg: Configuration):
        self.params = p
        self.background_birth_mass = p.background_birth_mass
        self.attraction_mass_per_particle = p.A_plus
        self.slot_of: dict[int, int] = {}
        self.ids: list[int] = []
        self.rates = np.zeros(max(64, 2 * len(cfg)))
        self.n = 0
        for pid in cfg.ids():
            self._append(pid, 0.0)
        for pid in cfg.ids():
            self.rates[self.slot_of[pid]] = self.recompute(cfg, pid)

    def _append(self, pid: int, rate: float) -> None:
        if self.n == len(self.rates):
            self.rates = np.concatenate([self.rates, np.zeros(len(self.rates))])
        self.slot_of[pid] = self.n
        self.ids.append(pid)
        self.rates[self.n] = rate
        self.n += 1

    def _drop(self, pid: int) -> None:
        slot = self.slot_of.pop(pid)
        last = self.n - 1
        last_id = self.ids.pop()
        if slot != last:
            self.ids[slot] = last_id
            self.slot_of[last_id] = slot
            self.rates[slot] = self.rates[last]
        self.rates[last] = 0.0
        self.n = last

    def death_rate(self, pid: int) -> float:
        return float(self.rates[self.slot_of[pid]])

    @property
    def total_birth_rate(self) -> float:
        return self.background_birth_mass + self.n * self.attraction_mass_per_particle

    @property
    def total_death_rate(self) -> float:
        return float(self.rates[: self.n].sum()) if self.n else 0.0

    def recompute(self, cfg: Configuration, pid: int) -> float:
        """From-scratch death rate of resident ``pid``."""
        p = self.params
        pos = cfg.points[pid]
        rate = _background(p.b_minus, pos, p.window.side_length)
        if not p.a_minus.is_null:
            a = p.a_minus
            for _, r in cfg.iter_neighbors(pos, a.cutoff_radius, exclude=pid):
                rate += a(r)
        return rate

    def add_point(self, cfg: Configuration, x: tuple[float, ...]) -> int:
        """Insert ``x`` and add its competition contributions."""
        p = self.params
        a = p.a_minus
        own = _background(p.b_minus, x, p.window.side_length)
        pid = cfg.insert(x)
        if not a.is_null:
            rates, slot_of = self.rates, self.slot_of
            for nid, r in cfg.iter_neighbors(cfg.points[pid], a.cutoff_radius, exclude=pid):
                v = a(r)
                rates[slot_of[nid]] += v
                own += v
        self._append(pid, own)
        return pid

    def remove_point(self, cfg: Configuration, pid: int) -> tuple[float, ...]:
        p = self.params
        a = p.a_minus
        pos = cfg.points[pid]
        self._drop(pid)
        if not a.is_null:
            rates, slot_of = self.rates, self.slot_of
            for nid, r in cfg.iter_neighbors(pos, a.cutoff_radius, exclude=pid):
                rates[slot_of[nid]] -= a(r)
        cfg.remove(pid)
        return pos

    def check_drift(self, cfg: Configuration, rtol: float = DRIFT_RTOL) -> float:
        """Compare every cached rate with a recomputation; return the worst relative gap."""
        p = self.params
        floor = p.a_minus.amplitude + p.b_minus.amplitude + abs(p.b_minus.modulation)
        worst = 0.0
        for pid in self.ids:
            ref = self.recompute(cfg, pid)
            got = self.death_rate(pid)
            gap = abs(got - ref) / max(abs(ref), floor, 1e-300)
            worst = max(worst, gap)
        if worst > rtol:
            raise RateDriftError(f"cached death rates drifted by {worst:.3e} (tolerance {rtol:.1e})")
        return worst


def _sample_radius(k: Kernel, stream: RandomStream) -> float:
    if k.family == "exponential" and k.dimension == 2:
        # Gamma(2, s) truncated to the cutoff, by rejection
        R = k.cutoff_radius
        while True:
            r = -k.scale * math.log((1.0 - stream.uniform()) * (1.0 - stream.uniform()))
            if r <= R:
                return r
    return k.sample_radius(stream.uniform())


def sample_displacement(k: Kernel, stream: RandomStream) -> tuple[float, ...]:
    """Random vector with density proportional to the radial kernel ``k``."""
    r = _sample_radius(k, stream)
    if k.dimension == 1:
        return (r if stream.uniform() < 0.5 else -r,)
    phi = 2.0 * math.pi * stream.uniform()
    return (r * math.cos(phi), r * math.sin(phi))


def _sample_background(k: Kernel, L: float, d: int, stream: RandomStream) -> tuple[float, ...]:
    if k.modulation == 0.0:
        return tuple(L * stream.uniform() for _ in range(d))
    top = k.amplitude + abs(k.modulation)
    while True:
        x = tuple(L * stream.uniform() for _ in range(d))
        if stream.uniform() * top < _background(k, x, L):
            return x


def sample_birth_location(cfg: Configuration, p: ModelParams, rng, cache: RateCache | None = None
                          ) -> tuple[float, ...]:
    """Draw a newcomer position from the normalised immigration rate density."""
    stream = as_stream(rng)
    n = len(cfg)
    bg = p.background_birth_mass
    B = bg + n * p.A_plus
    if not B > 0:
        raise ValueError("total birth rate is zero; no birth can be sampled")
    L, d = p.window.side_length, p.dimension
    if stream.uniform() * B < bg:
        return _sample_background(p.b_plus, L, d, stream)
    ids = cache.ids if cache is not None else cfg.ids()
    parent = cfg.points[ids[min(int(stream.uniform() * n), n - 1)]]
    disp = sample_displacement(p.a_plus, stream)
    out = []
    for c, dc in zip(parent, disp):
        v = (c + dc) % L
        out.append(0.0 if v >= L else v)
    return tuple(out)


class _Pending(NamedTuple):
    time: float
    birth_mass: float
    cumulative: np.ndarray | None


def _draw_time(cache: RateCache, stream: RandomStream, time: float) -> _Pending | None:
    n = cache.n
    B = cache.background_birth_mass + n * cache.attraction_mass_per_particle
    cum = np.cumsum(cache.rates[:n]) if n else None
    total = B + (float(cum[-1]) if n else 0.0)
    if not total > 0:
        return None
    return _Pending(time - math.log(1.0 - stream.uniform()) / total, B, cum)


def _apply(pending: _Pending, cfg: Configuration, cache: RateCache, p: ModelParams,
           stream: RandomStream) -> Event:
    B, cum = pending.birth_mass, pending.cumulative
    D = float(cum[-1]) if cum is not None else 0.0
    target = stream.uniform() * (B + D)
    if target < B or cum is None:
        x = sample_birth_location(cfg, p, stream, cache)
        pid = cache.add_point(cfg, x)
        return Event(EventKind.BIRTH, pending.time, cfg.points[pid], pid)
    n = len(cum)
    slot = min(int(np.searchsorted(cum, target - B, side="right")), n - 1)
    # a draw on a cumulative boundary must not select a zero-rate particle
    while cache.rates[slot] == 0.0 and slot > 0:
        slot -= 1
    pid = cache.ids[slot]
    pos = cache.remove_point(cfg, pid)
    return Event(EventKind.DEATH, pending.time, pos, pid)


def step(cfg: Configuration, cache: RateCache, p: ModelParams, rng, time: float = 0.0) -> Event | None:
    """Advance by one event. Returns None when the empty state is absorbing."""
    stream = as_stream(rng)
    pending = _draw_time(cache, stream, time)
    if pending is None:
        return None
    return _apply(pending, cfg, cache, p, stream)


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "empty"  # poisson | points | empty
    intensity: float = 0.0
    points: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("poisson", "points", "empty"):
            raise ValueError(f"unknown initial condition {self.kind!r}")
        if self.kind == "poisson" and not self.intensity >= 0:
            raise ValueError("Poisson intensity must be nonnegative")

    @classmethod
    def poisson(cls, intensity: float) -> "InitialCondition":
        return cls("poisson", float(intensity))

    @classmethod
    def explicit(cls, points) -> "InitialCondition":
        arr = np.asarray(points, dtype=float)
        return cls("points", 0.0, tuple(tuple(map(float, np.atleast_1d(r))) for r in arr))

    def realise(self, window: TorusWindow, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "poisson":
            return poisson_points(window, self.intensity, rng)
        if self.kind == "points":
            return np.asarray(self.points, dtype=float).reshape(-1, window.dimension)
        return np.empty((0, window.dimension))


@dataclass
class Snapshot:
    time: float
    ids: np.ndarray
    positions: np.ndarray

    @property
    def count(self) -> int:
        return len(self.ids)


@dataclass
class ReplicateRecord:
    replicate_id: int
    t_end: float
    event_count: int = 0
    births: int = 0
    deaths: int = 0
    final_population: int = 0
    final_time: float = 0.0
    absorbed_empty: bool = False
    absorbed_time: float | None = None
    snapshots: list[Snapshot] = field(default_factory=list)
    events: list[Event] | None = None
    max_drift: float = 0.0

    def summary(self) -> dict:
        return {
            "replicate_id": self.replicate_id,
            "t_end": self.t_end,
            "event_count": self.event_count,
            "births": self.births,
            "deaths": self.deaths,
            "final_population": self.final_population,
            "absorbed_empty": self.absorbed_empty,
            "absorbed_time": self.absorbed_time,
            "snapshot_times": [s.time for s in self.snapshots],
            "snapshot_counts": [s.count for s in self.snapshots],
        }


def _snapshot(t: float, cfg: Configuration) -> Snapshot:
    return Snapshot(t, np.array(cfg.ids(), dtype=np.int64), cfg.positions())


def run_replicate(p: ModelParams, init: InitialCondition, t_end: float, seed,
                  snapshot_times: Sequence[float] = (), observers: Iterable[Callable] = (),
                  replicate_id: int = 0, event_cap: int = DEFAULT_EVENT_CAP,
                  record_events: bool = False, drift_check_every: int = DRIFT_CHECK_EVERY
                  ) -> ReplicateRecord:
    """Simulate one replicate on ``[0, t_end]``.

    Snapshots are taken at each requested time (the state just before the
    first event after that time); ``observers`` are called as
    ``observer(time, cfg)`` at the same instants. ``seed`` may be an int, a
    SeedSequence or a Generator.
    """
    if not t_end >= 0:
        raise ValueError("t_end must be nonnegative")
    times = sorted(float(t) for t in snapshot_times)
    if times and (times[0] < 0 or times[-1] > t_end):
        raise ValueError("snapshot times must lie in [0, t_end]")
    observers = list(observers)
    gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stream = RandomStream(gen)
    cfg = new_configuration(p, init.realise(p.window, gen))
    cache = RateCache(p, cfg)
    rec = ReplicateRecord(replicate_id, float(t_end))
    if record_events:
        rec.events = []

    def emit(t):
        rec.snapshots.append(_snapshot(t, cfg))
        for obs in observers:
            obs(t, cfg)

    t = 0.0
    k = 0
    while k < len(times) and times[k] <= 0.0:
        emit(times[k])
        k += 1
    while t_end > 0:
        pending = _draw_time(cache, stream, t)
        next_t = pending.time if pending is not None else math.inf
        while k < len(times) and times[k] < next_t:
            emit(times[k])
            k += 1
        if pending is None:
            rec.absorbed_empty = True
            rec.absorbed_time = t
            break
        if next_t > t_end:
            break
        ev = _apply(pending, cfg, cache, p, stream)
        t = ev.time
        rec.event_count += 1
        if ev.kind is EventKind.BIRTH:
            rec.births += 1
        else:
            rec.deaths += 1
        if rec.events is not None:
            rec.events.append(ev)
        if rec.event_count >= event_cap:
            raise ExplosionSuspected(
                f"replicate {replicate_id}: {rec.event_count} events by t={t:.6g} "
                f"(population {len(cfg)})"
            )
        if drift_check_every and rec.event_count % drift_check_every == 0:
            rec.max_drift = max(rec.max_drift, cache.check_drift(cfg))
    rec.final_population = len(cfg)
    rec.final_time = min(t_end, t) if rec.absorbed_empty else t_end
    return rec



def _run_one(args) -> ReplicateRecord:
    p, init, t_end, master_seed, rid, snapshot_times, event_cap, record_events = args
    return run_replicate(p, init, t_end, replicate_seed(master_seed, rid), snapshot_times,
                         replicate_id=rid, event_cap=event_cap, record_events=record_events)


def run_ensemble(p: ModelParams, init: InitialCondition, t_end: float, master_seed: int,
                 replicates: int, snapshot_times: Sequence[float] = (), workers: int = 1,
                 event_cap: int = DEFAULT_EVENT_CAP, record_events: bool = False,
                 first_id: int = 0) -> list[ReplicateRecord]:
    """Run independent replicates; the result is ordered by replicate id.

    Each replicate draws from its own stream derived from
    ``(master_seed, replicate_id)``, so the output does not depend on ``workers``.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    jobs = [(p, init, t_end, master_seed, rid, tuple(snapshot_times), event_cap, record_events)
            for rid in range(first_id, first_id + replicates)]
    if workers <= 1 or replicates == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(_run_one, jobs, chunksize=max(1, replicates // (8 * workers))))
    return sorted(records, key=lambda r: r.replicate_id)


def snapshots_at(records: Sequence[ReplicateRecord], t: float) -> list[np.ndarray]:
    """Positions of every replicate at snapshot time ``t``."""
    out = []
    for rec in records:
        for s in rec.snapshots:
            if s.time == t:
                out.append(s.positions)
                break
        else:
            raise KeyError(f"replicate {rec.replicate_id} has no snapshot at t={t}")
    return out


def write_event_log(path, events: Sequence[Event], dimension: int, header_comment: str | None = None
                    ) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["time", "kind"] + [f"x{i + 1}" for i in range(dimension)] + ["point_id"])
        for ev in events:
            w.writerow([repr(ev.time), ev.kind.value, *(repr(c) for c in ev.position), ev.point_id])
