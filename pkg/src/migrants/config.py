"""Experiment configuration: TOML loading, dotted overrides, validation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from . import kernels as K
from .configuration import Box, TorusWindow
from .dynamics import DEFAULT_EVENT_CAP, InitialCondition
from .kinetic import IMMIGRATION_FORMS

MODES = ("simulate", "kinetic", "compare", "analyze", "verify")

DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {"dimension": 2},
    "initial": {"kind": "empty", "intensity": 0.0},
    "run": {"snapshot_times": None, "replicates": 1, "event_cap": DEFAULT_EVENT_CAP},
    "analysis": {"boxes": [], "n_max": 6, "confidence": 0.95, "n_boot": 1000, "r_bins": None,
                 "snapshots": None},
    "kinetic": {"nodes": 64, "dt": None, "t_end": None, "immigration": "proportional",
                "snapshot_times": None, "dump_fields": False},
    "verify": {"duality_instances": 20, "moment_configs": 50, "mc_samples": 20000},
}

KERNEL_KEYS = {"family", "amplitude", "mass", "scale", "radius", "eps_cut", "modulation",
               "wavevector", "phase"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` in place; the value is read as a TOML literal when possible."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, text = assignment.split("=", 1)
    key = key.strip()
    parts = key.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(".".join(parts[: i + 1]), "is not a table")
        node = nxt
    node[parts[-1]] = _parse_value(text.strip())


def merged_with_defaults(raw: dict) -> dict:
    out = copy.deepcopy(raw)
    for block, values in DEFAULTS.items():
        tbl = out.setdefault(block, {})
        if not isinstance(tbl, dict):
            raise ConfigError(block, "must be a table")
        for k, v in values.items():
            tbl.setdefault(k, copy.deepcopy(v))
    return out


def config_hash(cfg: dict) -> str:
    """Short digest of the canonical JSON form, ignoring worker count."""
    clean = copy.deepcopy(cfg)
    clean.get("run", {}).pop("workers", None)
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _number(tbl: dict, key: str, path: str, positive=False, nonneg=False, integer=False):
    v = tbl.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}.{key}", "expected an integer")
    if not math.isfinite(v) and not (key == "event_cap" and v == math.inf):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}", "must be positive")
    if nonneg and not v >= 0:
        raise ConfigError(f"{path}.{key}", "must be nonnegative")
    return int(v) if integer else float(v)


def build_kernel(spec, d: int, path: str, background: bool) -> K.Kernel:
    """Kernel from a config entry: a bare number, or a table with family and parameters."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        if background:
            if spec < 0:
                raise ConfigError(path, "must be nonnegative")
            return K.constant(float(spec), d)
        if spec != 0:
            raise ConfigError(path, "a bare number for an interaction kernel must be 0")
        return K.zero(d)
    if not isinstance(spec, dict):
        raise ConfigError(path, f"expected a number or a table, got {spec!r}")
    unknown = set(spec) - KERNEL_KEYS
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown kernel parameter")
    family = spec.get("family", K.BACKGROUND_FAMILY if background else None)
    if background and family != K.BACKGROUND_FAMILY:
        raise ConfigError(f"{path}.family", f"background kernels must be {K.BACKGROUND_FAMILY!r}")
    if not background and family not in K.INTERACTION_FAMILIES:
        raise ConfigError(f"{path}.family", f"expected one of {K.INTERACTION_FAMILIES}")
    if "amplitude" in spec and "mass" in spec:
        raise ConfigError(f"{path}.mass", "give either amplitude or mass, not both")
    if background and "mass" in spec:
        raise ConfigError(f"{path}.mass", "background kernels take an amplitude")
    amplitude = _number(spec, "amplitude", path, nonneg=True) if "amplitude" in spec else 1.0
    try:
        make = lambda a: K.Kernel(
            family, a, float(spec.get("scale", spec.get("radius", 1.0))), d,
            float(spec.get("eps_cut", K.DEFAULT_EPS_CUT)), float(spec.get("modulation", 0.0)),
            tuple(spec.get("wavevector", ())), float(spec.get("phase", 0.0)))
        if "mass" in spec:
            mass = _number(spec, "mass", path, nonneg=True)
            amplitude = mass / K.kernel_l1_norm(make(1.0))
        return make(amplitude)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


@dataclass
class ExperimentConfig:
    raw: dict
    params: K.ModelParams
    initial: InitialCondition
    t_end: float
    snapshot_times: list[float]
    replicates: int
    master_seed: int | None
    event_cap: float
    workers: int | None
    boxes: list[Box] = field(default_factory=list)
    n_max: int = 6
    confidence: float = 0.95
    n_boot: int = 1000
    r_bins: list[float] | None = None
    snapshots_path: str | None = None
    kinetic: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def require_seed(self) -> int:
        if self.master_seed is None:
            raise ConfigError("run.master_seed", "a master seed is required for this mode")
        return self.master_seed


def validate(raw: dict) -> ExperimentConfig:
    """Check every block and build the typed configuration."""
    cfg = merged_with_defaults(raw)
    m = cfg["model"]
    d = _number(m, "dimension", "model", integer=True)
    if d not in (1, 2):
        raise ConfigError("model.dimension", "must be 1 or 2")
    L = _number(m, "side_length", "model", positive=True)
    kern = {}
    for name in ("a_plus", "a_minus", "b_plus", "b_minus"):
        if name not in m:
            raise ConfigError(f"model.{name}", "missing")
        kern[name] = build_kernel(m[name], d, f"model.{name}", name.startswith("b"))
    try:
        params = K.ModelParams(window=TorusWindow(L, d), **kern)
    except ValueError as exc:
        raise ConfigError("model.side_length", str(exc)) from None

    ini = cfg["initial"]
    try:
        if ini["kind"] == "points":
            initial = InitialCondition.explicit(ini.get("points", []))
        else:
            initial = InitialCondition(ini["kind"], _number(ini, "intensity", "initial", nonneg=True))
    except ValueError as exc:
        raise ConfigError("initial.kind", str(exc)) from None

    run = cfg["run"]
    if "t_end" not in run:
        raise ConfigError("run.t_end", "missing")
    t_end = _number(run, "t_end", "run", nonneg=True)
    snaps = run["snapshot_times"]
    snaps = [t_end] if snaps is None else snaps
    if not isinstance(snaps, list) or any(isinstance(t, bool) or not isinstance(t, (int, float))
                                          for t in snaps):
        raise ConfigError("run.snapshot_times", "expected a list of numbers")
    snaps = sorted(set(float(t) for t in snaps))
    if snaps and (snaps[0] < 0 or snaps[-1] > t_end):
        raise ConfigError("run.snapshot_times", f"must lie in [0, t_end={t_end}]")
    replicates = _number(run, "replicates", "run", integer=True)
    if replicates < 1:
        raise ConfigError("run.replicates", "must be at least 1")
    seed = run.get("master_seed")
    if seed is not None:
        seed = _number(run, "master_seed", "run", integer=True, nonneg=True)
    workers = run.get("workers")
    if workers is not None:
        workers = _number(run, "workers", "run", integer=True, positive=True)
    event_cap = _number(run, "event_cap", "run", positive=True)

    an = cfg["analysis"]
    boxes = []
    for i, b in enumerate(an["boxes"]):
        try:
            box = Box(b[0], b[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"analysis.boxes[{i}]", f"expected [[lo...], [hi...]]: {exc}") from None
        if box.dimension != d or any(l < 0 or h > L for l, h in zip(box.lo, box.hi)):
            raise ConfigError(f"analysis.boxes[{i}]", "box must lie inside the window")
        boxes.append(box)
    n_max = _number(an, "n_max", "analysis", integer=True, positive=True)
    if n_max > 8:
        raise ConfigError("analysis.n_max", "must be at most 8")
    confidence = _number(an, "confidence", "analysis", positive=True)
    if not confidence < 1:
        raise ConfigError("analysis.confidence", "must lie in (0, 1)")
    n_boot = _number(an, "n_boot", "analysis", integer=True, positive=True)
    r_bins = an["r_bins"]
    if r_bins is not None:
        r_bins = [float(r) for r in r_bins]
        if len(r_bins) < 2 or any(b <= a for a, b in zip(r_bins, r_bins[1:])):
            raise ConfigError("analysis.r_bins", "need increasing bin edges")
        if r_bins[-1] > L / 2:
            raise ConfigError("analysis.r_bins", f"bins must end by L/2 = {L / 2}")

    kin = cfg["kinetic"]
    nodes = _number(kin, "nodes", "kinetic", integer=True, positive=True)
    if kin["immigration"] not in IMMIGRATION_FORMS:
        raise ConfigError("kinetic.immigration", f"expected one of {IMMIGRATION_FORMS}")
    kin_t_end = t_end if kin["t_end"] is None else _number(kin, "t_end", "kinetic", nonneg=True)
    dt = None if kin["dt"] is None else _number(kin, "dt", "kinetic", positive=True)
    kin_snaps = kin["snapshot_times"]
    kin_snaps = sorted(set([float(t) for t in snaps if t <= kin_t_end] + [kin_t_end])) \
        if kin_snaps is None else sorted(set(float(t) for t in kin_snaps))
    if kin_snaps and (kin_snaps[0] < 0 or kin_snaps[-1] > kin_t_end):
        raise ConfigError("kinetic.snapshot_times", f"must lie in [0, {kin_t_end}]")
    kinetic = {"nodes": nodes, "dt": dt, "t_end": kin_t_end, "immigration": kin["immigration"],
               "snapshot_times": kin_snaps, "dump_fields": bool(kin["dump_fields"])}

    return ExperimentConfig(
        raw=cfg, params=params, initial=initial, t_end=t_end, snapshot_times=snaps,
        replicates=replicates, master_seed=seed, event_cap=event_cap, workers=workers,
        boxes=boxes, n_max=n_max, confidence=confidence, n_boot=n_boot, r_bins=r_bins,
        snapshots_path=an["snapshots"], kinetic=kinetic, verify=dict(cfg["verify"]),
    )


def load_config(path=None, preset_name: str | None = None, overrides=()) -> ExperimentConfig:
    from .presets import preset

    raw: dict = {}
    if preset_name:
        raw = preset(preset_name)
    if path is not None:
        file_cfg = load_toml(Path(path))
        for block, values in file_cfg.items():
            if isinstance(values, dict) and isinstance(raw.get(block), dict):
                raw[block].update(values)
            else:
                raw[block] = values
    for assignment in overrides:
        apply_override(raw, assignment)
    return validate(raw)
