"""Named experiment configurations.

Kernel blocks give either ``amplitude`` or the total ``mass``; backgrounds
may be written as a bare number. Presets carry no master seed on purpose.
"""

from __future__ import annotations

import copy


def _window(side, d=2):
    return {"dimension": d, "side_length": side}


_BASE_ANALYSIS = {"n_max": 6, "confidence": 0.95, "n_boot": 1000}

PRESETS: dict[str, dict] = {
    "noninteracting": {
        "model": {
            **_window(20.0),
            "a_plus": 0.0,
            "a_minus": 0.0,
            "b_plus": 0.5,
            "b_minus": 1.0,
        },
        "initial": {"kind": "poisson", "intensity": 0.2},
        "run": {"t_end": 20.0, "snapshot_times": [0.0, 1.0, 2.0, 5.0, 10.0, 20.0], "replicates": 1000},
        "analysis": {**_BASE_ANALYSIS, "boxes": [[[7.5, 7.5], [12.5, 12.5]]], "r_bins": [0.0, 0.5, 1.0, 1.5, 2.0]},
        "kinetic": {"nodes": 32, "dt": 0.01, "t_end": 20.0, "immigration": "source"},
    },
    "contact": {
        "model": {
            **_window(12.0),
            "a_plus": {"family": "gaussian", "mass": 1.5, "scale": 0.5},
            "a_minus": 0.0,
            "b_plus": 0.0,
            "b_minus": 1.0,
        },
        "initial": {"kind": "poisson", "intensity": 0.5},
        "run": {"t_end": 6.0, "snapshot_times": [0.0, 2.0, 4.0, 6.0], "replicates": 200},
        "analysis": {**_BASE_ANALYSIS, "boxes": [[[4.0, 4.0], [8.0, 8.0]]], "r_bins": [0.0, 0.25, 0.5, 1.0, 2.0]},
        "kinetic": {"nodes": 64, "dt": 0.01, "t_end": 6.0},
    },
    "bolker-pacala": {
        "model": {
            **_window(12.0),
            "a_plus": {"family": "gaussian", "mass": 2.0, "scale": 0.5},
            "a_minus": {"family": "tophat", "mass": 1.0, "scale": 0.5},
            "b_plus": 0.0,
            "b_minus": 1.0,
        },
        "initial": {"kind": "poisson", "intensity": 1.0},
        "run": {"t_end": 20.0, "snapshot_times": [0.0, 1.0, 5.0, 20.0], "replicates": 200},
        "analysis": {**_BASE_ANALYSIS, "boxes": [[[4.0, 4.0], [8.0, 8.0]]], "r_bins": [0.0, 0.25, 0.5, 1.0, 2.0]},
        "kinetic": {"nodes": 64, "dt": 0.01, "t_end": 20.0},
    },
    # competition reaches at least as far as attraction: a_plus <= a_minus / theta
    "full-long": {
        "model": {
            **_window(12.0),
            "a_plus": {"family": "tophat", "mass": 0.5, "scale": 0.5},
            "a_minus": {"family": "tophat", "mass": 1.0, "scale": 1.0},
            "b_plus": 1.0,
            "b_minus": 0.5,
        },
        "initial": {"kind": "poisson", "intensity": 1.0},
        "run": {"t_end": 20.0, "snapshot_times": [0.0, 1.0, 5.0, 20.0], "replicates": 500},
        "analysis": {**_BASE_ANALYSIS, "boxes": [[[4.0, 4.0], [8.0, 8.0]]], "r_bins": [0.0, 0.25, 0.5, 1.0, 2.0]},
        "kinetic": {"nodes": 64, "dt": 0.01, "t_end": 20.0},
    },
    # attraction outreaches competition
    "full-short": {
        "model": {
            **_window(12.0),
            "a_plus": {"family": "gaussian", "mass": 0.5, "scale": 0.5},
            "a_minus": {"family": "tophat", "mass": 1.0, "scale": 0.5},
            "b_plus": 1.0,
            "b_minus": 0.5,
        },
        "initial": {"kind": "poisson", "intensity": 1.0},
        "run": {"t_end": 20.0, "snapshot_times": [0.0, 1.0, 5.0, 20.0], "replicates": 500},
        "analysis": {**_BASE_ANALYSIS, "boxes": [[[4.0, 4.0], [8.0, 8.0]]], "r_bins": [0.0, 0.25, 0.5, 1.0, 2.0]},
        "kinetic": {"nodes": 64, "dt": 0.01, "t_end": 20.0},
    },
    # no background arrivals and departures outpace attraction: b_minus >= A_plus
    "extinction": {
        "model": {
            **_window(12.0),
            "a_plus": {"family": "gaussian", "mass": 0.5, "scale": 0.5},
            "a_minus": {"family": "tophat", "mass": 0.5, "scale": 0.5},
            "b_plus": 0.0,
            "b_minus": 1.0,
        },
        "initial": {"kind": "poisson", "intensity": 1.0},
        "run": {"t_end": 10.0, "snapshot_times": [0.0, 2.5, 5.0, 10.0], "replicates": 200},
        "analysis": {**_BASE_ANALYSIS, "boxes": [[[4.0, 4.0], [8.0, 8.0]]]},
        "kinetic": {"nodes": 64, "dt": 0.01, "t_end": 10.0},
    },
}


def preset(name: str) -> dict:
    """A deep copy of the named preset."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
