"""Canonical 32-channel 10-20 montage: channel order and electrode positions.

Positions follow the 10-20 construction arcs on a unit sphere with the
vertex (Cz) at the pole. Electrodes not on a primary arc (F3/F4, P3/P4
and the FC/CP rows) sit at great-circle midpoints of their neighbours.
"""

from __future__ import annotations

import math

import numpy as np

# Base electrodes: (polar angle from vertex, azimuth from nose) in degrees.
# Azimuth is clockwise positive, so the right hemisphere is positive.
_BASE_ANGLES = {
    "Fp1": (72, -18), "Fp2": (72, 18),
    "F7": (72, -54), "F8": (72, 54),
    "T7": (72, -90), "T8": (72, 90),
    "P7": (72, -126), "P8": (72, 126),
    "O1": (72, -162), "O2": (72, 162),
    "Oz": (72, 180),
    "Fz": (36, 0), "Pz": (36, 180),
    "C3": (36, -90), "C4": (36, 90),
    "Cz": (0, 0),
    "TP9": (90, -108), "TP10": (90, 108),
    "PO9": (90, -144), "PO10": (90, 144),
}

# Derived electrodes: great-circle midpoint of two base electrodes.
_MIDPOINTS = {
    "F3": ("Fz", "F7"), "F4": ("Fz", "F8"),
    "P3": ("Pz", "P7"), "P4": ("Pz", "P8"),
    "FC1": ("Fz", "C3"), "FC2": ("Fz", "C4"),
    "FC5": ("F7", "C3"), "FC6": ("F8", "C4"),
    "CP1": ("Pz", "C3"), "CP2": ("Pz", "C4"),
    "CP5": ("P7", "C3"), "CP6": ("P8", "C4"),
}

# Canonical channel order used by every Recording (easycap-style 32).
CHANNELS_32 = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "FC5", "FC1", "FC2", "FC6",
    "T7", "C3", "Cz", "C4", "T8",
    "TP9", "CP5", "CP1", "CP2", "CP6", "TP10",
    "P7", "P3", "Pz", "P4", "P8",
    "PO9", "O1", "Oz", "O2", "PO10",
]

LEFT_CHANNELS = [c for c in CHANNELS_32 if c[-1].isdigit() and int(c[-1]) % 2 == 1]
RIGHT_CHANNELS = [c for c in CHANNELS_32 if c[-1].isdigit() and int(c[-1]) % 2 == 0]
MIDLINE_CHANNELS = [c for c in CHANNELS_32 if c.endswith("z")]


def _unit_vector(polar_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit vector with z toward the vertex and y toward the nose."""
    pol = math.radians(polar_deg)
    az = math.radians(azimuth_deg)
    return np.array([
        math.sin(pol) * math.sin(az),   # x: right
        math.sin(pol) * math.cos(az),   # y: nose
        math.cos(pol),                  # z: vertex
    ])


def _to_angles(v: np.ndarray) -> tuple[float, float]:
    polar = math.degrees(math.acos(np.clip(v[2], -1.0, 1.0)))
    azimuth = math.degrees(math.atan2(v[0], v[1]))
    return polar, azimuth


def _slerp_midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a + b
    return m / np.linalg.norm(m)


def _build_positions() -> dict[str, tuple[float, float]]:
    """Map channel name -> (latitude, longitude) in radians.

    Latitude is pi/2 at the vertex; longitude equals the azimuth from
    the nose (clockwise positive).
    """
    angles = dict(_BASE_ANGLES)
    for name, (p, q) in _MIDPOINTS.items():
        vec = _slerp_midpoint(_unit_vector(*angles[p]), _unit_vector(*angles[q]))
        angles[name] = _to_angles(vec)
    out = {}
    for name in CHANNELS_32:
        polar, azimuth = angles[name]
        out[name] = (math.radians(90.0 - polar), math.radians(azimuth))
    return out


# name -> (phi latitude, lambda longitude), radians
POSITIONS = _build_positions()


def hemisphere_channels(side: str) -> list[str]:
    """Channel names on one hemisphere ('left' or 'right')."""
    if side == "left":
        return list(LEFT_CHANNELS)
    if side == "right":
        return list(RIGHT_CHANNELS)
    raise ValueError(f"unknown hemisphere {side!r}")


def mirror_channel(name: str) -> str:
    """Left-right mirror of a channel (midline channels map to themselves)."""
    if name.endswith("z"):
        return name
    head, digits = name.rstrip("0123456789"), name[len(name.rstrip("0123456789")):]
    n = int(digits)
    return f"{head}{n - 1 if n % 2 == 0 else n + 1}"
