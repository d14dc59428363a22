"""Scalp topography: azimuthal equidistant projection of 10-20 electrode
positions and multiquadric RBF interpolation onto a masked square grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import CANONICAL_BANDS
from .montage import CHANNELS_32, POSITIONS


@dataclass(frozen=True)
class ProjectionConfig:
    center_lat: float = math.pi / 2.0    # vertex (Cz)
    center_lon: float = 0.0
    radius: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    n: int = 80
    rbf_epsilon: float = 0.01
    mask_margin: float = 1.05


@dataclass
class TopoGrid:
    n: int
    band: str
    values: np.ndarray        # (n, n); NaN outside the scalp mask
    mask: np.ndarray          # (n, n) bool
    extent: float             # half-width of the square in projected units
    electrodes: list[dict]    # {name, x, y, value}

    def to_dict(self) -> dict:
        vals = [[None if not self.mask[i, j] else float(self.values[i, j])
                 for j in range(self.n)] for i in range(self.n)]
        return {"n": self.n, "band": self.band, "extent": self.extent,
                "values": vals, "electrodes": self.electrodes}


def project(lat: float, lon: float, cfg: ProjectionConfig | None = None
            ) -> tuple[float, float]:
    """Azimuthal equidistant projection of a spherical point.

    Returns (x, y) with |(x, y)| = R * great-circle angle from the center.
    Azimuth is measured clockwise from the nose direction (+y). The
    antipode of the center has no defined azimuth and raises.
    """
    cfg = cfg or ProjectionConfig()
    lat0, lon0 = cfg.center_lat, cfg.center_lon
    cosc = (math.sin(lat0) * math.sin(lat) +
            math.cos(lat0) * math.cos(lat) * math.cos(lon - lon0))
    c = math.acos(min(1.0, max(-1.0, cosc)))
    if c == 0.0:
        return 0.0, 0.0
    if abs(c - math.pi) < 1e-12:
        raise ValueError("antipode of the projection center: azimuth undefined")
    rho = cfg.radius * c
    bearing = math.atan2(
        math.cos(lat) * math.sin(lon - lon0),
        math.cos(lat0) * math.sin(lat) - math.sin(lat0) * math.cos(lat) * math.cos(lon - lon0))
    theta = math.pi - bearing
    return rho * math.sin(theta), rho * math.cos(theta)


def electrode_layout(channel_names: list[str] | None = None,
                     cfg: ProjectionConfig | None = None) -> dict[str, tuple[float, float]]:
    """Projected (x, y) for each montage electrode."""
    names = channel_names if channel_names is not None else CHANNELS_32
    out = {}
    for name in names:
        if name not in POSITIONS:
            raise ValueError(f"no position for electrode {name!r}")
        out[name] = project(*POSITIONS[name], cfg)
    return out


class MultiquadricInterpolator:
    """Scattered-data interpolation with phi(r) = sqrt(r^2 + eps^2).

    A constant polynomial term is appended to the system so constant
    fields are reproduced exactly.
    """

    def __init__(self, points: np.ndarray, values: np.ndarray, epsilon: float = 0.01):
        points = np.asarray(points, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if points.shape[0] < 3:
            raise ValueError("need at least 3 electrodes to interpolate")
        if np.ptp(points[:, 0]) == 0 or np.ptp(points[:, 1]) == 0:
            raise ValueError("electrode positions are collinear")
        if not np.all(np.isfinite(values)):
            raise ValueError("electrode values must be finite")
        n = points.shape[0]
        r = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
        phi = np.sqrt(r * r + epsilon * epsilon)
        system = np.zeros((n + 1, n + 1))
        system[:n, :n] = phi
        system[:n, n] = 1.0
        system[n, :n] = 1.0
        rhs = np.concatenate([values, [0.0]])
        try:
            sol = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular RBF system (duplicate electrodes?): {exc}") from exc
        self.points = points
        self.epsilon = epsilon
        self.weights = sol[:n]
        self.constant = sol[n]

    def at(self, query: np.ndarray) -> np.ndarray:
        """Evaluate the interpolant at (k, 2) query points."""
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        r = np.linalg.norm(query[:, None, :] - self.points[None, :, :], axis=2)
        phi = np.sqrt(r * r + self.epsilon * self.epsilon)
        return phi @ self.weights + self.constant


def interpolate(values: dict[str, float] | np.ndarray,
                channel_names: list[str] | None = None,
                grid: GridConfig | None = None,
                band: str = "") -> TopoGrid:
    """Interpolate per-electrode values onto the masked N x N scalp grid."""
    grid = grid or GridConfig()
    names = channel_names if channel_names is not None else CHANNELS_32
    if isinstance(values, dict):
        vals = np.array([values[n] for n in names], dtype=np.float64)
    else:
        vals = np.asarray(values, dtype=np.float64)
        if vals.shape != (len(names),):
            raise ValueError(f"need one value per electrode, got {vals.shape}")
    layout = electrode_layout(names)
    points = np.array([layout[n] for n in names])
    rbf = MultiquadricInterpolator(points, vals, grid.rbf_epsilon)

    scalp_radius = float(np.max(np.linalg.norm(points, axis=1))) * grid.mask_margin
    axis = np.linspace(-scalp_radius, scalp_radius, grid.n)
    gx, gy = np.meshgrid(axis, axis)
    mask = gx * gx + gy * gy <= scalp_radius * scalp_radius
    cells = np.stack([gx[mask], gy[mask]], axis=1)
    out = np.full((grid.n, grid.n), np.nan)
    out[mask] = rbf.at(cells)
    electrodes = [{"name": n, "x": float(p[0]), "y": float(p[1]), "value": float(v)}
                  for n, p, v in zip(names, points, vals)]
    return TopoGrid(n=grid.n, band=band, values=out, mask=mask,
                    extent=scalp_radius, electrodes=electrodes)


def render_band(matrix: np.ndarray, band: str | int,
                channel_names: list[str] | None = None,
                grid: GridConfig | None = None) -> TopoGrid:
    """Scalp map for a canonical band (sums its sub-bands) or sub-band index.

    matrix is the (channels, 10) feature or power matrix.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if isinstance(band, int) or (isinstance(band, str) and band.isdigit()):
        idx = int(band)
        if not 0 <= idx < matrix.shape[1]:
            raise ValueError(f"sub-band index {idx} out of range")
        vals = matrix[:, idx]
        label = f"sub-band {idx}"
    else:
        if band not in CANONICAL_BANDS:
            raise ValueError(f"unknown band {band!r}")
        vals = matrix[:, list(CANONICAL_BANDS[band])].sum(axis=1)
        label = band
    return interpolate(vals, channel_names=channel_names, grid=grid, band=label)
