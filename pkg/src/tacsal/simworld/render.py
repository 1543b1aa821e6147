"""Depth-map rendering in the sensor frame and the pseudo-real marker image model.

Sensor-frame coordinates are in millimetres: ``u`` points to the image right,
``v`` points to the image top, origin at the aperture centre. The heading of
the sensor is ``+v``; ``+u`` is the outward side of a followed edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from ..imagery import DepthMap, TactileImage

RES = 64
APERTURE_MM = 10.0
APERTURE_PX_AT_64 = 30.0
Z_MIN, Z_MAX = 3.0, 6.0
RAMP_MM = 1.5
DEPTH_FLOOR = 0.2

MARKER_GRID = 11
MARKER_SIGMA_PX = 1.2
MARKER_AMPLITUDE = 0.9
MARKER_BACKGROUND = 0.1
MARKER_GAIN_PX = 6.0
MARKER_BRIGHTEN = 0.1
PIXEL_NOISE = 0.02


def px_per_mm(res: int = RES) -> float:
    return APERTURE_PX_AT_64 * res / 64.0 / APERTURE_MM


@lru_cache(maxsize=8)
def sensor_grid(res: int = RES) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(u, v, inside)`` for every pixel; ``inside`` is the aperture mask."""
    c = (res - 1) / 2.0
    rows, cols = np.mgrid[0:res, 0:res].astype(np.float64)
    k = px_per_mm(res)
    u = (cols - c) / k
    v = (c - rows) / k
    inside = u * u + v * v <= APERTURE_MM ** 2
    for a in (u, v, inside):
        a.setflags(write=False)
    return u, v, inside


def wrap_deg(a: float | np.ndarray) -> float | np.ndarray:
    """Wrap into ``[-180, 180)``."""
    out = (np.asarray(a, dtype=np.float64) + 180.0) % 360.0 - 180.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ContactPose:
    y: float
    rz: float
    z: float

    def validate(self) -> None:
        if not Z_MIN - 1e-9 <= self.z <= Z_MAX + 1e-9:
            raise ValueError(f"depth z={self.z} outside [{Z_MIN}, {Z_MAX}] mm")
        if abs(self.y) > APERTURE_MM:
            raise ValueError(f"offset y={self.y} outside the aperture")
        if not math.isfinite(self.rz):
            raise ValueError("rz must be finite")


@dataclass(frozen=True)
class ConeDistractor:
    center: tuple[float, float]
    radius: float
    apex_depth: float
    cone_angle: float = 45.0

    def validate(self) -> None:
        if self.radius <= 0:
            raise ValueError("cone radius must be positive")
        if not 0 < self.apex_depth <= Z_MAX:
            raise ValueError(f"apex depth must be in (0, {Z_MAX}] mm")
        if not 0 < self.cone_angle < 90:
            raise ValueError("cone angle must be in (0, 90) degrees")

    @property
    def exponent(self) -> float:
        # 45 deg is a straight-sided cone; steeper angles give blunter bumps
        return math.tan(math.radians(self.cone_angle))


def depth_amplitude(z: float) -> float:
    """Peak depth for indentation ``z``: linear from 0.2 at z_min to 1.0 at z_max."""
    return float(np.interp(z, (Z_MIN, Z_MAX), (DEPTH_FLOOR, 1.0)))


def smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def depth_from_sdf(sdf: np.ndarray, z: float, res: int = RES) -> DepthMap:
    """Edge depth given the signed distance (mm, negative inside) at each pixel."""
    _, _, inside = sensor_grid(res)
    return np.where(inside, depth_amplitude(z) * smoothstep(-sdf / RAMP_MM), 0.0)


def render_edge_depth(pose: ContactPose, res: int = RES) -> DepthMap:
    pose.validate()
    u, v, _ = sensor_grid(res)
    rz = math.radians(pose.rz)
    s = pose.y + u * math.cos(rz) - v * math.sin(rz)
    return depth_from_sdf(s, pose.z, res)


def render_cone_depth(d: ConeDistractor, res: int = RES) -> DepthMap:
    d.validate()
    u, v, inside = sensor_grid(res)
    r = np.hypot(u - d.center[0], v - d.center[1])
    bump = (d.apex_depth / Z_MAX) * np.maximum(0.0, 1.0 - r / d.radius) ** d.exponent
    return np.where(inside, bump, 0.0)


@lru_cache(maxsize=8)
def marker_positions(res: int = RES) -> np.ndarray:
    """Nominal ``(row, col)`` centres of the regular marker grid."""
    pitch = res / MARKER_GRID
    ticks = (np.arange(MARKER_GRID) + 0.5) * pitch - 0.5
    rr, cc = np.meshgrid(ticks, ticks, indexing="ij")
    out = np.stack([rr.ravel(), cc.ravel()], axis=1)
    out.setflags(write=False)
    return out


def marker_displacements(c: DepthMap) -> np.ndarray:
    """Per-marker ``(drow, dcol)`` shift, proportional to the local depth gradient."""
    res = c.shape[0]
    pos = marker_positions(res)
    g_r, g_c = np.gradient(c)
    disp = MARKER_GAIN_PX * np.stack([
        ndimage.map_coordinates(g_r, pos.T, order=1, mode="nearest"),
        ndimage.map_coordinates(g_c, pos.T, order=1, mode="nearest"),
    ], axis=1)
    # converging neighbours must not fuse into one saturated blob
    limit = 0.2 * res / MARKER_GRID
    norm = np.hypot(disp[:, 0], disp[:, 1])
    return disp * np.minimum(1.0, limit / np.maximum(norm, 1e-12))[:, None]


def tactile_forward_model(c: DepthMap, seed: int) -> TactileImage:
    """Render a marker image whose dots are pushed and brightened by contact depth."""
    c = np.asarray(c, dtype=np.float64)
    res = c.shape[0]
    pos = marker_positions(res)
    centres = pos + marker_displacements(c)
    bright = MARKER_AMPLITUDE + MARKER_BRIGHTEN * ndimage.map_coordinates(
        c, pos.T, order=1, mode="nearest")
    rows = np.arange(res, dtype=np.float64)
    # separable Gaussians: sum_k a_k * g(row - r_k) * g(col - c_k)
    gr = np.exp(-((rows[None, :] - centres[:, :1]) ** 2) / (2 * MARKER_SIGMA_PX ** 2))
    gc = np.exp(-((rows[None, :] - centres[:, 1:]) ** 2) / (2 * MARKER_SIGMA_PX ** 2))
    img = MARKER_BACKGROUND + np.einsum("k,ki,kj->ij", bright, gr, gc)
    rng = np.random.default_rng(seed)
    img += rng.uniform(-PIXEL_NOISE, PIXEL_NOISE, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def count_marker_peaks(img: TactileImage, floor: float = 0.5) -> int:
    """Number of 3x3 local-maximum regions brighter than ``floor``."""
    peaks = (ndimage.maximum_filter(img, size=3, mode="constant") == img) & (img > floor)
    _, n = ndimage.label(peaks, structure=np.ones((3, 3)))
    return int(n)
