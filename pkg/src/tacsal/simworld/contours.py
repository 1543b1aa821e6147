"""Closed target contours with signed distance, arc-length parameterisation and local pose."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

from .render import APERTURE_MM, ContactPose, wrap_deg

KINDS = ("square", "flower", "volute", "foil", "circle")

DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "square": {"side": 60.0, "fillet": 2.0},
    "flower": {"radius": 30.0, "amplitude": 6.0, "lobes": 5},
    "volute": {"r0": 18.0, "growth": 2.2},
    "foil": {"semi_major": 42.0, "semi_minor": 22.0},
    "circle": {"radius": 30.0},
}


class NoContact(Exception):
    """The sensor is farther from the contour than the aperture radius."""


@dataclass(frozen=True)
class SensorFrame:
    position: tuple[float, float]
    heading: float
    z: float = 4.5

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_deg(self.heading))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """World directions of the sensor ``u`` (lateral, right) and ``v`` (heading) axes."""
        t = math.radians(self.heading)
        return np.array([math.sin(t), -math.cos(t)]), np.array([math.cos(t), math.sin(t)])

    def to_world(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        eu, ev = self.axes()
        u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
        return np.asarray(self.position) + u[..., None] * eu + v[..., None] * ev

    def to_sensor(self, point: tuple[float, float]) -> tuple[float, float]:
        eu, ev = self.axes()
        d = np.asarray(point, dtype=np.float64) - np.asarray(self.position)
        return float(d @ eu), float(d @ ev)


def _square_points(side: float, fillet: float, n: int) -> np.ndarray:
    h = side / 2.0 - fillet
    step = (8 * h + 2 * math.pi * fillet) / n
    centres = [(h, -h), (h, h), (-h, h), (-h, -h)]
    out = []
    for k, (cx, cy) in enumerate(centres):
        a0 = -math.pi / 2 + k * math.pi / 2
        a = np.linspace(a0, a0 + math.pi / 2, max(4, math.ceil(math.pi / 2 * fillet / step)),
                        endpoint=False)
        out.append(np.stack([cx + fillet * np.cos(a), cy + fillet * np.sin(a)], axis=1))
        a1 = a0 + math.pi / 2
        nx, ny = centres[(k + 1) % 4]
        start = np.array([cx + fillet * math.cos(a1), cy + fillet * math.sin(a1)])
        end = np.array([nx + fillet * math.cos(a1), ny + fillet * math.sin(a1)])
        t = np.linspace(0.0, 1.0, math.ceil(2 * h / step), endpoint=False)[:, None]
        out.append(start + t * (end - start))
    return np.concatenate(out)


def _polar(r_fn, theta: np.ndarray) -> np.ndarray:
    r = r_fn(theta)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _contour_points(kind: str, p: dict, n: int) -> np.ndarray:
    if kind == "circle":
        t = np.linspace(0, 2 * math.pi, n, endpoint=False)
        return _polar(lambda th: np.full_like(th, p["radius"]), t)
    if kind == "square":
        return _square_points(p["side"], p["fillet"], n)
    if kind == "flower":
        t = np.linspace(0, 2 * math.pi, n, endpoint=False)
        return _polar(lambda th: p["radius"] + p["amplitude"] * np.cos(p["lobes"] * th), t)
    if kind == "volute":
        # spiral r = r0 + growth * phi, phi in [0, 4 pi), swept over one polar turn
        # (polar angle phi / 2) and closed by a straight radial seam
        m = int(n * 0.85)
        phi = np.linspace(0, 4 * math.pi, m, endpoint=False)
        spiral = _polar(lambda th: p["r0"] + p["growth"] * 2 * th, phi / 2)
        r_end = p["r0"] + p["growth"] * 4 * math.pi
        seam_r = np.linspace(r_end, p["r0"], n - m, endpoint=False)
        seam = np.stack([seam_r, np.zeros_like(seam_r)], axis=1)
        return np.concatenate([spiral, seam])
    if kind == "foil":
        t = np.linspace(-math.pi, math.pi, n, endpoint=False)
        # rear half thins as sin|t| so the trailing vertex at t = pi is a sharp corner
        thin = np.where(np.abs(t) <= math.pi / 2, 1.0, np.sin(np.abs(t)))
        return np.stack([p["semi_major"] * np.cos(t), p["semi_minor"] * np.sin(t) * thin], axis=1)
    raise ValueError(f"unknown contour kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class Contour:
    """Counter-clockwise closed curve; the object occupies the enclosed region."""

    kind: str
    params: dict = field(default_factory=dict)
    n_points: int = 6000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown contour kind {self.kind!r}; expected one of {KINDS}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        pts = _contour_points(self.kind, merged, self.n_points)
        seg = np.roll(pts, -1, axis=0) - pts
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        object.__setattr__(self, "_pts", pts)
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg_len)]))
        poly = Polygon(pts)
        if not poly.is_valid:
            raise ValueError(f"{self.kind} contour self-intersects")
        shapely.prepare(poly)
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_ring", poly.exterior)
        object.__setattr__(self, "_tree", cKDTree(pts))

    @property
    def points(self) -> np.ndarray:
        return self._pts

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def point_at(self, t: float | np.ndarray) -> np.ndarray:
        """Point at arc length ``t`` (wraps modulo the length)."""
        t = np.mod(np.asarray(t, dtype=np.float64), self.length)
        i = np.clip(np.searchsorted(self._cum, t, side="right") - 1, 0, len(self._pts) - 1)
        frac = (t - self._cum[i]) / self._seg_len[i]
        return self._pts[i] + frac[..., None] * self._seg[i]

    def tangent_angle_at(self, t: float) -> float:
        t = float(np.mod(t, self.length))
        i = int(np.clip(np.searchsorted(self._cum, t, side="right") - 1, 0, len(self._pts) - 1))
        return math.degrees(math.atan2(self._seg[i, 1], self._seg[i, 0]))

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance in mm, negative inside; accepts ``(..., 2)`` arrays."""
        pts = np.asarray(points, dtype=np.float64)
        if self.kind == "circle":
            return np.hypot(pts[..., 0], pts[..., 1]) - self.params["radius"]
        if self.kind == "square":
            h = self.params["side"] / 2.0
            r = self.params["fillet"]
            q = np.abs(pts) - (h - r)
            outside = np.hypot(np.maximum(q[..., 0], 0.0), np.maximum(q[..., 1], 0.0))
            return outside + np.minimum(np.maximum(q[..., 0], q[..., 1]), 0.0) - r
        flat = pts.reshape(-1, 2)
        d = self._distance(flat)
        inside = shapely.contains_xy(self._poly, flat[:, 0], flat[:, 1])
        return np.where(inside, -d, d).reshape(pts.shape[:-1])

    def _distance(self, q: np.ndarray) -> np.ndarray:
        """Unsigned distance to the polyline via segments adjacent to the nearest vertices."""
        _, nearest = self._tree.query(q, k=4)
        n = len(self._pts)
        idx = np.concatenate([nearest, (nearest - 1) % n], axis=1)
        a = self._pts[idx]
        ab = self._seg[idx]
        rel = q[:, None, :] - a
        t = np.clip(np.einsum("qkd,qkd->qk", rel, ab) / self._seg_len[idx] ** 2, 0.0, 1.0)
        diff = rel - t[..., None] * ab
        return np.sqrt(np.min(np.einsum("qkd,qkd->qk", diff, diff), axis=1))

    def project(self, point: tuple[float, float]) -> float:
        """Arc length of the closest contour point."""
        return float(self._ring.project(shapely.Point(point)))

    def local_pose(self, frame: SensorFrame) -> ContactPose:
        """Ground-truth contact pose of the sensor against this contour."""
        y = float(self.sdf(np.asarray(frame.position)))
        if abs(y) > APERTURE_MM:
            raise NoContact(f"sensor is {y:.2f} mm from the contour")
        phi = self.tangent_angle_at(self.project(frame.position))
        return ContactPose(y=y, rz=wrap_deg(frame.heading - phi), z=frame.z)

    def frame_at(self, t: float, offset: float = 0.0, z: float = 4.5) -> SensorFrame:
        """Sensor frame on the contour at arc length ``t``, heading along the tangent."""
        phi = self.tangent_angle_at(t)
        p = self.point_at(t)
        a = math.radians(phi)
        n = np.array([math.sin(a), -math.cos(a)])
        return SensorFrame(position=tuple(p + offset * n), heading=phi, z=z)


def contour_sdf(c: Contour, point: tuple[float, float]) -> float:
    return float(c.sdf(np.asarray(point, dtype=np.float64)))


def ground_truth_pose(c: Contour, frame: SensorFrame) -> ContactPose:
    return c.local_pose(frame)
