"""World-frame scenes: a target contour with cone distractors placed beside it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..imagery import DepthMap, overlay
from .contours import Contour, SensorFrame
from .render import (APERTURE_MM, RES, ConeDistractor, depth_from_sdf, render_cone_depth,
                     sensor_grid)

CONE_RADIUS_MM = (2.5, 6.0)
CONE_ANGLE_DEG = (35.0, 60.0)
CONE_APEX_MM = (3.0, 6.0)


@dataclass(frozen=True)
class PlacedCone:
    """A cone distractor fixed in the world."""

    position: tuple[float, float]
    radius: float
    apex_depth: float
    cone_angle: float = 45.0

    def in_sensor(self, frame: SensorFrame) -> ConeDistractor:
        return ConeDistractor(frame.to_sensor(self.position), self.radius, self.apex_depth,
                              self.cone_angle)


@dataclass(frozen=True)
class Scene:
    contour: Contour
    distractors: tuple[PlacedCone, ...] = ()
    clearance: tuple[float, float] = (7.0, 12.0)
    seed: int | None = None

    def without_distractors(self) -> "Scene":
        return Scene(self.contour, (), self.clearance, self.seed)

    def check_clearance(self, tol: float = 1e-6) -> None:
        lo, hi = self.clearance
        for cone in self.distractors:
            d = float(self.contour.sdf(np.asarray(cone.position)))
            if not lo - tol <= d <= hi + tol:
                raise ValueError(f"distractor at {cone.position} is {d:.2f} mm from the contour,"
                                 f" outside [{lo}, {hi}]")


def random_cone_shape(rng: np.random.Generator) -> tuple[float, float, float]:
    """``(radius, apex_depth, cone_angle)`` drawn from the distractor family."""
    return (float(rng.uniform(*CONE_RADIUS_MM)), float(rng.uniform(*CONE_APEX_MM)),
            float(rng.uniform(*CONE_ANGLE_DEG)))


def place_distractors(contour: Contour, rng: np.random.Generator, count: int | None = None,
                      clearance: tuple[float, float] = (7.0, 12.0),
                      count_range: tuple[int, int] = (4, 6)) -> tuple[PlacedCone, ...]:
    """Cones at equal arc spacing (random phase), each offset outward by U[clearance]."""
    if count is None:
        count = int(rng.integers(count_range[0], count_range[1] + 1))
    phase = rng.uniform(0, contour.length / count)
    cones = []
    for k in range(count):
        t = phase + k * contour.length / count
        offset = float(rng.uniform(*clearance))
        frame = contour.frame_at(t)
        eu, _ = frame.axes()
        pos = np.asarray(frame.position) + offset * eu
        # non-convex shapes can put the normal offset nearer another part of the curve
        for _ in range(20):
            d = float(contour.sdf(pos))
            if clearance[0] <= d <= clearance[1]:
                break
            pos = pos + (offset - d) * eu
        radius, apex, angle = random_cone_shape(rng)
        cones.append(PlacedCone((float(pos[0]), float(pos[1])), radius, apex, angle))
    return tuple(cones)


def make_scene(kind: str, seed: int, with_distractors: bool = True, **kw) -> Scene:
    contour = Contour(kind)
    rng = np.random.default_rng([seed, 0x5CE7E])
    cones = place_distractors(contour, rng, **kw) if with_distractors else ()
    return Scene(contour, cones, kw.get("clearance", (7.0, 12.0)), seed)


def render_edge_component(scene: Scene, frame: SensorFrame, res: int = RES) -> DepthMap:
    u, v, inside = sensor_grid(res)
    out = np.zeros((res, res))
    if abs(float(scene.contour.sdf(np.asarray(frame.position)))) > APERTURE_MM + 2.0:
        return out
    world = frame.to_world(u[inside], v[inside])
    sdf = np.full((res, res), np.inf)
    sdf[inside] = scene.contour.sdf(world)
    return depth_from_sdf(sdf, frame.z, res)


def render_distractor_component(scene: Scene, frame: SensorFrame, res: int = RES) -> DepthMap:
    out = np.zeros((res, res))
    for cone in scene.distractors:
        local = cone.in_sensor(frame)
        if math.hypot(*local.center) < APERTURE_MM + local.radius:
            out += render_cone_depth(local, res)
    return out


def render_scene_contact(scene: Scene, frame: SensorFrame, res: int = RES) -> DepthMap:
    """Depth seen at ``frame``: the contour edge overlaid with every intersecting cone."""
    return overlay(render_edge_component(scene, frame, res),
                   render_distractor_component(scene, frame, res))


def scene_to_dict(scene: Scene) -> dict:
    return {
        "contour": {"kind": scene.contour.kind, "params": dict(scene.contour.params)},
        "clearance": list(scene.clearance),
        "seed": scene.seed,
        "distractors": [
            {"position": list(c.position), "radius": c.radius, "apex_depth": c.apex_depth,
             "cone_angle": c.cone_angle}
            for c in scene.distractors
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    contour = Contour(d["contour"]["kind"], dict(d["contour"].get("params", {})))
    cones = tuple(
        PlacedCone(tuple(c["position"]), c["radius"], c["apex_depth"], c.get("cone_angle", 45.0))
        for c in d.get("distractors", [])
    )
    return Scene(contour, cones, tuple(d.get("clearance", (7.0, 12.0))), d.get("seed"))


def save_scene(path: str | Path, scene: Scene) -> None:
    Path(path).write_text(yaml.safe_dump(scene_to_dict(scene), sort_keys=False))


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(yaml.safe_load(Path(path).read_text()))
