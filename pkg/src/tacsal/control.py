"""Closed-loop edge following and the pose-under-distractors experiment.

Motion commands are expressed in the sensor frame as ``(dx, dy[, dtheta])``:
``dx`` along the heading, ``dy`` along the lateral axis that points away from
the contact side (the same axis as the contact-pose offset ``y``), ``dtheta``
in degrees, counter-clockwise.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .datagen import POSE_EVAL_RANGES, PoseRanges, build_posenet_dataset, item_rng
from .metrics import (EpisodeCriteria, bias_corrected_mae, classify_episode, first_diverged_step,
                      first_stuck_step, pose_errors, pose_mae, trajectory_mae)
from .neural import TrainedModel, poses_from_prediction, predict_pose
from .saliency import SaliencyPipeline, condepnet_apply, salient_observation
from .simworld import (RES, ContactPose, NoContact, Scene, SensorFrame, render_edge_depth,
                       render_scene_contact, sensor_grid, tactile_forward_model, wrap_deg)

MAX_STEP_MM = 3.0
MAX_TURN_DEG = 10.0
_FOLLOW, _POSE_EVAL = 101, 102


# -- pose-based PID -----------------------------------------------------------------------

@dataclass(frozen=True)
class PidConfig:
    y_gains: tuple[float, float, float] = (0.5, 0.05, 0.1)
    rz_gains: tuple[float, float, float] = (0.3, 0.02, 0.05)
    step: float = 2.0
    integral_clamp_y: float = 10.0
    integral_clamp_rz: float = 60.0
    max_steps: int = 1000

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.max_steps < 100:
            raise ValueError("max_steps must be >= 100")


@dataclass
class PidState:
    integral_y: float = 0.0
    integral_rz: float = 0.0
    prev_y: float | None = None
    prev_rz: float | None = None


def _pid(err: float, integral: float, prev: float | None, gains, clamp: float):
    integral = float(np.clip(integral + err, -clamp, clamp))
    deriv = 0.0 if prev is None else err - prev
    kp, ki, kd = gains
    return kp * err + ki * integral + kd * deriv, integral


def _bound(dx: float, dy: float) -> tuple[float, float]:
    return float(np.clip(dx, -MAX_STEP_MM, MAX_STEP_MM)), float(np.clip(dy, -MAX_STEP_MM, MAX_STEP_MM))


def pid_step(pose: tuple[float, float], state: PidState, cfg: PidConfig = PidConfig()
             ) -> tuple[tuple[float, float, float], PidState]:
    """One servo update driving ``y -> 0`` and ``rz -> 0``.

    The sensor advances ``cfg.step`` along the estimated edge tangent and
    corrects laterally along the estimated edge normal. Returns the bounded
    command and the new state (the input state is not modified).
    """
    y, rz = float(pose[0]), float(wrap_deg(pose[1]))
    if not (math.isfinite(y) and math.isfinite(rz)):
        raise ValueError("pose must be finite")
    u_y, iy = _pid(y, state.integral_y, state.prev_y, cfg.y_gains, cfg.integral_clamp_y)
    d_rz = 0.0 if state.prev_rz is None else float(wrap_deg(rz - state.prev_rz))
    kp, ki, kd = cfg.rz_gains
    irz = float(np.clip(state.integral_rz + rz, -cfg.integral_clamp_rz, cfg.integral_clamp_rz))
    u_rz = kp * rz + ki * irz + kd * d_rz
    a = math.radians(rz)
    # tangent and outward normal of the estimated edge in (heading, lateral) coordinates
    tangent = (math.cos(a), math.sin(a))
    normal = (-math.sin(a), math.cos(a))
    dx = cfg.step * tangent[0] - u_y * normal[0]
    dy = cfg.step * tangent[1] - u_y * normal[1]
    dx, dy = _bound(dx, dy)
    dth = float(np.clip(-u_rz, -MAX_TURN_DEG, MAX_TURN_DEG))
    return (dx, dy, dth), PidState(iy, irz, y, rz)


# -- scripted image-based controller ------------------------------------------------------

@dataclass(frozen=True)
class ImageConfig:
    step: float = 2.0
    lateral_gain: float = 0.5
    mass_floor: float = 1.0
    reference_mm: float | None = None
    max_steps: int = 1000

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")


@dataclass
class ImageState:
    direction: tuple[float, float] | None = None


def image_moments(obs: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """``(mass, centroid (u, v) mm, unit major axis (u, v))`` of an observation."""
    obs = np.asarray(obs, dtype=np.float64)
    u, v, inside = sensor_grid(obs.shape[0])
    w = np.where(inside, obs, 0.0)
    mass = float(w.sum())
    if mass <= 0:
        return 0.0, np.zeros(2), np.array([0.0, 1.0])
    cu, cv = float((w * u).sum() / mass), float((w * v).sum() / mass)
    du, dv = u - cu, v - cv
    cov = np.array([[(w * du * du).sum(), (w * du * dv).sum()],
                    [(w * du * dv).sum(), (w * dv * dv).sum()]]) / mass
    vals, vecs = np.linalg.eigh(cov)
    return mass, np.array([cu, cv]), vecs[:, int(np.argmax(vals))]


@lru_cache(maxsize=8)
def reference_offset(res: int = RES, z: float = 4.5) -> float:
    """Centroid distance from the aperture centre for an edge through the centre."""
    _, c, _ = image_moments(render_edge_depth(ContactPose(0.0, 0.0, z), res))
    return float(np.hypot(*c))


def image_step(obs: np.ndarray, state: ImageState | None = None, cfg: ImageConfig = ImageConfig(),
               z: float = 4.5) -> tuple[tuple[float, float], ImageState]:
    """Centre the contact mass at the reference offset while advancing along its major axis.

    The axis sign follows the previous direction; on the first step it is chosen
    so that the contact lies on the left. With no contact the command is zero.
    """
    state = state or ImageState()
    k = np.asarray(obs).shape[0] / 64.0
    mass, c, axis = image_moments(obs)
    if mass < cfg.mass_floor * k * k:
        return (0.0, 0.0), state
    if state.direction is not None:
        if axis @ np.asarray(state.direction) < 0:
            axis = -axis
    elif axis[0] * c[1] - axis[1] * c[0] < 0:  # contact must be left of the advance direction
        axis = -axis
    left = np.array([-axis[1], axis[0]])
    ref = cfg.reference_mm if cfg.reference_mm is not None else reference_offset(
        np.asarray(obs).shape[0], z)
    offset = float(c @ left)
    move = cfg.step * axis + cfg.lateral_gain * (offset - ref) * left
    # (u, v) -> (heading, lateral)
    dx, dy = _bound(move[1], move[0])
    return (dx, dy), ImageState((float(axis[0]), float(axis[1])))


# -- observations -------------------------------------------------------------------------

def observation_hash(obs: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(obs, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class Observer:
    """Turns a sensor frame into the controller's observation.

    ``mode`` is ``"saliency"`` (tactile image -> pipeline -> salient observation),
    ``"raw"`` (tactile image -> ConDepNet depth) or ``"depth"`` (rendered
    contact depth, networks bypassed).
    """

    scene: Scene
    mode: str
    pipeline: SaliencyPipeline | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("saliency", "raw", "depth"):
            raise ValueError(f"unknown observation mode {self.mode!r}")
        if self.mode != "depth" and self.pipeline is None:
            raise ValueError(f"mode {self.mode!r} needs a saliency pipeline")

    def __call__(self, frame: SensorFrame, step: int) -> np.ndarray:
        res = self.pipeline.res if self.pipeline is not None else RES
        depth = render_scene_contact(self.scene, frame, res)
        if self.mode == "depth":
            return depth
        img_seed = int(item_rng(self.seed, _FOLLOW, step).integers(2 ** 31))
        image = tactile_forward_model(depth, img_seed)
        if self.mode == "raw":
            return condepnet_apply(self.pipeline.condepnet, image)
        return salient_observation(self.pipeline(image))


# -- episodes -----------------------------------------------------------------------------

@dataclass(frozen=True)
class FollowConfig:
    controller: str = "pid"
    saliency: bool = True
    oracle: bool = False
    z: float = 4.5
    start_arc: float = 0.0
    seed: int = 0
    max_steps: int | None = None
    pid: PidConfig = PidConfig()
    image: ImageConfig = ImageConfig()
    criteria: EpisodeCriteria = EpisodeCriteria()
    finish_margin: float = 2.0

    def __post_init__(self):
        if self.controller not in ("pid", "image"):
            raise ValueError(f"unknown controller {self.controller!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeResult:
    frames: np.ndarray  # (N, 3): x, y, heading
    classification: str
    trajectory_mae: float
    distance: float
    progress: float
    steps: int
    config: dict
    log: list[dict] = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return self.frames[:, :2]

    def summary(self) -> dict:
        return {"classification": self.classification, "trajectory_mae": self.trajectory_mae,
                "distance": self.distance, "progress": self.progress, "steps": self.steps}


def _apply(frame: SensorFrame, dx: float, dy: float, dth: float) -> SensorFrame:
    eu, ev = frame.axes()
    pos = np.asarray(frame.position) + dx * ev + dy * eu
    return SensorFrame((float(pos[0]), float(pos[1])), frame.heading + dth, frame.z)


def _default_max_steps(scene: Scene, cfg: FollowConfig) -> int:
    step = cfg.pid.step if cfg.controller == "pid" else cfg.image.step
    return max(100, int(math.ceil(1.5 * scene.contour.length / step)) + 50)


def run_edge_follow(scene: Scene, cfg: FollowConfig = FollowConfig(),
                    pipeline: SaliencyPipeline | None = None,
                    posenet: TrainedModel | None = None) -> EpisodeResult:
    """Trace ``scene.contour`` counter-clockwise from ``cfg.start_arc``.

    The loop stops on circuit completion (unwrapped arc progress within
    ``finish_margin`` of the contour length), on a stuck or diverged trajectory,
    or after the step budget. ``cfg.oracle`` bypasses every network: the PID
    controller receives the ground-truth pose and the image controller the
    rendered contact depth.
    """
    contour = scene.contour
    L = contour.length
    if cfg.oracle:
        observe = None if cfg.controller == "pid" else Observer(scene, "depth", None, cfg.seed)
    else:
        if cfg.controller == "pid" and posenet is None:
            raise ValueError("the PID controller needs a PoseNet unless oracle poses are used")
        observe = Observer(scene, "saliency" if cfg.saliency else "raw", pipeline, cfg.seed)
    max_steps = cfg.max_steps or _default_max_steps(scene, cfg)
    frame = contour.frame_at(cfg.start_arc, 0.0, cfg.z)
    frames = [(*frame.position, frame.heading)]
    pid_state, img_state = PidState(), ImageState()
    t_prev = contour.project(frame.position)
    progress = distance = 0.0
    log: list[dict] = []
    for step in range(max_steps):
        entry: dict = {"step": step, "frame": list(frames[-1])}
        if observe is None:
            try:
                gt = contour.local_pose(frame)
            except NoContact:
                break
            pose = (gt.y, gt.rz)
            entry["pose"] = list(pose)
            cmd, pid_state = pid_step(pose, pid_state, cfg.pid)
        else:
            obs = observe(frame, step)
            entry["obs"] = observation_hash(obs)
            if cfg.controller == "pid":
                y, rz = poses_from_prediction(predict_pose(posenet, obs))
                pose = (float(y[0]), float(rz[0]))
                entry["pose"] = list(pose)
                cmd, pid_state = pid_step(pose, pid_state, cfg.pid)
            else:
                (dx, dy), img_state = image_step(obs, img_state, cfg.image, cfg.z)
                cmd = (dx, dy, 0.0)
        entry["command"] = list(cmd)
        log.append(entry)
        frame = _apply(frame, *cmd)
        distance += math.hypot(cmd[0], cmd[1])
        frames.append((*frame.position, frame.heading))
        t = contour.project(frame.position)
        progress += (t - t_prev + L / 2) % L - L / 2
        t_prev = t
        traj = np.asarray(frames)[:, :2]
        if progress >= L - cfg.finish_margin:
            break
        if abs(float(contour.sdf(traj[-1]))) > cfg.criteria.diverge_distance:
            break
        w = cfg.criteria.stuck_window
        if len(traj) > w and np.linalg.norm(traj[-1] - traj[-1 - w]) < cfg.criteria.stuck_distance:
            break
    arr = np.asarray(frames, dtype=np.float64)
    return EpisodeResult(arr, classify_episode(arr[:, :2], contour, cfg.criteria),
                         trajectory_mae(arr[:, :2], contour), float(distance), float(progress),
                         len(log), cfg.to_dict(), log)


# -- pose under distractors ---------------------------------------------------------------

@dataclass
class PoseEvalReport:
    variant: str
    n: int
    seed: int
    raw: dict
    saliency: dict
    offsets: np.ndarray
    errors: dict  # arm -> (n, 2) signed (dy, drz)

    def rows(self) -> list[dict]:
        out = []
        for arm in ("raw", "saliency"):
            for key, val in getattr(self, arm).items():
                out.append({"model": f"posenet_{arm}", "metric": f"{self.variant}_{key}",
                            "value": val, "seed": self.seed, "dataset_id": f"pose_{self.variant}"})
        return out

    def offset_curve(self, bins: np.ndarray) -> dict[str, np.ndarray]:
        """Per-bin y and rz MAE of each arm against distractor offset."""
        idx = np.digitize(self.offsets, bins) - 1
        out = {}
        for arm, e in self.errors.items():
            rows = []
            for b in range(len(bins) - 1):
                sel = idx == b
                rows.append([np.mean(np.abs(e[sel, 0])) if sel.any() else np.nan,
                             np.mean(np.abs(e[sel, 1])) if sel.any() else np.nan])
            out[arm] = np.asarray(rows)
        return out


def _mae_dict(pred: np.ndarray, gt: np.ndarray) -> dict:
    y, rz = pose_mae(pred, gt)
    by, brz = bias_corrected_mae(pred, gt)
    return {"mae_y": y, "mae_rz": rz, "mae_y_corrected": by, "mae_rz_corrected": brz}


def run_pose_eval(variant: str, posenet: TrainedModel, pipeline: SaliencyPipeline, n: int = 500,
                  seed: int = 0, ranges: PoseRanges = POSE_EVAL_RANGES,
                  offset_range: tuple[float, float] = (7.0, 14.0)) -> PoseEvalReport:
    """PoseNet accuracy on raw (ConDepNet) versus salient observations.

    ``variant`` is ``"clean"`` (no distractor), ``"cones"`` or ``"gaussian"``;
    the distractor sits ``offset_range`` mm outside the edge while the sensor
    slides along it. Both arms see the same tactile images.
    """
    modes = {"clean": "none", "cones": "cones", "gaussian": "gaussian"}
    if variant not in modes:
        raise ValueError(f"unknown variant {variant!r}")
    if n < 1:
        raise ValueError("empty evaluation set")
    data = build_posenet_dataset(n, ranges, modes[variant], seed, pipeline.res, offset_range)
    images = np.stack([tactile_forward_model(s.depth, int(item_rng(seed, _POSE_EVAL, i)
                                                          .integers(2 ** 31)))
                       for i, s in enumerate(data)])
    depth = pipeline.depth(images)
    sal = salient_observation(pipeline(images))
    gt = np.array([[s.pose.y, s.pose.rz] for s in data])
    preds = {}
    for arm, obs in (("raw", depth), ("saliency", sal)):
        y, rz = poses_from_prediction(predict_pose(posenet, obs))
        preds[arm] = np.c_[y, rz]
    offsets = np.array([s.meta.get("offset", np.nan) for s in data])
    errors = {arm: np.c_[pose_errors(p, gt)] for arm, p in preds.items()}
    return PoseEvalReport(variant, n, seed, _mae_dict(preds["raw"], gt),
                          _mae_dict(preds["saliency"], gt), offsets, errors)


def posenet_accuracy(posenet: TrainedModel, observations: np.ndarray, gt: np.ndarray) -> dict:
    """MAE of PoseNet on given observations against ``(y, rz)`` labels."""
    y, rz = poses_from_prediction(predict_pose(posenet, observations))
    return _mae_dict(np.c_[y, rz], gt)


Controller = Callable[..., tuple]
