"""Dataset builders: edge poses, ConDepNet pairs, saliency composites and PoseNet sets.

Every builder is a pure function of its sizes, ranges and seed. Per-item random
streams come from ``numpy.random.default_rng([seed, stream, index])`` so an item
does not depend on how many items were generated before it.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imagery import (AugmentParams, DepthMap, GrayImage, augment, decode_pgm, encode_pgm,
                      minmax_normalize, overlay, random_augment_params)
from .simworld import (APERTURE_MM, RES, ConeDistractor, ContactPose, random_cone_shape,
                       render_cone_depth, render_edge_depth, sensor_grid, tactile_forward_model,
                       wrap_deg)

# stream ids keep the per-purpose random streams of one root seed apart
_POSES, _CONDEP, _CONES, _GAUSS, _PAIRING, _POSENET, _SPLIT = range(7)


def item_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(index)])


@dataclass(frozen=True)
class PoseRanges:
    y: tuple[float, float] = (-6.0, 6.0)
    z: tuple[float, float] = (3.0, 6.0)
    rz: tuple[float, float] = (-180.0, 180.0)
    x: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("y", "z", "rz", "x"):
            r = getattr(self, name)
            if r is not None and r[0] > r[1]:
                raise ValueError(f"range {name}={r} has lo > hi")


EDGE_RANGES = PoseRanges()
POSE_EVAL_RANGES = PoseRanges(y=(-3.0, 3.0), z=(3.0, 6.0), rz=(-45.0, 45.0), x=(-10.0, 10.0))


@dataclass
class PairedSample:
    input: GrayImage
    target: GrayImage
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ValueError(f"input {self.input.shape} and target {self.target.shape} differ")


@dataclass
class PoseSample:
    depth: DepthMap
    label: np.ndarray
    pose: ContactPose
    meta: dict = field(default_factory=dict)


def _uniform(rng: np.random.Generator, r: tuple[float, float]) -> float:
    return float(r[0]) if r[0] == r[1] else float(rng.uniform(r[0], r[1]))


def sample_contact_poses(n: int, r: PoseRanges = EDGE_RANGES, seed: int = 0) -> list[ContactPose]:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = item_rng(seed, _POSES)
    out = []
    for _ in range(n):
        y = _uniform(rng, r.y)
        rz = _uniform(rng, r.rz)
        z = _uniform(rng, r.z)
        out.append(ContactPose(y=y, rz=wrap_deg(rz), z=z))
    return out


def split_indices(n: int, holdout_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint ``(train, holdout)`` index arrays."""
    order = item_rng(seed, _SPLIT).permutation(n)
    k = int(round(n * holdout_fraction))
    return np.sort(order[k:]), np.sort(order[:k])


def build_condepnet_dataset(n: int, seed: int = 0, ranges: PoseRanges = EDGE_RANGES,
                            res: int = RES, holdout_fraction: float = 0.1) -> list[PairedSample]:
    """Marker image -> edge depth pairs, auto-labelled by the renderer."""
    poses = sample_contact_poses(n, ranges, seed)
    _, holdout = split_indices(n, holdout_fraction, seed)
    held = set(holdout.tolist())
    out = []
    for i, pose in enumerate(poses):
        target = render_edge_depth(pose, res)
        img_seed = int(item_rng(seed, _CONDEP, i).integers(2 ** 31))
        out.append(PairedSample(
            tactile_forward_model(target, img_seed), target,
            {"pose": [pose.y, pose.rz, pose.z], "image_seed": img_seed,
             "split": "holdout" if i in held else "train", "source": "edge"}))
    return out


def random_cone(rng: np.random.Generator, centre_radius: float = APERTURE_MM) -> ConeDistractor:
    r = centre_radius * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * math.pi)
    radius, apex, angle = random_cone_shape(rng)
    return ConeDistractor((r * math.cos(a), r * math.sin(a)), radius, apex, angle)


def sample_cone_pool(n: int, seed: int = 0, res: int = RES) -> list[DepthMap]:
    """Single-cone noise maps with the centre uniform over the aperture."""
    return [render_cone_depth(random_cone(item_rng(seed, _CONES, i)), res) for i in range(n)]


def gaussian_noise_depth(amplitude: float, mean: tuple[float, float], cov: np.ndarray,
                         res: int = RES) -> DepthMap:
    """``amplitude * exp(-0.5 (p - mean)^T cov^-1 (p - mean))`` over the aperture, in mm."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
        raise ValueError("cov must be a symmetric 2x2 matrix")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("cov must be positive definite") from exc
    if not 0.0 < amplitude <= 1.0:
        raise ValueError("amplitude must be in (0, 1]")
    u, v, inside = sensor_grid(res)
    d = np.stack([u - mean[0], v - mean[1]])
    w = np.linalg.solve(chol, d.reshape(2, -1)).reshape(d.shape)
    return np.where(inside, amplitude * np.exp(-0.5 * (w ** 2).sum(axis=0)), 0.0)


def random_gaussian_noise(rng: np.random.Generator, res: int = RES,
                          amplitude: tuple[float, float] = (0.3, 1.0),
                          sigma: tuple[float, float] = (1.5, 4.0)) -> DepthMap:
    r = APERTURE_MM * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * math.pi)
    s = rng.uniform(*sigma)
    return gaussian_noise_depth(float(rng.uniform(*amplitude)), (r * math.cos(a), r * math.sin(a)),
                                np.eye(2) * s * s, res)


def sample_gaussian_pool(n: int, seed: int = 0, res: int = RES) -> list[DepthMap]:
    return [random_gaussian_noise(item_rng(seed, _GAUSS, i), res) for i in range(n)]


def compose(target: DepthMap, noises: Sequence[DepthMap],
            params: Sequence[AugmentParams]) -> DepthMap:
    """Overlay augmented noise maps on a target, keeping contact inside the aperture."""
    _, _, inside = sensor_grid(target.shape[0])
    out = np.asarray(target, dtype=np.float64)
    for noise, p in zip(noises, params):
        out = overlay(out, np.where(inside, augment(noise, p), 0.0))
    return out


def build_saliency_dataset(targets: Sequence[DepthMap], noise_pool: Sequence[DepthMap],
                           pairing_seed: int, n: int | None = None,
                           blobs: tuple[int, int] = (1, 3), clean_fraction: float = 0.0,
                           empty_fraction: float = 0.0) -> list[PairedSample]:
    """Composite depth -> normalised clean target saliency.

    Record ``i`` uses target ``i % len(targets)``; each of its noise blobs is a
    pool member drawn uniformly and freshly augmented. ``clean_fraction`` of the
    records carry no noise and ``empty_fraction`` swap the target for an empty
    map, so the net also sees pure-noise contacts.
    """
    if not targets or not noise_pool:
        raise ValueError("target and noise pools must be non-empty")
    n = len(targets) if n is None else n
    res = targets[0].shape[0]
    out = []
    for i in range(n):
        rng = item_rng(pairing_seed, _PAIRING, i)
        k = i % len(targets)
        clean = targets[k]
        roll = rng.uniform()
        if roll < empty_fraction:
            clean = np.zeros_like(clean)
        count = 0 if empty_fraction <= roll < empty_fraction + clean_fraction else int(
            rng.integers(blobs[0], blobs[1] + 1))
        picks = rng.integers(len(noise_pool), size=count)
        params = [random_augment_params(rng, res) for _ in range(count)]
        composite = compose(clean, [noise_pool[j] for j in picks], params)
        out.append(PairedSample(composite, minmax_normalize(clean),
                                {"target_index": k, "noise_indices": picks.tolist(),
                                 "empty": bool(roll < empty_fraction), "clean": clean}))
    return out


def cone_beside_edge(pose: ContactPose, offset: float, slide: float,
                     rng: np.random.Generator) -> ConeDistractor:
    """Sensor-frame cone ``offset`` mm outside the edge, ``-slide`` mm along it."""
    a = math.radians(pose.rz)
    normal = np.array([math.cos(a), -math.sin(a)])
    tangent = np.array([math.sin(a), math.cos(a)])
    centre = (offset - pose.y) * normal - slide * tangent
    radius, apex, angle = random_cone_shape(rng)
    return ConeDistractor((float(centre[0]), float(centre[1])), radius, apex, angle)


def gaussian_beside_edge(pose: ContactPose, offset: float, slide: float,
                         rng: np.random.Generator, res: int = RES) -> DepthMap:
    a = math.radians(pose.rz)
    centre = ((offset - pose.y) * np.array([math.cos(a), -math.sin(a)])
              - slide * np.array([math.sin(a), math.cos(a)]))
    s = rng.uniform(1.5, 4.0)
    return gaussian_noise_depth(float(rng.uniform(0.3, 1.0)), tuple(centre), np.eye(2) * s * s, res)


def pose_label(pose: ContactPose) -> np.ndarray:
    """``(y, sin rz, cos rz)``."""
    a = math.radians(pose.rz)
    return np.array([pose.y, math.sin(a), math.cos(a)])


def label_to_pose(label: Sequence[float]) -> tuple[float, float]:
    y, s, c = label
    return float(y), math.degrees(math.atan2(s, c))


def build_posenet_dataset(n: int, r: PoseRanges = EDGE_RANGES, noise_mode: str = "none",
                          seed: int = 0, res: int = RES,
                          offset_range: tuple[float, float] = (7.0, 14.0)) -> list[PoseSample]:
    """Depth maps labelled with the generating ``(y, sin rz, cos rz)``.

    With ``noise_mode`` ``cones`` or ``gaussian`` a single blob sits
    ``offset_range`` mm outside the edge; the sensor slides along the edge over
    ``r.x`` (default +-10 mm) relative to it.
    """
    if noise_mode not in ("none", "cones", "gaussian"):
        raise ValueError(f"unknown noise mode {noise_mode!r}")
    poses = sample_contact_poses(n, r, seed)
    slide_range = r.x if r.x is not None else (-10.0, 10.0)
    out = []
    for i, pose in enumerate(poses):
        clean = render_edge_depth(pose, res)
        meta: dict = {"pose": [pose.y, pose.rz, pose.z]}
        depth = clean
        if noise_mode != "none":
            rng = item_rng(seed, _POSENET, i)
            offset = float(rng.uniform(*offset_range))
            slide = float(rng.uniform(*slide_range))
            meta.update(offset=offset, slide=slide)
            if noise_mode == "cones":
                cone = cone_beside_edge(pose, offset, slide, rng)
                meta["cone"] = [*cone.center, cone.radius, cone.apex_depth, cone.cone_angle]
                depth = overlay(clean, render_cone_depth(cone, res))
            else:
                depth = overlay(clean, gaussian_beside_edge(pose, offset, slide, rng, res))
        out.append(PoseSample(depth, pose_label(pose), pose, meta))
    return out


# -- on-disk datasets ----------------------------------------------------------------------

def store_image(objects: Path, img: GrayImage) -> str:
    """Write ``img`` into a content-addressed PGM store; returns the relative path."""
    data = encode_pgm(img)
    digest = hashlib.sha256(data).hexdigest()
    rel = f"{digest[:2]}/{digest}.pgm"
    path = objects / rel
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    return rel


def write_dataset(root: str | Path, name: str, records: Sequence[dict]) -> Path:
    """Write ``records`` (each with ``input``/``target`` images) as ``<name>.jsonl``.

    Images go to ``root/objects``; the manifest lines hold their paths, the
    pose and a provenance tag.
    """
    root = Path(root)
    objects = root / "objects"
    lines = []
    for rec in records:
        line = {k: v for k, v in rec.items() if k not in ("input", "target")}
        line["input"] = "objects/" + store_image(objects, rec["input"])
        if rec.get("target") is not None:
            line["target"] = "objects/" + store_image(objects, rec["target"])
        lines.append(json.dumps(line, sort_keys=True))
    path = root / f"{name}.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dataset(root: str | Path, name: str) -> tuple[list[dict], np.ndarray, np.ndarray | None]:
    """Inverse of :func:`write_dataset`: ``(records, inputs, targets)`` stacked as arrays."""
    root = Path(root)
    path = root / f"{name}.jsonl"
    if not path.exists():
        raise FileNotFoundError(path)
    cache: dict[str, np.ndarray] = {}

    def load(rel: str) -> np.ndarray:
        if rel not in cache:
            cache[rel] = decode_pgm((root / rel).read_bytes())
        return cache[rel]

    records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    inputs = np.stack([load(r["input"]) for r in records])
    targets = (np.stack([load(r["target"]) for r in records])
               if records and "target" in records[0] else None)
    return records, inputs, targets
