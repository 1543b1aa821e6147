"""TacNGen-versus-Gaussian noise ablation and the corner generalization check."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import (EDGE_RANGES, PairedSample, build_saliency_dataset, item_rng,
                      random_augment_params, sample_cone_pool, sample_contact_poses)
from .datagen import compose
from .imagery import minmax_normalize
from .metrics import (edge_support, salient_mass_fraction, saliency_scores, table_rows_to_csv)
from .neural import TrainedModel, forward
from .simworld import RES, Contour, Scene, SensorFrame, render_edge_component, render_edge_depth

METRICS = ("auc_j", "sim", "cc", "nss")
# metrics on which the TacNGen arm is expected to match or beat the Gaussian arm
ORDERED = ("sim", "cc", "nss")
_EVAL_TARGETS, _EVAL_CONES, _EVAL_PAIRING, _CORNER = 201, 202, 203, 204


def ablation_eval_set(n: int, seed: int, res: int = RES,
                      blobs: tuple[int, int] = (1, 3)) -> list[PairedSample]:
    """Held-out composites: fresh edge targets with fresh rendered-cone noise."""
    poses = sample_contact_poses(n, EDGE_RANGES, int(item_rng(seed, _EVAL_TARGETS).integers(2 ** 31)))
    targets = [render_edge_depth(p, res) for p in poses]
    cones = sample_cone_pool(max(n, 1), int(item_rng(seed, _EVAL_CONES).integers(2 ** 31)), res)
    return build_saliency_dataset(targets, cones,
                                  int(item_rng(seed, _EVAL_PAIRING).integers(2 ** 31)),
                                  n=n, blobs=blobs)


@dataclass
class AblationReport:
    n: int
    seeds: dict
    dataset_id: str
    per_sample: dict[str, np.ndarray]  # model -> (n, 4) in METRICS order
    means: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.means = {m: {k: float(v) for k, v in zip(METRICS, arr.mean(axis=0))}
                      for m, arr in self.per_sample.items()}

    def wins(self, a: str = "tacsalnet1", b: str = "tacsalnet2") -> dict[str, bool]:
        return {k: self.means[a][k] >= self.means[b][k] for k in METRICS}

    def rows(self) -> list[dict]:
        return [{"model": m, "metric": k, "value": v, "seed": self.seeds.get("eval"),
                 "dataset_id": self.dataset_id}
                for m, d in self.means.items() for k, v in d.items()]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Long-format metric table plus one per-sample dump per model."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"table": out / "ablation_table.csv"}
        table_rows_to_csv(self.rows(), paths["table"])
        for model, arr in self.per_sample.items():
            p = out / f"ablation_samples_{model}.csv"
            with p.open("w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["index", *METRICS])
                for i, row in enumerate(arr):
                    w.writerow([i, *(repr(float(x)) for x in row)])
            paths[model] = p
        return paths


def score_model(model: TrainedModel, data: list[PairedSample]) -> np.ndarray:
    preds = forward(model, np.stack([s.input for s in data]))
    return np.array([[saliency_scores(p, s.target)[k] for k in METRICS]
                     for p, s in zip(preds, data)])


def run_ablation(models: dict[str, TrainedModel], n: int = 1000, seed: int = 0,
                 res: int = RES) -> AblationReport:
    """Score every model on one shared set of ``n`` held-out composites."""
    if n < 1:
        raise ValueError("empty evaluation set")
    data = ablation_eval_set(n, seed, res)
    return AblationReport(n, {"eval": seed}, f"ablation-eval-{seed}-{n}",
                          {name: score_model(m, data) for name, m in models.items()})


# -- corners ------------------------------------------------------------------------------

def corner_frames(n: int, seed: int, contour: Contour | None = None,
                  offset: tuple[float, float] = (-3.0, 3.0)) -> list[SensorFrame]:
    """Sensor frames near the corners of a square at random headings and offsets."""
    contour = contour or Contour("square", {"fillet": 0.5})
    h = contour.params["side"] / 2.0
    rng = item_rng(seed, _CORNER)
    frames = []
    for _ in range(n):
        cx, cy = h * rng.choice([-1.0, 1.0], size=2)
        # displace along the corner's outward diagonal and a little sideways
        d = np.array([math.copysign(1.0, cx), math.copysign(1.0, cy)]) / math.sqrt(2.0)
        along, side = rng.uniform(*offset), rng.uniform(-2.0, 2.0)
        pos = np.array([cx, cy]) + along * d + side * np.array([-d[1], d[0]])
        frames.append(SensorFrame((float(pos[0]), float(pos[1])), float(rng.uniform(-180, 180)),
                                  float(rng.uniform(3.0, 6.0))))
    return frames


@dataclass
class CornerReport:
    noisy: dict[str, float]
    clean: dict[str, float]
    n: int

    def rows(self, seed: int | None = None) -> list[dict]:
        return [{"model": m, "metric": f"corner_mass_{kind}", "value": v, "seed": seed,
                 "dataset_id": f"corners-{self.n}"}
                for kind in ("noisy", "clean") for m, v in getattr(self, kind).items()]


def corner_generalization_eval(models: dict[str, TrainedModel], n: int = 200, seed: int = 0,
                               res: int = RES, dilate_px: int = 2) -> CornerReport:
    """Mean share of predicted saliency mass on the dilated true corner support.

    Each corner depth map is scored clean and with 1-3 held-out cones overlaid.
    """
    contour = Contour("square", {"fillet": 0.5})
    scene = Scene(contour)
    frames = corner_frames(n, seed, contour)
    clean = np.stack([render_edge_component(scene, f, res) for f in frames])
    cones = sample_cone_pool(n, int(item_rng(seed, _EVAL_CONES, 1).integers(2 ** 31)), res)
    noisy = []
    for i, c in enumerate(clean):
        rng = item_rng(seed, _CORNER, 1000 + i)
        k = int(rng.integers(1, 4))
        picks = rng.integers(len(cones), size=k)
        noisy.append(compose(c, [cones[j] for j in picks],
                             [random_augment_params(rng, res) for _ in range(k)]))
    noisy = np.stack(noisy)
    supports = [edge_support(c, dilate_px) for c in clean]
    out = {"noisy": {}, "clean": {}}
    for name, m in models.items():
        for kind, inputs in (("noisy", noisy), ("clean", clean)):
            preds = forward(m, inputs)
            out[kind][name] = float(np.mean([salient_mass_fraction(p, s)
                                             for p, s in zip(preds, supports)]))
    return CornerReport(out["noisy"], out["clean"], n)


def corner_targets(n: int, seed: int, res: int = RES) -> np.ndarray:
    """Normalised clean corner maps (for plots and spot checks)."""
    scene = Scene(Contour("square", {"fillet": 0.5}))
    return np.stack([minmax_normalize(render_edge_component(scene, f, res))
                     for f in corner_frames(n, seed)])
