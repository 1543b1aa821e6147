"""Stage orchestration over a run directory: datasets, training, evaluation.

Every stage derives its seed from the root seed and its name, and keys its
checkpoint by a hash of the config sections it depends on (plus its upstream
keys), so a finished stage is reused until one of those inputs changes.
"""
from __future__ import annotations

import hashlib
import logging
import platform
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .config import config_digest
from .datagen import (EDGE_RANGES, build_condepnet_dataset, build_posenet_dataset,
                      build_saliency_dataset, sample_cone_pool, sample_contact_poses,
                      sample_gaussian_pool, write_dataset)
from .neural import (GanConfig, PoseConfig, TrainedModel, VaeConfig, load_checkpoint,
                     sample_tacngen, save_checkpoint, train_cgan, train_posenet, train_vae)
from .saliency import SaliencyPipeline
from .simworld import render_edge_depth

log = logging.getLogger(__name__)

STAGES = ("condepnet", "tacngen", "tacsalnet1", "tacsalnet2", "posenet")
REQUIRES = {"tacsalnet1": ("tacngen",)}


class DependencyError(RuntimeError):
    pass


def stage_seed(root: int, name: str) -> int:
    return int(np.random.default_rng([int(root), zlib.crc32(name.encode())]).integers(2 ** 31))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- data ---------------------------------------------------------------------------------

def condepnet_data(cfg: dict):
    return build_condepnet_dataset(cfg["data"]["condepnet_n"], stage_seed(cfg["seed"], "condepnet-data"),
                                   EDGE_RANGES, cfg["res"])


def saliency_targets(cfg: dict) -> list[np.ndarray]:
    poses = sample_contact_poses(cfg["data"]["targets_n"], EDGE_RANGES,
                                 stage_seed(cfg["seed"], "targets"))
    return [render_edge_depth(p, cfg["res"]) for p in poses]


def cone_pool(cfg: dict, n: int | None = None, tag: str = "cones") -> list[np.ndarray]:
    return sample_cone_pool(cfg["data"]["noise_n"] if n is None else n,
                            stage_seed(cfg["seed"], tag), cfg["res"])


def tacngen_noise_pool(cfg: dict, tacngen: TrainedModel) -> list[np.ndarray]:
    """Generated noise plus a ``cone_share`` of freshly rendered cones."""
    d = cfg["data"]
    n_cones = int(round(d["noise_n"] * d["cone_share"]))
    gen = sample_tacngen(tacngen, seed=stage_seed(cfg["seed"], "tacngen-samples"),
                         n=d["noise_n"] - n_cones, sigma=cfg["tacngen"]["sample_sigma"])
    return [*gen, *cone_pool(cfg, n_cones, "cones-share")] if n_cones else list(gen)


def gaussian_noise_pool(cfg: dict) -> list[np.ndarray]:
    return sample_gaussian_pool(cfg["data"]["noise_n"], stage_seed(cfg["seed"], "gaussian"), cfg["res"])


def saliency_epoch_data(cfg: dict, targets, pool) -> Callable[[int], tuple[np.ndarray, np.ndarray]]:
    """Per-epoch composites; both ablation arms share the pairing seed."""
    d = cfg["data"]
    base = stage_seed(cfg["seed"], "pairing")

    def epoch(e: int):
        recs = build_saliency_dataset(targets, pool, base + e, n=d["composites_per_epoch"],
                                      blobs=tuple(d["blobs"]), clean_fraction=d["clean_fraction"],
                                      empty_fraction=d["empty_fraction"])
        return np.stack([r.input for r in recs]), np.stack([r.target for r in recs])
    return epoch


def posenet_data(cfg: dict):
    return build_posenet_dataset(cfg["data"]["posenet_n"], EDGE_RANGES, "none",
                                 stage_seed(cfg["seed"], "posenet-data"), cfg["res"])


# -- run directory ------------------------------------------------------------------------

@dataclass
class RunDir:
    root: Path
    cfg: dict
    auto: bool = True
    models: dict[str, TrainedModel] = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def ckpt_path(self, stage: str) -> Path:
        return self.root / "checkpoints" / f"{stage}.ckpt"

    def stage_key(self, stage: str) -> str:
        sections = {"condepnet": ("condepnet",), "tacngen": ("tacngen",),
                    "tacsalnet1": ("tacsalnet",), "tacsalnet2": ("tacsalnet",),
                    "posenet": ("posenet",)}[stage]
        parts = [config_digest(self.cfg, ("seed", "res", "data", *sections)), stage]
        parts += [self.stage_key(dep) for dep in REQUIRES.get(stage, ())]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]

    def has(self, stage: str) -> bool:
        p = self.ckpt_path(stage)
        if not p.exists():
            return False
        m = yaml.safe_load(p.with_suffix(".yaml").read_text()) or {}
        return m.get("stage_key") == self.stage_key(stage)

    def model(self, stage: str) -> TrainedModel:
        """Load a stage's checkpoint, training it (and its prerequisites) if allowed."""
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if stage in self.models:
            return self.models[stage]
        if self.has(stage):
            m = load_checkpoint(self.ckpt_path(stage))
        elif self.auto:
            m = self.train(stage)
        else:
            raise DependencyError(f"stage {stage} has no up-to-date checkpoint in {self.root}")
        self.models[stage] = m
        return m

    def train(self, stage: str) -> TrainedModel:
        for dep in REQUIRES.get(stage, ()):
            if not self.auto and not self.has(dep):
                raise DependencyError(f"stage {stage} needs a trained {dep} checkpoint first")
        t0 = time.perf_counter()
        m = TRAINERS[stage](self)
        m.manifest.update(stage=stage, stage_key=self.stage_key(stage),
                          train_seconds=round(time.perf_counter() - t0, 2))
        save_checkpoint(self.ckpt_path(stage), m)
        self.models[stage] = m
        log.info("trained %s in %.1fs", stage, time.perf_counter() - t0)
        return m

    def saliency_pipeline(self, arm: str = "tacsalnet1") -> SaliencyPipeline:
        return SaliencyPipeline(self.model("condepnet"), self.model(arm))


def _gan_cfg(cfg: dict, section: str, seed: int) -> GanConfig:
    s = cfg[section]
    return GanConfig(l1_weight=s["l1_weight"], epochs=s["epochs"], batch_size=s["batch_size"],
                     lr_g=s["lr_g"], lr_d=s["lr_d"], seed=seed, base=s["base"])


def _train_condepnet(run: RunDir) -> TrainedModel:
    data = condepnet_data(run.cfg)
    train = [s for s in data if s.meta["split"] == "train"]
    hold = [s for s in data if s.meta["split"] == "holdout"]
    holdout = (np.stack([s.input for s in hold]), np.stack([s.target for s in hold])) if hold else None
    return train_cgan(train, _gan_cfg(run.cfg, "condepnet", stage_seed(run.cfg["seed"], "condepnet")),
                      holdout=holdout, name="condepnet")


def _train_tacngen(run: RunDir) -> TrainedModel:
    s = run.cfg["tacngen"]
    vc = VaeConfig(kl_weight=s["kl_weight"], latent=s["latent"], epochs=s["epochs"],
                   batch_size=s["batch_size"], lr=s["lr"], seed=stage_seed(run.cfg["seed"], "tacngen"),
                   base=s["base"], recon_sigma=s["recon_sigma"])
    m = train_vae(np.stack(cone_pool(run.cfg)), vc)
    m.manifest["sample_sigma"] = s["sample_sigma"]
    return m


def _train_tacsalnet(run: RunDir, arm: str) -> TrainedModel:
    cfg = run.cfg
    pool = (tacngen_noise_pool(cfg, run.model("tacngen")) if arm == "tacsalnet1"
            else gaussian_noise_pool(cfg))
    epoch = saliency_epoch_data(cfg, saliency_targets(cfg), pool)
    # both arms start from the same initial weights and batch order
    return train_cgan(None, _gan_cfg(cfg, "tacsalnet", stage_seed(cfg["seed"], "tacsalnet")),
                      epoch_data=epoch, name=arm)


def _train_posenet(run: RunDir) -> TrainedModel:
    data = posenet_data(run.cfg)
    s = run.cfg["posenet"]
    pc = PoseConfig(epochs=s["epochs"], batch_size=s["batch_size"], lr=s["lr"],
                    seed=stage_seed(run.cfg["seed"], "posenet"), base=s["base"])
    return train_posenet(np.stack([d.depth for d in data]), np.stack([d.label for d in data]), pc)


TRAINERS: dict[str, Callable[[RunDir], TrainedModel]] = {
    "condepnet": _train_condepnet,
    "tacngen": _train_tacngen,
    "tacsalnet1": lambda run: _train_tacsalnet(run, "tacsalnet1"),
    "tacsalnet2": lambda run: _train_tacsalnet(run, "tacsalnet2"),
    "posenet": _train_posenet,
}


# -- datasets on disk ---------------------------------------------------------------------

def generate_datasets(cfg: dict, out: str | Path, n: int | None = None) -> dict[str, Path]:
    """Write the ConDepNet pairs, the saliency training set and the PoseNet set to disk.

    ``n`` caps every dataset size (for smoke runs). The saliency set written here
    uses rendered cones as noise, since TacNGen samples need a trained model.
    """
    out = Path(out) / "datasets"
    c = dict(cfg, data=dict(cfg["data"]))
    if n is not None:
        for key in ("condepnet_n", "targets_n", "noise_n", "composites_per_epoch", "posenet_n"):
            c["data"][key] = min(int(n), c["data"][key])
    paths = {}
    paths["condepnet"] = write_dataset(out, "condepnet", [
        {"input": s.input, "target": s.target, **s.meta} for s in condepnet_data(c)])
    recs = build_saliency_dataset(saliency_targets(c), cone_pool(c),
                                  stage_seed(c["seed"], "pairing"),
                                  n=c["data"]["composites_per_epoch"], blobs=tuple(c["data"]["blobs"]))
    paths["saliency"] = write_dataset(out, "saliency", [
        {"input": r.input, "target": r.target,
         **{k: v for k, v in r.meta.items() if k != "clean"}} for r in recs])
    paths["posenet"] = write_dataset(out, "posenet", [
        {"input": s.depth, "pose": [s.pose.y, s.pose.rz, s.pose.z], "label": s.label.tolist()}
        for s in posenet_data(c)])
    return paths


# -- provenance ---------------------------------------------------------------------------

def write_run_manifest(out: str | Path, command: str, cfg: dict, inputs: dict[str, Path],
                       outputs: dict[str, Path], started: float, extra: dict | None = None) -> Path:
    out = Path(out)
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "stage_seeds": {s: stage_seed(cfg["seed"], s) for s in STAGES},
        "inputs": {k: {"path": str(p), "sha256": file_digest(p)} for k, p in inputs.items()
                   if Path(p).exists()},
        "outputs": {k: {"path": str(p), "sha256": file_digest(p)} for k, p in outputs.items()
                    if Path(p).exists()},
        "wall_seconds": round(time.time() - started, 3),
        "version": f"tacsal {__version__} / python {platform.python_version()} / numpy {np.__version__}",
        **(extra or {}),
    }
    path = out / "manifests" / f"{command}.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=True))
    return path
