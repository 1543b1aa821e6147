"""Evaluation entry points shared by the CLI and the acceptance suite.

Each function takes a :class:`RunDir`, writes its CSV results (and figures
when asked) under ``run.root / "results"`` and returns the in-memory report.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ablation import AblationReport, CornerReport, corner_generalization_eval, run_ablation
from .control import (FollowConfig, ImageConfig, PidConfig, PoseEvalReport, posenet_accuracy,
                      run_edge_follow, run_pose_eval)
from .datagen import EDGE_RANGES, build_posenet_dataset, item_rng
from .imagery import minmax_normalize
from .metrics import table_rows_to_csv
from .neural import forward, sample_tacngen
from .pipeline import (RunDir, condepnet_data, cone_pool, saliency_targets, stage_seed)
from .simworld import make_scene, tactile_forward_model

POSE_OFFSET_BINS = np.arange(7.0, 14.0 + 1e-9, 1.0)


def results_dir(run: RunDir) -> Path:
    p = run.root / "results"
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- saliency ablation --------------------------------------------------------------------

def ablation_experiment(run: RunDir, plots: bool = True) -> tuple[AblationReport, CornerReport]:
    cfg = run.cfg
    models = {"tacsalnet1": run.model("tacsalnet1"), "tacsalnet2": run.model("tacsalnet2")}
    seed = stage_seed(cfg["seed"], "ablation-eval")
    report = run_ablation(models, cfg["eval"]["ablation_n"], seed, cfg["res"])
    out = results_dir(run)
    report.write(out)
    corners = corner_generalization_eval(models, cfg["eval"]["corner_n"],
                                         stage_seed(cfg["seed"], "corner-eval"), cfg["res"])
    table_rows_to_csv(corners.rows(seed), out / "corner_table.csv")
    if plots:
        from .ablation import ablation_eval_set
        from .plotting import plot_saliency_examples
        data = ablation_eval_set(6, seed, cfg["res"])
        x = np.stack([s.input for s in data])
        p1, p2 = forward(models["tacsalnet1"], x), forward(models["tacsalnet2"], x)
        plot_saliency_examples([[s.input, s.target, a, b] for s, a, b in zip(data, p1, p2)],
                               ["composite", "target", "TacSalNet-1", "TacSalNet-2"],
                               out / "ablation_examples.png")
    return report, corners


# -- pose under distractors ---------------------------------------------------------------

def pose_experiment(run: RunDir, plots: bool = True) -> dict[str, PoseEvalReport]:
    cfg = run.cfg
    posenet = run.model("posenet")
    pipeline = run.saliency_pipeline()
    reports = {}
    for variant in ("clean", "cones", "gaussian"):
        reports[variant] = run_pose_eval(variant, posenet, pipeline, cfg["eval"]["pose_n"],
                                         stage_seed(cfg["seed"], f"pose-eval-{variant}"))
    out = results_dir(run)
    table_rows_to_csv([r for rep in reports.values() for r in rep.rows()], out / "pose_table.csv")
    with (out / "pose_offset_curve.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["variant", "arm", "offset_lo", "offset_hi", "mae_y", "mae_rz"])
        for variant in ("cones", "gaussian"):
            for arm, rows in reports[variant].offset_curve(POSE_OFFSET_BINS).items():
                for lo, hi, (my, mr) in zip(POSE_OFFSET_BINS[:-1], POSE_OFFSET_BINS[1:], rows):
                    w.writerow([variant, arm, lo, hi, repr(float(my)), repr(float(mr))])
    if plots:
        from .plotting import plot_pose_curves
        for variant in ("cones", "gaussian"):
            plot_pose_curves(POSE_OFFSET_BINS, reports[variant].offset_curve(POSE_OFFSET_BINS),
                             out / f"pose_offset_{variant}.png")
    return reports


def clean_posenet_check(run: RunDir, n: int = 500) -> dict:
    """PoseNet on analytic clean edge renders against their generating labels."""
    data = build_posenet_dataset(n, EDGE_RANGES, "none", stage_seed(run.cfg["seed"], "posenet-check"),
                                 run.cfg["res"])
    return posenet_accuracy(run.model("posenet"), np.stack([s.depth for s in data]),
                            np.array([[s.pose.y, s.pose.rz] for s in data]))


# -- per-model holdout metrics ------------------------------------------------------------

def model_metrics(run: RunDir) -> dict[str, float]:
    """Holdout numbers for every trained stage."""
    cfg = run.cfg
    out: dict[str, float] = {}
    hold = [s for s in condepnet_data(cfg) if s.meta["split"] == "holdout"]
    if hold:
        pred = forward(run.model("condepnet"), np.stack([s.input for s in hold]))
        out["condepnet_holdout_mae"] = float(np.mean(np.abs(pred - np.stack([s.target for s in hold]))))
    blank = tactile_forward_model(np.zeros((cfg["res"], cfg["res"])), 0)
    out["condepnet_blank_mean"] = float(forward(run.model("condepnet"), blank).mean())
    vae = run.model("tacngen")
    held = np.stack(cone_pool(cfg, 200, "cones-holdout"))
    out["tacngen_holdout_recon_mae"] = float(np.mean(np.abs(forward(vae, held) - held)))
    samples = sample_tacngen(vae, seed=stage_seed(cfg["seed"], "tacngen-check"), n=500,
                             sigma=cfg["tacngen"]["sample_sigma"])
    pool = np.stack(cone_pool(cfg))
    out["tacngen_support_ratio"] = float((samples > 0.05).sum((1, 2)).mean()
                                         / (pool > 0.05).sum((1, 2)).mean())
    targets = np.stack(saliency_targets(cfg)[:200])
    for arm in ("tacsalnet1", "tacsalnet2"):
        m = run.model(arm)
        pred = forward(m, targets)
        norm = np.stack([minmax_normalize(t) for t in targets])
        out[f"{arm}_clean_l1"] = float(np.mean(np.abs(pred - norm)))
        out[f"{arm}_zero_mean"] = float(forward(m, np.zeros_like(targets[0])).mean())
    for k, v in clean_posenet_check(run).items():
        out[f"posenet_clean_{k}"] = v
    table_rows_to_csv([{"model": k.split("_")[0], "metric": k, "value": v, "seed": cfg["seed"],
                        "dataset_id": "holdout"} for k, v in out.items()],
                      results_dir(run) / "model_metrics.csv")
    return out


# -- edge following -----------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeSpec:
    kind: str
    controller: str
    saliency: bool
    seed: int

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.controller}-{'sal' if self.saliency else 'raw'}-s{self.seed}"


def follow_config(cfg: dict, spec: EpisodeSpec, start_arc: float) -> FollowConfig:
    f = cfg["follow"]
    pid = PidConfig(y_gains=tuple(f["pid"]["y_gains"]), rz_gains=tuple(f["pid"]["rz_gains"]),
                    step=f["pid"]["step"])
    image = ImageConfig(step=f["image"]["step"], lateral_gain=f["image"]["lateral_gain"])
    return FollowConfig(controller=spec.controller, saliency=spec.saliency, z=f["z"],
                        start_arc=start_arc, seed=spec.seed, pid=pid, image=image)


def run_episode(run: RunDir, spec: EpisodeSpec, log_dir: Path | None = None, plots: bool = False):
    root = stage_seed(run.cfg["seed"], "follow")
    scene = make_scene(spec.kind, int(item_rng(root, 0, spec.seed).integers(2 ** 31)))
    start = float(item_rng(root, 1, spec.seed).uniform(0, scene.contour.length))
    fc = follow_config(run.cfg, spec, start)
    pipeline = run.saliency_pipeline()
    posenet = run.model("posenet") if spec.controller == "pid" else None
    res = run_edge_follow(scene, fc, pipeline, posenet)
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        with (log_dir / f"{spec.name}.jsonl").open("w") as fh:
            for entry in res.log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        if plots:
            from .plotting import plot_trajectory
            plot_trajectory(scene.contour, res.positions, log_dir / f"{spec.name}.png",
                            [(*c.position, c.radius) for c in scene.distractors],
                            f"{spec.name}: {res.classification}, MAE {res.trajectory_mae:.2f} mm")
    return res


EPISODE_FIELDS = ("object", "controller", "saliency", "seed", "classification", "trajectory_mae",
                  "distance", "progress", "steps")


def follow_experiment(run: RunDir, seeds: int | None = None, objects=None, controllers=("pid", "image"),
                      arms=(False, True), plots: bool = True) -> list[dict]:
    cfg = run.cfg
    seeds = cfg["eval"]["follow_seeds"] if seeds is None else seeds
    objects = objects or cfg["eval"]["objects"]
    out = results_dir(run)
    rows = []
    for kind in objects:
        for controller in controllers:
            for sal in arms:
                for s in range(seeds):
                    spec = EpisodeSpec(kind, controller, sal, s)
                    res = run_episode(run, spec, out / "episodes", plots=plots and s == 0)
                    rows.append({"object": kind, "controller": controller,
                                 "saliency": "on" if sal else "off", "seed": s, **res.summary()})
    write_episode_table(rows, out)
    return rows


def write_episode_table(rows: list[dict], out: Path) -> None:
    with (out / "episodes.csv").open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(EPISODE_FIELDS), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k])
                        for k in EPISODE_FIELDS})
    table = follow_summary(rows)
    with (out / "follow_table.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["object", "controller", "saliency", "episodes", "success_rate", "failure_rate",
                    "mean_mae_success", "cell"])
        for key, v in sorted(table.items()):
            w.writerow([*key, v["episodes"], repr(v["success_rate"]), repr(v["failure_rate"]),
                        repr(v["mean_mae_success"]), v["cell"]])


def follow_summary(rows: list[dict]) -> dict[tuple, dict]:
    """Per (object, controller, saliency): rates and a summary cell (MAE or ``Fail``)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["object"], r["controller"], r["saliency"]), []).append(r)
    out = {}
    for key, rs in groups.items():
        ok = [r for r in rs if r["classification"] == "success"]
        rate = len(ok) / len(rs)
        mae = float(np.mean([r["trajectory_mae"] for r in ok])) if ok else math.nan
        out[key] = {"episodes": len(rs), "success_rate": rate, "failure_rate": 1.0 - rate,
                    "mean_mae_success": mae,
                    "cell": f"{mae:.2f}mm" if rate >= 0.5 and ok else "Fail"}
    return out
