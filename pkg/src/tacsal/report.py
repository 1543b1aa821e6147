"""Consolidated Markdown report over a run directory."""
from __future__ import annotations

import csv
from pathlib import Path

import yaml

from .config import load_config
from .pipeline import STAGES

RESULT_FILES = {
    "model_metrics.csv": "Holdout metrics per model",
    "ablation_table.csv": "Noise ablation (TacNGen vs Gaussian)",
    "corner_table.csv": "Corner generalization (salient mass on target)",
    "pose_table.csv": "PoseNet under distractors",
    "follow_table.csv": "Edge following",
}


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


def _fmt(v: str) -> str:
    try:
        return f"{float(v):.4f}"
    except ValueError:
        return v


def _table(rows: list[dict]) -> list[str]:
    if not rows:
        return ["(empty)"]
    keys = list(rows[0])
    out = ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
    out += ["| " + " | ".join(_fmt(r[k]) for k in keys) + " |" for r in rows]
    return out


def _run_config(run_dir: Path) -> dict:
    for name in ("train", "eval", "follow", "gen"):
        p = run_dir / "manifests" / f"{name}.yaml"
        if p.exists():
            return (yaml.safe_load(p.read_text()) or {}).get("config") or load_config()
    return load_config()


def write_report(run_dir: str | Path, plots: bool = True) -> tuple[Path, dict]:
    """Write ``report.md`` (and loss-curve plots) into ``run_dir``; missing pieces are listed."""
    run_dir = Path(run_dir)
    cfg = _run_config(run_dir)
    lines = ["# Run report", "", f"Run directory: `{run_dir.name}`", "",
             f"Profile `{cfg.get('profile')}`, root seed {cfg.get('seed')}.", ""]
    missing = []
    lines += ["## Checkpoints", ""]
    for stage in STAGES:
        ckpt = run_dir / "checkpoints" / f"{stage}.ckpt"
        if not ckpt.exists():
            missing.append(f"checkpoints/{stage}.ckpt")
            continue
        m = yaml.safe_load(ckpt.with_suffix(".yaml").read_text()) or {}
        curves = m.get("curves", {})
        last = ", ".join(f"{k}={v[-1]:.4g}" for k, v in curves.items() if v)
        lines.append(f"- {stage}: seed {m.get('seed')}, {m.get('samples')} samples, final {last}")
        if plots and curves:
            from .plotting import plot_loss_curves
            plot_loss_curves(curves, run_dir / "plots" / f"loss_{stage}.png", stage)
    lines.append("")
    results = run_dir / "results"
    for name, title in RESULT_FILES.items():
        path = results / name
        if not path.exists():
            missing.append(f"results/{name}")
            continue
        lines += [f"## {title}", "", *_table(_read_csv(path)), ""]
    figures = sorted(p.relative_to(run_dir).as_posix()
                     for p in run_dir.glob("**/*.png"))
    if figures:
        lines += ["## Figures", "", *(f"- `{f}`" for f in figures), ""]
    lines += ["## Missing artifacts", ""]
    lines += [f"- {m}" for m in missing] or ["- none"]
    path = run_dir / "report.md"
    path.write_text("\n".join(lines) + "\n")
    return path, cfg
