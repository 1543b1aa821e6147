"""Command line: ``tacsal {gen,train,eval,follow,report}``.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 training divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config
from .neural import TrainingDiverged
from .pipeline import STAGES, DependencyError, RunDir, generate_datasets, write_run_manifest

EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DIVERGED = 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--profile", choices=("smoke", "desk", "full"), help="size profile")
    p.add_argument("--out", type=Path, default=Path("run"), help="run directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tacsal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write datasets and their manifests")
    _common(p)
    p.add_argument("--n", type=int, help="cap every dataset at N records")

    p = sub.add_parser("train", help="train one stage (or all)")
    _common(p)
    p.add_argument("stage", choices=(*STAGES, "all"))

    p = sub.add_parser("eval", help="evaluate trained stages")
    _common(p)
    p.add_argument("which", choices=("ablation", "pose", "metrics"))
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("follow", help="run edge-following episodes")
    _common(p)
    p.add_argument("--object", choices=("square", "flower", "volute", "foil", "circle"),
                   help="single-episode mode: the contour to follow")
    p.add_argument("--controller", choices=("pid", "image"), default="pid")
    p.add_argument("--saliency", choices=("on", "off"), default="on")
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, help="episodes per cell in table mode")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("report", help="summarise a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--no-plots", action="store_true")
    return parser


def _config(args) -> dict:
    return load_config(args.config, args.profile, args.seed)


def cmd_gen(args) -> dict:
    cfg = _config(args)
    return generate_datasets(cfg, args.out, args.n), cfg


def cmd_train(args) -> tuple[dict, dict]:
    cfg = _config(args)
    run = RunDir(args.out, cfg, auto=False)
    stages = STAGES if args.stage == "all" else (args.stage,)
    outputs = {}
    for stage in stages:
        model = run.train(stage)
        outputs[stage] = run.ckpt_path(stage)
        if model.manifest.get("curves"):
            from .plotting import plot_loss_curves
            plot_loss_curves(model.manifest["curves"], args.out / "plots" / f"loss_{stage}.png", stage)
    return outputs, cfg


def cmd_eval(args) -> tuple[dict, dict]:
    from . import experiments
    cfg = _config(args)
    run = RunDir(args.out, cfg, auto=False)
    out = run.root / "results"
    plots = not args.no_plots
    if args.which == "ablation":
        report, corners = experiments.ablation_experiment(run, plots)
        for model, means in report.means.items():
            print(model, " ".join(f"{k}={v:.4f}" for k, v in means.items()))
        print("corner mass (noisy):", corners.noisy)
        files = {"table": out / "ablation_table.csv", "corners": out / "corner_table.csv"}
    elif args.which == "pose":
        reports = experiments.pose_experiment(run, plots)
        for variant, rep in reports.items():
            print(variant, "raw", rep.raw, "saliency", rep.saliency)
        files = {"table": out / "pose_table.csv", "curve": out / "pose_offset_curve.csv"}
    else:
        for k, v in experiments.model_metrics(run).items():
            print(f"{k}: {v:.5f}")
        files = {"table": out / "model_metrics.csv"}
    return files, cfg


def cmd_follow(args) -> tuple[dict, dict]:
    from . import experiments
    cfg = _config(args)
    run = RunDir(args.out, cfg, auto=False)
    out = run.root / "results"
    if args.object:
        spec = experiments.EpisodeSpec(args.object, args.controller, args.saliency == "on",
                                       args.episode_seed)
        res = experiments.run_episode(run, spec, out / "episodes", plots=not args.no_plots)
        print(spec.name, res.summary())
        return {"log": out / "episodes" / f"{spec.name}.jsonl"}, cfg
    rows = experiments.follow_experiment(run, args.seeds, plots=not args.no_plots)
    for key, v in sorted(experiments.follow_summary(rows).items()):
        print(*key, v["cell"], f"success={v['success_rate']:.2f}")
    return {"episodes": out / "episodes.csv", "table": out / "follow_table.csv"}, cfg


def cmd_report(args) -> tuple[dict, dict]:
    from .report import write_report
    path, cfg = write_report(args.run_dir, plots=not args.no_plots)
    print(path.read_text())
    return {"report": path}, cfg


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "follow": cmd_follow,
            "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    started = time.time()
    try:
        outputs, cfg = COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    out = args.run_dir if args.command == "report" else args.out
    inputs = {}
    ckpts = Path(out) / "checkpoints"
    if args.command != "train" and ckpts.exists():
        inputs = {p.stem: p for p in sorted(ckpts.glob("*.ckpt"))}
    write_run_manifest(out, args.command, cfg, inputs, outputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
