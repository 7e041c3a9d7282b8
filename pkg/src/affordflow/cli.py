"""Command-line entry points.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import HELDOUT_SEED_OFFSET, RunConfig, RunConfigError, load_run_config
from .model.config import ConfigError

log = logging.getLogger("affordflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="key=value run config (AFFORDFLOW_CONFIG overrides)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="affordflow", description="Language-conditioned point-flow affordances.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="build train and held-out dataset containers")
    _common(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint and loss log")
    _common(p)
    p.add_argument("--data", help="dataset container (default: <run.data_dir>/train)")
    p.add_argument("--fusion", choices=("early", "late"))
    p.add_argument("--wloss", choices=("on", "off"))

    p = sub.add_parser("sample", help="write predicted flows for a dataset")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)

    p = sub.add_parser("rollout", help="run simulated executions and append JSON-lines logs")
    _common(p)
    p.add_argument("--mode", choices=("closed_loop", "open_loop", "oracle"), default="closed_loop")
    p.add_argument("--checkpoint")

    p = sub.add_parser("eval", help="ADE/FDE of predictions, or success counts of rollouts")
    _common(p)
    p.add_argument("--pred", help="prediction or dataset container")
    p.add_argument("--gt", help="dataset or prediction container")
    p.add_argument("--rollouts", help="JSON-lines rollout log")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _common(p)
    p.add_argument("--max-entries", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("ablate", help="fusion x weighted-loss grid")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--heldout")

    p = sub.add_parser("report", help="SVG loss curves / trajectory overlays and CSV tables")
    _common(p)
    p.add_argument("--log", action="append", default=[], help="training CSV (repeatable)")
    p.add_argument("--pred", help="prediction container for trajectory overlays")
    p.add_argument("--data", help="dataset matching --pred (for query positions)")
    p.add_argument("--max-plots", type=int, default=4)
    return ap


# ---------------------------------------------------------------- commands


def _out(args, cfg: RunConfig, default: str) -> Path:
    out = Path(args.out or cfg.run.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, cfg: RunConfig) -> int:
    from .synth.dataset import build_dataset

    out = _out(args, cfg, "runs")
    for split, seed in (("train", args.seed), ("heldout", args.seed + HELDOUT_SEED_OFFSET)):
        dc = cfg.dataset_config(heldout=split == "heldout")
        samples = build_dataset(dc, seed, out / split)
        print(f"{split}: {len(samples)} samples -> {out / split}")
    return 0


def _data_path(args, cfg: RunConfig, split: str = "train") -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    if not cfg.run.data_dir:
        raise RunConfigError("no dataset given (--data or run.data_dir)", "run.data_dir")
    return Path(cfg.run.data_dir) / split


def cmd_train(args, cfg: RunConfig) -> int:
    from .synth.dataset import read_dataset
    from .training import save_checkpoint, train

    out = _out(args, cfg, "runs")
    samples = read_dataset(_data_path(args, cfg))
    extra = {"fusion": args.fusion} if args.fusion else {}
    mc = cfg.model_config(**extra)
    weights = cfg.loss_weights(**({"lam": 0.0} if args.wloss == "off" else {}))
    tc = dataclasses.replace(cfg.train_config(), weights=weights, log_path=str(out / "train_log.csv"),
                             checkpoint_dir=str(out / "checkpoints") if cfg.train.get("checkpoint_every") else None)
    res = train(samples, mc, tc, args.seed)
    save_checkpoint(out / "checkpoint", res.model, res.optimizer, res.steps_done,
                    {"config_hash": cfg.hash(), "seed": args.seed})
    last = res.records[-1]
    print(f"trained {res.steps_done} steps; final total={last.total:.6g} l_diff={last.l_diff:.6g} "
          f"-> {out / 'checkpoint'}")
    return 0


def _load_model(args, cfg: RunConfig):
    from .training import load_checkpoint

    path = args.checkpoint or cfg.run.checkpoint
    if not path:
        raise RunConfigError("no checkpoint given (--checkpoint or run.checkpoint)", "run.checkpoint")
    model, _, _ = load_checkpoint(path)
    return model


def cmd_sample(args, cfg: RunConfig) -> int:
    from .evaluation import predict_samples, write_predictions
    from .synth.dataset import read_dataset

    out = _out(args, cfg, "runs")
    samples = read_dataset(args.data)
    model = _load_model(args, cfg)
    preds = predict_samples(model, samples, args.seed)
    write_predictions(out / "predictions", samples, preds, {"seed": args.seed, "config_hash": cfg.hash()})
    print(f"{len(preds)} predictions -> {out / 'predictions'}")
    return 0


def cmd_rollout(args, cfg: RunConfig) -> int:
    from .numerics.rng import seeded_rng
    from .sim import SimWorld, append_rollout_log, run_rollout
    from .synth.scenes import generate_scene

    out = _out(args, cfg, "runs")
    model = _load_model(args, cfg) if args.mode != "oracle" else None
    rcfg = cfg.rollout_config()
    results = []
    for kind in cfg.data.kinds:
        for s in cfg.run.eval_seeds:
            seed = args.seed + int(s)
            setup = generate_scene(kind, seeded_rng(seed, 53))
            world = SimWorld.from_setup(setup)
            r = run_rollout(cfg.task_spec(kind, setup.goal), world, model, args.mode, seed, rcfg)
            results.append(r)
        ok = sum(r.success for r in results if r.kind == kind)
        print(f"{kind}: {ok}/{len(cfg.run.eval_seeds)} ({args.mode})")
    path = out / "rollouts.jsonl"
    if path.exists():
        path.unlink()
    append_rollout_log(path, results)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .evaluation import compare_containers, rollout_report
    from .sim import read_rollout_log

    out = _out(args, cfg, "runs")
    if args.rollouts:
        rep = rollout_report(read_rollout_log(args.rollouts), cfg.hash())
    elif args.pred and args.gt:
        rep = compare_containers(args.pred, args.gt)
        rep.config_hash = cfg.hash()
    else:
        raise UsageError("eval needs --pred and --gt, or --rollouts")
    rep.write_csv(out / "metrics.csv")
    (out / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
    for k, v in rep.per_task.items():
        fde = "" if np.isnan(v["fde"]) else f" FDE={v['fde']:.6f} m"
        print(f"{k}: ADE={v['ade']:.6f} m{fde} (n={v['n']})")
    for k, (ok, n) in rep.success.items():
        print(f"{k}: success {ok}/{n}")
    if rep.per_task and not args.rollouts:
        print(f"overall: ADE={rep.ade:.6f} m FDE={rep.fde:.6f} m")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradients import model_gradcheck

    rep = model_gradcheck(seed=args.seed, max_entries=args.max_entries)
    print(f"checked {rep.n_checked}/{rep.n_params} entries in {rep.seconds:.1f} s; "
          f"max relative error {rep.max_rel_error:.3e}")
    for name, err in rep.worst(3):
        print(f"  {name}: {err:.3e}")
    if rep.max_rel_error >= args.tol:
        print(f"gradient check failed (tolerance {args.tol:g})", file=sys.stderr)
        return 2
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .ablation import run_ablation
    from .synth.dataset import read_dataset

    out = _out(args, cfg, "runs")
    train_samples = read_dataset(_data_path(args, cfg, "train"))
    held = read_dataset(Path(args.heldout) if args.heldout else _data_path(args, cfg, "heldout"))
    seeds = [args.seed + int(s) for s in cfg.run.seeds]
    cells = run_ablation(train_samples, held, cfg.model_config(), cfg.train_config(), seeds, out_dir=out)
    for c in cells:
        print(f"fusion={c.fusion} wloss={c.wloss}: ADE={np.mean(c.ade):.6f} FDE={np.mean(c.fde):.6f}")
    print(f"-> {out / 'ablation.csv'}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    from . import report
    from .evaluation import read_flows
    from .training import read_records

    out = _out(args, cfg, "runs")
    if not args.log and not args.pred:
        raise UsageError("report needs --log and/or --pred")
    if args.log:
        runs = {Path(p).parent.name or Path(p).stem: read_records(p) for p in args.log}
        report.loss_curves(runs, out / "loss_curves.svg")
        rows = [{"run": n, "epochs": len(r), "final_total": r[-1].total, "final_l_diff": r[-1].l_diff,
                 "final_l_step": r[-1].l_step, "final_l_acc": r[-1].l_acc, "seconds": r[-1].seconds}
                for n, r in runs.items()]
        report.write_table(rows, out / "training_summary.csv")
    if args.pred:
        if not args.data:
            raise UsageError("--pred needs --data for query positions")
        from .synth.dataset import read_dataset

        samples = read_dataset(args.data)
        names, preds, kinds = read_flows(args.pred)
        for i in range(min(args.max_plots, len(preds))):
            s = samples[i]
            report.trajectory_overlay(s.queries.points, preds[i], s.gt_flow.steps,
                                      out / f"trajectories_{i:03d}_{kinds[i]}.svg", kinds[i])
    print(f"report -> {out}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample, "rollout": cmd_rollout,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args.config)
        return COMMANDS[args.cmd](args, cfg)
    except (RunConfigError, ConfigError, UsageError, io.ContainerError) as exc:
        key = getattr(exc, "key", None)
        ctx = f" [config key {key}]" if key else ""
        print(f"error{ctx}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported with its type, non-zero exit
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
