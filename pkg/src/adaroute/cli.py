"""Command-line entry point and experiment orchestration.

Exit codes: 0 ok, 2 configuration error, 3 state error, 4 data-format
error, 1 internal failure. The environment variable ADAROUTE_THREADS caps
evaluation-time parallelism (default 1: fully sequential).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint, config, metrics, synthdata, training

SPLITS = ("train", "dev", "test")


def _dataset_path(prefix, split):
    return f"{prefix}.{split}.abds"


def _load_split(prefix, split):
    samples, _ = synthdata.read_dataset(_dataset_path(prefix, split))
    return samples


def cmd_gen_data(args):
    cfg = config.load(args.config)
    splits = synthdata.generate(config.generator_config(cfg))
    for split in SPLITS:
        path = _dataset_path(args.out, split)
        synthdata.write_dataset(path, splits[split], cfg["vocab_size"])
        print(f"wrote {path}: {len(splits[split])} samples")
    return 0


def cmd_train(args):
    cfg = config.load(args.config)
    cfg_hash = config.config_hash(cfg)
    train_samples = _load_split(args.data, "train")
    if args.resume:
        state = checkpoint.load_state(args.resume, cfg, cfg_hash, force=args.force)
    elif args.stage == 2:
        raise checkpoint.StateError(
            "stage 2 requires a warmed-up checkpoint: run `train --stage 1` "
            "first and pass it via --resume"
        )
    else:
        state = training.new_state(cfg)

    def on_epoch(rec):
        print(json.dumps(rec, sort_keys=True))

    if args.stage == 1:
        if state.stage == "cooperate":
            raise checkpoint.StateError("checkpoint already in stage 2; cannot resume stage 1")
        training.stage1_warmup(state, train_samples, cfg, epochs=args.epochs, on_epoch=on_epoch)
    else:
        if state.stage == "init":
            raise checkpoint.StateError("stage 2 requires a completed stage-1 checkpoint")
        training.stage2_cooperate(state, train_samples, cfg, epochs=args.epochs, on_epoch=on_epoch)
    checkpoint.save_state(args.out, state, cfg_hash)
    print(f"wrote {args.out} (stage={state.stage}, epoch={state.epoch})")
    return 0


def _parse_mode(mode, n_candidates):
    if mode in ("adaptive", "random", "gaussian"):
        return mode, None
    if mode.startswith("fixed:"):
        try:
            k = int(mode.split(":", 1)[1])
        except ValueError:
            raise config.ConfigError(f"bad candidate index in mode {mode!r}")
        if not 0 <= k < n_candidates:
            raise config.ConfigError(
                f"fixed candidate index {k} out of range: this configuration "
                f"has {n_candidates} candidates"
            )
        return "fixed", k
    raise config.ConfigError(
        f"unknown mode {mode!r}: expected adaptive, random, gaussian or fixed:<k>"
    )


def cmd_eval(args):
    cfg = config.load(args.config)
    cfg_hash = config.config_hash(cfg)
    state = checkpoint.load_state(args.ckpt, cfg, cfg_hash, force=args.force)
    samples = _load_split(args.data, args.split)
    mode, fixed_k = _parse_mode(args.mode, len(state.cset))
    report = metrics.evaluate(
        state, samples, mode=mode, fixed_k=fixed_k, seed=cfg["seed"],
        fuse=cfg["fuse"], reuse_global=cfg["reuse_global"],
    )
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
    print(report.summary())
    if args.matrix:
        grid = metrics.candidate_matrix(
            state, samples, fuse=cfg["fuse"], reuse_global=cfg["reuse_global"]
        )
        with open(args.matrix, "w") as fh:
            json.dump(grid, fh, indent=2)
        print(f"wrote candidate matrix to {args.matrix}")
    return 0


def cmd_flops_table(args):
    cfg = config.load(args.config)
    state = training.new_state(cfg)
    cset = state.cset
    print(f"{'candidate':>14} {'interval':>8} {'offset':>6} {'res':>5} {'cost':>10}")
    for cand, cost in zip(cset.candidates, cset.cost_table):
        print(f"{cand.label():>14} {cand.interval:>8} {cand.offset:>6} "
              f"{cand.resolution:>5} {cost:>10.6f}")
    return 0


def cmd_sweep(args):
    cfg = config.load(args.config)
    alphas = [float(a) for a in args.alpha.split(",") if a.strip()]
    if not alphas:
        raise config.ConfigError("--alpha: need at least one value")
    os.makedirs(args.out_dir, exist_ok=True)
    train_samples = _load_split(args.data, "train")
    eval_samples = _load_split(args.data, args.split)

    base = dict(cfg)
    base.pop("vocab_size")
    warm = training.new_state(cfg)
    training.stage1_warmup(warm, train_samples, cfg)
    warm_path = os.path.join(args.out_dir, "stage1.abck")
    checkpoint.save_state(warm_path, warm, config.config_hash(cfg))

    frontier = []
    for alpha in alphas:
        acfg = config.validate({**base, "alpha": alpha})
        ahash = config.config_hash(acfg)
        state = checkpoint.load_state(warm_path, acfg, ahash, force=True)
        training.stage2_cooperate(state, train_samples, acfg)
        ck = os.path.join(args.out_dir, f"alpha_{alpha:g}.abck")
        checkpoint.save_state(ck, state, ahash)
        report = metrics.evaluate(
            state, eval_samples, mode="adaptive", seed=acfg["seed"],
            fuse=acfg["fuse"], reuse_global=acfg["reuse_global"],
        )
        rp = os.path.join(args.out_dir, f"alpha_{alpha:g}.report.json")
        with open(rp, "w") as fh:
            fh.write(report.to_json())
        frontier.append({"alpha": alpha, "expected_cost": report.expected_cost,
                         "wer": report.wer})
        print(f"alpha={alpha:g}  E[c.s]={report.expected_cost:.4f}  "
              f"WER={100 * report.wer:.2f}%")
    with open(os.path.join(args.out_dir, "frontier.json"), "w") as fh:
        json.dump(frontier, fh, indent=2)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adaroute",
        description="Adaptive subsequence/resolution routing for sequence recognition.",
        epilog="configuration keys (JSON file passed via --config):\n" + config.describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset splits")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output prefix (<out>.<split>.abds)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="run a training stage")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset prefix from gen-data")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--resume", help="checkpoint to resume from (required for stage 2)")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--force", action="store_true", help="ignore config hash mismatch")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--mode", default="adaptive",
                   help="adaptive | random | gaussian | fixed:<k>")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--matrix", help="also write the chosen-vs-forced candidate WER grid")
    p.add_argument("--force", action="store_true", help="ignore config hash mismatch")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("flops-table", help="print the candidate cost table")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_flops_table)

    p = sub.add_parser("sweep", help="train/evaluate across an efficiency-weight grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", required=True, help="comma-separated efficiency weights")
    p.add_argument("--split", choices=SPLITS, default="dev")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except checkpoint.StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return 3
    except synthdata.FormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
