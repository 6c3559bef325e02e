"""Command-line entry point.

Machine-readable JSON goes to stdout, human logs to stderr. Exit codes:
0 success, 1 usage or validation error, 2 I/O or file-format error,
3 numerical failure (spectral collapse, divergence, failed oracle check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import bench
from .errors import (
    DegenerateNormError,
    DivergenceError,
    FormatError,
    ParameterError,
    SpectrackError,
    ValidationError,
)
from .io import (
    load_json,
    load_manifest,
    load_trajectory,
    load_weights,
    save_trajectory,
    save_volume,
    save_weights,
    synth_sequence,
    trajectory_to_dict,
    weights_to_dict,
    write_sequence,
)
from .learning import TrainConfig, fine_tune_bias, train_combiner
from .metrics import evaluate
from .spectral import (
    CombinerWeights,
    SpectralParams,
    build_dense_adjacency,
    oracle_step,
    refine,
    spectral_iteration,
)
from .tracking import DEFAULT_THRESHOLD, track_median, track_sequence

log = logging.getLogger("spectrack")

ORACLE_TOLERANCE = 1e-5

DEFAULT_CONFIG = {
    **{f.name: f.default for f in fields(SpectralParams)},
    **{f.name: f.default for f in fields(TrainConfig)},
    "threshold": DEFAULT_THRESHOLD,
    "fine_tune": False,
}

# flag dest -> config key
FLAG_KEYS = {
    "alpha": "alpha",
    "p": "p",
    "sigma_t": "sigma_t",
    "sigma_s": "sigma_s",
    "window": "window",
    "threshold": "threshold",
    "seed": "seed",
    "lr": "learning_rate",
    "epochs": "epochs",
}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class OracleMismatch(SpectrackError, ArithmeticError):
    pass


def load_config(args) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        doc = load_json(args.config)
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(doc)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[key] = value
    iters = getattr(args, "iters", None)
    if iters is not None and args.command in ("refine", "track"):
        try:
            cfg["n_iter"] = int(iters)
        except ValueError as exc:
            raise ValidationError(f"--iters must be an integer here, got {iters!r}") from exc
    return cfg


def spectral_params(cfg) -> SpectralParams:
    return SpectralParams(**{f.name: cfg[f.name] for f in fields(SpectralParams)})


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**{f.name: cfg[f.name] for f in fields(TrainConfig)})


def emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _weights(args, n_channels) -> CombinerWeights:
    if args.weights:
        cw = load_weights(args.weights)
        if cw.channels != n_channels:
            raise ValidationError(f"weights have {cw.channels} channels, data has {n_channels}")
        return cw
    log.info("no --weights given, using the initial combiner (w = 1/C, b = 0)")
    return CombinerWeights.initial(n_channels)


def cmd_refine(args) -> int:
    cfg = load_config(args)
    params = spectral_params(cfg)
    seq = load_manifest(args.channels)
    cw = _weights(args, seq.n_channels)
    out = refine(seq.channel_stack(), cw, params)
    save_volume(out, args.out)
    emit({"out": str(args.out), "shape": list(out.shape), "config": cfg})
    return 0


def cmd_track(args) -> int:
    cfg = load_config(args)
    params = spectral_params(cfg)
    seq = load_manifest(args.channels)
    frames = list(seq.channels)
    if args.median:
        traj = track_median(frames, seq.init, cfg["threshold"])
    else:
        cw = _weights(args, seq.n_channels)
        traj = track_sequence(frames, seq.init, cw, params, cfg["threshold"], not args.no_spectral)
    doc = {**trajectory_to_dict(traj), "config": cfg}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2)
    emit({"out": str(args.out), "frames": len(traj)})
    return 0


def _gt_trajectory(path):
    doc = load_json(path)
    if isinstance(doc, dict) and "channel_files" in doc:
        seq = load_manifest(path)
        if seq.gt is None:
            raise ValidationError(f"{path} has no ground truth")
        return seq.gt
    return load_trajectory(path)


def cmd_eval(args) -> int:
    pred = load_trajectory(args.pred)
    gt = _gt_trajectory(args.gt)
    report = evaluate(pred, gt)
    emit({**report.summary(), "per_frame_iou": report.per_frame_iou})
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    tcfg = train_config(cfg)
    seqs = [load_manifest(m) for m in args.manifest]
    if any(s.gt is None for s in seqs):
        raise ValidationError("training manifests need ground truth")
    data = [(s.channel_stack(), s.gt_masks()) for s in seqs]
    cw, history = train_combiner(data, tcfg)
    for epoch, loss in enumerate(history):
        log.info("epoch %d loss %.8f", epoch, loss)
    offset = 0.0
    if args.fine_tune or cfg["fine_tune"]:
        params = spectral_params(cfg)
        cw, offset, score = fine_tune_bias(
            [(list(s.channels), s.gt) for s in seqs], cw, params, True, cfg["threshold"]
        )
        log.info("bias shifted by %+.2f for tracking, training AO %.4f", offset, score)
    save_weights(cw, args.out)
    emit({
        "out": str(args.out),
        "initial_loss": history[0],
        "final_loss": history[-1],
        "loss_history": history,
        "bias_offset": offset,
        "weights": weights_to_dict(cw),
        "config": cfg,
    })
    return 0


def cmd_synth(args) -> int:
    blob = tuple(args.blob) if args.blob else None
    seq = synth_sequence(
        args.seed, args.frames, args.height, args.width, args.num_channels,
        args.noise, args.motion, blob=blob,
    )
    path = write_sequence(seq, args.out)
    emit({"manifest": str(path), "frames": seq.n_frames, "channels": seq.n_channels})
    return 0


def oracle_trials(trials: int, seed: int):
    """Random equivalence trials between the filtered step and the dense oracle.

    Returns ``(max_abs_diff, worst_trial_seed)``. Trial ``i`` uses seed
    ``seed + i`` so a failing instance can be replayed alone.
    """
    worst = (-1.0, seed)
    for i in range(trials):
        trial_seed = seed + i
        rng = np.random.default_rng(trial_seed)
        T, H, W = (int(v) for v in rng.integers(1, [5, 9, 9]))
        params = SpectralParams(
            alpha=float(rng.choice([0.5, 1.0, 2.0])),
            p=float(rng.choice([0.5, 1.0, 2.0])),
            radius_t=1,
            radius_s=1,
        )
        s, f, x = (rng.random((T, H, W)).astype(np.float32) for _ in range(3))
        M = build_dense_adjacency(s, f, params)
        diff = 0.0
        for _ in range(3):
            fast = spectral_iteration(x, s, f, params)
            dense = oracle_step(x, M)
            diff = max(diff, float(np.max(np.abs(fast - dense))))
            x = fast
        if diff > worst[0]:
            worst = (diff, trial_seed)
    return worst


def cmd_oracle_check(args) -> int:
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    start = time.perf_counter()
    diff, worst_seed = oracle_trials(args.trials, args.seed)
    ok = diff < ORACLE_TOLERANCE
    emit({
        "trials": args.trials,
        "seed": args.seed,
        "max_abs_diff": diff,
        "worst_seed": worst_seed,
        "tolerance": ORACLE_TOLERANCE,
        "passed": ok,
    })
    log.info("oracle check finished in %.2fs", time.perf_counter() - start)
    if not ok:
        raise OracleMismatch(f"max abs diff {diff:.3g} at trial seed {worst_seed}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    base = spectral_params(cfg)
    seqs = [load_manifest(m) for m in args.manifest]
    train = [load_manifest(m) for m in args.train] if args.train else None
    iters = bench.parse_iters(args.iters)
    subsets = [s for s in args.channels_subsets.split(",") if s.strip()]
    weights = load_weights(args.weights) if args.weights else None
    rows = bench.run_ablation(
        seqs, train, iters, subsets, base, train_config(cfg), cfg["threshold"],
        weights, fine_tune=not args.no_fine_tune,
    )
    emit({"rows": [asdict(r) for r in rows], "config": cfg})
    return 0


def _add_common(p, with_iters=True):
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--alpha", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--sigma-t", dest="sigma_t", type=float)
    p.add_argument("--sigma-s", dest="sigma_s", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    if with_iters:
        p.add_argument("--iters", help="number of spectral iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("refine", help="refine a whole sequence offline")
    p.add_argument("--channels", required=True, help="sequence manifest")
    p.add_argument("--weights")
    p.add_argument("--out", required=True, help="output volume (.sfvl)")
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("track", help="track online with a sliding window")
    p.add_argument("--channels", required=True, help="sequence manifest")
    p.add_argument("--weights")
    p.add_argument("--out", required=True, help="output trajectory (.json)")
    p.add_argument("--no-spectral", action="store_true", help="combiner only, no refinement")
    p.add_argument("--median", action="store_true", help="per-pixel median baseline")
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a trajectory against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="trajectory JSON or sequence manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="fit combiner weights with BCE")
    p.add_argument("--manifest", required=True, action="append")
    p.add_argument("--out", required=True, help="output weights (.json)")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--fine-tune", action="store_true", help="then tune the bias for tracking AO")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="write a synthetic moving-blob sequence")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=bench.SUITE["T"])
    p.add_argument("--height", type=int, default=bench.SUITE["H"])
    p.add_argument("--width", type=int, default=bench.SUITE["W"])
    p.add_argument("--num-channels", type=int, default=bench.SUITE["C"])
    p.add_argument("--noise", type=float, default=bench.SUITE["noise"])
    p.add_argument("--motion", type=float, default=bench.SUITE["motion"])
    p.add_argument("--blob", type=int, nargs=2, metavar=("H", "W"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle-check", help="filtered step vs dense adjacency")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("ablate", help="ablation table over iterations and channel subsets")
    p.add_argument("--manifest", required=True, action="append")
    p.add_argument("--train", action="append", help="training manifests (default: --manifest)")
    p.add_argument("--weights")
    p.add_argument("--channels-subsets", default="best-1,top-3,all,median")
    p.add_argument("--no-fine-tune", action="store_true")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    _add_common(p, with_iters=False)
    p.add_argument("--iters", default="1..5", help="e.g. 1..5 or 1,2,3")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
        if not args.verbose:
            logging.getLogger("spectrack.bench").setLevel(logging.WARNING)
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateNormError, DivergenceError, OracleMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ParameterError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
