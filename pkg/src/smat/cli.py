"""Command-line entry point: ``smat <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .train import TrainingDiverged

log = logging.getLogger("smat")


class CLIError(Exception):
    pass


def _model_config(args, base=None):
    from .model import ModelConfig

    cfg = base or ModelConfig()
    values = cfg.to_dict()
    for key in ("preset", "variant", "attention", "head", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return ModelConfig(**values)


def _read_key_values(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    if not Path(path).exists():
        raise CLIError(f"config file not found: {path}")
    return io.read_config(path)


def _load_model(ckpt: str, args):
    from .model import ModelConfig, SMATModel

    path = Path(ckpt)
    if not path.exists():
        raise CLIError(f"checkpoint not found: {ckpt}")
    sidecar = path.with_suffix(".cfg")
    base = ModelConfig.from_dict(io.read_config(sidecar)) if sidecar.exists() else None
    return SMATModel.load(path, _model_config(args, base))


def _load_sequence(seq_dir: str):
    from .data import load_sequence

    if not Path(seq_dir).is_dir():
        raise CLIError(f"sequence directory not found: {seq_dir}")
    return load_sequence(seq_dir)


def cmd_synth(args) -> int:
    from .data import SynthConfig, save_sequence, synth_sequence

    cfg = SynthConfig(
        seed=args.seed if args.seed is not None else 0,
        n_frames=args.frames,
        frame_size=(args.width, args.height),
        shape=args.shape,
        speed=args.speed,
        scale_rate=args.scale_rate,
        occluder=args.occluder,
    )
    save_sequence(synth_sequence(cfg), args.out)
    print(f"wrote {cfg.n_frames} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .data import PairConfig, SynthConfig, synth_sequence
    from .train import TrainConfig, train

    kv = _read_key_values(args.config)
    tkeys = {"lr": float, "backbone_lr_mult": float, "weight_decay": float, "epochs": int,
             "samples_per_epoch": int, "batch_size": int, "seed": int}
    tvals = {k: conv(kv[k]) for k, conv in tkeys.items() if k in kv}
    for k in tkeys:
        v = getattr(args, k, None)
        if v is not None:
            tvals[k] = v
    tvals["pairs"] = PairConfig(template_from_first=args.template_from_first)
    cfg = TrainConfig(**tvals)
    from .model import ModelConfig

    mkeys = {k: v for k, v in kv.items() if k in ModelConfig.__dataclass_fields__}
    mcfg = _model_config(args, ModelConfig.from_dict(mkeys) if mkeys else None)
    if args.seq:
        data = [_load_sequence(s) for s in args.seq]
    else:
        data = [synth_sequence(SynthConfig(seed=cfg.seed + i)) for i in range(args.synth)]
    res = train(cfg, data, mcfg, out_dir=args.out, max_steps=args.max_steps, time_budget=args.time_budget)
    first, last = res.history[0].loss.total, res.history[-1].loss.total
    print(f"{len(res.history)} steps in {res.seconds:.1f}s, L_total {first:.4f} -> {last:.4f}; wrote {args.out}")
    return 0


def cmd_track(args) -> int:
    from .export import export_attention_maps
    from .head import BoundingBox
    from .tracker import Tracker

    model = _load_model(args.ckpt, args)
    seq = _load_sequence(args.seq)
    if args.init is not None:
        init = BoundingBox(*[float(v) for v in args.init.split(",")])
    elif len(seq.boxes):
        init = seq.box(0)
    else:
        raise CLIError("no groundtruth.txt in the sequence; pass --init x,y,w,h")
    tracker = Tracker(model, use_window=not args.no_window)
    state = tracker.init(seq.frames[0], init)
    boxes = [init]
    for i, frame in enumerate(seq.frames[1:], start=1):
        boxes.append(tracker.track_frame(state, frame, capture=args.export_attn is not None))
        if args.export_attn is not None:
            export_attention_maps(state.traces, args.export_attn, prefix=f"{i:05d}_")
    from .metrics import save_annotations

    out = Path(args.out) if args.out else Path(args.seq) / "pred.txt"
    save_annotations(out, boxes)
    print(f"wrote {len(boxes)} boxes to {out}")
    return 0


def _collect_boxes(path: Path) -> dict[str, list]:
    from .metrics import load_annotations

    if path.is_file():
        return {path.stem: load_annotations(path)}
    if not path.is_dir():
        raise CLIError(f"not found: {path}")
    out = {}
    for child in sorted(path.iterdir()):
        if child.is_file() and child.suffix == ".txt":
            out[child.stem] = load_annotations(child)
        elif child.is_dir():
            for name in ("groundtruth.txt", "pred.txt"):
                if (child / name).exists():
                    out[child.name] = load_annotations(child / name)
                    break
    if not out:
        raise CLIError(f"no annotation files under {path}")
    return out


def cmd_eval(args) -> int:
    from .metrics import compute_metrics

    pred = _collect_boxes(Path(args.pred))
    gt = _collect_boxes(Path(args.gt))
    if len(pred) == 1 and len(gt) == 1:
        pred = {next(iter(gt)): next(iter(pred.values()))}
    missing = sorted(set(gt) - set(pred))
    if missing:
        raise CLIError(f"no predictions for videos: {', '.join(missing)}")
    pred = {k: pred[k] for k in gt}
    report = compute_metrics(pred, gt).to_dict()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_attention, bench_csv, time_fusion_variants

    ks = [int(k) for k in args.k.split(",")]
    if ks and max(ks) < 16 * min(ks):
        print(f"warning: k spans only {max(ks) / min(ks):g}x; slopes over less than 16x are noisy", file=sys.stderr)
    sep, std = bench_attention(ks, d=args.d, repetitions=args.reps, seed=args.seed or 0, min_span=1.0)
    csv_text = bench_csv([sep, std])
    if args.out:
        Path(args.out).write_text(csv_text)
    sys.stdout.write(csv_text)
    print(f"# slope separable={sep.slope:.3f} standard={std.slope:.3f}")
    if args.fusion:
        times = time_fusion_variants(reps=args.fusion_reps)
        print("# fusion median_ms " + " ".join(f"{k}={v:.3f}" for k, v in times.items()))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_suite

    results = run_suite(args.seed or 0)
    print(format_results(results))
    return 0 if all(r.ok for r in results) else 1


def cmd_params(args) -> int:
    from .bench import format_parameter_report, parameter_json, parameter_report

    presets = args.presets.split(",")
    report = parameter_report(presets)
    print(format_parameter_report(report))
    if args.json:
        Path(args.json).write_text(parameter_json(report) + "\n")
    else:
        print(parameter_json(report))
    return 0


def cmd_export_attn(args) -> int:
    from .export import export_attention_maps
    from .tracker import Tracker

    model = _load_model(args.ckpt, args)
    seq = _load_sequence(args.seq)
    if not 1 <= args.frame < len(seq):
        raise CLIError(f"--frame must be in [1, {len(seq) - 1}]")
    tracker = Tracker(model)
    state = tracker.init(seq.frames[0], seq.box(0))
    for i in range(1, args.frame + 1):
        tracker.track_frame(state, seq.frames[i], capture=i == args.frame)
    paths = export_attention_maps(state.traces, args.out)
    for p in paths:
        print(p)
    return 0


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=list("ABCD"), help="fusion variant")
    p.add_argument("--attention", choices=["separable", "standard"])
    p.add_argument("--preset", choices=["desk", "full", "tiny"])
    p.add_argument("--head", choices=["transformer", "conv"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smat", description="Separable mixed-attention tracker toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on sequences (or synthetic data)")
    p.add_argument("--config", help="key = value training/model config")
    p.add_argument("--out", required=True, help="output directory (loss.csv, model.bin)")
    p.add_argument("--seq", nargs="*", help="sequence directories; synthetic when omitted")
    p.add_argument("--synth", type=int, default=1, help="number of synthetic sequences")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--samples-per-epoch", dest="samples_per_epoch", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float, help="seconds")
    p.add_argument("--template-from-first", dest="template_from_first", action="store_true")
    _add_model_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("track", help="track a sequence with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", help="box file (default <seq>/pred.txt)")
    p.add_argument("--init", help="x,y,w,h initial box (default: first groundtruth line)")
    p.add_argument("--no-window", dest="no_window", action="store_true")
    p.add_argument("--export-attn", dest="export_attn", help="directory for per-frame attention maps")
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("eval", help="metrics JSON for predictions vs groundtruth")
    p.add_argument("--pred", required=True, help="file or directory of x,y,w,h files")
    p.add_argument("--gt", required=True, help="file or directory of x,y,w,h files")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="separable vs standard attention scaling")
    p.add_argument("--k", default="256,512,1024,2048,4096")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--reps", type=int, default=7)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path")
    p.add_argument("--fusion", action="store_true", help="also time fusion variants A-D")
    p.add_argument("--fusion-reps", dest="fusion_reps", type=int, default=50)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts per module")
    p.add_argument("--presets", default="desk,full")
    p.add_argument("--json", help="write the JSON report here instead of stdout")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("export-attn", help="export search-region attention maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_export_attn)

    p = sub.add_parser("synth", help="render a synthetic sequence")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--width", type=int, default=240)
    p.add_argument("--height", type=int, default=192)
    p.add_argument("--shape", choices=["rect", "ellipse"], default="rect")
    p.add_argument("--speed", type=float, default=2.0)
    p.add_argument("--scale-rate", dest="scale_rate", type=float, default=0.01)
    p.add_argument("--occluder", action="store_true")
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (CLIError, FileNotFoundError, KeyError, ValueError, io.FormatError) as exc:
        print(f"smat {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"smat {args.command}: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
