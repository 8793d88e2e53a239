"""Command-line entry point.

Subcommands: synth-data, extract, train, eval, attn-dump, compare.
Config file plus flag overrides (flags win); exit 0 on success, 1 with a
single-line diagnostic on runtime failure, 2 on config validation errors.
"""

import argparse
import json
import sys
from pathlib import Path

from .audio import load_wav
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, load_config, resolve_config
from .data import (FeatureStore, ManifestEntry, build_synth_dataset,
                   load_manifest, split_entries)
from .evaluation import compare_runs, dump_attention, evaluate
from .frontend import mel_spectrogram, prosody_track, save_features
from .training import train


def _log(stage: str, message: str):
    print(f"[{stage}] {message}", file=sys.stderr)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="prosodyintent",
        description="Prosody-aware speech-to-intent workflows",
    )
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override synth/train seeds")
    parser.add_argument("--run-dir", type=Path, help="override paths.run_dir")
    parser.add_argument("--workers", type=int,
                        help="feature-extraction threads (default: cores, capped at 8)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-data", help="generate the synthetic dataset")

    p_extract = sub.add_parser("extract", help="dump features for one WAV")
    p_extract.add_argument("wav", type=Path)
    p_extract.add_argument("out", type=Path)
    p_extract.add_argument("--kind", choices=("mel", "prosody"), default="prosody")

    sub.add_parser("train", help="train the configured architecture")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("ckpt", type=Path)
    p_eval.add_argument("manifest", type=Path)
    p_eval.add_argument("split", choices=("train", "validation", "test"))

    p_attn = sub.add_parser("attn-dump", help="export an attention map as CSV")
    p_attn.add_argument("ckpt", type=Path)
    p_attn.add_argument("wav", type=Path)
    p_attn.add_argument("out", type=Path)

    p_cmp = sub.add_parser("compare", help="tabulate metrics across run dirs")
    p_cmp.add_argument("run_dirs", nargs="+", type=Path)
    p_cmp.add_argument("--json-out", type=Path, help="also write rows as JSON")
    return parser


def _resolve(args) -> RunConfig:
    doc = load_config(args.config) if args.config else {}
    if args.seed is not None:
        doc.setdefault("synth", {})["seed"] = args.seed
        doc.setdefault("train", {})["seed"] = args.seed
    if args.run_dir is not None:
        doc.setdefault("paths", {})["run_dir"] = str(args.run_dir)
    if args.workers is not None:
        doc["workers"] = args.workers
    return resolve_config(doc)


def _store(cfg: RunConfig) -> FeatureStore:
    return FeatureStore(cfg.frames, cfg.pitch, cache_dir=cfg.paths["cache_dir"],
                        utterance_seconds=cfg.crop_seconds)


def _cmd_synth_data(cfg: RunConfig):
    data_dir = cfg.paths["data_dir"]
    if not data_dir:
        raise ConfigError("synth-data needs paths.data_dir")
    manifest = build_synth_dataset(cfg.synth, data_dir)
    n = sum(1 for _ in open(manifest, "r", encoding="ascii"))
    _log("synth-data", f"wrote {n} utterances under {data_dir}")
    _log("synth-data", f"manifest at {manifest}")
    return 0


def _cmd_extract(cfg: RunConfig, args):
    w = load_wav(args.wav)
    if cfg.crop_seconds:
        from .audio import crop_or_pad
        w = crop_or_pad(w, cfg.crop_seconds)
    if args.kind == "mel":
        matrix = mel_spectrogram(w, cfg.frames)
    else:
        matrix = prosody_track(w, cfg.frames, cfg.pitch)
    save_features(args.out, matrix, args.kind)
    _log("extract", f"{args.kind} features {matrix.shape[0]}x{matrix.shape[1]} -> {args.out}")
    return 0


def _cmd_train(cfg: RunConfig):
    if not cfg.paths["manifest"]:
        raise ConfigError("train needs paths.manifest")
    if not cfg.paths["run_dir"]:
        raise ConfigError("train needs paths.run_dir (or --run-dir)")
    run_dir = Path(cfg.paths["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(run_dir / "config.json")

    entries = load_manifest(cfg.paths["manifest"])
    store = _store(cfg)
    _log("train", f"extracting features for {len(entries)} utterances "
                  f"({cfg.workers} workers)")
    store.warm(entries, workers=cfg.workers)

    def progress(info):
        if info["step"] % 50 == 0:
            b = info["breakdown"]
            _log("train", f"epoch {info['epoch']} step {info['step']} "
                          f"l_total={b.l_total:.4f} l_cls={b.l_cls:.4f}")

    _log("train", f"arch={cfg.train.arch} seed={cfg.train.seed} "
                  f"epochs={cfg.train.epochs}")
    ckpt, log = train(entries, store, cfg.train, run_dir, step_callback=progress)
    for entry in log.entries:
        _log("train", f"epoch {entry['epoch']}: val_accuracy={entry['val_accuracy']:.4f}")
    _log("train", f"best epoch {log.best_epoch}, "
                  f"val_accuracy={ckpt.metadata['best_validation_accuracy']:.4f}")
    _log("train", f"checkpoints and logs under {run_dir}")
    return 0


def _cmd_eval(cfg: RunConfig, args):
    ckpt = load_checkpoint(args.ckpt)
    entries = load_manifest(args.manifest)
    split_entries(entries, args.split)
    report = evaluate(ckpt, entries, args.split, _store(cfg))
    print(json.dumps(report.to_dict(), sort_keys=True, indent=1))
    return 0


def _cmd_attn_dump(cfg: RunConfig, args):
    ckpt = load_checkpoint(args.ckpt)
    alpha = dump_attention(ckpt, args.wav, args.out, _store(cfg))
    _log("attn-dump", f"{len(alpha)} frames, sum={alpha.sum():.6f} -> {args.out}")
    return 0


def _cmd_compare(args):
    text, rows = compare_runs(args.run_dirs)
    print(text)
    if args.json_out:
        with open(args.json_out, "w", encoding="ascii") as f:
            json.dump(rows, f, sort_keys=True, indent=1)
            f.write("\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    stage = args.command
    try:
        if args.command == "compare":
            return _cmd_compare(args)
        cfg = _resolve(args)
        if args.command == "synth-data":
            return _cmd_synth_data(cfg)
        if args.command == "extract":
            return _cmd_extract(cfg, args)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "eval":
            return _cmd_eval(cfg, args)
        if args.command == "attn-dump":
            return _cmd_attn_dump(cfg, args)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"[{stage}] config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # single-line diagnostic, non-zero exit
        print(f"[{stage}] error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
