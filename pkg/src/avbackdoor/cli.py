"""Command-line pipeline: synth -> poison -> train -> eval -> fuse -> defend.

Results go to stdout as JSON (eval/defend), logs to stderr.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio_triggers import mel_spectrogram
from .defense import activation_clustering, prune, strip
from .media import AudioSignal, FormatError, read_wav, write_mel
from .models import (AudioClassifier, EarlyFusionModel, LateFusionModel,
                     VideoClassifier, load_model, save_model)
from .poison import DatasetManifest, PoisonSpec, poison_dataset
from .synth import SynthSpec, generate
from .trainer import (EvalContext, Hyper, NumericError, dump_activations,
                      evaluate, fuse_early, load_media, read_activation_dump,
                      train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_provenance(out_base: Path, command: str, config: dict,
                      inputs: list[str | Path]) -> None:
    record = {
        "toolkit_version": __version__,
        "command": command,
        "config": config,
        "input_hashes": {str(p): _sha256(p) for p in inputs
                         if p is not None and Path(p).is_file()},
    }
    if out_base.suffix:  # provenance sits next to a file output
        prov_path = out_base.with_suffix(out_base.suffix + ".prov.json")
    else:
        out_base.mkdir(parents=True, exist_ok=True)
        prov_path = out_base / "provenance.json"
    with open(prov_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _overlay(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Config-file values fill in flags the user left at their defaults."""
    config = dict(vars(args))
    for internal in ("func", "_sub", "subcommand", "defense"):
        config.pop(internal, None)
    overlay_path = config.pop("config", None)
    if overlay_path:
        overlay = _load_json(overlay_path)
        for key, value in overlay.items():
            attr = key.replace("-", "_")
            if attr not in config:
                raise ValueError(f"config key {key!r} is not a known flag")
            if getattr(args, attr) == parser.get_default(attr):
                config[attr] = value
                setattr(args, attr, value)
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in config.items()}


def _hyper_from_args(args) -> Hyper:
    return Hyper(lr=args.lr, epochs=args.epochs, batch=args.batch,
                 seed=args.seed)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, parser) -> int:
    config = _overlay(args, parser)
    spec_obj = _load_json(args.spec) if args.spec else {}
    spec = SynthSpec(**{**spec_obj, "seed": args.seed})
    out = Path(args.out)
    train_m, test_m = generate(spec, out)
    _log(f"synth: wrote {len(train_m.samples)} train / {len(test_m.samples)} "
         f"test samples under {out}")
    _write_provenance(out, "synth", config, [args.spec])
    return EXIT_OK


def cmd_poison(args, parser) -> int:
    config = _overlay(args, parser)
    manifest = DatasetManifest.load(args.manifest)
    spec = PoisonSpec.from_json(_load_json(args.spec))
    result = poison_dataset(manifest, spec, args.out, threads=args.threads)
    n_poisoned = sum(1 for r in result.samples if r.poisoned)
    _log(f"poison: {n_poisoned}/{len(result.samples)} samples poisoned -> "
         f"{args.out}/manifest.jsonl")
    _write_provenance(Path(args.out), "poison", config,
                      [args.manifest, args.spec])
    return EXIT_OK


def cmd_train(args, parser) -> int:
    config = _overlay(args, parser)
    manifest = DatasetManifest.load(args.manifest)
    if args.modality == "video":
        model = VideoClassifier(manifest.k_classes, seed=args.seed)
    else:
        model = AudioClassifier(manifest.k_classes, seed=args.seed)
    report = train(model, manifest, _hyper_from_args(args))
    save_model(model, args.out)
    _log(f"train: loss {report.first_epoch_loss:.4f} -> "
         f"{report.final_epoch_loss:.4f} over {args.epochs} epochs; "
         f"saved {args.out}")
    _write_provenance(Path(args.out), "train", config, [args.manifest])
    return EXIT_OK


def cmd_eval(args, parser) -> int:
    config = _overlay(args, parser)
    model = load_model(args.model)
    manifest = DatasetManifest.load(args.manifest)
    spec = None
    if args.spec:
        spec = PoisonSpec.from_json(_load_json(args.spec))
        if args.eval_frames is not None:
            spec = PoisonSpec.from_json({**spec.to_json(),
                                         "eval_frame_count": args.eval_frames})
    metrics = evaluate(model, manifest, spec)
    print(json.dumps(metrics.to_json(), sort_keys=True))
    if args.out:
        _write_provenance(Path(args.out), "eval", config,
                          [args.model, args.manifest, args.spec])
    return EXIT_OK


def cmd_fuse(args, parser) -> int:
    config = _overlay(args, parser)
    video = load_model(args.video)
    audio = load_model(args.audio)
    if not isinstance(video, VideoClassifier) or not isinstance(audio,
                                                                AudioClassifier):
        raise ValueError("fuse expects a video checkpoint and an audio one")
    if args.mode == "early":
        if not args.manifest:
            raise ValueError("early fusion needs --manifest to train the head")
        manifest = DatasetManifest.load(args.manifest)
        model = fuse_early(video, audio, manifest, _hyper_from_args(args))
    else:
        model = LateFusionModel(video, audio)
    save_model(model, args.out)
    _log(f"fuse: saved {args.mode} fusion model to {args.out}")
    _write_provenance(Path(args.out), "fuse", config,
                      [args.video, args.audio, args.manifest])
    return EXIT_OK


def cmd_dump_activations(args, parser) -> int:
    config = _overlay(args, parser)
    model = load_model(args.model)
    manifest = DatasetManifest.load(args.manifest)
    dump_activations(model, manifest, args.out)
    _log(f"dump-activations: {len(manifest.samples)} records -> {args.out}")
    _write_provenance(Path(args.out), "dump-activations", config,
                      [args.model, args.manifest])
    return EXIT_OK


def cmd_defend_ac(args, parser) -> int:
    config = _overlay(args, parser)
    records = read_activation_dump(args.dump)
    report = activation_clustering(records, pca_dim=args.pca_dim,
                                   seed=args.seed)
    print(json.dumps(report.to_json(), sort_keys=True))
    if args.out:
        out = Path(args.out)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        _write_provenance(out, "defend-ac", config, [args.dump])
    return EXIT_OK


def cmd_defend_strip(args, parser) -> int:
    config = _overlay(args, parser)
    model = load_model(args.model)
    clean = DatasetManifest.load(args.clean_manifest)
    inspect = DatasetManifest.load(args.inspect_manifest)
    if model.modality == "video":
        pool = load_media(clean, want_video=True)["video"]
        batch = load_media(inspect, want_video=True)
        items = batch["video"]
        predict = lambda arr: model.probs_media({"video": arr})
    elif model.modality == "audio":
        pool = load_media(clean, want_audio=True, keep_waveforms=True)
        batch = load_media(inspect, want_audio=True, keep_waveforms=True)
        rate = pool["sample_rate"]

        def predict(waves):
            mels = np.stack([mel_spectrogram(AudioSignal(
                np.clip(w, -1.0, 1.0), rate)).bins for w in waves])
            return model.probs_media({"mel": mels.astype(np.float32)})

        items = batch["waveform"]
        pool = pool["waveform"]
    else:
        raise ValueError("STRIP runs on single-modality models")
    report = strip(predict, items, batch["sample_ids"], pool,
                   n_blend=args.n_blend, frr=args.frr, seed=args.seed)
    print(json.dumps(report.to_json(), sort_keys=True))
    if args.out:
        out = Path(args.out)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        _write_provenance(out, "defend-strip", config,
                          [args.model, args.clean_manifest,
                           args.inspect_manifest])
    return EXIT_OK


def cmd_defend_prune(args, parser) -> int:
    config = _overlay(args, parser)
    model = load_model(args.model)
    manifest = DatasetManifest.load(args.manifest)
    spec = PoisonSpec.from_json(_load_json(args.spec))
    want_video = model.modality == "video"
    ctx = EvalContext.build(manifest, want_video, not want_video, spec)
    calibration = ctx.clean["video"] if want_video else ctx.clean["mel"]
    curve = prune(model, calibration, ctx, step=args.step)
    print(json.dumps(curve.to_json(), sort_keys=True))
    if args.out:
        out = Path(args.out)
        curve.write_csv(out)
        _write_provenance(out, "defend-prune", config,
                          [args.model, args.manifest, args.spec])
    return EXIT_OK


def cmd_melspec(args, parser) -> int:
    config = _overlay(args, parser)
    sig = read_wav(args.wav)
    mel = mel_spectrogram(sig)
    summary = {"shape": list(mel.bins.shape),
               "min": float(mel.bins.min()), "max": float(mel.bins.max()),
               "mean": float(mel.bins.mean())}
    if args.out:
        write_mel(mel, args.out)
        summary["out"] = str(args.out)
        _write_provenance(Path(args.out), "melspec", config, [args.wav])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring

def _add_common(sub, out_required=True, hyper=False):
    sub.set_defaults(_sub=sub)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=1)
    sub.add_argument("--config", default=None,
                     help="JSON file whose keys fill unset flags")
    if out_required:
        sub.add_argument("--out", required=True)
    else:
        sub.add_argument("--out", default=None)
    if hyper:
        sub.add_argument("--lr", type=float, default=0.05)
        sub.add_argument("--epochs", type=int, default=30)
        sub.add_argument("--batch", type=int, default=16)


def build_parser() -> _Parser:
    parser = _Parser(prog="avbackdoor",
                     description="Audiovisual backdoor attack toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", default=None, help="SynthSpec JSON")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("poison", help="materialize a poisoned dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--spec", required=True, help="PoisonSpec JSON")
    _add_common(p)
    p.set_defaults(func=cmd_poison)

    p = subs.add_parser("train", help="train a classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--modality", choices=("video", "audio"), required=True)
    _add_common(p, hyper=True)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="measure CDA/ASR")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--spec", default=None, help="PoisonSpec JSON for ASR")
    p.add_argument("--eval-frames", type=int, default=None)
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("fuse", help="build an audiovisual fusion model")
    p.add_argument("--mode", choices=("early", "late"), required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--manifest", default=None)
    _add_common(p, hyper=True)
    p.set_defaults(func=cmd_fuse)

    p = subs.add_parser("dump-activations",
                        help="serialize penultimate features and logits")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_dump_activations)

    defend = subs.add_parser("defend", help="run a backdoor defense")
    dsubs = defend.add_subparsers(dest="defense", required=True)

    p = dsubs.add_parser("ac", help="activation clustering over a dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--pca-dim", type=int, default=10)
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_defend_ac)

    p = dsubs.add_parser("strip", help="entropy-under-blending detector")
    p.add_argument("--model", required=True)
    p.add_argument("--clean-manifest", required=True)
    p.add_argument("--inspect-manifest", required=True)
    p.add_argument("--n-blend", type=int, default=100)
    p.add_argument("--frr", type=float, default=0.01)
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_defend_strip)

    p = dsubs.add_parser("prune", help="channel pruning curve")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--step", type=float, default=0.05)
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_defend_prune)

    p = subs.add_parser("melspec", help="log-Mel transform of a WAV file")
    p.add_argument("--wav", required=True)
    _add_common(p, out_required=False)
    p.set_defaults(func=cmd_melspec)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, args._sub)
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (FormatError, ValueError, OSError, KeyError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
