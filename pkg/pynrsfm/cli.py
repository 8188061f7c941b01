"""
Command-Line Entry Point

    pynrsfm synth [--source skeleton|planted|FILE] [--frames N] [--noise R] [--out FILE]
    pynrsfm train DATASET [--epochs N] [--batch-size N] [--lr LR] [--layers 32,8] [--out FILE]
    pynrsfm reconstruct CHECKPOINT DATASET [--format text|json] [--out FILE]
    pynrsfm eval CHECKPOINT DATASET [--out FILE]
    pynrsfm coherence CHECKPOINT [--out FILE]

Every subcommand accepts ``--config FILE`` (sectioned ``key = value`` file, or
the ``.manifest.json`` of an earlier run of the same command;
flags win) and writes ``<output>.manifest.json``.

Exit codes: 0 success, 1 usage/configuration, 2 data/schema, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, SynthConfig, VALID_SOURCES
from .exceptions import NRSfMException, SchemaError, TrainingAbortedError, UsageError
from .landmarks import (
    LandmarkDataset,
    LandmarkFrame,
    load_landmarks,
    read_mocap_csv,
    save_landmarks,
    split_dataset,
)
from .linalg import child_seeds
from .manifest import default_output_dir, sha256_file, write_manifest
from .metrics import coherence_report, evaluate, reconstruct_dataset
from .synthetic import add_noise, planted_model, skeleton_shapes, synthesize_projections
from .training import train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports misuse as a UsageError (exit code 1)"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _output_path(cfg: RunConfig, default_name: str) -> Path:
    out = cfg.get("out")
    return Path(out) if out else default_output_dir() / default_name


def _require(cfg: RunConfig, key: str) -> str:
    value = cfg.get(key)
    if not value:
        raise UsageError(f"'{cfg.command}' needs a {key} (positional argument or [{cfg.command}] "
                         f"{key} = ... in the configuration file)")
    return value


def _holdout_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.holdout{out.suffix or '.txt'}")


def _source_shapes(synth: SynthConfig, seed: int) -> List:
    source = synth.source
    if not source:
        raise UsageError("synth needs a source: 'skeleton', 'planted' or a 3D data file")
    if source == "skeleton":
        return skeleton_shapes(synth.frames, seed)
    if source == "planted":
        return planted_model(synth.dims, synth.frames, synth.active_blocks, seed,
                             deformation=synth.deformation).shapes

    path = Path(source)
    if not path.exists():
        raise UsageError(f"Unknown source '{source}': not one of {', '.join(VALID_SOURCES)} "
                         f"and no such file")
    if path.suffix.lower() == ".csv":
        shapes = read_mocap_csv(path, delimiter=synth.delimiter)
    else:
        dataset = load_landmarks(path, center=False)
        if not dataset.has_ground_truth:
            raise UsageError(f"{path} carries no ground-truth shapes to project")
        shapes = dataset.gt_shapes()
    return shapes[:synth.frames]


def cmd_synth(cfg: RunConfig) -> int:
    """Generate a landmark dataset with ground truth"""
    synth = cfg.synth_config()
    shape_seed, camera_seed, noise_seed, split_seed = child_seeds(synth.seed, 4)
    shapes = _source_shapes(synth, shape_seed)
    dataset = synthesize_projections(shapes, camera_seed)
    dataset = add_noise(dataset, synth.noise, noise_seed)

    out = _output_path(cfg, "synth.txt")
    comment = f"pynrsfm synth source={synth.source} seed={synth.seed} noise={synth.noise!r}"
    outputs = [out]
    if synth.holdout > 0:
        dataset, held = split_dataset(dataset, synth.holdout, split_seed)
        held_path = save_landmarks(held, _holdout_path(out), comment=comment + " (held out)")
        outputs.append(held_path)
        print(f"holdout_frames = {len(held)}")
        print(f"holdout_path = {held_path}")

    save_landmarks(dataset, out, comment=comment)
    print(f"frames = {len(dataset)}")
    print(f"sha256 = {sha256_file(out)}")
    print(f"path = {out}")
    inputs = [synth.source] if synth.source not in VALID_SOURCES else []
    write_manifest(out, "synth", cfg.to_dict(), inputs=inputs, outputs=outputs)
    return 0


def cmd_train(cfg: RunConfig) -> int:
    """Train a model and write its checkpoint"""
    dataset_path = _require(cfg, "dataset")
    dataset = load_landmarks(dataset_path, center=cfg["center"])
    if len(dataset) == 0:
        raise SchemaError(f"{dataset_path} holds no frames to train on")
    out = _output_path(cfg, "model.npz")
    config = cfg.train_config(dataset.p)

    try:
        checkpoint = train(dataset, config)
    except TrainingAbortedError as e:
        if e.checkpoint is not None:
            save_checkpoint(e.checkpoint, out)
            logger.error(f"Last good checkpoint (step {e.checkpoint.step}) kept at {out}")
        write_manifest(out, "train", cfg.to_dict(), inputs=[dataset_path], outputs=[out],
                       status="aborted")
        raise

    save_checkpoint(checkpoint, out)
    if checkpoint.loss_history:
        print(f"final_loss = {checkpoint.loss_history[-1][1]!r}")
    print(f"steps = {checkpoint.step}")
    print(f"path = {out}")
    write_manifest(out, "train", cfg.to_dict(), inputs=[dataset_path], outputs=[out])
    return 0


def cmd_reconstruct(cfg: RunConfig) -> int:
    """Shapes and cameras for every frame of a dataset (no ground truth needed)"""
    checkpoint_path = _require(cfg, "checkpoint")
    dataset_path = _require(cfg, "dataset")
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = load_landmarks(dataset_path, center=cfg["center"])
    results = reconstruct_dataset(checkpoint, dataset, cfg["threads"])

    fmt = cfg["format"]
    out = _output_path(cfg, f"reconstruction.{'json' if fmt == 'json' else 'txt'}")
    if fmt == "json":
        records = [{
            "id": frame.id,
            "shape": r.shape.tolist(),
            "camera": None if r.camera is None else r.camera.tolist(),
            "degenerate": r.degenerate,
            "loss": r.loss,
        } for frame, r in zip(dataset, results)]
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    else:
        frames = tuple(
            LandmarkFrame(frame.id, frame.w, gt_shape=r.shape, gt_camera=r.camera)
            for frame, r in zip(dataset, results)
        )
        save_landmarks(LandmarkDataset(frames), out,
                       comment="reconstruction: 3D columns are reconstructed shapes, "
                               "cam rows the orthonormal cameras")

    degenerate = sum(r.degenerate for r in results)
    print(f"frames = {len(results)}")
    print(f"frames_degenerate = {degenerate}")
    print(f"path = {out}")
    write_manifest(out, "reconstruct", cfg.to_dict(),
                   inputs=[checkpoint_path, dataset_path], outputs=[out])
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    """Evaluate a checkpoint on a dataset and print the report"""
    checkpoint_path = _require(cfg, "checkpoint")
    dataset_path = _require(cfg, "dataset")
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = load_landmarks(dataset_path, center=cfg["center"])
    report = evaluate(checkpoint, dataset, cfg["threads"])

    if not dataset.has_ground_truth:
        print("notice: dataset has no ground truth; 3D metrics omitted", file=sys.stderr)
    text = report.to_text()
    print(text, end="")
    out = _output_path(cfg, "eval.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    write_manifest(out, "eval", cfg.to_dict(), inputs=[checkpoint_path, dataset_path],
                   outputs=[out])
    return 0


def cmd_coherence(cfg: RunConfig) -> int:
    """Coherence of the final, per-layer and composed dictionaries"""
    checkpoint_path = _require(cfg, "checkpoint")
    report = coherence_report(load_checkpoint(checkpoint_path))
    text = report.to_text()
    print(text, end="")
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        write_manifest(out, "coherence", cfg.to_dict(), inputs=[checkpoint_path], outputs=[out])
    return 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "coherence": cmd_coherence,
}


def build_parser() -> argparse.ArgumentParser:
    # Flags default to None so that configuration-file values are only
    # overridden when a flag is actually given.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key = value file or an earlier run manifest")
    common.add_argument("--out", help="output file (default: user data dir)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int)

    threaded = argparse.ArgumentParser(add_help=False)
    threaded.add_argument("--threads", type=int, help="worker threads for per-frame passes")
    threaded.add_argument("--no-center", dest="center", action="store_const", const=False,
                          help="do not center frames at load time")

    parser = _Parser(prog="pynrsfm", description="Deep block-sparse non-rigid structure from motion")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    synth = sub.add_parser("synth", parents=[common, seeded], help="generate a dataset")
    synth.add_argument("--source", help="skeleton, planted, a mocap CSV or a landmark file")
    synth.add_argument("--frames", type=int)
    synth.add_argument("--noise", type=float, help="noise ratio ‖N‖/‖W‖")
    synth.add_argument("--p", type=int, help="landmarks for the planted source")
    synth.add_argument("--layers", help="layer widths for the planted source, e.g. 32,8")
    synth.add_argument("--active-blocks", type=int)
    synth.add_argument("--deformation", type=float, help="largest planted deformation weight")
    synth.add_argument("--holdout", type=float, help="fraction of frames written separately")
    synth.add_argument("--delimiter", help="CSV delimiter for mocap sources")

    tr = sub.add_parser("train", parents=[common, seeded, threaded], help="train a model")
    tr.add_argument("dataset", nargs="?")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--layers", help="comma list k1,...,kn")
    tr.add_argument("--optimizer", help="adam or sgd")
    tr.add_argument("--log-every", type=int)
    tr.add_argument("--coherence-every", type=int)

    rec = sub.add_parser("reconstruct", parents=[common, threaded],
                         help="reconstruct shapes and cameras")
    rec.add_argument("checkpoint", nargs="?")
    rec.add_argument("dataset", nargs="?")
    rec.add_argument("--format", help="text or json")

    ev = sub.add_parser("eval", parents=[common, threaded], help="evaluate a checkpoint")
    ev.add_argument("checkpoint", nargs="?")
    ev.add_argument("dataset", nargs="?")

    coh = sub.add_parser("coherence", parents=[common], help="dictionary coherence report")
    coh.add_argument("checkpoint", nargs="?")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    schema = RunConfig.schema(args.command)
    return {key: value for key, value in vars(args).items() if key in schema}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map errors to exit codes"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        cfg = RunConfig.resolve(args.command, args.config, _overrides(args))
        return COMMANDS[args.command](cfg)
    except NRSfMException as e:
        logger.error(f"{e.error_code}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
