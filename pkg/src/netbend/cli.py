"""``nbend`` command line: generate, dump, train-metric, cluster, bend, rerun.

Every command writes its artifacts into ``--out`` together with a
``manifest.json`` recording the command, all parameters, and sha256 hashes
of inputs and artifacts; ``nbend rerun manifest.json --out D`` re-executes
the run and fails if any artifact hash differs. The default descriptor
comes from ``--descriptor``, else the ``NBEND_DESCRIPTOR`` env var, else
the built-in 4-layer toy model.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .bendconfig import ConfigError, parse_config, resolve_selectors, validate_against
from .clustering import cluster_mean, cluster_sample, load_cluster_model, save_cluster_model
from .generator import (
    DescriptorError,
    ModelDescriptor,
    build_toy_generator,
    dump_activations,
    load_external_dump,
    toy_descriptor,
)
from .metriclearn import build_metric_cnn, load_checkpoint, make_training_set, save_checkpoint, train
from .nbt import read_nbt, write_nbt
from .optim import OptimizerConfig

DESCRIPTOR_ENV = "NBEND_DESCRIPTOR"


class CliError(Exception):
    pass


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """Map a [C,H,W] tanh image from [-1,1] to 8-bit HWC, round half to even."""
    scaled = np.rint((image.astype(np.float64) + 1.0) * 127.5)
    return np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_png(path: Path, image: np.ndarray) -> None:
    Image.fromarray(image_to_uint8(image), mode="RGB").save(path, format="PNG")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_descriptor(descriptor_path: str | None) -> ModelDescriptor:
    path = descriptor_path or os.environ.get(DESCRIPTOR_ENV)
    if path is None:
        print("nbend: no descriptor given, using the built-in toy model", file=sys.stderr)
        return toy_descriptor()
    return ModelDescriptor.from_json(json.loads(Path(path).read_text()))


def _hash_inputs(paths: list[Path]) -> dict[str, str]:
    hashes = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for child in sorted(p.rglob("*")):
                if child.is_file():
                    hashes[str(child)] = _sha256(child)
        elif p.is_file():
            hashes[str(p)] = _sha256(p)
    return hashes


def _write_manifest(out_dir: Path, command: str, params: dict, inputs: list[Path], artifacts: list[Path]) -> Path:
    manifest = {
        "tool": "netbend",
        "version": __version__,
        "command": command,
        "params": params,
        "inputs": _hash_inputs(inputs),
        "artifacts": {str(p.relative_to(out_dir)): _sha256(p) for p in artifacts},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- command implementations; each takes a JSON-able params dict -----------


def run_generate(params: dict, out_dir: Path) -> tuple[list[Path], list[Path]]:
    descriptor = _load_descriptor(params.get("descriptor"))
    gen = build_toy_generator(params["gen_seed"], descriptor)
    artifacts = []
    for seed in params["seeds"]:
        image, _ = gen.forward(gen.latent(seed))
        path = out_dir / f"image_seed{seed}.png"
        write_png(path, image)
        artifacts.append(path)
    inputs = [Path(params["descriptor"])] if params.get("descriptor") else []
    return artifacts, inputs


def run_dump(params: dict, out_dir: Path) -> tuple[list[Path], list[Path]]:
    descriptor = _load_descriptor(params.get("descriptor"))
    gen = build_toy_generator(params["gen_seed"], descriptor)
    artifacts = dump_activations(gen, params["seeds"], out_dir)
    inputs = [Path(params["descriptor"])] if params.get("descriptor") else []
    return artifacts, inputs


def run_train_metric(params: dict, out_dir: Path) -> tuple[list[Path], list[Path]]:
    dump_dir = Path(params["dump_dir"])
    descriptor, dumps = load_external_dump(dump_dir)
    layer = descriptor.layer(params["layer"])
    n_samples = len({d.sample for d in dumps})
    n_test = params.get("n_test", 0)
    n_train = params.get("n_train") or n_samples - n_test
    data = make_training_set(dumps, layer.index, n_train, n_test)
    opt = OptimizerConfig(
        learning_rate=params.get("lr", 1e-4),
        beta1=params.get("beta1", 0.9),
        beta2=params.get("beta2", 0.999),
        epsilon=params.get("epsilon", 1e-8),
        epochs=params.get("epochs", 100),
    )
    model = build_metric_cnn(layer, seed=params.get("seed", 0))
    history = train(
        model,
        data,
        opt,
        batch_size=params.get("batch_size") or layer.batch_size,
        shuffle_seed=params.get("shuffle_seed", 0),
    )
    ckpt_dir = out_dir / f"layer{layer.index}"
    save_checkpoint(model, ckpt_dir, history=history)
    artifacts = sorted(p for p in ckpt_dir.iterdir() if p.is_file())
    return artifacts, [dump_dir]


def run_cluster(params: dict, out_dir: Path) -> tuple[list[Path], list[Path]]:
    dump_dir = Path(params["dump_dir"])
    ckpt_root = Path(params["checkpoints"])
    descriptor, dumps = load_external_dump(dump_dir)
    models = {}
    for layer in descriptor.layers:
        ckpt = ckpt_root / f"layer{layer.index}"
        if not ckpt.is_dir():
            raise CliError(f"missing checkpoint directory {ckpt}")
        models[layer.index], _ = load_checkpoint(ckpt)
    seed = params.get("seed", 0)
    if params["mode"] == "sample":
        samples = {d.sample for d in dumps}
        if len(samples) != 1:
            raise CliError(f"sample mode requires exactly one sample, dump has {len(samples)}")
        taps = {d.layer: d.data for d in dumps}
        cluster_models = cluster_sample(models, taps, descriptor, seed)
    elif params["mode"] == "mean":
        cluster_models = cluster_mean(models, dumps, descriptor, seed)
    else:
        raise CliError(f"unknown cluster mode {params['mode']!r}")
    artifacts = []
    for layer_index, model in sorted(cluster_models.items()):
        path = out_dir / f"layer{layer_index}_clusters.json"
        save_cluster_model(model, path)
        artifacts.append(path)
    return artifacts, [dump_dir, ckpt_root]


def _load_cluster_dir(path: Path) -> dict:
    clusters = {}
    for file in sorted(path.glob("layer*_clusters.json")):
        model = load_cluster_model(file)
        clusters[model.layer] = model
    return clusters


def run_bend(params: dict, out_dir: Path) -> tuple[list[Path], list[Path]]:
    descriptor = _load_descriptor(params.get("descriptor"))
    config_path = Path(params["config"])
    config = parse_config(config_path.read_text())
    clusters = _load_cluster_dir(Path(params["clusters"])) if params.get("clusters") else {}
    validate_against(config, descriptor, clusters)
    hooks = resolve_selectors(config, descriptor, clusters)
    gen = build_toy_generator(params["gen_seed"], descriptor)
    if params.get("latent"):
        latent = read_nbt(params["latent"])
    else:
        latent = gen.latent(params["seed"])
    image, taps = gen.forward(latent, hooks)
    artifacts = []
    image_path = out_dir / "bent.png"
    write_png(image_path, image)
    artifacts.append(image_path)
    if params.get("dump_taps"):
        for layer_index, tap in taps.items():
            tap_path = out_dir / f"tap_layer{layer_index}.nbt"
            write_nbt(tap_path, tap)
            artifacts.append(tap_path)
    inputs = [config_path]
    if params.get("descriptor"):
        inputs.append(Path(params["descriptor"]))
    if params.get("clusters"):
        inputs.append(Path(params["clusters"]))
    if params.get("latent"):
        inputs.append(Path(params["latent"]))
    return artifacts, inputs


RUNNERS = {
    "generate": run_generate,
    "dump": run_dump,
    "train-metric": run_train_metric,
    "cluster": run_cluster,
    "bend": run_bend,
}


def execute(command: str, params: dict, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts, inputs = RUNNERS[command](params, out_dir)
    manifest = _write_manifest(out_dir, command, params, inputs, artifacts)
    for p in artifacts:
        print(p)
    return manifest


def run_rerun(manifest_path: Path, out_dir: Path | None) -> None:
    manifest = json.loads(Path(manifest_path).read_text())
    command = manifest["command"]
    if command not in RUNNERS:
        raise CliError(f"manifest names unknown command {command!r}")
    for path, digest in manifest["inputs"].items():
        if not Path(path).is_file():
            raise CliError(f"input {path} from manifest is missing")
        if _sha256(Path(path)) != digest:
            raise CliError(f"input {path} changed since the original run")
    target = Path(out_dir) if out_dir else Path(manifest_path).parent
    new_manifest = execute(command, manifest["params"], target)
    new_artifacts = json.loads(new_manifest.read_text())["artifacts"]
    mismatched = [
        name
        for name, digest in manifest["artifacts"].items()
        if new_artifacts.get(name) != digest
    ]
    if mismatched:
        raise CliError(f"rerun artifacts differ from manifest: {', '.join(sorted(mismatched))}")
    print(f"rerun ok: {len(new_artifacts)} artifacts match", file=sys.stderr)


def _seed_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbend", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nbend {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--descriptor", help=f"model descriptor JSON (default: ${DESCRIPTOR_ENV})")
        p.add_argument("--gen-seed", type=int, default=0, help="generator weight seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="unhooked forward pass to PNG")
    add_common(p)
    p.add_argument("--seed", type=_seed_list, required=True, help="latent seed(s), comma separated")

    p = sub.add_parser("dump", help="dump per-layer activations to NBT")
    add_common(p)
    p.add_argument("--seeds", type=_seed_list, required=True, help="latent seeds, comma separated")

    p = sub.add_parser("train-metric", help="train the bottleneck CNN for one layer")
    p.add_argument("--dump-dir", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0, help="weight init seed")
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=0)

    p = sub.add_parser("cluster", help="cluster features per layer")
    p.add_argument("--dump-dir", required=True)
    p.add_argument("--checkpoints", required=True, help="directory with layer<N> checkpoints")
    p.add_argument("--mode", choices=["sample", "mean"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bend", help="hooked forward pass from a YAML config")
    add_common(p)
    p.add_argument("--config", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--seed", type=int, help="latent seed")
    group.add_argument("--latent", help="latent NBT file")
    p.add_argument("--clusters", help="directory of layer<N>_clusters.json files")
    p.add_argument("--dump-taps", action="store_true", help="also write post-hook taps")

    p = sub.add_parser("rerun", help="re-execute a manifest and verify hashes")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="directory for the rerun (default: alongside manifest)")
    return parser


def _params_from_args(args: argparse.Namespace) -> dict:
    if args.command == "generate":
        return {"seeds": args.seed, "gen_seed": args.gen_seed, "descriptor": args.descriptor}
    if args.command == "dump":
        return {"seeds": args.seeds, "gen_seed": args.gen_seed, "descriptor": args.descriptor}
    if args.command == "train-metric":
        return {
            "dump_dir": args.dump_dir,
            "layer": args.layer,
            "epochs": args.epochs,
            "lr": args.lr,
            "beta1": args.beta1,
            "beta2": args.beta2,
            "epsilon": args.epsilon,
            "batch_size": args.batch_size,
            "seed": args.seed,
            "shuffle_seed": args.shuffle_seed,
            "n_train": args.n_train,
            "n_test": args.n_test,
        }
    if args.command == "cluster":
        return {
            "dump_dir": args.dump_dir,
            "checkpoints": args.checkpoints,
            "mode": args.mode,
            "seed": args.seed,
        }
    if args.command == "bend":
        return {
            "config": args.config,
            "seed": args.seed,
            "latent": args.latent,
            "gen_seed": args.gen_seed,
            "descriptor": args.descriptor,
            "clusters": args.clusters,
            "dump_taps": args.dump_taps,
        }
    raise CliError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            run_rerun(Path(args.manifest), Path(args.out) if args.out else None)
        else:
            execute(args.command, _params_from_args(args), Path(args.out))
    except (CliError, ConfigError, DescriptorError, ValueError, OSError) as exc:
        print(f"nbend: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
