"""Dump per-layer activations of a pretrained torch generator.

The output directory follows the engine's dump layout exactly: one
``sample{S}_layer{D}.nbt`` per (sample, layer) plus a ``descriptor.json``
sidecar, so the files can be clustered and analyzed without torch. The
bridge only dumps; no transform is ever applied on the torch side.

The model comes from a user-supplied builder, ``path/to/module.py::fn``,
called with the checkpoint path; the returned ``nn.Module`` maps a
``[1, latent_dim]`` tensor to an image. Each exported layer is named by the
submodule whose forward output is that layer's activation map stack.
"""
from __future__ import annotations

import importlib.util
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

NBT_MAGIC = b"NBT1"


class ExportError(RuntimeError):
    pass


def write_nbt(path, array: np.ndarray) -> None:
    """float32 little-endian NBT, the engine's tensor file format."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ExportError(f"refusing to write non-finite values to {path}")
    with open(path, "wb") as f:
        f.write(NBT_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4", copy=False).tobytes())


@dataclass(frozen=True)
class LayerMapping:
    module: str  # dotted submodule name inside the model
    index: int  # 1-based engine layer index
    cluster_count: int = 3
    resolution: int | None = None  # optional declared shape, validated if set
    feature_count: int | None = None


@dataclass(frozen=True)
class ExportJob:
    builder: str  # "path/to/module.py::callable"
    checkpoint: str | None
    latent_dim: int
    seeds: tuple[int, ...]
    out_dir: str
    layers: tuple[LayerMapping, ...]
    output_channels: int = 3
    samples: int | None = None  # must equal len(seeds) when given

    def __post_init__(self):
        if self.samples is not None and self.samples != len(self.seeds):
            raise ExportError(
                f"job declares {self.samples} samples but lists {len(self.seeds)} seeds"
            )
        indices = [m.index for m in self.layers]
        modules = [m.module for m in self.layers]
        if len(set(indices)) != len(indices) or len(set(modules)) != len(modules):
            raise ExportError("layer mapping must cover every exported layer exactly once")
        if sorted(indices) != list(range(1, len(indices) + 1)):
            raise ExportError(f"layer indices must be contiguous from 1, got {sorted(indices)}")
        if not self.layers:
            raise ExportError("no layers to export")

    @classmethod
    def from_json(cls, obj: dict) -> "ExportJob":
        layers = tuple(
            LayerMapping(
                module=str(entry["module"]),
                index=int(entry["index"]),
                cluster_count=int(entry.get("cluster_count", 3)),
                resolution=entry.get("resolution"),
                feature_count=entry.get("feature_count"),
            )
            for entry in obj["layers"]
        )
        return cls(
            builder=str(obj["builder"]),
            checkpoint=obj.get("checkpoint"),
            latent_dim=int(obj["latent_dim"]),
            seeds=tuple(int(s) for s in obj["seeds"]),
            out_dir=str(obj["out_dir"]),
            layers=layers,
            output_channels=int(obj.get("output_channels", 3)),
            samples=obj.get("samples"),
        )


def load_model(builder: str, checkpoint: str | None) -> torch.nn.Module:
    spec_text = builder.split("::")
    if len(spec_text) != 2:
        raise ExportError(f"builder must look like 'module.py::fn', got {builder!r}")
    path, fn_name = spec_text
    module_spec = importlib.util.spec_from_file_location("nbend_bridge_builder", path)
    if module_spec is None or module_spec.loader is None:
        raise ExportError(f"cannot import builder module {path}")
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    build = getattr(module, fn_name, None)
    if build is None:
        raise ExportError(f"builder {path} has no callable {fn_name!r}")
    model = build(checkpoint)
    if not isinstance(model, torch.nn.Module):
        raise ExportError(f"builder returned {type(model).__name__}, expected torch.nn.Module")
    return model.eval()


def latent_for_seed(seed: int, latent_dim: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(1, latent_dim, generator=gen)


def _capture_layers(model: torch.nn.Module, z: torch.Tensor, layers) -> dict[int, np.ndarray]:
    named = dict(model.named_modules())
    captured: dict[int, np.ndarray] = {}
    handles = []
    try:
        for mapping in layers:
            target = named.get(mapping.module)
            if target is None:
                raise ExportError(f"model has no submodule {mapping.module!r}")

            def hook(_mod, _inp, out, index=mapping.index, name=mapping.module):
                if not torch.is_tensor(out):
                    raise ExportError(f"layer {name}: hooked output is not a tensor")
                arr = out.detach().to(torch.float32).cpu().numpy()
                if arr.ndim != 4 or arr.shape[0] != 1:
                    raise ExportError(
                        f"layer {name}: expected [1,F,H,W] activations, got {arr.shape}"
                    )
                captured[index] = arr[0]

            handles.append(target.register_forward_hook(hook))
        with torch.no_grad():
            model(z)
    finally:
        for handle in handles:
            handle.remove()
    missing = [m.module for m in layers if m.index not in captured]
    if missing:
        raise ExportError(f"hooks never fired for {', '.join(missing)}")
    return captured


def export_activations(job: ExportJob) -> dict:
    """Run the export; returns the descriptor dict and written file paths."""
    model = load_model(job.builder, job.checkpoint)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    observed: dict[int, tuple[int, int]] = {}  # index -> (features, resolution)
    files: list[Path] = []
    for sample, seed in enumerate(job.seeds):
        captured = _capture_layers(model, latent_for_seed(seed, job.latent_dim), job.layers)
        for mapping in job.layers:
            arr = captured[mapping.index]
            f, h, w = arr.shape
            if h != w:
                raise ExportError(f"layer {mapping.module}: non-square activations {arr.shape}")
            if mapping.resolution is not None and h != mapping.resolution:
                raise ExportError(
                    f"layer {mapping.module}: resolution {h} does not match "
                    f"declared {mapping.resolution}"
                )
            if mapping.feature_count is not None and f != mapping.feature_count:
                raise ExportError(
                    f"layer {mapping.module}: {f} features do not match "
                    f"declared {mapping.feature_count}"
                )
            previous = observed.setdefault(mapping.index, (f, h))
            if previous != (f, h):
                raise ExportError(
                    f"layer {mapping.module}: shape changed across samples "
                    f"({previous} vs {(f, h)})"
                )
            path = out_dir / f"sample{sample}_layer{mapping.index}.nbt"
            write_nbt(path, arr)
            files.append(path)

    descriptor = {
        "latent_dim": job.latent_dim,
        "output_channels": job.output_channels,
        "layers": [
            {
                "index": m.index,
                "resolution": observed[m.index][1],
                "feature_count": observed[m.index][0],
                "cluster_count": m.cluster_count,
            }
            for m in sorted(job.layers, key=lambda m: m.index)
        ],
    }
    sidecar = out_dir / "descriptor.json"
    sidecar.write_text(json.dumps(descriptor, indent=2) + "\n")
    files.append(sidecar)
    return {"descriptor": descriptor, "files": files}
