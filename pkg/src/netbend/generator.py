"""Toy convolutional generator with per-layer taps and transform hook points.

Stands in for a real pre-trained generator: latent -> linear to the first
layer's grid, then per layer {nearest 2x upsample when the resolution
doubles, 3x3 conv, leaky ReLU}, and a final 1x1 conv to RGB with tanh.
Weights come from a seeded PRNG, so (seed, latent, hooks) fully determine
every activation bit-exactly. Activations are tapped after the
nonlinearity, which is also where hooks apply.

Also reads/writes activation dumps (NBT files plus a descriptor.json
sidecar) so externally exported activations can be processed.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nbt import read_nbt, write_nbt
from .ops import Conv2d, LeakyReLU, Linear, NearestUpsample2x, init_conv, init_linear
from .transforms import Hook, apply_to_features


class DescriptorError(ValueError):
    """Descriptor or dump directory violates the declared model shape."""


def default_batch_size(resolution: int) -> int:
    """Training batch size by layer resolution (small maps allow big batches)."""
    if resolution <= 32:
        return 500
    return {64: 200, 128: 80, 256: 50, 512: 20}.get(resolution, 10)


@dataclass(frozen=True)
class LayerDescriptor:
    index: int
    resolution: int
    feature_count: int
    cluster_count: int
    cnn_depth: int = -1  # -1: derive as log2(resolution) - 2
    batch_size: int = -1  # -1: derive from resolution

    def __post_init__(self):
        res = self.resolution
        if res < 4 or res & (res - 1):
            raise DescriptorError(f"layer {self.index}: resolution {res} is not a power of two >= 4")
        depth = int(math.log2(res)) - 2
        if self.cnn_depth == -1:
            object.__setattr__(self, "cnn_depth", depth)
        elif self.cnn_depth != depth:
            raise DescriptorError(
                f"layer {self.index}: cnn_depth {self.cnn_depth} inconsistent with "
                f"resolution {res} (expected {depth})"
            )
        if self.batch_size == -1:
            object.__setattr__(self, "batch_size", default_batch_size(res))
        if self.cluster_count < 1:
            raise DescriptorError(f"layer {self.index}: cluster_count must be >= 1")
        if self.feature_count < 1:
            raise DescriptorError(f"layer {self.index}: feature_count must be >= 1")


@dataclass(frozen=True)
class ModelDescriptor:
    layers: tuple[LayerDescriptor, ...]
    latent_dim: int = 512
    output_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise DescriptorError("descriptor has no layers")
        for pos, layer in enumerate(self.layers, start=1):
            if layer.index != pos:
                raise DescriptorError(
                    f"layer indices must be contiguous from 1; position {pos} has index {layer.index}"
                )
        resolutions = [l.resolution for l in self.layers]
        if any(b < a for a, b in zip(resolutions, resolutions[1:])):
            raise DescriptorError(f"resolutions must be non-decreasing, got {resolutions}")
        if self.latent_dim < 1:
            raise DescriptorError("latent_dim must be >= 1")

    def layer(self, index: int) -> LayerDescriptor:
        if not 1 <= index <= len(self.layers):
            raise DescriptorError(f"layer {index} not in model (1..{len(self.layers)})")
        return self.layers[index - 1]

    def to_json(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "output_channels": self.output_channels,
            "layers": [
                {
                    "index": l.index,
                    "resolution": l.resolution,
                    "feature_count": l.feature_count,
                    "cluster_count": l.cluster_count,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelDescriptor":
        try:
            layers = tuple(
                LayerDescriptor(
                    index=int(entry["index"]),
                    resolution=int(entry["resolution"]),
                    feature_count=int(entry["feature_count"]),
                    cluster_count=int(entry["cluster_count"]),
                    cnn_depth=int(entry.get("cnn_depth", -1)),
                    batch_size=int(entry.get("batch_size", -1)),
                )
                for entry in obj["layers"]
            )
        except KeyError as exc:
            raise DescriptorError(f"descriptor entry missing field {exc}") from None
        return cls(
            layers=layers,
            latent_dim=int(obj.get("latent_dim", 512)),
            output_channels=int(obj.get("output_channels", 3)),
        )


def toy_descriptor() -> ModelDescriptor:
    """Default 4-layer test model: 8/16/32/64 px, 16/16/8/8 features, k=3."""
    return ModelDescriptor(
        layers=tuple(
            LayerDescriptor(index=i + 1, resolution=res, feature_count=feat, cluster_count=3)
            for i, (res, feat) in enumerate([(8, 16), (16, 16), (32, 8), (64, 8)])
        ),
        latent_dim=64,
    )


def fullscale_descriptor() -> ModelDescriptor:
    """16-layer descriptor shaped like a full-scale 1024px face generator."""
    resolutions = [8, 8, 16, 16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 512, 1024, 1024]
    features = [512] * 8 + [256, 256, 128, 128, 64, 64, 32, 32]
    clusters = [5] * 8 + [4] * 4 + [3] * 4
    return ModelDescriptor(
        layers=tuple(
            LayerDescriptor(index=i + 1, resolution=r, feature_count=f, cluster_count=k)
            for i, (r, f, k) in enumerate(zip(resolutions, features, clusters))
        ),
        latent_dim=512,
    )


@dataclass(frozen=True)
class ActivationDump:
    layer: int
    sample: int
    data: np.ndarray


class ToyGenerator:
    """Deterministic seeded generator over a ModelDescriptor."""

    def __init__(self, seed: int, descriptor: ModelDescriptor, slope: float = 0.2):
        for prev, cur in zip(descriptor.layers, descriptor.layers[1:]):
            if cur.resolution not in (prev.resolution, prev.resolution * 2):
                raise DescriptorError(
                    f"toy generator needs resolutions to repeat or double; "
                    f"layer {cur.index} jumps {prev.resolution} -> {cur.resolution}"
                )
        self.descriptor = descriptor
        self.seed = int(seed)
        self.slope = slope
        rng = np.random.default_rng(self.seed)
        first = descriptor.layers[0]
        self.input_linear = Linear(
            *init_linear(rng, first.feature_count * first.resolution**2, descriptor.latent_dim)
        )
        self.layer_convs: list[Conv2d] = []
        in_ch = first.feature_count
        for layer in descriptor.layers:
            w, b = init_conv(rng, layer.feature_count, in_ch, 3, 3)
            self.layer_convs.append(Conv2d(w, b, stride=1, padding=1))
            in_ch = layer.feature_count
        w, b = init_conv(rng, descriptor.output_channels, in_ch, 1, 1)
        self.rgb_conv = Conv2d(w, b, stride=1, padding=0)
        self._act = LeakyReLU(slope)
        self._up = NearestUpsample2x()

    def latent(self, seed: int) -> np.ndarray:
        """The latent vector a given sample seed denotes."""
        return (
            np.random.default_rng(int(seed))
            .standard_normal(self.descriptor.latent_dim)
            .astype(np.float32)
        )

    def forward(
        self, latent: np.ndarray, hooks: list[Hook] | None = None
    ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Run the generator, applying hooks per layer in registration order.

        Returns the RGB image and the post-hook activation tap per layer.
        """
        hooks = list(hooks or [])
        n_layers = len(self.descriptor.layers)
        for hook in hooks:
            if not 1 <= hook.layer <= n_layers:
                raise DescriptorError(f"hook targets layer {hook.layer} not in model (1..{n_layers})")
        latent = np.asarray(latent, dtype=np.float32)
        if latent.shape != (self.descriptor.latent_dim,):
            raise DescriptorError(
                f"latent shape {latent.shape} != ({self.descriptor.latent_dim},)"
            )
        by_layer: dict[int, list[Hook]] = {}
        for hook in hooks:
            by_layer.setdefault(hook.layer, []).append(hook)

        first = self.descriptor.layers[0]
        x = self.input_linear.forward(latent).reshape(
            first.feature_count, first.resolution, first.resolution
        )
        taps: dict[int, np.ndarray] = {}
        prev_res = first.resolution
        for layer, conv in zip(self.descriptor.layers, self.layer_convs):
            if layer.resolution == prev_res * 2:
                x = self._up.forward(x)
            x = self._act.forward(conv.forward(x))
            for hook in by_layer.get(layer.index, ()):
                x = apply_to_features(x, hook.features, hook.transform)
            taps[layer.index] = x
            prev_res = layer.resolution
        image = np.tanh(self.rgb_conv.forward(x))
        return image, taps


def build_toy_generator(seed: int, descriptor: ModelDescriptor) -> ToyGenerator:
    return ToyGenerator(seed, descriptor)


def dump_path(out_dir: Path, sample: int, layer: int) -> Path:
    return Path(out_dir) / f"sample{sample}_layer{layer}.nbt"


def dump_activations(gen: ToyGenerator, seeds: list[int], out_dir) -> list[Path]:
    """Write one NBT per (sample, layer) plus the descriptor sidecar.

    Sample index is the position in ``seeds``; taps come from an unhooked
    forward pass.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sample, seed in enumerate(seeds):
        _, taps = gen.forward(gen.latent(seed))
        for layer_index, tap in taps.items():
            path = dump_path(out_dir, sample, layer_index)
            write_nbt(path, tap)
            written.append(path)
    sidecar = out_dir / "descriptor.json"
    sidecar.write_text(json.dumps(gen.descriptor.to_json(), indent=2) + "\n")
    written.append(sidecar)
    return written


_DUMP_RE = re.compile(r"^sample(\d+)_layer(\d+)\.nbt$")


def load_external_dump(path) -> tuple[ModelDescriptor, list[ActivationDump]]:
    """Load a dump directory, validating every tensor against the sidecar."""
    path = Path(path)
    sidecar = path / "descriptor.json"
    if not sidecar.is_file():
        raise DescriptorError(f"missing sidecar {sidecar}")
    descriptor = ModelDescriptor.from_json(json.loads(sidecar.read_text()))

    found: dict[tuple[int, int], Path] = {}
    for entry in sorted(path.iterdir()):
        match = _DUMP_RE.match(entry.name)
        if match:
            found[(int(match.group(1)), int(match.group(2)))] = entry
    if not found:
        raise DescriptorError(f"no sample*_layer*.nbt files in {path}")

    samples = sorted({s for s, _ in found})
    wanted = {l.index for l in descriptor.layers}
    dumps = []
    for sample in samples:
        have = {d for s, d in found if s == sample}
        if have != wanted:
            missing = sorted(wanted - have)
            extra = sorted(have - wanted)
            raise DescriptorError(
                f"sample {sample}: layer files disagree with descriptor "
                f"(missing {missing}, unexpected {extra})"
            )
        for layer in descriptor.layers:
            file = found[(sample, layer.index)]
            data = read_nbt(file)
            expected = (layer.feature_count, layer.resolution, layer.resolution)
            if data.shape != expected:
                raise DescriptorError(
                    f"{file.name}: shape {data.shape} does not match descriptor {expected}"
                )
            if not np.all(np.isfinite(data)):
                raise DescriptorError(f"{file.name}: non-finite values")
            dumps.append(ActivationDump(layer=layer.index, sample=sample, data=data))
    return descriptor, dumps
