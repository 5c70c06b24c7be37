"""Per-layer bottleneck CNN embedding activation maps into R^10.

One classifier per generator layer: ``cnn_depth`` halving residual blocks
at channel depth 50, a flatten of the final 4x4x50 grid, a linear
bottleneck to 10 dimensions, and a linear head up to the layer's feature
count. Training is plain softmax classification of the feature index; the
head exists only for training and ``embed`` never evaluates it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .generator import LayerDescriptor
from .nbt import read_nbt, write_nbt
from .ops import (
    Flatten,
    Linear,
    Param,
    ResidualBlockDown,
    ShapeError,
    SoftmaxCrossEntropy,
    init_conv,
    init_linear,
)
from .optim import Adam, OptimizerConfig

BLOCK_CHANNELS = 50
BOTTLENECK_DIM = 10
FINAL_GRID = 4


class MetricCNN:
    def __init__(self, layer: LayerDescriptor, seed: int):
        depth = layer.cnn_depth
        if layer.resolution != FINAL_GRID * 2**depth:
            raise ShapeError(
                f"layer {layer.index}: resolution {layer.resolution} does not reduce to "
                f"{FINAL_GRID}x{FINAL_GRID} in {depth} halvings"
            )
        self.layer = layer
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.blocks: list[ResidualBlockDown] = []
        in_ch = 1
        for _ in range(depth):
            cw, cb = init_conv(rng, BLOCK_CHANNELS, in_ch, 3, 3)
            pw, pb = init_conv(rng, BLOCK_CHANNELS, in_ch, 1, 1)
            self.blocks.append(ResidualBlockDown(cw, cb, pw, pb))
            in_ch = BLOCK_CHANNELS
        self._flat = Flatten()
        flat_dim = in_ch * FINAL_GRID * FINAL_GRID
        self.bottleneck = Linear(*init_linear(rng, BOTTLENECK_DIM, flat_dim))
        self.head = Linear(*init_linear(rng, layer.feature_count, BOTTLENECK_DIM))

    def named_params(self) -> list[tuple[str, Param]]:
        named = []
        for i, block in enumerate(self.blocks):
            named += [
                (f"block{i}.conv.weight", block.conv.weight),
                (f"block{i}.conv.bias", block.conv.bias),
                (f"block{i}.proj.weight", block.proj.weight),
                (f"block{i}.proj.bias", block.proj.bias),
            ]
        named += [
            ("bottleneck.weight", self.bottleneck.weight),
            ("bottleneck.bias", self.bottleneck.bias),
            ("head.weight", self.head.weight),
            ("head.bias", self.head.bias),
        ]
        return named

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def _check_maps(self, maps: np.ndarray) -> None:
        res = self.layer.resolution
        if maps.shape[-2:] != (res, res):
            raise ShapeError(
                f"map shape {maps.shape[-2:]} does not match layer {self.layer.index} "
                f"resolution {res}x{res}"
            )

    def features(self, x: np.ndarray) -> np.ndarray:
        """Bottleneck embeddings for a batch [B,1,H,W] -> [B,10]."""
        self._check_maps(x)
        for block in self.blocks:
            x = block.forward(x)
        return self.bottleneck.forward(self._flat.forward(x))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.head.forward(self.features(x))

    def backward(self, dlogits: np.ndarray) -> None:
        g = self.bottleneck.backward(self.head.backward(dlogits))
        g = self._flat.backward(g)
        for block in reversed(self.blocks):
            g = block.backward(g)

    def embed(self, activation_map: np.ndarray) -> np.ndarray:
        """Embed a single [H,W] map; the classifier head is not evaluated."""
        return self.embed_batch(activation_map[None])[0]

    def embed_batch(self, maps: np.ndarray) -> np.ndarray:
        maps = np.asarray(maps, dtype=np.float32)
        out = self.features(maps[:, None, :, :])
        if not np.all(np.isfinite(out)):
            raise RuntimeError("non-finite embedding")
        return out


def build_metric_cnn(layer: LayerDescriptor, seed: int) -> MetricCNN:
    return MetricCNN(layer, seed)


@dataclass(frozen=True)
class TrainingSet:
    """Labeled activation maps; the label is the feature index."""

    train_maps: np.ndarray  # [M,H,W] float32
    train_labels: np.ndarray  # [M] int64
    test_maps: np.ndarray
    test_labels: np.ndarray
    feature_count: int


def make_training_set(dumps, layer_index: int, n_train: int, n_test: int = 0) -> TrainingSet:
    """Split dumps for one layer by sample index: first n_train train, next n_test test.

    Every sample contributes one labeled map per feature, so the train set
    has n_train * feature_count examples.
    """
    per_sample = {d.sample: d.data for d in dumps if d.layer == layer_index}
    samples = sorted(per_sample)
    if len(samples) < n_train + n_test:
        raise ValueError(
            f"layer {layer_index}: need {n_train + n_test} samples, have {len(samples)}"
        )

    def stack(sample_ids):
        maps, labels = [], []
        for s in sample_ids:
            data = per_sample[s]
            for f in range(data.shape[0]):
                maps.append(data[f])
                labels.append(f)
        if not maps:
            side = per_sample[samples[0]]
            return (
                np.zeros((0,) + side.shape[1:], dtype=np.float32),
                np.zeros(0, dtype=np.int64),
            )
        return np.stack(maps).astype(np.float32), np.asarray(labels, dtype=np.int64)

    train_maps, train_labels = stack(samples[:n_train])
    test_maps, test_labels = stack(samples[n_train : n_train + n_test])
    return TrainingSet(
        train_maps=train_maps,
        train_labels=train_labels,
        test_maps=test_maps,
        test_labels=test_labels,
        feature_count=int(per_sample[samples[0]].shape[0]),
    )


def _accuracy(model: MetricCNN, maps: np.ndarray, labels: np.ndarray, batch_size: int) -> float:
    correct = 0
    for start in range(0, len(labels), batch_size):
        x = maps[start : start + batch_size][:, None, :, :]
        pred = model.logits(x).argmax(axis=1)
        correct += int((pred == labels[start : start + batch_size]).sum())
    return correct / len(labels)


def train(
    model: MetricCNN,
    data: TrainingSet,
    opt: OptimizerConfig | None = None,
    batch_size: int | None = None,
    shuffle_seed: int = 0,
    log=None,
) -> dict:
    """Softmax feature learning: classify the feature index of each map.

    Deterministic given (model seed, data, shuffle_seed). Returns history
    with per-epoch mean loss, as-seen train accuracy, and test accuracy
    when a test split is present.
    """
    opt = opt or OptimizerConfig()
    if batch_size is None:
        batch_size = model.layer.batch_size
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if data.feature_count != model.layer.feature_count:
        raise ShapeError(
            f"training set has {data.feature_count} classes, model head expects "
            f"{model.layer.feature_count}"
        )
    model._check_maps(data.train_maps)
    adam = Adam(model.params(), opt)
    ce = SoftmaxCrossEntropy()
    rng = np.random.default_rng(shuffle_seed)
    history = {"loss": [], "train_accuracy": [], "test_accuracy": []}
    m = len(data.train_labels)
    for epoch in range(opt.epochs):
        perm = rng.permutation(m)
        total_loss = 0.0
        correct = 0
        for start in range(0, m, batch_size):
            idx = perm[start : start + batch_size]
            x = data.train_maps[idx][:, None, :, :]
            y = data.train_labels[idx]
            logits = model.logits(x)
            loss = ce.forward(logits, y)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            total_loss += float(loss) * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            adam.zero_grad()
            model.backward(ce.backward())
            adam.step()
        history["loss"].append(total_loss / m)
        history["train_accuracy"].append(correct / m)
        if len(data.test_labels):
            history["test_accuracy"].append(
                _accuracy(model, data.test_maps, data.test_labels, batch_size)
            )
        if log:
            log(epoch, history)
    return history


def save_checkpoint(model: MetricCNN, out_dir, history: dict | None = None) -> Path:
    """One NBT per parameter plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, param in model.named_params():
        write_nbt(out_dir / f"{name}.nbt", param.value)
    manifest = {
        "layer": {
            "index": model.layer.index,
            "resolution": model.layer.resolution,
            "feature_count": model.layer.feature_count,
            "cluster_count": model.layer.cluster_count,
        },
        "depth": model.layer.cnn_depth,
        "block_channels": BLOCK_CHANNELS,
        "bottleneck_dim": BOTTLENECK_DIM,
        "seed": model.seed,
        "history": history or {},
    }
    path = out_dir / "model.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(checkpoint_dir) -> tuple[MetricCNN, dict]:
    checkpoint_dir = Path(checkpoint_dir)
    manifest = json.loads((checkpoint_dir / "model.json").read_text())
    layer = LayerDescriptor(
        index=int(manifest["layer"]["index"]),
        resolution=int(manifest["layer"]["resolution"]),
        feature_count=int(manifest["layer"]["feature_count"]),
        cluster_count=int(manifest["layer"]["cluster_count"]),
    )
    model = MetricCNN(layer, seed=int(manifest["seed"]))
    for name, param in model.named_params():
        value = read_nbt(checkpoint_dir / f"{name}.nbt")
        if value.shape != param.value.shape:
            raise ShapeError(
                f"checkpoint {name}: shape {value.shape} != expected {param.value.shape}"
            )
        param.value[...] = value
    return model, manifest
