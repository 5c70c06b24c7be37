"""k-means over per-feature embeddings, per generator layer.

Lloyd's iteration with Forgy initialization (k distinct points drawn
without replacement from a seeded PRNG). Two entry points mirror the two
workflows: ``cluster_sample`` embeds the taps of a single unhooked forward
pass, ``cluster_mean`` averages embeddings over N samples first to get a
general-purpose grouping. Distances are squared Euclidean; clustering math
runs in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .generator import ModelDescriptor


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModel:
    layer: int
    k: int
    centroids: np.ndarray  # [k, dim] float64
    assignment: tuple[int, ...]  # point/feature index -> cluster index
    inertia: float
    seed: int

    def members(self, cluster_index: int) -> tuple[int, ...]:
        if not 0 <= cluster_index < self.k:
            raise ClusteringError(f"cluster {cluster_index} out of range (k={self.k})")
        return tuple(i for i, c in enumerate(self.assignment) if c == cluster_index)

    def to_json(self) -> dict:
        return {
            "layer": self.layer,
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "assignment": list(self.assignment),
            "inertia": self.inertia,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterModel":
        return cls(
            layer=int(obj["layer"]),
            k=int(obj["k"]),
            centroids=np.asarray(obj["centroids"], dtype=np.float64),
            assignment=tuple(int(c) for c in obj["assignment"]),
            inertia=float(obj["inertia"]),
            seed=int(obj["seed"]),
        )


def save_cluster_model(model: ClusterModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=2) + "\n")


def load_cluster_model(path) -> ClusterModel:
    return ClusterModel.from_json(json.loads(Path(path).read_text()))


def _forgy_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k pairwise-distinct points, drawn uniformly without replacement."""
    chosen: list[int] = []
    for idx in rng.permutation(len(points)):
        if any(np.array_equal(points[idx], points[j]) for j in chosen):
            continue
        chosen.append(int(idx))
        if len(chosen) == k:
            return points[chosen].copy()
    raise ClusteringError(f"k={k} exceeds the number of distinct points ({len(chosen)})")


def kmeans(
    points,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    layer: int = 0,
) -> ClusterModel:
    """Lloyd's method. Stops at an assignment fixed point, when the relative
    inertia improvement drops below ``tol``, or after ``max_iter`` rounds.

    Empty clusters are repaired by moving the point farthest from its
    centroid there (lowest index on ties). Inertia is checked to be
    non-increasing every iteration.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ClusteringError(f"points must be a non-empty [n, dim] array, got shape {pts.shape}")
    if k < 1:
        raise ClusteringError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    centroids = _forgy_init(pts, k, rng)

    labels = None
    inertia = np.inf
    for _ in range(max_iter):
        prev_labels, prev_inertia = labels, inertia
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        counts = np.bincount(labels, minlength=k)
        for empty in np.nonzero(counts == 0)[0]:
            residual = ((pts - centroids[labels]) ** 2).sum(axis=1)
            farthest = int(np.argmax(residual))  # argmax takes the lowest index on ties
            counts[labels[farthest]] -= 1
            labels[farthest] = empty
            counts[empty] += 1
            centroids[empty] = pts[farthest]
        inertia = float(((pts - centroids[labels]) ** 2).sum())
        if inertia > prev_inertia * (1.0 + 1e-12) + 1e-12:
            raise RuntimeError(
                f"Lloyd inertia increased: {prev_inertia} -> {inertia}"
            )
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        if np.isfinite(prev_inertia) and prev_inertia - inertia < tol * max(prev_inertia, 1e-300):
            break
        for c in range(k):
            if counts[c]:
                centroids[c] = pts[labels == c].mean(axis=0)
    return ClusterModel(
        layer=layer,
        k=k,
        centroids=centroids,
        assignment=tuple(int(c) for c in labels),
        inertia=inertia,
        seed=seed,
    )


def kmeans_best(points, k: int, seeds, max_iter: int = 300, tol: float = 1e-6, layer: int = 0) -> ClusterModel:
    """Lowest-inertia run over several Forgy seeds (ties keep the first)."""
    best = None
    for seed in seeds:
        model = kmeans(points, k, seed=seed, max_iter=max_iter, tol=tol, layer=layer)
        if best is None or model.inertia < best.inertia:
            best = model
    if best is None:
        raise ClusteringError("kmeans_best needs at least one seed")
    return best


def cluster_embeddings(
    embeddings: np.ndarray, layer_index: int, k: int, seed: int = 0
) -> ClusterModel:
    """Cluster one layer's per-feature embedding matrix [F, dim]."""
    return kmeans(np.asarray(embeddings, dtype=np.float64), k, seed=seed, layer=layer_index)


def _embed_features(model, maps: np.ndarray) -> np.ndarray:
    return np.asarray(model.embed_batch(maps), dtype=np.float64)


def cluster_sample(
    models: dict, taps: dict[int, np.ndarray], descriptor: ModelDescriptor, seed: int = 0
) -> dict[int, ClusterModel]:
    """On-the-fly clustering of one sample's unhooked activation taps."""
    out = {}
    for layer in descriptor.layers:
        model = models.get(layer.index)
        if model is None:
            raise ClusteringError(f"no metric model for layer {layer.index}")
        emb = _embed_features(model, taps[layer.index])
        out[layer.index] = cluster_embeddings(emb, layer.index, layer.cluster_count, seed)
    return out


def cluster_mean(
    models: dict, dumps, descriptor: ModelDescriptor, seed: int = 0
) -> dict[int, ClusterModel]:
    """General-purpose clustering from mean embeddings over all dumped samples.

    Embeddings are averaged per sample index first, then across samples, so
    feeding the same dump in twice leaves the means bit-identical.
    """
    by_layer: dict[int, dict[int, list[np.ndarray]]] = {}
    for dump in dumps:
        by_layer.setdefault(dump.layer, {}).setdefault(dump.sample, []).append(dump.data)
    out = {}
    for layer in descriptor.layers:
        model = models.get(layer.index)
        if model is None:
            raise ClusteringError(f"no metric model for layer {layer.index}")
        per_sample = by_layer.get(layer.index)
        if not per_sample:
            raise ClusteringError(f"no dumps for layer {layer.index}")
        sample_means = []
        for sample in sorted(per_sample):
            embs = []
            for data in per_sample[sample]:
                expected = (layer.feature_count, layer.resolution, layer.resolution)
                if data.shape != expected:
                    raise ClusteringError(
                        f"layer {layer.index} sample {sample}: shape {data.shape} != {expected}"
                    )
                embs.append(_embed_features(model, data))
            sample_means.append(np.mean(np.stack(embs), axis=0))
        mean_emb = np.mean(np.stack(sample_means), axis=0)
        out[layer.index] = cluster_embeddings(mean_emb, layer.index, layer.cluster_count, seed)
    return out
