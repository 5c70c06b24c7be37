"""Acceptance criteria, one test per criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one line per
criterion. The metric-learning desk run takes a few minutes; everything
else is fast.
"""
import json
import time

import numpy as np
import pytest

from netbend.bendconfig import ConfigError, parse_config, resolve_selectors, validate_against
from netbend.cli import main as cli_main
from netbend.cli import write_png
from netbend.clustering import cluster_mean, cluster_sample, kmeans, kmeans_best
from netbend.generator import (
    LayerDescriptor,
    ModelDescriptor,
    build_toy_generator,
    dump_activations,
    load_external_dump,
    fullscale_descriptor,
    toy_descriptor,
)
from netbend.gradcheck import finite_difference_check
from netbend.metriclearn import build_metric_cnn, make_training_set, train
from netbend.ops import (
    Conv2d,
    Flatten,
    LeakyReLU,
    Linear,
    NearestUpsample2x,
    ResidualBlockDown,
    SoftmaxCrossEntropy,
    init_conv,
    init_linear,
)
from netbend.optim import OptimizerConfig
from netbend.transforms import Transform, apply_map, build_affine, morph, pointwise, warp_affine
from test_clustering import brute_force_optimal_inertia, grouped_instance, partition_of


def report(criterion: str):
    print(f"[PASS] {criterion}")


def run_cli(*argv) -> int:
    return cli_main([str(a) for a in argv])


def test_gradient_oracle():
    """Every differentiable op passes central differences at rel err < 1e-4,
    double precision, >= 5 random shapes each, in under two minutes."""
    start = time.time()
    rng = np.random.default_rng(77)
    checks = 0

    def sweep(make_node, shapes):
        nonlocal checks
        for shape in shapes:
            node = make_node(shape)
            rep = finite_difference_check(node, rng.standard_normal(shape), tolerance=1e-4)
            assert rep.passed, (shape, rep)
            checks += 1

    sweep(lambda s: Conv2d(*init_conv(rng, int(rng.integers(1, 4)), s[0], 3, 3, np.float64),
                           stride=int(rng.integers(1, 3)), padding=1),
          [(1, 5, 5), (2, 6, 6), (3, 4, 4), (2, 7, 5), (1, 8, 8)])
    sweep(lambda s: Linear(*init_linear(rng, int(rng.integers(1, 7)), s[0], np.float64)),
          [(3,), (5,), (8,), (13,), (2,)])
    sweep(lambda s: LeakyReLU(0.2), [(4,), (3, 3), (2, 5, 5), (7,), (1, 2, 3)])
    sweep(lambda s: Flatten(), [(2, 3, 4), (1, 5, 5), (3, 2, 2), (4, 1, 6), (2, 2, 2)])
    sweep(lambda s: NearestUpsample2x(), [(1, 2, 2), (2, 4, 4), (3, 2, 4), (1, 6, 6), (2, 2, 6)])
    sweep(lambda s: SoftmaxCrossEntropy(target=int(rng.integers(s[0]))),
          [(4,), (7,), (16,), (3,), (9,)])
    sweep(lambda s: ResidualBlockDown(*init_conv(rng, 4, s[0], 3, 3, np.float64),
                                      *init_conv(rng, 4, s[0], 1, 1, np.float64)),
          [(1, 4, 4), (2, 6, 6), (3, 8, 8), (2, 4, 4), (1, 6, 6)])
    elapsed = time.time() - start
    assert checks == 35
    assert elapsed < 120, f"gradient suite took {elapsed:.0f}s"
    report(f"gradient oracle: 35 node checks, rel err < 1e-4, {elapsed:.1f}s")


def test_transform_algebra_suite():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((16, 16)).astype(np.float32)

    twice = pointwise(pointwise(m, "invert"), "invert")
    assert np.abs(twice - m).max() <= 1e-6

    for axis in ("horizontal", "vertical"):
        mat = build_affine("reflect", (axis,), m.shape)
        assert np.array_equal(warp_affine(warp_affine(m, mat), mat), m)

    assert np.array_equal(warp_affine(m, np.eye(3)), m)

    thresholded = pointwise(m, "binary_threshold", (0.5,))  # t = 0.5 named case
    assert set(np.unique(thresholded)) <= {0.0, 1.0}
    assert np.array_equal(pointwise(thresholded, "binary_threshold", (0.5,)), thresholded)

    eroded = morph(m, "erode", 2)  # r = 2 named case
    dilated = morph(m, "dilate", 2)
    assert np.all(eroded <= m) and np.all(m <= dilated)
    assert np.array_equal(dilated, -morph(-m, "erode", 2))

    # rotate(45) then rotate(-45), theta = 45 named case, on smooth maps
    h = w = 32
    yy, xx = np.mgrid[0:h, 0:w]
    smooth = sum(
        np.sin(2 * np.pi * (fx * xx / w + fy * yy / h) + ph)
        for fx, fy, ph in [(1, 0, 0.0), (0, 1, 0.7), (1, 1, 2.1)]
    ).astype(np.float32)
    spun = warp_affine(smooth, build_affine("rotate", (45.0,), smooth.shape))
    back = warp_affine(spun, build_affine("rotate", (-45.0,), smooth.shape))
    window = np.abs(back - smooth)[h // 4 : h // 4 + h // 2, w // 4 : w // 4 + w // 2]
    assert window.mean() < 0.05

    scaled = apply_map(m, Transform("scale", (0.6, 0.6)))  # k = 0.6 named case
    assert scaled.shape == m.shape
    assert not np.array_equal(scaled, m)

    report("transform algebra: involution, reflections, identity warp, threshold, "
           "morphology ordering/duality, rotate round-trip (t=0.5, theta=45, k=0.6, r=2)")


def test_ablation_oracle(tmp_path):
    """cmd_bend layer-wide ablate == manually zeroed forward, every toy layer."""
    desc = toy_descriptor()
    desc_path = tmp_path / "desc.json"
    desc_path.write_text(json.dumps(desc.to_json()))
    gen = build_toy_generator(0, desc)
    latent = gen.latent(11)

    for target_layer in (1, 2, 3, 4):
        config = tmp_path / f"ablate{target_layer}.yaml"
        config.write_text(
            f"transforms:\n- {{layer: {target_layer}, transform: ablate, layer_type: all}}\n"
        )
        out = tmp_path / f"bent{target_layer}"
        assert run_cli("bend", "--descriptor", desc_path, "--config", config,
                       "--seed", "11", "--gen-seed", "0", "--out", out) == 0

        # independent walk over the generator's weights, zeroing the layer
        first = desc.layers[0]
        x = gen.input_linear.forward(latent).reshape(
            first.feature_count, first.resolution, first.resolution
        )
        prev_res = first.resolution
        for layer, conv in zip(desc.layers, gen.layer_convs):
            if layer.resolution == prev_res * 2:
                x = x.repeat(2, axis=-2).repeat(2, axis=-1)
            x = conv.forward(x)
            x = np.where(x >= 0, x, np.float32(gen.slope) * x)
            if layer.index == target_layer:
                x = np.zeros_like(x)
            prev_res = layer.resolution
        oracle = np.tanh(gen.rgb_conv.forward(x))
        oracle_path = tmp_path / f"oracle{target_layer}.png"
        write_png(oracle_path, oracle)
        assert (out / "bent.png").read_bytes() == oracle_path.read_bytes(), target_layer
    report("ablation oracle: bend==manual zeroing, bit-identical PNGs, all 4 toy layers")


def test_kmeans_criteria():
    rng = np.random.default_rng(42)
    # Lloyd inertia non-increasing on 100 random instances (kmeans raises on violation)
    for _ in range(100):
        n = int(rng.integers(5, 40))
        k = int(rng.integers(1, min(6, n)))
        kmeans(rng.standard_normal((n, int(rng.integers(2, 12)))), k,
               seed=int(rng.integers(1 << 31)))

    # brute-force optimality, n<=12, k<=3, best of 20 Forgy seeds
    for trial in range(15):
        pts, k = grouped_instance(rng)
        best = kmeans_best(pts, k, seeds=range(20))
        assert best.inertia <= brute_force_optimal_inertia(pts, k) + 1e-9, trial

    # 4 well-separated blobs (centers >= 1 apart, sigma = 0.01): exact recovery
    data_rng = np.random.default_rng(7)
    centers = np.zeros((4, 10))
    centers[1, 0] = centers[2, 1] = centers[3, 2] = 1.0
    pts = np.concatenate([c + 0.01 * data_rng.standard_normal((25, 10)) for c in centers])
    truth = sorted(frozenset(range(b * 25, b * 25 + 25)) for b in range(4))
    hits = sum(
        partition_of(kmeans_best(pts, 4, seeds=[[seed, j] for j in range(20)])) == truth
        for seed in range(100)
    )
    assert hits >= 95, hits
    report(f"k-means: monotone on 100 instances, brute-force optimal on 15, blobs {hits}/100")


@pytest.mark.slow
def test_metric_learning_desk_run(tmp_path):
    """16 features at 64x64, 50 train samples, 100 epochs at lr 1e-4,
    beta1 0.9, beta2 0.999: > 90% train accuracy in < 15 min."""
    desc = ModelDescriptor(
        layers=tuple(
            LayerDescriptor(index=i + 1, resolution=r, feature_count=16, cluster_count=3)
            for i, r in enumerate([8, 16, 32, 64])
        ),
        latent_dim=64,
    )
    gen = build_toy_generator(0, desc)
    dump_activations(gen, list(range(50)), tmp_path)
    _, dumps = load_external_dump(tmp_path)
    data = make_training_set(dumps, layer_index=4, n_train=50, n_test=0)
    assert data.train_maps.shape == (800, 64, 64)

    model = build_metric_cnn(desc.layer(4), seed=1)
    start = time.time()
    history = train(
        model,
        data,
        OptimizerConfig(learning_rate=1e-4, beta1=0.9, beta2=0.999, epochs=100),
        batch_size=50,
        shuffle_seed=0,
    )
    elapsed = time.time() - start
    best = max(history["train_accuracy"])
    first90 = next((i for i, a in enumerate(history["train_accuracy"]) if a > 0.9), None)
    assert best > 0.9, f"best train accuracy {best:.3f}"
    assert elapsed < 900, f"desk run took {elapsed:.0f}s"

    # module invariant: smoothed loss over the first 10 epochs non-increasing
    smooth = np.convolve(history["loss"][:10], np.ones(3) / 3, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-9)
    report(f"metric desk run: {best:.1%} train acc (>90% at epoch {first90}), {elapsed:.0f}s")


def test_clustering_pipeline(tmp_path, small_desc):
    # cluster_mean with N=1 equals cluster_sample bit-exactly
    gen = build_toy_generator(1, small_desc)
    dump_activations(gen, [42], tmp_path)
    _, dumps = load_external_dump(tmp_path)
    models = {l.index: build_metric_cnn(l, seed=l.index) for l in small_desc.layers}
    taps = {d.layer: d.data for d in dumps}
    by_sample = cluster_sample(models, taps, small_desc, seed=6)
    by_mean = cluster_mean(models, dumps, small_desc, seed=6)
    for layer in small_desc.layers:
        a, b = by_sample[layer.index], by_mean[layer.index]
        assert a.assignment == b.assignment
        assert np.array_equal(a.centroids, b.centroids)
        assert a.inertia == b.inertia

    # the full-scale descriptor carries the per-layer cluster counts
    desc = fullscale_descriptor()
    expected = [5] * 8 + [4] * 4 + [3] * 4
    assert [l.cluster_count for l in desc.layers] == expected

    class StubEmbedder:
        def __init__(self, layer_index):
            self.rng = np.random.default_rng(layer_index)

        def embed_batch(self, maps):
            return self.rng.standard_normal((maps.shape[0], 10))

    stub_models = {l.index: StubEmbedder(l.index) for l in desc.layers}
    stub_taps = {l.index: np.zeros((l.feature_count, 2, 2), np.float32) for l in desc.layers}
    clustered = cluster_sample(stub_models, stub_taps, desc, seed=0)
    assert [clustered[l.index].k for l in desc.layers] == expected
    for l in desc.layers:
        assert len(clustered[l.index].assignment) == l.feature_count
    report("clustering pipeline: N=1 mean == sample bit-exact; full-scale k schedule (5x8, 4x4, 3x4)")


def test_cli_determinism(tmp_path):
    desc = ModelDescriptor(
        layers=(
            LayerDescriptor(index=1, resolution=8, feature_count=6, cluster_count=2),
            LayerDescriptor(index=2, resolution=16, feature_count=4, cluster_count=2),
        ),
        latent_dim=16,
    )
    desc_path = tmp_path / "desc.json"
    desc_path.write_text(json.dumps(desc.to_json()))

    dumps = tmp_path / "dumps"
    assert run_cli("dump", "--descriptor", desc_path, "--seeds", "0,1", "--out", dumps) == 0
    ckpts = tmp_path / "ckpts"
    for layer in (1, 2):
        assert run_cli("train-metric", "--dump-dir", dumps, "--layer", layer,
                       "--out", ckpts, "--epochs", "1", "--batch-size", "8") == 0
    clusters = tmp_path / "clusters"
    assert run_cli("cluster", "--dump-dir", dumps, "--checkpoints", ckpts,
                   "--mode", "mean", "--out", clusters) == 0
    gen_dir = tmp_path / "gen"
    assert run_cli("generate", "--descriptor", desc_path, "--seed", "3", "--out", gen_dir) == 0
    config = tmp_path / "c.yaml"
    config.write_text(
        "transforms:\n- {layer: 1, transform: rotate, params: [45], layer_type: cluster, layer_type_param: 1}\n"
    )
    bent = tmp_path / "bent"
    assert run_cli("bend", "--descriptor", desc_path, "--config", config, "--seed", "3",
                   "--clusters", clusters, "--dump-taps", "--out", bent) == 0

    reran = 0
    for original in (dumps, ckpts, clusters, gen_dir, bent):
        manifest = original / "manifest.json"
        if not manifest.is_file():
            manifest = next(original.glob("*/manifest.json"), None) or manifest
        redo = tmp_path / (original.name + "_redo")
        assert run_cli("rerun", manifest, "--out", redo) == 0  # rerun verifies hashes itself
        for artifact in original.rglob("*"):
            if artifact.is_file() and artifact.name != "manifest.json":
                twin = redo / artifact.relative_to(original)
                if twin.is_file():
                    assert twin.read_bytes() == artifact.read_bytes(), artifact
                    reran += 1
    assert reran > 10
    report(f"determinism: 5 commands rerun from manifests, {reran} artifacts byte-identical")


def test_config_semantics(toy_desc):
    with pytest.raises(ConfigError, match="rotate expects 1 param"):
        parse_config("transforms:\n- {layer: 1, transform: rotate, params: [45, 90], layer_type: all}\n")
    with pytest.raises(ConfigError, match="unknown transform"):
        parse_config("transforms:\n- {layer: 1, transform: vignette, layer_type: all}\n")
    with pytest.raises(ConfigError, match="missing"):
        parse_config("transforms:\n- {transform: ablate, layer_type: all}\n")
    with pytest.raises(ConfigError, match="layer 99 not in model"):
        validate_against(
            parse_config("transforms:\n- {layer: 99, transform: ablate, layer_type: all}\n"),
            toy_desc,
        )
    with pytest.raises(ConfigError, match="cluster model required"):
        validate_against(
            parse_config(
                "transforms:\n- {layer: 1, transform: ablate, layer_type: cluster, layer_type_param: 0}\n"
            ),
            toy_desc,
        )

    empty = resolve_selectors(
        parse_config("transforms:\n- {layer: 1, transform: ablate, layer_type: random, layer_type_param: 0}\n"),
        toy_desc,
    )
    full = resolve_selectors(
        parse_config("transforms:\n- {layer: 1, transform: ablate, layer_type: random, layer_type_param: 1}\n"),
        toy_desc,
    )
    assert empty[0].features == ()
    assert full[0].features == tuple(range(16))

    # chained same-layer transforms apply in file order
    gen = build_toy_generator(7, toy_desc)
    latent = gen.latent(3)
    order_a = parse_config(
        "transforms:\n"
        "- {layer: 2, transform: invert, layer_type: all}\n"
        "- {layer: 2, transform: binary_threshold, params: [0.3], layer_type: all}\n"
    )
    order_b = parse_config(
        "transforms:\n"
        "- {layer: 2, transform: binary_threshold, params: [0.3], layer_type: all}\n"
        "- {layer: 2, transform: invert, layer_type: all}\n"
    )
    img_a, _ = gen.forward(latent, resolve_selectors(order_a, toy_desc))
    img_b, _ = gen.forward(latent, resolve_selectors(order_b, toy_desc))
    assert not np.array_equal(img_a, img_b)
    report("config semantics: parse/validate errors, random 0/1 boundaries, chain order")
