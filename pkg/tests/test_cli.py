import json

import numpy as np
import pytest

from netbend.cli import image_to_uint8, main
from netbend.generator import LayerDescriptor, ModelDescriptor
from netbend.nbt import read_nbt, write_nbt


@pytest.fixture
def tiny_descriptor_file(tmp_path):
    desc = ModelDescriptor(
        layers=(
            LayerDescriptor(index=1, resolution=8, feature_count=6, cluster_count=2),
            LayerDescriptor(index=2, resolution=16, feature_count=4, cluster_count=2),
        ),
        latent_dim=16,
    )
    path = tmp_path / "desc.json"
    path.write_text(json.dumps(desc.to_json()))
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestImageMapping:
    def test_round_half_even_rescale(self):
        img = np.zeros((3, 1, 2), dtype=np.float32)
        img[:, 0, 0] = -1.0
        img[:, 0, 1] = 1.0
        out = image_to_uint8(img)
        assert out.shape == (1, 2, 3)
        assert out[0, 0, 0] == 0 and out[0, 1, 0] == 255
        mid = np.full((3, 1, 1), 0.0, dtype=np.float32)  # (0+1)*127.5 = 127.5 -> 128? no: round-half-even -> 128
        assert image_to_uint8(mid)[0, 0, 0] == 128


class TestGenerate:
    def test_deterministic_png(self, tmp_path, tiny_descriptor_file):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("generate", "--descriptor", tiny_descriptor_file, "--seed", "3", "--out", a) == 0
        assert run_cli("generate", "--descriptor", tiny_descriptor_file, "--seed", "3", "--out", b) == 0
        assert (a / "image_seed3.png").read_bytes() == (b / "image_seed3.png").read_bytes()

    def test_batch_of_seeds(self, tmp_path, tiny_descriptor_file):
        out = tmp_path / "batch"
        assert run_cli("generate", "--descriptor", tiny_descriptor_file, "--seed", "1,2,3,4,5", "--out", out) == 0
        assert len(list(out.glob("image_seed*.png"))) == 5

    def test_image_dimensions_match_descriptor(self, tmp_path, tiny_descriptor_file):
        from PIL import Image

        out = tmp_path / "dims"
        run_cli("generate", "--descriptor", tiny_descriptor_file, "--seed", "0", "--out", out)
        with Image.open(out / "image_seed0.png") as im:
            assert im.size == (16, 16)
            assert im.mode == "RGB"

    def test_env_var_descriptor(self, tmp_path, tiny_descriptor_file, monkeypatch):
        monkeypatch.setenv("NBEND_DESCRIPTOR", str(tiny_descriptor_file))
        out = tmp_path / "env"
        assert run_cli("generate", "--seed", "0", "--out", out) == 0
        from PIL import Image

        with Image.open(out / "image_seed0.png") as im:
            assert im.size == (16, 16)


class TestPipeline:
    def test_full_flow_and_rerun(self, tmp_path, tiny_descriptor_file):
        dumps = tmp_path / "dumps"
        assert run_cli("dump", "--descriptor", tiny_descriptor_file, "--seeds", "0,1,2", "--out", dumps) == 0
        assert len(list(dumps.glob("sample*_layer*.nbt"))) == 6

        ckpts = tmp_path / "ckpts"
        for layer in (1, 2):
            code = run_cli(
                "train-metric", "--dump-dir", dumps, "--layer", layer, "--out", ckpts,
                "--epochs", "2", "--batch-size", "6",
            )
            assert code == 0
        assert (ckpts / "layer1" / "model.json").is_file()
        assert (ckpts / "layer2" / "model.json").is_file()

        clusters = tmp_path / "clusters"
        assert run_cli(
            "cluster", "--dump-dir", dumps, "--checkpoints", ckpts,
            "--mode", "mean", "--seed", "4", "--out", clusters,
        ) == 0
        got = sorted(p.name for p in clusters.glob("layer*_clusters.json"))
        assert got == ["layer1_clusters.json", "layer2_clusters.json"]

        config = tmp_path / "bend.yaml"
        config.write_text(
            "transforms:\n"
            "- {layer: 2, transform: scale, params: [0.6, 0.6], layer_type: cluster, layer_type_param: 0}\n"
        )
        bent = tmp_path / "bent"
        assert run_cli(
            "bend", "--descriptor", tiny_descriptor_file, "--config", config,
            "--seed", "7", "--clusters", clusters, "--out", bent,
        ) == 0
        assert (bent / "bent.png").is_file()

        # scaling one discovered cluster must change the output vs baseline
        baseline = tmp_path / "baseline"
        assert run_cli("generate", "--descriptor", tiny_descriptor_file,
                       "--seed", "7", "--out", baseline) == 0
        assert (bent / "bent.png").read_bytes() != (baseline / "image_seed7.png").read_bytes()

        # rerun every manifest into a fresh directory: bytes must match
        for original in (dumps, clusters, bent):
            redo = tmp_path / (original.name + "_redo")
            assert run_cli("rerun", original / "manifest.json", "--out", redo) == 0
            for artifact in original.glob("**/*"):
                if artifact.is_file() and artifact.name != "manifest.json":
                    twin = redo / artifact.relative_to(original)
                    assert twin.read_bytes() == artifact.read_bytes(), artifact

    def test_sample_mode_requires_one_sample(self, tmp_path, tiny_descriptor_file, capsys):
        dumps = tmp_path / "dumps"
        run_cli("dump", "--descriptor", tiny_descriptor_file, "--seeds", "0,1", "--out", dumps)
        ckpts = tmp_path / "ckpts"
        for layer in (1, 2):
            run_cli("train-metric", "--dump-dir", dumps, "--layer", layer, "--out", ckpts,
                    "--epochs", "1", "--batch-size", "8")
        code = run_cli("cluster", "--dump-dir", dumps, "--checkpoints", ckpts,
                       "--mode", "sample", "--out", tmp_path / "c")
        assert code == 1
        assert "sample mode requires exactly one sample" in capsys.readouterr().err


class TestBend:
    def test_empty_config_matches_generate(self, tmp_path, tiny_descriptor_file):
        config = tmp_path / "empty.yaml"
        config.write_text("transforms: []\n")
        gen_out, bend_out = tmp_path / "g", tmp_path / "b"
        run_cli("generate", "--descriptor", tiny_descriptor_file, "--seed", "9", "--out", gen_out)
        run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config, "--seed", "9", "--out", bend_out)
        assert (bend_out / "bent.png").read_bytes() == (gen_out / "image_seed9.png").read_bytes()

    def test_latent_file_input(self, tmp_path, tiny_descriptor_file):
        latent = np.linspace(-1, 1, 16).astype(np.float32)
        latent_path = tmp_path / "z.nbt"
        write_nbt(latent_path, latent)
        config = tmp_path / "c.yaml"
        config.write_text("transforms:\n- {layer: 1, transform: invert, layer_type: all}\n")
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config,
                       "--latent", latent_path, "--out", out1) == 0
        assert run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config,
                       "--latent", latent_path, "--out", out2) == 0
        assert (out1 / "bent.png").read_bytes() == (out2 / "bent.png").read_bytes()

    def test_validation_error_exit_code_and_stderr(self, tmp_path, tiny_descriptor_file, capsys):
        config = tmp_path / "bad.yaml"
        config.write_text("transforms:\n- {layer: 42, transform: ablate, layer_type: all}\n")
        code = run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config,
                       "--seed", "0", "--out", tmp_path / "x")
        assert code == 1
        captured = capsys.readouterr()
        assert "layer 42 not in model" in captured.err

    def test_missing_cluster_file_error(self, tmp_path, tiny_descriptor_file, capsys):
        config = tmp_path / "c.yaml"
        config.write_text(
            "transforms:\n- {layer: 1, transform: ablate, layer_type: cluster, layer_type_param: 0}\n"
        )
        code = run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config,
                       "--seed", "0", "--out", tmp_path / "x")
        assert code == 1
        assert "cluster model required" in capsys.readouterr().err

    def test_dump_taps(self, tmp_path, tiny_descriptor_file):
        config = tmp_path / "c.yaml"
        config.write_text("transforms:\n- {layer: 1, transform: ablate, layer_type: all}\n")
        out = tmp_path / "taps"
        run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config,
                "--seed", "0", "--dump-taps", "--out", out)
        tap1 = read_nbt(out / "tap_layer1.nbt")
        assert tap1.shape == (6, 8, 8)
        assert not tap1.any()  # ablated layer dumps as zeros (post-hook taps)
        assert read_nbt(out / "tap_layer2.nbt").shape == (4, 16, 16)


class TestRerunSafety:
    def test_rerun_detects_changed_input(self, tmp_path, tiny_descriptor_file, capsys):
        config = tmp_path / "c.yaml"
        config.write_text("transforms: []\n")
        out = tmp_path / "o"
        run_cli("bend", "--descriptor", tiny_descriptor_file, "--config", config, "--seed", "0", "--out", out)
        config.write_text("transforms:\n- {layer: 1, transform: ablate, layer_type: all}\n")
        code = run_cli("rerun", out / "manifest.json", "--out", tmp_path / "o2")
        assert code == 1
        assert "changed since the original run" in capsys.readouterr().err
