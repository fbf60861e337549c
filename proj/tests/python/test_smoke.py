import json
import math

import jsonschema
import numpy as np
import pytest

import drseg

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format_version", "n_classes", "channels", "class_names", "text", "scenes"],
    "properties": {
        "format_version": {"const": 1},
        "n_classes": {"type": "integer", "minimum": 1},
        "channels": {"type": "integer", "minimum": 1},
        "class_names": {"type": "array", "items": {"type": "string"}},
        "text": {"type": "string"},
        "semantic_truth": {"type": "array", "items": {"type": "integer"}},
        "scenes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "clip", "dino", "shape"],
                "properties": {
                    "id": {"type": "string"},
                    "clip": {
                        "type": "object",
                        "required": ["0"],
                        "additionalProperties": {"type": "string"},
                    },
                    "dino": {"type": "string"},
                    "labels": {"type": "string"},
                    "shape": {
                        "type": "object",
                        "required": ["h", "w", "c", "dino"],
                    },
                },
            },
        },
    },
}


@pytest.fixture
def dataset(tmp_path):
    root = tmp_path / "data"
    truth = drseg.synth(root, scenes=3, h=8, w=8, channels=16, dino_dim=8, noise=0.05, seed=4)
    return root, truth


def test_manifest_matches_schema_and_files(dataset):
    root, truth = dataset
    m = json.loads((root / "manifest.json").read_text())
    jsonschema.validate(m, MANIFEST_SCHEMA)
    assert m["format_version"] == drseg.manifest_version
    assert m["semantic_truth"] == truth
    text = np.load(root / m["text"])
    assert text.dtype == np.float32
    assert text.shape == (m["n_classes"], m["channels"])
    np.testing.assert_allclose(np.linalg.norm(text, axis=1), 1.0, atol=1e-6)
    for s in m["scenes"]:
        shape = s["shape"]
        for angle, rel in s["clip"].items():
            a = np.load(root / rel)
            assert a.dtype == np.float32
            assert a.shape == (shape["h"], shape["w"], shape["c"])
        assert np.load(root / s["dino"]).shape == tuple(shape["dino"])
        labels = np.load(root / s["labels"])
        assert labels.shape == (shape["h"], shape["w"])
        assert set(np.unique(labels)) <= set(range(m["n_classes"]))


def test_npy_interchange_with_numpy(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4, 5)).astype(np.float32)
    np.save(tmp_path / "a.npy", a)
    np.testing.assert_array_equal(drseg.read_npy(tmp_path / "a.npy"), a)
    drseg.write_npy(a, tmp_path / "b.npy")
    np.testing.assert_array_equal(np.load(tmp_path / "b.npy"), a)
    assert (tmp_path / "a.npy").read_bytes() == (tmp_path / "b.npy").read_bytes()
    np.save(tmp_path / "d.npy", a.astype(np.float64))
    with pytest.raises(drseg.UnsupportedDtypeError):
        drseg.read_npy(tmp_path / "d.npy")
    (tmp_path / "t.npy").write_bytes((tmp_path / "a.npy").read_bytes()[:-8])
    with pytest.raises(drseg.IoError):
        drseg.read_npy(tmp_path / "t.npy")


def test_externally_written_manifest_loads(tmp_path):
    # A directory laid out the way an external feature exporter would write it.
    rng = np.random.default_rng(1)
    root = tmp_path / "export"
    (root / "s0").mkdir(parents=True)
    text = rng.standard_normal((3, 6)).astype(np.float32)
    np.save(root / "text.npy", text / np.linalg.norm(text, axis=1, keepdims=True))
    np.save(root / "s0" / "clip_0.npy", rng.standard_normal((4, 5, 6)).astype(np.float32))
    np.save(root / "s0" / "dino.npy", rng.standard_normal((2, 3, 7)).astype(np.float32))
    np.save(root / "s0" / "labels.npy", rng.integers(0, 3, (4, 5)).astype(np.float32))
    manifest = {
        "format_version": 1,
        "n_classes": 3,
        "channels": 6,
        "class_names": ["a", "b", "c"],
        "text": "text.npy",
        "encoders": {"visual": "any-clip-id", "structural": "any-dino-id"},
        "scenes": [
            {
                "id": "s0",
                "clip": {"0": "s0/clip_0.npy"},
                "dino": "s0/dino.npy",
                "labels": "s0/labels.npy",
                "shape": {"h": 4, "w": 5, "c": 6, "dino": [2, 3, 7]},
            }
        ],
    }
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    (root / "manifest.json").write_text(json.dumps(manifest))
    info = drseg.dataset_info(root)
    assert info["scenes"] == 1
    assert info["channels"] == 6
    assert info["ids"] == ["s0"]

    manifest["channels"] = 7
    (root / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(drseg.DimensionError):
        drseg.dataset_info(root)


def test_partition_recovers_semantic_channels(tmp_path):
    root = tmp_path / "clean"
    truth = drseg.synth(root, scenes=6, h=8, w=8, channels=16, dino_dim=8, noise=0.0, seed=2)
    p = json.loads(drseg.partition(root))
    assert sorted(p["sem_indices"]) == truth
    m = json.loads((root / "manifest.json").read_text())
    for s in m["scenes"]:
        canon = np.load(root / s["clip"]["0"])
        for angle in (90, 180, 270):
            np.testing.assert_array_equal(np.load(root / s["clip"][str(angle)]), np.rot90(canon, angle // 90, axes=(0, 1)))
    assert len(p["sem_indices"]) == drseg.semantic_channel_count(0.5, 16)


def test_scores_against_numpy():
    rng = np.random.default_rng(3)
    bank = rng.standard_normal((4, 5, 7))
    h = np.array(drseg.channel_entropy(bank))
    mean = np.maximum(bank, 0).mean(axis=1)
    p = mean / (mean.sum(axis=0) + 1e-8)
    np.testing.assert_allclose(h, -(p * np.log2(p + 1e-8)).sum(axis=0), atol=1e-12)
    assert np.all(h >= 0) and np.all(h <= math.log2(4) + 1e-9)
    s = np.array(drseg.channel_similarity(bank))
    brute = [
        np.mean([bank[k, i, c] * bank[l, j, c]
                 for k in range(4) for l in range(k + 1, 4) for i in range(5) for j in range(5)])
        for c in range(7)
    ]
    np.testing.assert_allclose(s, brute, rtol=1e-9, atol=1e-9)
    score = np.array(drseg.channel_scores(h.tolist(), s.tolist(), 0.3))
    assert np.all((score >= 0) & (score <= 1))


def test_uncertainty_and_metrics():
    c = np.full((2, 2, 4), 0.2)
    np.testing.assert_allclose(drseg.uncertainty(c, 0.07), 1.0, atol=1e-6)
    truth = np.array([[0, 1], [2, 3]])
    r = json.loads(drseg.evaluate_labels([truth], [truth], 4))
    assert r["mIoU"] == pytest.approx(100.0)
    with pytest.raises(drseg.ArgumentError):
        drseg.evaluate_labels([truth], [], 4)


def test_graph_and_gradcheck():
    dino = np.random.default_rng(5).standard_normal((3, 3, 4))
    g = json.loads(drseg.build_graph(dino, top_k=2))
    assert isinstance(g, dict)
    with pytest.raises(drseg.ArgumentError):
        drseg.build_graph(dino, top_k=0)
    r = json.loads(drseg.gradcheck())
    assert r["passed"] is True
    cfg = json.loads(drseg.default_config())
    assert cfg["rho"] == 0.5
