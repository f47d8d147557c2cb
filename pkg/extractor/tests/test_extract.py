import numpy as np
import pytest

from fieldextract import (
    EMBED_DIM,
    ExtractError,
    ExtractionManifest,
    encode_labels,
    extract_features,
)
from fieldextract.cli import main as cli_main

# the conformance oracle is the engine itself: emitted files must load clean
import langfield


class TestExtract:
    def test_emits_loadable_dataset_with_512d_features(self, mini_capture, tmp_path):
        out = tmp_path / "ds"
        manifest = ExtractionManifest(
            source_dir=str(mini_capture), out_dir=str(out),
            target_height=24, target_width=32, backend="hashed",
        )
        written = extract_features(manifest)
        assert len(written) == 3

        ds = langfield.load_dataset(out)  # full invariant validation
        assert len(ds.frames) == 3
        assert ds.feature_dim == EMBED_DIM == 512
        for frame in ds.frames:
            assert frame.rgb.shape == (24, 32, 3)
            assert frame.feature.shape == (24, 32, 512)
        assert ds.frames[0].intrinsics.width == 32

    def test_intrinsics_rescaled_proportionally(self, mini_capture, tmp_path):
        out = tmp_path / "ds"
        extract_features(ExtractionManifest(
            source_dir=str(mini_capture), out_dir=str(out),
            target_height=15, target_width=20, backend="hashed",
        ))
        ds = langfield.load_dataset(out)
        intr = ds.frames[0].intrinsics
        # source: fx=35, w=40 -> scale 0.5
        assert intr.fx == pytest.approx(17.5)
        assert intr.cx == pytest.approx(10.0)
        assert intr.height == 15

    def test_depth_holes_preserved_as_zero(self, mini_capture, tmp_path):
        out = tmp_path / "ds"
        extract_features(ExtractionManifest(
            source_dir=str(mini_capture), out_dir=str(out),
            target_height=30, target_width=40, backend="hashed",
        ))
        ds = langfield.load_dataset(out)
        assert np.any(ds.frames[0].depth == 0.0)

    def test_rerun_byte_identical(self, mini_capture, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            extract_features(ExtractionManifest(
                source_dir=str(mini_capture), out_dir=str(out),
                target_height=24, target_width=32, backend="hashed", seed=3,
            ))
            outs.append(out)
        for f in sorted(outs[0].iterdir()):
            assert f.read_bytes() == (outs[1] / f.name).read_bytes(), f.name

    def test_unsupported_resolution_rejected(self, mini_capture, tmp_path):
        with pytest.raises(ExtractError, match="resolution"):
            ExtractionManifest(source_dir=str(mini_capture), out_dir=str(tmp_path),
                               target_height=4, target_width=9999)

    def test_missing_model_weights_fail_cleanly(self, mini_capture, tmp_path):
        from fieldextract import ModelLoadError

        manifest = ExtractionManifest(
            source_dir=str(mini_capture), out_dir=str(tmp_path / "x"),
            target_height=24, target_width=32, backend="clip",
            model_dir=str(tmp_path / "no_weights_here"),
        )
        with pytest.raises(ModelLoadError):
            extract_features(manifest)

    def test_missing_source_frame_fails(self, mini_capture, tmp_path):
        (mini_capture / "color_00001.png").unlink()
        with pytest.raises(ExtractError, match="frame 1"):
            extract_features(ExtractionManifest(
                source_dir=str(mini_capture), out_dir=str(tmp_path / "x"),
                target_height=24, target_width=32,
            ))


class TestEncodeLabels:
    def test_parses_in_engine_with_512d_rows(self, tmp_path):
        path = tmp_path / "labels.tsv"
        encode_labels(["wall", "chair", "floor lamp"], path)
        catalog = langfield.LabelCatalog.load(path)
        assert catalog.names == ["wall", "chair", "floor lamp"]
        assert catalog.dim == 512
        norms = np.linalg.norm(catalog.embeddings, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_duplicate_names_rejected(self, tmp_path):
        with pytest.raises(ExtractError, match="duplicate"):
            encode_labels(["rug", "rug"], tmp_path / "labels.tsv")

    def test_deterministic_per_name(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        encode_labels(["sofa", "door"], a)
        encode_labels(["sofa", "door"], b)
        assert a.read_bytes() == b.read_bytes()


class TestCli:
    def test_extract_and_labels(self, mini_capture, tmp_path):
        out = tmp_path / "ds"
        assert cli_main([
            "extract", "--source", str(mini_capture), "--out", str(out),
            "--height", "24", "--width", "32",
        ]) == 0
        assert cli_main([
            "labels", "--names", "wall,chair", "--out", str(tmp_path / "labels.tsv"),
        ]) == 0
        ds = langfield.load_dataset(out)
        catalog = langfield.LabelCatalog.load(tmp_path / "labels.tsv")
        assert ds.feature_dim == catalog.dim == 512

    def test_bad_source_exits_1(self, tmp_path, capsys):
        assert cli_main([
            "extract", "--source", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
        ]) == 1
        assert "error" in capsys.readouterr().err
