import filecmp
from pathlib import Path

import numpy as np
import pytest

from langfield.cli import main
from langfield.formats import read_vlft
from langfield.synthetic import default_scene, write_scene_spec


def _run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """synth + short train once for the render/segment/eval/query commands."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    code = _run(
        "synth", "--out", str(data), "--train-views", "4", "--test-views", "2",
        "--width", "32", "--height", "24", "--seed", "5",
    )
    assert code == 0
    run = root / "run"
    code = _run(
        "train", "--data", str(data / "train"), "--out", str(run),
        "--set", "train.iters=40", "--set", "train.rays=256", "--set", "train.samples=16",
        "--set", "hash.levels=4", "--set", "hash.table_log2=10", "--set", "hash.finest_res=32",
        "--set", "mlp.trunk_width=16", "--set", "mlp.feature_dim=16", "--quiet",
    )
    assert code == 0
    return data, run


class TestSynth:
    def test_writes_documented_files(self, tmp_path):
        out = tmp_path / "ds"
        assert _run("synth", "--out", str(out), "--train-views", "3", "--test-views", "1",
                    "--width", "24", "--height", "18") == 0
        for name in ("intrinsics.txt", "poses.txt", "bounds.txt", "frame_00000.rgb.vlft",
                     "frame_00000.depth.vlft", "frame_00000.feat.vlft", "class_00000.vlft"):
            assert (out / "train" / name).is_file(), name
        assert (out / "labels.tsv").is_file()
        assert (out / "test" / "frame_00000.rgb.vlft").is_file()

    def test_scene_file_input(self, tmp_path):
        scene = tmp_path / "scene.txt"
        write_scene_spec(default_scene(feature_dim=8, seed=2), scene)
        out = tmp_path / "ds"
        assert _run("synth", "--scene", str(scene), "--out", str(out), "--train-views", "2",
                    "--test-views", "0", "--width", "16", "--height", "12") == 0
        feat = read_vlft(out / "train" / "frame_00000.feat.vlft")
        assert feat.shape[2] == 8

    def test_missing_required_flag_exits_2(self, capsys):
        import langfield.cli as cli

        with pytest.raises(SystemExit) as exc:
            cli.build_parser().parse_args(["synth"])  # missing --out
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert _run("synth", "--out", str(out), "--train-views", "3", "--test-views", "1",
                        "--width", "24", "--height", "18", "--seed", "9") == 0
        for sub in ("train", "test"):
            names = sorted(p.name for p in (a / sub).iterdir())
            match, mismatch, errors = filecmp.cmpfiles(a / sub, b / sub, names, shallow=False)
            assert not mismatch and not errors
        assert (a / "labels.tsv").read_bytes() == (b / "labels.tsv").read_bytes()


class TestTrain:
    def test_unknown_config_key_fails(self, tmp_path, capsys):
        code = _run("train", "--data", str(tmp_path), "--out", str(tmp_path / "o"),
                    "--set", "bogus.key=1")
        assert code == 1
        assert "bogus.key" in capsys.readouterr().err

    def test_missing_dirs_fail(self, capsys):
        assert _run("train") == 1


class TestRenderSegmentEvalQuery:
    def test_render_outputs(self, pipeline_dirs, tmp_path):
        data, run = pipeline_dirs
        out = tmp_path / "render"
        code = _run("render", "--checkpoint", str(run / "ckpt_final.vlfc"),
                    "--data", str(data / "test"), "--view", "0", "--samples", "16",
                    "--out", str(out))
        assert code == 0
        rgb = read_vlft(out / "rgb_00000.vlft")
        assert rgb.shape == (24, 32, 3)
        depth = read_vlft(out / "depth_00000.vlft")
        assert depth.shape == (24, 32)
        feat = read_vlft(out / "feature_00000.vlft")
        assert feat.shape == (24, 32, 16)
        assert (out / "rgb_00000.ppm").read_bytes().startswith(b"P6\n32 24\n255\n")

    def test_segment_eval_roundtrip(self, pipeline_dirs, tmp_path):
        data, run = pipeline_dirs
        seg = tmp_path / "seg"
        code = _run("segment", "--checkpoint", str(run / "ckpt_final.vlfc"),
                    "--data", str(data / "test"), "--labels", str(data / "labels.tsv"),
                    "--views", "all", "--samples", "16", "--out", str(seg))
        assert code == 0
        assert (seg / "class_00000.vlft").is_file()
        assert (seg / "class_00001.vlft").is_file()

        code = _run("eval", "--pred", str(seg), "--truth", str(data / "test"),
                    "--labels", str(data / "labels.tsv"))
        assert code == 0

    def test_eval_output_format(self, pipeline_dirs, tmp_path, capsys):
        data, _ = pipeline_dirs
        # evaluating the truth against itself: all metrics 1
        code = _run("eval", "--pred", str(data / "test"), "--truth", str(data / "test"),
                    "--labels", str(data / "labels.tsv"))
        assert code == 0
        out = capsys.readouterr().out
        lines = dict(l.split("\t") for l in out.strip().splitlines()[1:])
        assert float(lines["miou_class_mean"]) == 1.0
        assert float(lines["miou_freq_weighted"]) == 1.0
        assert float(lines["pixel_accuracy"]) == 1.0

    def test_query_by_label(self, pipeline_dirs, tmp_path):
        data, run = pipeline_dirs
        out = tmp_path / "query"
        code = _run("query", "--checkpoint", str(run / "ckpt_final.vlfc"),
                    "--data", str(data / "test"), "--labels", str(data / "labels.tsv"),
                    "--label", "class_1", "--view", "0", "--samples", "16",
                    "--out", str(out))
        assert code == 0
        heat = read_vlft(out / "heat_class_1_00000.vlft")
        assert heat.shape == (24, 32)
        assert heat.min() >= 0.0 and heat.max() <= 1.0

    def test_query_by_embedding_file(self, pipeline_dirs, tmp_path):
        data, run = pipeline_dirs
        emb = tmp_path / "emb.txt"
        emb.write_text(" ".join(["0.25"] * 16))
        out = tmp_path / "query"
        code = _run("query", "--checkpoint", str(run / "ckpt_final.vlfc"),
                    "--data", str(data / "test"), "--embedding", str(emb),
                    "--view", "1", "--samples", "16", "--out", str(out))
        assert code == 0
        assert (out / "heat_emb_00001.vlft").is_file()

    def test_bad_checkpoint_fails_cleanly(self, pipeline_dirs, tmp_path, capsys):
        data, _ = pipeline_dirs
        bad = tmp_path / "bad.vlfc"
        bad.write_bytes(b"JUNK")
        code = _run("render", "--checkpoint", str(bad), "--data", str(data / "test"),
                    "--view", "0", "--out", str(tmp_path / "o"))
        assert code == 1


class TestGradcheckCommand:
    def test_passes_and_prints_groups(self, capsys):
        code = _run("gradcheck", "--rays", "6", "--samples", "8")
        out = capsys.readouterr().out
        assert code == 0
        assert "grid.tables" in out
        assert "pass\tTrue" in out
