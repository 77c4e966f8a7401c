import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from steerers import bench
from steerers.bench import BenchConfig, bundled_path, bundled_textures, generate_pair, run_benchmark
from steerers.cli import main
from steerers.descriptor import describe, detect_keypoints, rotate_image_quarter, rotate_keypoints
from steerers.group_reps import PlanarRotation, Steerer, build_fixed_steerer
from steerers.io import load_steerer, save_descriptions, save_pgm


@pytest.fixture(scope="module")
def textures():
    return bundled_textures()


class TestConfig:
    def test_defaults(self):
        cfg = BenchConfig()
        assert cfg.thresholds_px == (3.0, 5.0, 10.0)
        assert cfg.angles_deg == [0, 90, 180, 270]
        assert len(BenchConfig(rotation_mode="deca").angles_deg) == 36

    @pytest.mark.parametrize("kw", [{"thresholds_px": (5, 3)}, {"thresholds_px": (0, 1)},
                                    {"rotation_mode": "hex"}, {"strategy": "nope"},
                                    {"max_keypoints": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BenchConfig(**kw)


class TestPairs:
    def test_zero_angle_is_identity(self, textures):
        a, b, rot = generate_pair(textures[0], 0)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(rot.matrix, np.eye(2))

    def test_quarter_is_lossless(self, textures):
        _, b, rot = generate_pair(textures[0], 90)
        np.testing.assert_array_equal(b, np.rot90(textures[0]))
        np.testing.assert_array_equal(rot.matrix @ [10.0, 0.0], [0.0, 10.0])

    def test_quarter_mode_rejects_other_angles(self, textures):
        with pytest.raises(ValueError):
            generate_pair(textures[0], 45)

    def test_deca_mode_rotates_continuously(self, textures):
        _, b, rot = generate_pair(textures[0], 10, BenchConfig(rotation_mode="deca"))
        assert rot.angle == pytest.approx(math.radians(10))
        assert b.shape == textures[0].shape and b[0, 0] == 0.0

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            generate_pair(np.zeros((64, 80)), 0)


class TestBenchmark:
    def test_bundled_textures_are_textured(self, textures):
        assert len(textures) == 10
        for t in textures:
            assert t.shape == (128, 128) and t.std() > 0.1

    def test_textures_are_reproducible(self, textures):
        np.testing.assert_array_equal(np.round(bench.make_texture(3) * 255), np.round(textures[3] * 255))

    def test_empty_list(self):
        with pytest.raises(ValueError):
            run_benchmark([])

    def test_small_image_is_skipped(self, textures):
        res = run_benchmark([np.zeros((32, 32)), textures[0]])
        assert res.skipped and res.skipped[0]["image"] == 0

    def test_ground_truth_soundness_at_zero(self, textures):
        res = run_benchmark(textures[:3])
        for t in res.config.thresholds_px:
            row = res.row(0, t)
            assert row["n_matches"] > 0 and row["n_correct"] == row["n_matches"]

    def test_monotone_in_threshold(self, textures):
        res = run_benchmark(textures[:3], steerer=Steerer(np.eye(128), 4))
        for a in res.config.angles_deg:
            ratios = [res.ratio(a, t) for t in res.config.thresholds_px]
            assert ratios == sorted(ratios)

    def test_deterministic_json(self, textures):
        a = run_benchmark(textures[:2]).to_json()
        b = run_benchmark(textures[:2]).to_json()
        assert a == b

    def test_unsteered_collapses_at_quarter_turn(self, textures):
        steered = run_benchmark(textures[:4])
        plain = run_benchmark(textures[:4], BenchConfig(strategy="dual-softmax"))
        assert steered.ratio(90, 10.0) == 1.0
        assert plain.ratio(90, 10.0) < 0.2
        assert steered.aggregate[10.0] >= plain.aggregate[10.0]

    @pytest.mark.parametrize("strategy", ["max-similarity", "subset", "invariant"])
    def test_steered_strategies_beat_plain(self, textures, strategy):
        res = run_benchmark(textures[:2], BenchConfig(strategy=strategy))
        plain = run_benchmark(textures[:2], BenchConfig(strategy="dual-softmax"))
        for a in (90, 270):
            assert res.ratio(a, 5.0) > plain.ratio(a, 5.0)

    def test_csv_schema(self, textures):
        res = run_benchmark(textures[:1])
        rows = list(csv.DictReader(io.StringIO(res.to_csv())))
        assert list(rows[0]) == ["angle_deg", "threshold_px", "n_matches", "n_correct", "ratio"]
        assert len(rows) == 12


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCli:
    def test_decompose_bundled_perm(self, capsys):
        code, out, _ = _run(["decompose", bundled_path("perm256.steer")], capsys)
        assert code == 0
        assert json.loads(out)["frequency_histogram"] == {"0": 64, "1": 128, "2": 64}

    def test_spectrum_of_random_init(self, tmp_path, capsys):
        path = tmp_path / "r.steer"
        assert main(["build-steerer", "random", "--dim", "256", "--out", str(path)]) == 0
        code, out, _ = _run(["spectrum", path], capsys)
        doc = json.loads(out)
        assert code == 0 and len(doc["eigenvalues"]) == 256 and doc["max_modulus"] < 1.0

    def test_bundled_upsift_steerer(self):
        from steerers.descriptor import upsift_steerer
        np.testing.assert_array_equal(load_steerer(bundled_path("upsift.steer")).matrix,
                                      upsift_steerer().matrix)

    def test_describe_writes_desc1(self, tmp_path, capsys):
        img = tmp_path / "t.pgm"
        save_pgm(img, bundled_textures()[0])
        code, out, _ = _run(["describe", img, "--out", tmp_path / "t.desc", "--max-keypoints", 20], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["count"] == 20 and (tmp_path / "t.desc").read_bytes().startswith(b"DESC1\0")

    def test_fit_then_match(self, tmp_path, capsys):
        textures = bundled_textures()
        entries = []
        for i, img in enumerate(textures[:3]):
            kps = detect_keypoints(img, 64)
            save_descriptions(tmp_path / f"b{i}.desc", describe(img, kps).data)
            save_descriptions(tmp_path / f"a{i}.desc",
                              describe(rotate_image_quarter(img, 1),
                                       rotate_keypoints(kps, PlanarRotation.quarter(1))).data)
            entries.append({"before": f"b{i}.desc", "after": f"a{i}.desc", "k": 1})
        (tmp_path / "m.json").write_text(json.dumps({"group_order": 4, "pairs": entries}))
        code, out, _ = _run(["fit", tmp_path / "m.json", "--out", tmp_path / "f.steer"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["residual"] < 1e-6
        assert report["frequency_histogram"] == {"0": 32, "1": 64, "2": 32}
        assert len(report["eigenvalues"]) == 128

        code, out, _ = _run(["match", tmp_path / "b0.desc", tmp_path / "a0.desc",
                             "--steerer", tmp_path / "f.steer", "--strategy", "max-matches",
                             "--iota", 20, "--threshold", 0.01], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["steering_power_or_angle"] == 3
        assert all(i == j for i, j, _ in doc["matches"])

    def test_bench_quarter(self, tmp_path, capsys):
        code, out, _ = _run(["bench", "--mode", "quarter", "--strategy", "max-matches",
                             "--csv", tmp_path / "b.csv"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert [a["angle_deg"] for a in doc["angles"]] == [0, 90, 180, 270]
        assert "timings_s" not in doc
        assert (tmp_path / "b.csv").read_text().startswith("angle_deg,threshold_px")

    @pytest.mark.parametrize("argv", [["bogus"], [], ["bench", "--mode", "hex"],
                                      ["bench", "--threshold", "5,3"], ["match", "a", "b", "--strategy", "zzz"],
                                      ["decompose"]])
    def test_usage_errors(self, argv, capsys):
        code, _, err = _run(argv, capsys)
        assert code == 1
        assert "error" in err

    def test_data_errors(self, tmp_path, capsys):
        (tmp_path / "bad.steer").write_bytes(b"junk")
        assert _run(["decompose", tmp_path / "bad.steer"], capsys)[0] == 2
        assert _run(["spectrum", tmp_path / "missing.steer"], capsys)[0] == 2

    def test_help_exits_zero(self, capsys):
        assert _run(["--help"], capsys)[0] == 0

    def test_module_entry_point(self, tmp_path):
        path = tmp_path / "p.steer"
        done = subprocess.run([sys.executable, "-m", "steerers", "build-steerer", "perm",
                               "--dim", "8", "--out", str(path)], capture_output=True)
        assert done.returncode == 0
        np.testing.assert_array_equal(load_steerer(path).matrix, build_fixed_steerer("perm", 8).matrix)
