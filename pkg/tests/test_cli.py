"""End-to-end CLI tests: every subcommand exercised in-process, plus the
manifest re-run audit that backs the determinism guarantee."""

import filecmp
import json
from pathlib import Path

import numpy as np

from silfit.cli import main, rerun_from_manifest
from silfit.dataio import (
    RigSpec,
    ShapeSpec,
    farthest_point_sampling,
    generate_shape,
    gt_mask,
    load_pgm,
    load_xyz,
    sample_views,
    save_cameras,
    save_pgm,
    save_xyz,
)
from silfit.losses import chamfer_directed

FIXTURES = Path(__file__).parent / "fixtures"

PRIMARY_SUFFIXES = (".csv", ".xyz", ".pgm", ".txt")


def primary_artifacts(out_dir: Path):
    return sorted(
        p.name for p in out_dir.iterdir() if p.suffix in PRIMARY_SUFFIXES
    )


class TestRender:
    def test_golden_mask_byte_for_byte(self, tmp_path):
        out = tmp_path / "mask.pgm"
        code = main(
            [
                "render",
                str(FIXTURES / "sphere_256.xyz"),
                str(FIXTURES / "camera_single.txt"),
                str(out),
                "--sigma-sq",
                "0.4",
            ]
        )
        assert code == 0
        assert filecmp.cmp(out, FIXTURES / "golden_sphere.pgm", shallow=False)

    def test_empty_cloud_zero_mask(self, tmp_path):
        empty = tmp_path / "empty.xyz"
        empty.write_text("")
        out = tmp_path / "mask.pgm"
        code = main(
            ["render", str(empty), str(FIXTURES / "camera_single.txt"), str(out)]
        )
        assert code == 0
        assert load_pgm(out).sum() == 0.0

    def test_missing_camera_file(self, tmp_path, capsys):
        out = tmp_path / "mask.pgm"
        code = main(
            ["render", str(FIXTURES / "sphere_256.xyz"), str(tmp_path / "nope.txt"), str(out)]
        )
        assert code != 0
        assert "nope.txt" in capsys.readouterr().err

    def test_discrete_is_binary(self, tmp_path):
        out = tmp_path / "mask.pgm"
        code = main(
            [
                "render",
                str(FIXTURES / "sphere_256.xyz"),
                str(FIXTURES / "camera_single.txt"),
                str(out),
                "--discrete",
            ]
        )
        assert code == 0
        assert set(np.unique(load_pgm(out))) <= {0.0, 1.0}

    def test_manifest_rerun_identical(self, tmp_path):
        out = tmp_path / "a" / "mask.pgm"
        assert (
            main(
                [
                    "render",
                    str(FIXTURES / "sphere_256.xyz"),
                    str(FIXTURES / "camera_single.txt"),
                    str(out),
                ]
            )
            == 0
        )
        replay = tmp_path / "b" / "mask.pgm"
        assert rerun_from_manifest(str(out) + ".manifest.json", replay) == 0
        assert filecmp.cmp(out, replay, shallow=False)


FIT_ARGS = [
    "fit", "sphere", None,
    "--views", "2", "--size", "32", "32", "--iters", "40",
    "--seed", "0", "--n-points", "64",
]


def _run_fit(out_dir):
    args = list(FIT_ARGS)
    args[2] = str(out_dir)
    return main(args)


class TestFit:
    def test_artifacts_and_determinism(self, tmp_path):
        first, second = tmp_path / "run1", tmp_path / "run2"
        assert _run_fit(first) == 0
        assert _run_fit(second) == 0
        names = primary_artifacts(first)
        assert "trace.csv" in names and "final.xyz" in names and "cameras.txt" in names
        assert (first / "trace.png").exists()
        for name in names:
            assert filecmp.cmp(first / name, second / name, shallow=False), name

    def test_trace_schema(self, tmp_path):
        out = tmp_path / "run"
        assert _run_fit(out) == 0
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == "iteration,total,bce,affinity,chamfer"
        assert len(lines) == 41
        row = lines[1].split(",")
        assert int(row[0]) == 0 and float(row[1]) > 0.0

    def test_manifest_rerun_identical(self, tmp_path):
        out = tmp_path / "run"
        assert _run_fit(out) == 0
        replay = tmp_path / "replay"
        assert rerun_from_manifest(out / "manifest.json", replay) == 0
        for name in primary_artifacts(out):
            assert filecmp.cmp(out / name, replay / name, shallow=False), name

    def test_cloud_file_target(self, tmp_path):
        sparse, _ = generate_shape(ShapeSpec("sphere", n_points=128, dense_n=2000, seed=1))
        cloud = tmp_path / "target.xyz"
        save_xyz(cloud, sparse)
        out = tmp_path / "run"
        code = main(
            [
                "fit", str(cloud), str(out),
                "--views", "2", "--size", "32", "32", "--iters", "10",
                "--seed", "1", "--n-points", "32",
            ]
        )
        assert code == 0
        assert load_xyz(out / "final.xyz").shape == (32, 3)

    def test_unknown_shape_fails(self, tmp_path, capsys):
        code = main(["fit", "dodecahedron.xyz", str(tmp_path / "o")])
        assert code != 0


class TestTso:
    def _setup(self, tmp_path):
        sparse, dense = generate_shape(ShapeSpec("sphere", n_points=128, dense_n=5000, seed=2))
        view = sample_views(RigSpec(n_views=1, height=32, width=32, seed=2))[0]
        cloud = tmp_path / "init.xyz"
        save_xyz(cloud, sparse)
        cams = tmp_path / "cams.txt"
        save_cameras(cams, [view])
        mask = tmp_path / "gt.pgm"
        save_pgm(mask, gt_mask(dense, view), maxval=255)
        return cloud, cams, mask

    def test_artifacts_written(self, tmp_path):
        cloud, cams, mask = self._setup(tmp_path)
        out = tmp_path / "run"
        code = main(
            ["tso", str(cloud), str(cams), str(mask), str(out), "--iters", "15"]
        )
        assert code == 0
        for name in ("before.xyz", "after.xyz", "before_mask.pgm", "after_mask.pgm", "trace.csv"):
            assert (out / name).exists()

    def test_manifest_rerun_identical(self, tmp_path):
        cloud, cams, mask = self._setup(tmp_path)
        out = tmp_path / "run"
        assert (
            main(["tso", str(cloud), str(cams), str(mask), str(out), "--iters", "10"]) == 0
        )
        replay = tmp_path / "replay"
        assert rerun_from_manifest(out / "manifest.json", replay) == 0
        for name in primary_artifacts(out):
            assert filecmp.cmp(out / name, replay / name, shallow=False), name


class TestEval:
    def test_identical_clouds(self, tmp_path, capsys):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        a = tmp_path / "a.xyz"
        save_xyz(a, pts)
        assert main(["eval", str(a), str(a)]) == 0
        out = capsys.readouterr().out.splitlines()
        values = {line.split()[0]: float(line.split()[1]) for line in out}
        assert values["fwd"] == 0.0 and values["bwd"] == 0.0 and values["chamfer"] == 0.0

    def test_single_point_pair(self, tmp_path, capsys):
        a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
        save_xyz(a, [[0.0, 0.0, 0.0]])
        save_xyz(b, [[1.0, 0.0, 0.0]])
        assert main(["eval", str(a), str(b)]) == 0
        values = {
            line.split()[0]: float(line.split()[1])
            for line in capsys.readouterr().out.splitlines()
        }
        assert values["fwd"] == 1.0 and values["bwd"] == 1.0 and values["chamfer"] == 2.0
        assert values["chamfer_x1000"] == 2000.0

    def test_fps_matches_library(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        pa, pb = rng.normal(size=(300, 3)), rng.normal(size=(280, 3))
        a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
        save_xyz(a, pa)
        save_xyz(b, pb)
        assert main(["eval", str(a), str(b), "--fps", "64"]) == 0
        values = {
            line.split()[0]: float(line.split()[1])
            for line in capsys.readouterr().out.splitlines()
        }
        fa, fb = farthest_point_sampling(pa, 64), farthest_point_sampling(pb, 64)
        expected = chamfer_directed(fa, fb)
        assert values["fwd"] == expected

    def test_empty_cloud_fails(self, tmp_path):
        a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
        a.write_text("")
        save_xyz(b, [[0.0, 0.0, 0.0]])
        assert main(["eval", str(a), str(b)]) != 0


class TestGradcheck:
    def test_defaults_pass(self):
        assert main(["gradcheck"]) == 0

    def test_negative_control(self):
        assert main(["gradcheck", "--break-gradient"]) == 1

    def test_no_points_vacuous(self, capsys):
        assert main(["gradcheck", "--n", "0"]) == 0
        assert "vacuous" in capsys.readouterr().out


class TestSweep:
    def test_sigma_axis_csv(self, tmp_path):
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep", "sphere", str(out), "--size", "32", "32",
                "--n-points", "128", "--axis", "sigma-sq", "--values", "0.2", "0.4",
            ]
        )
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "sigma_sq,l1_error,hole_count"
        assert len(lines) == 3
        assert (out / "sweep.png").exists()

    def test_views_axis(self, tmp_path):
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep", "sphere", str(out), "--size", "32", "32",
                "--iters", "20", "--n-points", "48",
                "--axis", "views", "--values", "1", "2",
            ]
        )
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "views,final_chamfer"
        assert len(lines) == 3

    def test_single_value_rejected(self, tmp_path, capsys):
        code = main(
            ["sweep", "sphere", str(tmp_path / "s"), "--axis", "sigma-sq", "--values", "0.4"]
        )
        assert code != 0

    def test_manifest_rerun_identical(self, tmp_path):
        out = tmp_path / "sweep"
        args = [
            "sweep", "sphere", str(out), "--size", "32", "32",
            "--iters", "15", "--n-points", "48",
            "--axis", "lambda", "--values", "0.0", "1.0",
        ]
        assert main(args) == 0
        replay = tmp_path / "replay"
        assert rerun_from_manifest(out / "manifest.json", replay) == 0
        assert filecmp.cmp(out / "sweep.csv", replay / "sweep.csv", shallow=False)


class TestManifestContents:
    def test_schema(self, tmp_path):
        out = tmp_path / "run"
        assert _run_fit(out) == 0
        data = json.loads((out / "manifest.json").read_text())
        for key in ("command", "args", "seed", "outputs", "version", "wall_time_s"):
            assert key in data
        assert data["command"] == "fit"
        assert data["seed"] == 0
        assert "trace.csv" in data["outputs"]
