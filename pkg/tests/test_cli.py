import json
import os
import sys

import numpy as np

from fluctdecon.cli import main
from fluctdecon.fileio import (
    ExperimentManifest,
    load_array,
    read_metrics_record,
    write_manifest,
)

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TINY = os.path.join(REPO, "manifests", "tiny16.json")
SCALED = os.path.join(REPO, "manifests", "scaled64.json")
FIXTURE_CMD = f"{sys.executable} -m fluctdecon.bridge_fixtures --mode echo"


def run(argv) -> int:
    return main(argv)


class TestStages:
    def test_init_manifest(self, tmp_path):
        out = str(tmp_path / "m.json")
        assert run(["init-manifest", "--out", out, "--name", "demo"]) == 0
        assert os.path.exists(out)

    def test_stagewise_flow(self, tmp_path):
        outdir = str(tmp_path)
        assert run(["simulate", "--manifest", TINY, "--outdir", outdir]) == 0
        assert run(["covariance", "--stack", os.path.join(outdir, "stack.flk"),
                    "--outdir", outdir]) == 0
        assert run(["solve-support", "--cov", os.path.join(outdir, "covariance.npy"),
                    "--manifest", TINY, "--outdir", outdir]) == 0
        assert run(["solve-intensity", "--support", os.path.join(outdir, "support_mask.npy"),
                    "--mean", os.path.join(outdir, "mean.npy"),
                    "--manifest", TINY, "--outdir", outdir]) == 0
        out = str(tmp_path / "metrics.json")
        assert run(["metrics", "--est-support", os.path.join(outdir, "support_mask.npy"),
                    "--gt-emitters", os.path.join(outdir, "emitters.txt"),
                    "--pixel-size-nm", "25", "--out", out]) == 0
        record = read_metrics_record(out)
        assert set(record) >= {"jaccard_index", "cd", "fn", "fp"}

    def test_metrics_support_against_itself_is_one(self, tmp_path):
        outdir = str(tmp_path)
        run(["simulate", "--manifest", TINY, "--outdir", outdir])
        # ground truth support evaluated against ground truth emitters
        out = str(tmp_path / "self.json")
        assert run(["metrics", "--est-support", os.path.join(outdir, "truth_support.npy"),
                    "--gt-emitters", os.path.join(outdir, "emitters.txt"),
                    "--pixel-size-nm", "25", "--delta-nm", "40", "--out", out]) == 0
        assert read_metrics_record(out)["jaccard_index"] == 1.0


class TestPipeline:
    def test_bundled_scaled_manifest_completes(self, tmp_path):
        outdir = str(tmp_path / "run")
        assert run(["pipeline", "--manifest", SCALED, "--outdir", outdir]) == 0
        for artifact in (
            "manifest.json", "stack.flk", "emitters.txt", "covariance.npy",
            "mean.npy", "support_mask.npy", "support_rx.npy", "support_trace.json",
            "intensity_x.npy", "intensity_background.npy", "metrics.json",
            "support.pgm", "intensity.pgm",
        ):
            assert os.path.exists(os.path.join(outdir, artifact)), artifact
        record = read_metrics_record(os.path.join(outdir, "metrics.json"))
        assert record["jaccard_index"] > 0.4
        assert record["psnr_intensity_db"] > record["psnr_mean_frame_db"]
        assert record["s_hat"] > 0

    def test_rerun_reproduces_results(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert run(["pipeline", "--manifest", TINY, "--outdir", a]) == 0
        assert run(["pipeline", "--manifest", TINY, "--outdir", b]) == 0
        assert np.array_equal(load_array(os.path.join(a, "support_rx.npy")),
                              load_array(os.path.join(b, "support_rx.npy")))
        ra = read_metrics_record(os.path.join(a, "metrics.json"))
        rb = read_metrics_record(os.path.join(b, "metrics.json"))
        assert ra == rb


class TestBridgeCheck:
    def test_echo_fixture_passes(self):
        assert run(["bridge-check", "--spawn", FIXTURE_CMD, "--size", "8"]) == 0

    def test_dead_endpoint_exits_bridge_code(self):
        assert run(["bridge-check", "--tcp", "127.0.0.1:1"]) == 5


class TestExitCodes:
    def test_missing_stack_is_io_error(self, tmp_path):
        assert run(["covariance", "--stack", str(tmp_path / "nope.flk"),
                    "--outdir", str(tmp_path)]) == 3

    def test_bad_manifest_is_config_error(self, tmp_path):
        path = str(tmp_path / "bad.json")
        with open(path, "w") as fh:
            json.dump({"unknown_knob": 1}, fh)
        assert run(["simulate", "--manifest", path, "--outdir", str(tmp_path)]) == 2

    def test_pnp_solve_via_bridge_spec(self, tmp_path):
        # solve-support with a spawned echo denoiser exercises the bridge path
        outdir = str(tmp_path)
        run(["simulate", "--manifest", TINY, "--outdir", outdir])
        run(["covariance", "--stack", os.path.join(outdir, "stack.flk"), "--outdir", outdir])
        manifest = ExperimentManifest.from_json(open(TINY).read())
        import dataclasses

        manifest = dataclasses.replace(manifest, regularizer="bridge",
                                       bridge="spawn:" + FIXTURE_CMD, solver_max_iters=5)
        bridged = str(tmp_path / "bridged.json")
        write_manifest(bridged, manifest)
        assert run(["solve-support", "--cov", os.path.join(outdir, "covariance.npy"),
                    "--manifest", bridged, "--outdir", outdir]) == 0
