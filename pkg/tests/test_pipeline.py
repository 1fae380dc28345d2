"""End-to-end pipeline tests: stage grammar, config, report, artifacts.

The stage grammar is `synth? init (densify refine)* voxelize? eval?` with
one extra allowance: a single refine directly after init (feature fill-in
without growth).  Views arrive in waves: init consumes the first wave and
every densify round activates the next, so the report's `views_active`
column must grow across rounds.

These tests run the pipeline on a deliberately small fixture (5 views of
36 x 48, 250 sampled Gaussians, a 6 x 6 x 3 grid) so the whole module
stays in the couple-of-seconds range; quality thresholds on the full room
fixture live in the acceptance suite instead.
"""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from fgs.errors import InvalidInputError
from fgs.io import load_scene, load_voxel_grid
from fgs.pipeline import (DEFAULT_STAGES, STAGES, PipelineConfig, bench,
                          run_pipeline, validate_stages)
from fgs.synth import Primitive, RigSpec, RingSpec, SynthSpec
from fgs.voxel import GridSpec


def _tiny_spec(seed=3):
    prims = [
        Primitive("box", "ground", (0.0, 0.0, 0.25), (4.0, 4.0, 0.5)),
        Primitive("box", "block", (0.8, 0.6, 0.8), (0.8, 0.8, 1.2)),
    ]
    rig = RigSpec(rings=[RingSpec(3, 2.6, 2.4, -55.0),
                         RingSpec(2, 3.2, 2.2, -35.0, 60.0)],
                  height=36, width=48, hfov_deg=70.0)
    return SynthSpec(seed=seed, feature_dim=8, primitives=prims, rig=rig,
                     grid=GridSpec(np.array([-2.4, -2.4, 0.0]), (6, 6, 3), 0.8),
                     n_gaussians=250, gaussian_scale=0.08)


def _tiny_config(out_dir=None, threads=1, **over):
    kw = dict(stages=("synth", "init", "densify", "refine",
                      "voxelize", "eval"),
              seed=3, threads=threads, out_dir=out_dir, spec=_tiny_spec(),
              base_count=120, layer_budgets=(60,))
    kw.update(over)
    return PipelineConfig(**kw)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = run_pipeline(_tiny_config(out_dir=str(out)))
    return report, out


# ---------------------------------------------------------------------------
# Stage grammar
# ---------------------------------------------------------------------------

def test_stage_vocabulary_and_defaults():
    assert set(DEFAULT_STAGES) <= set(STAGES)
    assert validate_stages(DEFAULT_STAGES) == DEFAULT_STAGES
    assert validate_stages([]) == ()
    assert validate_stages(["synth", "init"]) == ("synth", "init")


@pytest.mark.parametrize("stages", [
    ("init",),
    ("synth", "init", "refine"),                        # lone feature fill-in
    ("synth", "init", "densify", "refine"),
    ("init", "densify", "refine", "densify", "refine"),
    ("init", "voxelize"),
    ("synth", "init", "densify", "refine", "voxelize", "eval"),
])
def test_valid_stage_lists(stages):
    assert validate_stages(stages) == stages


@pytest.mark.parametrize("stages", [
    ("warp",),                                          # unknown stage
    ("init", "synth"),                                  # out of order
    ("synth", "synth", "init"),                         # duplicate synth
    ("synth", "init", "init"),                          # duplicate init
    ("init", "voxelize", "voxelize"),                   # duplicate voxelize
    ("init", "voxelize", "eval", "eval"),               # duplicate eval
    ("densify", "refine"),                              # growth without init
    ("refine",),                                        # refine without init
    ("init", "refine", "densify", "refine"),            # refine before densify
    ("init", "densify", "densify", "refine"),           # densify not followed
    ("init", "eval"),                                   # eval without voxelize
    ("voxelize",),                                      # voxelize without init
])
def test_invalid_stage_lists(stages):
    with pytest.raises(InvalidInputError):
        validate_stages(stages)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidInputError):
        PipelineConfig(threads=0)
    with pytest.raises(InvalidInputError):
        PipelineConfig(stages=("eval",))
    assert PipelineConfig().stages == DEFAULT_STAGES


def test_config_from_dict_conversions():
    spec = _tiny_spec()
    cfg = PipelineConfig.from_dict({
        "stages": ["synth", "init"],
        "spec": spec.to_dict(),
        "layer_budgets": [40, 20],
        "view_waves": [2, 3],
        "seed": 9,
    })
    assert cfg.stages == ("synth", "init")
    assert isinstance(cfg.spec, SynthSpec)
    assert cfg.spec.to_dict() == spec.to_dict()
    assert cfg.layer_budgets == (40, 20)
    assert cfg.view_waves == (2, 3)
    assert cfg.seed == 9
    assert PipelineConfig.from_dict({"view_waves": None}).view_waves is None


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(InvalidInputError, match="unknown pipeline config"):
        PipelineConfig.from_dict({"sigma": 1.0})


# ---------------------------------------------------------------------------
# Full run: report structure
# ---------------------------------------------------------------------------

def test_report_header_and_stage_order(full_run):
    report, _ = full_run
    assert report["seed"] == 3
    assert report["threads"] == 1
    names = [e["name"] for e in report["stages"]]
    assert names == ["synth", "init", "densify", "refine", "voxelize", "eval"]
    assert all("time_s" in e for e in report["stages"])
    json.dumps(report)                      # report must be plain JSON data


def test_report_synth_and_wave_activation(full_run):
    report, _ = full_run
    synth, init, densify = report["stages"][:3]
    assert synth["views"] == 5
    assert synth["view_waves"] == [3, 2]    # ring sizes become waves
    assert synth["classes"] == ["ground", "block"]
    assert init["views_active"] == 3        # first wave only
    assert densify["views_active"] == 5     # second wave has arrived


def test_report_layer_table(full_run):
    report, _ = full_run
    init, densify = report["stages"][1], report["stages"][2]
    layers = report["layers"]
    assert [row["index"] for row in layers] == [0, 1]
    assert layers[0]["count"] == init["count"] == 120
    assert densify["layer"] == 1
    assert 0 <= densify["added"] <= 60
    assert layers[1]["count"] == 120 + densify["added"]
    assert [row["views"] for row in layers] == [3, 5]
    assert all(row["time_s"] > 0 for row in layers)


def test_report_densify_residuals(full_run):
    report, _ = full_run
    densify = report["stages"][2]
    assert len(densify["selected_pixels_per_view"]) == 5
    before, after = densify["residual_before"], densify["residual_after"]
    # A sparse 120-Gaussian base layer leaves plenty of unexplained pixels.
    assert densify["added"] == 60
    assert before is not None and before > 0
    assert after is not None and after < before


def test_report_refine_and_voxelize(full_run):
    report, _ = full_run
    refine, voxelize = report["stages"][3], report["stages"][4]
    assert refine["which"] == "all"
    assert refine["count"] == report["layers"][-1]["count"]
    assert voxelize["dims"] == [6, 6, 3]
    assert 0 < voxelize["occupied"] <= 6 * 6 * 3


def test_report_eval_metrics(full_run):
    report, _ = full_run
    metrics = report["stages"][5]["metrics"]
    assert 0.0 <= metrics["miou"] <= 1.0
    assert set(metrics["iou_per_class"]) <= {"ground", "block"}
    assert 0.0 <= metrics["map"] <= 1.0
    assert set(metrics["ap_per_class"]) <= {"ground", "block"}


def test_artifacts_match_report(full_run):
    report, out = full_run
    scene_path = os.path.join(str(out), "scene.fgs")
    grid_path = os.path.join(str(out), "grid.voxg")
    assert report["artifacts"] == {"scene": scene_path, "grid": grid_path}
    scene = load_scene(scene_path)
    assert len(scene) == report["layers"][-1]["count"]
    assert scene.layer_offsets == (120, len(scene))
    grid = load_voxel_grid(grid_path)
    assert int(grid.occupied.sum()) == report["stages"][4]["occupied"]
    with open(os.path.join(str(out), "report.json"), encoding="utf-8") as fh:
        on_disk = json.load(fh)
    assert on_disk == report


def test_rerun_is_byte_identical_across_thread_counts(full_run, tmp_path):
    _, out = full_run
    run_pipeline(_tiny_config(out_dir=str(tmp_path), threads=2))
    for name in ("scene.fgs", "grid.voxg"):
        a = (out / name).read_bytes()
        b = (tmp_path / name).read_bytes()
        assert a == b, f"{name} differs between threads=1 and threads=2"


# ---------------------------------------------------------------------------
# Waves and edge cases
# ---------------------------------------------------------------------------

def test_empty_wave_list_activates_all_views_at_once():
    report = run_pipeline(_tiny_config(out_dir=None, view_waves=(),
                                       stages=("synth", "init")))
    init = report["stages"][1]
    assert init["views_active"] == 5
    assert report["layers"][0]["views"] == 5


def test_explicit_waves_override_ring_sizes():
    report = run_pipeline(_tiny_config(out_dir=None, view_waves=(1, 4),
                                       stages=("synth", "init")))
    assert report["stages"][0]["view_waves"] == [1, 4]
    assert report["stages"][1]["views_active"] == 1


def test_empty_stage_list_is_a_noop(tmp_path):
    report = run_pipeline(PipelineConfig(stages=(), out_dir=str(tmp_path)))
    assert report["stages"] == [] and report["layers"] == []
    assert report["artifacts"] == {}
    assert (tmp_path / "report.json").exists()
    assert not (tmp_path / "scene.fgs").exists()


def test_stage_failure_keeps_error_type_and_names_stage():
    with pytest.raises(InvalidInputError, match="stage 'init' failed"):
        run_pipeline(PipelineConfig(stages=("init",)))


# ---------------------------------------------------------------------------
# Bench
# ---------------------------------------------------------------------------

def test_bench_report_shape():
    report = bench(n_gaussians=150, image=(24, 32), k=1, threads=1, seed=0)
    assert report["k"] == 1
    assert report["n_gaussians"] == 150
    assert report["image"] == [24, 32]
    assert report["threads"] == 1
    for group, fast, slow in (("render", "tiled_s", "oracle_s"),
                              ("voxelize", "cutoff_s", "oracle_s")):
        assert report[group][fast] > 0
        assert report[group][slow] > 0
        assert report[group]["speedup"] == pytest.approx(
            report[group][slow] / report[group][fast])
    assert report["fps"] == {"n_points": 20000, "k_picks": 2000,
                             "time_s": report["fps"]["time_s"]}
    assert report["fps"]["time_s"] > 0
