"""End-to-end pipeline: forward views, pairwise consistency, reports, bundles."""

import json

import numpy as np
import pytest

from dgwt.attention import TransformerConfig
from dgwt.errors import ConfigurationError, ValidationError
from dgwt.gw import SolverConfig
from dgwt.pipeline import (LossWeights, PipelineConfig, PipelineWeights,
                           forward, load_pipeline_weights,
                           pairwise_consistency, report_to_json, run_pipeline,
                           save_pipeline_weights, total_loss, write_report)
from dgwt.renderer import RenderConfig
from dgwt.scene import SceneSpec, default_scene, synth_scene

SMALL_CFG = PipelineConfig(
    transformer=TransformerConfig(video_extents=(2, 4, 4),
                                  patch_extents=(1, 2, 2),
                                  blocks=2, heads=2, width=8, class_count=4),
    render=RenderConfig(grid_extents=(2, 2, 2, 8), samples_per_ray=8),
)

SMALL_SCENE = SceneSpec(frame_count=2, height=4, width=4)


def _small_video():
    video, _ = synth_scene(SMALL_SCENE, 0.0)
    return video


class TestPipelineConfig:
    def test_grid_must_match_patch_grid(self):
        with pytest.raises(ConfigurationError):
            PipelineConfig(
                transformer=SMALL_CFG.transformer,
                render=RenderConfig(grid_extents=(2, 2, 2, 16)),
            )

    def test_bad_angle_range_rejected(self):
        with pytest.raises(ConfigurationError):
            PipelineConfig(transformer=SMALL_CFG.transformer,
                           render=SMALL_CFG.render,
                           angle_range=(10.0, -10.0))

    def test_loss_weights_must_be_non_negative(self):
        with pytest.raises(ValidationError):
            LossWeights(lambda_dgw=-0.5)


class TestForward:
    def test_shapes(self):
        weights = PipelineWeights.seeded(0, SMALL_CFG)
        logits, volumes = forward(_small_video(), 5.0, weights, SMALL_CFG)
        assert logits.shape == (4,)
        assert len(volumes) == 2
        for vol in volumes:
            assert vol.grid == (2, 2, 2)
            assert abs(vol.as_array().sum() - 1.0) < 1e-9

    def test_forward_is_deterministic(self):
        weights = PipelineWeights.seeded(0, SMALL_CFG)
        video = _small_video()
        l1, v1 = forward(video, 5.0, weights, SMALL_CFG)
        l2, v2 = forward(video, 5.0, weights, SMALL_CFG)
        np.testing.assert_array_equal(l1, l2)
        for a, b in zip(v1, v2):
            np.testing.assert_array_equal(a.as_array(), b.as_array())

    def test_angle_changes_the_outputs(self):
        weights = PipelineWeights.seeded(0, SMALL_CFG)
        video = _small_video()
        l1, _ = forward(video, -10.0, weights, SMALL_CFG)
        l2, _ = forward(video, 10.0, weights, SMALL_CFG)
        assert np.abs(l1 - l2).max() > 0.0


class TestPairwiseConsistency:
    def test_result_arity_and_range(self):
        weights = PipelineWeights.seeded(1, SMALL_CFG)
        res = pairwise_consistency(_small_video(), -5.0, 5.0, weights,
                                   SMALL_CFG)
        assert len(res.per_head_dgw) == 2
        assert len(res.per_head_converged) == 2
        assert all(v >= -1e-12 for v in res.per_head_dgw)
        assert res.mean_dgw == pytest.approx(np.mean(res.per_head_dgw))

    def test_swapping_views_is_symmetric(self):
        weights = PipelineWeights.seeded(1, SMALL_CFG)
        video = _small_video()
        ab = pairwise_consistency(video, -5.0, 5.0, weights, SMALL_CFG)
        ba = pairwise_consistency(video, 5.0, -5.0, weights, SMALL_CFG)
        assert abs(ab.mean_dgw - ba.mean_dgw) < 1e-6

    def test_identical_angles_stay_near_zero(self):
        cfg = PipelineConfig(
            transformer=SMALL_CFG.transformer,
            render=SMALL_CFG.render,
            solver=SolverConfig(epsilon=0.01),
        )
        weights = PipelineWeights.seeded(2, cfg)
        res = pairwise_consistency(_small_video(), 7.0, 7.0, weights, cfg)
        assert res.mean_dgw <= 0.02

    def test_threads_match_serial(self):
        weights = PipelineWeights.seeded(1, SMALL_CFG)
        video = _small_video()
        serial = pairwise_consistency(video, -5.0, 5.0, weights, SMALL_CFG)
        threaded = pairwise_consistency(video, -5.0, 5.0, weights, SMALL_CFG,
                                        threads=2)
        assert serial.per_head_dgw == threaded.per_head_dgw

    def test_angle_outside_range_rejected(self):
        weights = PipelineWeights.seeded(0, SMALL_CFG)
        with pytest.raises(ValidationError):
            pairwise_consistency(_small_video(), -5.0, 12.0, weights,
                                 SMALL_CFG)

    def test_self_never_beats_separated_views(self):
        video = _small_video()
        for seed in (0, 1, 2):
            weights = PipelineWeights.seeded(seed, SMALL_CFG)
            same = pairwise_consistency(video, 7.0, 7.0, weights, SMALL_CFG)
            apart = pairwise_consistency(video, -10.0, 10.0, weights,
                                         SMALL_CFG)
            assert same.mean_dgw <= apart.mean_dgw + 1e-6


class TestTotalLoss:
    def test_zero_consistency_leaves_cross_entropy(self):
        logits = np.array([2.0, -1.0, 0.5])
        out = total_loss(logits, 1, 0.0, LossWeights())
        assert out["total"] == out["cross_entropy"]

    def test_uniform_logits_give_log_class_count(self):
        out = total_loss(np.zeros(4), 2, 0.0, LossWeights())
        assert abs(out["cross_entropy"] - np.log(4.0)) < 1e-12

    def test_weights_scale_linearly(self):
        logits = np.array([1.0, 0.0])
        out = total_loss(logits, 0, 0.25, LossWeights(lambda_cls=2.0,
                                                      lambda_dgw=4.0))
        expected = 2.0 * out["cross_entropy"] + 4.0 * 0.25
        assert abs(out["total"] - expected) < 1e-12

    def test_bad_label_rejected(self):
        with pytest.raises(ValidationError):
            total_loss(np.zeros(3), 3, 0.0, LossWeights())


class TestRunPipeline:
    def test_report_fields_are_finite_and_consistent(self):
        run = run_pipeline(SMALL_SCENE, -5.0, 5.0, 1, seed=3, cfg=SMALL_CFG)
        rep = run.report
        for group in (rep.logits_view1, rep.logits_view2, rep.per_head_dgw):
            assert all(np.isfinite(v) for v in group)
        identity = rep.lambda_cls * rep.cross_entropy \
            + rep.lambda_dgw * rep.mean_dgw
        assert abs(rep.total_loss - identity) <= 1e-9
        assert rep.blob_visible is True
        assert rep.timings is None

    def test_report_json_is_byte_identical_across_runs(self):
        a = run_pipeline(SMALL_SCENE, -5.0, 5.0, 1, seed=3, cfg=SMALL_CFG)
        b = run_pipeline(SMALL_SCENE, -5.0, 5.0, 1, seed=3, cfg=SMALL_CFG)
        assert report_to_json(a.report) == report_to_json(b.report)

    def test_report_json_parses_with_fixed_key_order(self):
        run = run_pipeline(SMALL_SCENE, -5.0, 5.0, 1, seed=3, cfg=SMALL_CFG)
        text = report_to_json(run.report)
        data = json.loads(text)
        assert list(data) == ["beta1", "beta2", "label", "seed", "lambda_cls",
                              "lambda_dgw", "logits_view1", "logits_view2",
                              "per_head_dgw", "per_head_converged",
                              "mean_dgw", "cross_entropy", "total_loss",
                              "blob_visible", "timings"]
        assert data["timings"] is None
        assert data["label"] == 1

    def test_written_report_round_trips(self, tmp_path):
        run = run_pipeline(SMALL_SCENE, -5.0, 5.0, 1, seed=3, cfg=SMALL_CFG)
        path = tmp_path / "report.json"
        write_report(run.report, path)
        assert json.loads(path.read_text()) == json.loads(
            report_to_json(run.report))

    def test_requested_timings_are_present(self):
        run = run_pipeline(SMALL_SCENE, -5.0, 5.0, 1, seed=3, cfg=SMALL_CFG,
                           with_timings=True)
        timings = run.report.timings
        assert set(timings) == {"synth_seconds", "consistency_seconds"}
        assert all(v >= 0.0 for v in timings.values())

    def test_invisible_blob_is_reported(self):
        spec = SceneSpec(blob_start=(50.0, 0.0, 0.0),
                         blob_velocity=(0.0, 0.0, 0.0),
                         frame_count=2, height=4, width=4)
        run = run_pipeline(spec, -5.0, 5.0, 0, cfg=SMALL_CFG)
        assert run.report.blob_visible is False


class TestWeightBundles:
    def test_round_trip_preserves_forward_outputs(self, tmp_path):
        weights = PipelineWeights.seeded(4, SMALL_CFG)
        save_pipeline_weights(tmp_path / "bundle", weights, SMALL_CFG)
        loaded, cfg = load_pipeline_weights(tmp_path / "bundle")
        assert cfg == SMALL_CFG
        video = _small_video()
        l1, v1 = forward(video, 5.0, weights, SMALL_CFG)
        l2, v2 = forward(video, 5.0, loaded, cfg)
        np.testing.assert_array_equal(l1, l2)
        for a, b in zip(v1, v2):
            np.testing.assert_array_equal(a.as_array(), b.as_array())

    def test_manifest_is_versioned(self, tmp_path):
        weights = PipelineWeights.seeded(4, SMALL_CFG)
        save_pipeline_weights(tmp_path / "bundle", weights, SMALL_CFG)
        manifest = json.loads((tmp_path / "bundle" / "manifest.json")
                              .read_text())
        assert manifest["format"] == "dgwt-weights"
        assert manifest["version"] == 1
        assert "patch_proj" in manifest["tensors"]

    def test_unrecognized_bundle_rejected(self, tmp_path):
        bundle = tmp_path / "bundle"
        bundle.mkdir()
        (bundle / "manifest.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValidationError):
            load_pipeline_weights(bundle)
