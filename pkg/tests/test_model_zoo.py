"""
Tests for model graphs and architecture builders

Covers:
- UltraUNet and reference UNet parameter counts at the shipped defaults
- Placement of SE and Group Normalization layers, decoder stage numbering
- Shape validation: divisibility, summation skips, layout errors
- Deterministic initialization keyed by (seed, layer name)
- Forward output shapes, neutral SE against a graph without SE, state loading
- Residual denoiser starts as the identity
"""
import pytest
import numpy as np

# Import from src
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.autodiff.tape import Var
from src.models.architectures import (
    DenoiserConfig,
    RefUNetConfig,
    UltraUNetConfig,
    build_denoiser,
    build_ref_unet,
    build_ultraunet,
)
from src.models.model_graph import GraphValidationError, LayerKind, LayerSpec, ModelGraph, forward
from src.utils.cost_counter import count_params


def tiny_cfg(**overrides) -> UltraUNetConfig:
    values = dict(
        base_channels=8,
        depth=3,
        se_encoder_stages=[3],
        se_decoder_stages=[1],
        gn_encoder_stages=[3],
        se_reduction=4,
        gn_groups=4,
    )
    values.update(overrides)
    return UltraUNetConfig(**values)


class TestParameterCounts:
    """Parameter totals of the shipped architectures"""

    def test_ultraunet_default(self):
        """Test the calibrated UltraUNet has 4,397,815 parameters"""
        graph = build_ultraunet(initialize=False)

        assert count_params(graph) == 4_397_815

    def test_ultraunet_within_published_tolerance(self):
        """Test the default is within 10% of the published 4.454M"""
        params = count_params(build_ultraunet(initialize=False))

        assert abs(params - 4_454_000) / 4_454_000 < 0.10

    def test_ref_unet_default(self):
        """Test the reference UNet has 31,030,593 parameters"""
        assert count_params(build_ref_unet(initialize=False)) == 31_030_593

    def test_skeleton_matches_initialized(self):
        """Test shape-only and initialized graphs count the same parameters"""
        cfg = tiny_cfg()
        skeleton = build_ultraunet(cfg, initialize=False, image_size=16)
        full = build_ultraunet(cfg, image_size=16)

        assert count_params(skeleton) == sum(p.size for p in full.parameters())
        assert not skeleton.params
        assert full.initialized

    def test_single_conv_formula(self):
        """Test a lone 3x3 conv 1 -> 24 with bias has 240 parameters"""
        graph = ModelGraph("one", [LayerSpec("c", LayerKind.CONV, 1, 24, kernel=3, padding=1)], 1)

        assert count_params(graph) == 240

    def test_depth_two_closed_form(self):
        """Test a depth-2 base-4 UltraUNet matches the hand count of its 3x3, 2x2 and 1x1 terms"""
        plain = tiny_cfg(base_channels=4, depth=2, se_encoder_stages=[], se_decoder_stages=[], gn_encoder_stages=[])
        conv3 = lambda c_in, c_out: 9 * c_in * c_out + c_out
        expected = (
            conv3(1, 4) + conv3(4, 4)  # enc1
            + conv3(4, 8) + conv3(8, 8)  # enc2
            + (8 * 4 * 4 + 4)  # dec1 upconv
            + 3 * conv3(4, 4)  # dec1 convs
            + (4 + 1)  # head
        )

        assert expected == 1649
        assert count_params(build_ultraunet(plain, initialize=False, image_size=8)) == expected

    def test_depth_two_with_se_and_gn(self):
        """Test SE on enc2 and dec1 plus GN on enc2 add their FC and affine terms"""
        cfg = tiny_cfg(base_channels=4, depth=2, se_encoder_stages=[2], se_decoder_stages=[1], gn_encoder_stages=[2])
        se = lambda c, r: (r * c + r) + (c * r + c)

        assert count_params(build_ultraunet(cfg, initialize=False, image_size=8)) == 1649 + se(8, 2) + 2 * 16 + se(4, 1)


class TestUltraUNetLayout:
    """Where UltraUNet puts its SE and GN layers"""

    def test_default_stage_placement(self):
        """Test SE on encoder 4-5 and decoder 1-2, GN only on encoder 4-5"""
        graph = build_ultraunet(initialize=False)
        se = {l.name for l in graph.layers if l.kind == LayerKind.SE}
        gn = {l.name.split(".")[0] for l in graph.layers if l.kind == LayerKind.GROUP_NORM}

        assert se == {"enc4.se", "enc5.se", "dec1.se", "dec2.se"}
        assert gn == {"enc4", "enc5"}

    def test_summation_skips_only(self):
        """Test UltraUNet merges by summation and the reference UNet by concatenation"""
        ultra = {l.kind for l in build_ultraunet(initialize=False).layers}
        ref = {l.kind for l in build_ref_unet(initialize=False).layers}

        assert LayerKind.MERGE_SUM in ultra and LayerKind.MERGE_CONCAT not in ultra
        assert LayerKind.MERGE_CONCAT in ref and LayerKind.MERGE_SUM not in ref

    def test_decoder_numbered_from_bottleneck(self):
        """Test decoder stage 1 merges encoder stage depth - 1"""
        graph = build_ultraunet(initialize=False)
        merges = {l.name: l.skip for l in graph.layers if l.kind == LayerKind.MERGE_SUM}

        assert merges["dec1.merge"] == "enc4"
        assert merges["dec4.merge"] == "enc1"

    def test_decoder_has_no_normalization(self):
        """Test no GN layer sits in the decoder"""
        graph = build_ultraunet(initialize=False)

        assert not [l for l in graph.layers if l.name.startswith("dec") and l.kind == LayerKind.GROUP_NORM]

    def test_conv_counts_per_block(self):
        """Test two convs per encoder block and three per decoder block"""
        graph = build_ultraunet(initialize=False)
        convs = [l.name for l in graph.layers if l.kind == LayerKind.CONV]

        assert sum(1 for n in convs if n.startswith("enc1.")) == 2
        assert sum(1 for n in convs if n.startswith("dec4.")) == 3

    def test_stage_out_of_range(self):
        """Test a SE stage beyond the depth is rejected"""
        with pytest.raises(GraphValidationError, match="se_encoder_stages"):
            build_ultraunet(tiny_cfg(se_encoder_stages=[4]), initialize=False, image_size=16)

    def test_reduction_must_divide(self):
        """Test SE reduction that does not divide the stage width is rejected"""
        with pytest.raises(GraphValidationError, match="not divisible by SE reduction"):
            build_ultraunet(tiny_cfg(se_reduction=3), initialize=False, image_size=16)

    def test_gn_groups_must_divide(self):
        """Test GN groups that do not divide the stage width are rejected"""
        with pytest.raises(GraphValidationError, match="GN groups"):
            build_ultraunet(tiny_cfg(gn_groups=5), initialize=False, image_size=16)

    def test_image_size_divisibility(self):
        """Test an image side not divisible by 2^(depth-1) is rejected"""
        with pytest.raises(GraphValidationError, match="not divisible"):
            build_ultraunet(tiny_cfg(), initialize=False, image_size=18)


class TestShapeValidation:
    """infer_shapes on hand-built graphs"""

    def _skip_graph(self, decoder_channels: int) -> ModelGraph:
        layers = [
            LayerSpec("e.conv", LayerKind.CONV, 1, 4, kernel=3, padding=1),
            LayerSpec("e.skip", LayerKind.SAVE_SKIP, 4, 4, skip="e"),
            LayerSpec("e.pool", LayerKind.MAXPOOL, 4, 4),
            LayerSpec("d.up", LayerKind.UPCONV, 4, decoder_channels, kernel=2, stride=2),
            LayerSpec("d.merge", LayerKind.MERGE_SUM, decoder_channels, decoder_channels, skip="e"),
        ]
        return ModelGraph("skip", layers, 1, downsample_factor=2, initialize=False)

    def test_summation_skip_shape_mismatch(self):
        """Test a summation skip with differing channels fails naming both shapes"""
        graph = self._skip_graph(decoder_channels=6)

        with pytest.raises(GraphValidationError, match=r"\(4, 8, 8\).*\(6, 8, 8\)"):
            graph.infer_shapes((1, 1, 8, 8))

    def test_summation_skip_matching(self):
        """Test matching skip shapes propagate"""
        shapes = self._skip_graph(decoder_channels=4).infer_shapes((2, 1, 8, 8))

        assert shapes[-1] == (2, 4, 8, 8)

    def test_unmerged_skip(self):
        """Test a saved skip that is never merged is an error"""
        layers = [LayerSpec("s", LayerKind.SAVE_SKIP, 1, 1, skip="x")]
        graph = ModelGraph("dangling", layers, 1, initialize=False)

        with pytest.raises(GraphValidationError, match="never merged"):
            graph.infer_shapes((1, 1, 4, 4))

    def test_wrong_input_channels(self):
        """Test an input with the wrong channel count is rejected"""
        graph = build_ultraunet(tiny_cfg(), initialize=False, image_size=16)

        with pytest.raises(GraphValidationError, match="input channels"):
            graph.infer_shapes((1, 3, 16, 16))

    def test_duplicate_layer_names(self):
        """Test duplicate layer names are rejected at construction"""
        layers = [LayerSpec("a", LayerKind.RELU, 1, 1), LayerSpec("a", LayerKind.RELU, 1, 1)]

        with pytest.raises(GraphValidationError, match="duplicate"):
            ModelGraph("dup", layers, 1)


class TestInitialization:
    """Deterministic parameter initialization"""

    def test_same_seed_same_weights(self):
        """Test two graphs from one seed are identical"""
        a = build_ultraunet(tiny_cfg(), seed=5, image_size=16)
        b = build_ultraunet(tiny_cfg(), seed=5, image_size=16)

        for name, p in a.params.items():
            np.testing.assert_array_equal(p.value, b.params[name].value)

    def test_different_seed_different_weights(self):
        """Test seeds change the conv weights"""
        a = build_ultraunet(tiny_cfg(), seed=0, image_size=16)
        b = build_ultraunet(tiny_cfg(), seed=1, image_size=16)

        assert not np.array_equal(a.params["enc1.conv1.weight"].value, b.params["enc1.conv1.weight"].value)

    def test_bias_gamma_beta(self):
        """Test biases and GN beta start at zero and GN gamma at one"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)

        assert not graph.params["enc1.conv1.bias"].value.any()
        assert not graph.params["enc3.gn1.beta"].value.any()
        np.testing.assert_array_equal(graph.params["enc3.gn1.gamma"].value, 1.0)

    def test_kaiming_scale(self):
        """Test conv weight spread follows sqrt(2 / fan_in)"""
        graph = build_ultraunet(UltraUNetConfig(), image_size=224)
        w = graph.params["enc5.conv2.weight"].value

        assert w.std() == pytest.approx(np.sqrt(2.0 / (384 * 9)), rel=0.02)

    def test_float32_by_default(self):
        """Test parameters are float32 outside the verification build"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)

        assert all(p.value.dtype == np.float32 for p in graph.parameters())


class TestForward:
    """Forward execution of built graphs"""

    def test_ultraunet_output_shape(self):
        """Test a batch maps to one logit channel at full resolution"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)
        x = np.random.default_rng(0).random((2, 1, 16, 16))

        out = graph.predict(x)

        assert out.shape == (2, 1, 16, 16)
        assert out.dtype == np.float32

    def test_ref_unet_small(self):
        """Test a narrow reference UNet runs with concatenation skips"""
        graph = build_ref_unet(RefUNetConfig(channels=[4, 8, 16]), image_size=8)

        assert graph.predict(np.zeros((1, 1, 8, 8))).shape == (1, 1, 8, 8)

    def test_rejects_indivisible_input(self):
        """Test forward on a size not divisible by the downsample factor"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)

        with pytest.raises(GraphValidationError, match="not divisible"):
            graph.predict(np.zeros((1, 1, 18, 18)))

    def test_skeleton_cannot_run(self):
        """Test a shape-only graph refuses to execute"""
        graph = build_ultraunet(tiny_cfg(), initialize=False, image_size=16)

        with pytest.raises(GraphValidationError, match="without parameters"):
            graph.predict(np.zeros((1, 1, 16, 16)))

    def test_neutral_se_matches_graph_without_se(self):
        """Test all-ones SE scales reproduce the output of the same graph built without SE"""
        with_se = build_ultraunet(tiny_cfg(), seed=2, image_size=16)
        without_se = build_ultraunet(tiny_cfg(se_encoder_stages=[], se_decoder_stages=[]), seed=2, image_size=16)
        x = np.random.default_rng(1).random((1, 1, 16, 16))

        neutral = forward(with_se, x, neutral_se=True).value
        plain = forward(without_se, x).value

        np.testing.assert_array_equal(neutral, plain)

    def test_active_se_changes_output(self):
        """Test the learned gates change the logits relative to neutral SE"""
        graph = build_ultraunet(tiny_cfg(), seed=2, image_size=16)
        x = np.random.default_rng(1).random((1, 1, 16, 16))

        gated = forward(graph, x).value
        neutral = forward(graph, x, neutral_se=True).value

        assert not np.allclose(gated, neutral)

    def test_record_tape_flag(self):
        """Test forward allocates a tape only when asked"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)
        x = np.zeros((1, 1, 16, 16))

        assert forward(graph, x).tape is None
        recorded = forward(graph, x, record_tape=True)
        assert recorded.tape is not None and len(recorded.tape) > 0

    def test_accepts_var_input(self):
        """Test a Var input is used as is"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)

        out = graph.forward(Var(np.zeros((1, 1, 16, 16), dtype=np.float32)))

        assert out.shape == (1, 1, 16, 16)


class TestStateDict:
    """Parameter snapshots"""

    def test_round_trip(self):
        """Test loading one graph's state into another reproduces its outputs"""
        a = build_ultraunet(tiny_cfg(), seed=0, image_size=16)
        b = build_ultraunet(tiny_cfg(), seed=9, image_size=16)
        x = np.random.default_rng(4).random((1, 1, 16, 16))

        b.load_state_dict(a.state_dict())

        np.testing.assert_array_equal(a.predict(x), b.predict(x))

    def test_state_is_a_copy(self):
        """Test mutating a snapshot leaves the graph untouched"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)
        state = graph.state_dict()

        state["head.bias"][...] = 7.0

        assert not graph.params["head.bias"].value.any()

    def test_shape_mismatch_names_tensor(self):
        """Test a mis-shaped tensor is reported by name"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)
        state = graph.state_dict()
        state["head.bias"] = np.zeros((2,), dtype=np.float32)

        with pytest.raises(GraphValidationError, match="head.bias"):
            graph.load_state_dict(state)

    def test_missing_tensor(self):
        """Test a missing tensor is reported"""
        graph = build_ultraunet(tiny_cfg(), image_size=16)
        state = graph.state_dict()
        del state["head.weight"]

        with pytest.raises(GraphValidationError, match="missing"):
            graph.load_state_dict(state)


class TestDenoiser:
    """Denoising UNet"""

    def test_residual_starts_as_identity(self):
        """Test the untrained residual denoiser returns its input"""
        graph = build_denoiser(seed=0, image_size=16)
        x = np.random.default_rng(0).random((2, 1, 16, 16)).astype(np.float32)

        np.testing.assert_allclose(graph.predict(x), x, atol=1e-6)

    def test_plain_denoiser_shape(self):
        """Test the non-residual variant maps 1 channel to 1 channel"""
        graph = build_denoiser(DenoiserConfig(residual=False), image_size=16)

        assert graph.predict(np.zeros((1, 1, 16, 16))).shape == (1, 1, 16, 16)
        assert LayerKind.MERGE_SUM not in {l.kind for l in graph.layers}
