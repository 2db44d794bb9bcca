"""Architecture transformation: bottleneck step, conv replacement, selectors."""
import numpy as np
import pytest

from parcnn import cost, transform, zoo
from parcnn.arch import ArchSpec, build_model
from parcnn.errors import ArchError
from parcnn.transform import DistillPolicy, apply_bottleneck, distill_architecture


def _layer_types(arch: ArchSpec) -> list[str]:
    return [e["type"] for e in arch.layers]


class TestApplyBottleneck:
    def test_resizes_two_linear_head(self):
        arch = apply_bottleneck(zoo.build_zoo_arch("dcnn_table2"), 50)
        fc1 = [e for e in arch.layers if e.get("name") == "fc1"][0]
        assert fc1["out_features"] == 50

    def test_same_dimension_is_identity(self):
        base = zoo.build_zoo_arch("dcnn_table2")
        arch = apply_bottleneck(base, 500)
        assert arch.to_obj() == base.to_obj()

    def test_single_linear_gets_bottleneck_head(self):
        arch = apply_bottleneck(zoo.build_zoo_arch("res18_mini"), 32)
        head = arch.layers[-1]
        assert head["type"] == "bottleneck_head"
        assert head["bottleneck_dim"] == 32 and head["out_features"] == 10

    def test_no_linear_head_rejected(self):
        arch = ArchSpec(1, 8, 8, [
            {"type": "conv", "out_channels": 4, "kernel": 3, "padding": 1}])
        with pytest.raises(ArchError, match="no linear head"):
            apply_bottleneck(arch, 10)

    def test_resizes_existing_bottleneck_head(self):
        arch = apply_bottleneck(zoo.build_zoo_arch("res18_mini"), 32)
        again = apply_bottleneck(arch, 16)
        assert again.layers[-1]["bottleneck_dim"] == 16


class TestDistillArchitecture:
    def test_default_policy_replaces_twelve_dcnn_layers(self):
        result = transform.transform_with_report(
            zoo.build_zoo_arch("dcnn_table2"), DistillPolicy())
        assert result.replaced == 12
        kinds = _layer_types(result.arch)
        assert kinds.count("parconv") == 12
        assert kinds.count("conv") == 2          # first and last stay standard

    def test_first_and_one_by_one_convs_kept(self):
        compact = distill_architecture(zoo.build_zoo_arch("dcnn_table2"),
                                       DistillPolicy())
        names = {e.get("name"): e["type"] for e in compact.layers}
        assert names["conv1"] == "conv"
        assert names["conv5"] == "conv"
        assert names["conv2_1"] == "parconv"

    def test_low_gamma_leaves_head_unchanged(self):
        # res18_mini head is tiny: gamma ~0.05%, far below the threshold
        base = zoo.build_zoo_arch("res18_mini")
        result = transform.transform_with_report(
            base, DistillPolicy(replace_selector="residual_body"))
        assert not result.head_changed
        assert result.arch.layers[-1] == base.layers[-1]

    def test_logit_and_tap_shapes_preserved(self, rng):
        teacher_arch = zoo.build_zoo_arch("mnist_small")
        student_arch = distill_architecture(teacher_arch, DistillPolicy())
        assert teacher_arch.tap_shapes().keys() == student_arch.tap_shapes().keys()
        for name, shape in teacher_arch.tap_shapes().items():
            assert student_arch.tap_shapes()[name][1:] == shape[1:], name
        teacher = build_model(teacher_arch, seed=0)
        student = build_model(student_arch, seed=1)
        x = rng.normal(size=(2, 1, 28, 28)).astype(np.float32)
        assert teacher.forward(x).shape == student.forward(x).shape

    def test_idempotent_on_already_compact_arch(self):
        policy = DistillPolicy()
        once = distill_architecture(zoo.build_zoo_arch("dcnn_table2"), policy)
        twice = distill_architecture(once, policy)
        assert twice.to_obj() == once.to_obj()

    def test_zero_match_selector_on_plain_arch_rejected(self):
        arch = ArchSpec(1, 12, 12, [
            {"type": "conv", "name": "first", "out_channels": 4, "kernel": 3,
             "padding": 1},
            {"type": "conv", "name": "last", "out_channels": 4, "kernel": 1},
            {"type": "flatten"},
            {"type": "linear", "out_features": 10},
        ])
        with pytest.raises(ArchError, match="matched no replaceable"):
            distill_architecture(arch, DistillPolicy(threshold=0.99))

    def test_unknown_selector_names_rejected(self):
        with pytest.raises(ArchError, match="not found"):
            distill_architecture(zoo.build_zoo_arch("dcnn_table2"),
                                 DistillPolicy(replace_selector="no_such_layer"))

    def test_explicit_name_selector(self):
        compact = distill_architecture(
            zoo.build_zoo_arch("dcnn_table2"),
            DistillPolicy(replace_selector="conv2_1,conv2_2"))
        names = {e.get("name"): e["type"] for e in compact.layers}
        assert names["conv2_1"] == "parconv"
        assert names["conv2_3"] == "conv"

    def test_variant_selection(self):
        for variant in ("dsconv", "sparconv"):
            compact = distill_architecture(zoo.build_zoo_arch("dcnn_table2"),
                                           DistillPolicy(variant=variant))
            assert _layer_types(compact).count(variant) == 12

    def test_residual_wrapping(self):
        compact = distill_architecture(zoo.build_zoo_arch("dcnn_table2"),
                                       DistillPolicy(residual=True))
        residuals = [e for e in compact.layers if e["type"] == "residual"]
        assert len(residuals) == 12
        assert all(e["body"][0]["type"] == "parconv" for e in residuals)

    def test_stride_two_conv_becomes_pool_plus_block(self):
        compact = distill_architecture(
            zoo.build_zoo_arch("res18_mini"),
            DistillPolicy(replace_selector="residual_body"))
        # every residual body that used a strided conv now opens with a pool
        for entry in compact.layers:
            if entry.get("type") != "residual":
                continue
            kinds = [e["type"] for e in entry["body"]]
            assert "conv" not in kinds
            assert kinds.count("parconv") == 2
        report = cost.analyze(compact)
        base = cost.analyze(zoo.build_zoo_arch("res18_mini"))
        assert base.total_flops / report.total_flops > 8

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            DistillPolicy(threshold=0.0)
        with pytest.raises(ValueError):
            DistillPolicy(omega=0.0)
        with pytest.raises(ValueError):
            DistillPolicy(variant="octave")

    def test_gamma_report(self):
        result = transform.transform_with_report(zoo.build_zoo_arch("dcnn_table2"),
                                                 DistillPolicy())
        assert result.gamma_before == pytest.approx(0.3497, abs=1e-3)
        assert result.gamma_after_head == pytest.approx(0.0519, abs=1e-3)
        assert result.head_changed
