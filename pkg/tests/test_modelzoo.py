from __future__ import annotations

import os
import sys
import unittest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner.analyzers import analyze, algorithmic_io
from planner.autodiff import training_flops_ratio
from planner.exceptions import InvalidConfig
from planner.graph import OpKind, expand_unrolled
from planner.model_config import ModelConfig
from planner.modelzoo import (
    build,
    build_char_rhn,
    build_resnet,
    build_training,
    build_word_lm,
    resolve_domain,
)
from planner.symexpr import render, symbols

b, h, l, q, v, r = symbols("b h l q v r")


def small(domain: str, **overrides) -> ModelConfig:
    sizes = {
        "word_lm": dict(hidden=8, layers=2, vocab=50, seq_len=4, subbatch=2),
        "char_lm": dict(hidden=8, layers=1, vocab=20, seq_len=5, subbatch=2, rhn_depth=3),
        "nmt": dict(hidden=8, layers=2, vocab=40, seq_len=6, subbatch=2),
        "speech": dict(hidden=8, layers=4, vocab=10, seq_len=16, subbatch=2,
                       target_len=5, decoder_layers=1, features=6),
        "image": dict(resnet_depth=18, subbatch=2, image_size=64),
    }[domain]
    sizes.update(overrides)
    return ModelConfig(domain=domain, **sizes)


class TestWordLM(unittest.TestCase):
    def test_parameter_count(self) -> None:
        """Stacked LSTM layers give 8h^2 l + 2hv plus O(h) biases."""
        report = analyze(build_word_lm(small("word_lm")))
        self.assertEqual(report.parameter_count, 8 * h**2 * l + 2 * h * v + 4 * h * l + v)
        self.assertEqual(report.matrix_parameter_count, 8 * h**2 * l + 2 * h * v)
        self.assertEqual(render(report.matrix_parameter_count), "8*h^2*l + 2*h*v")

    def test_layer_count_is_a_symbol(self) -> None:
        """Binding l matches a model built with that many separate layers."""
        graph = build_word_lm(small("word_lm"))
        self.assertEqual(graph.symbol_defaults["l"], 2)
        stacked = analyze(graph)
        separate = analyze(build_word_lm(small("word_lm", layers=3, stack_layers=False)))
        self.assertEqual(stacked.parameter_count.substitute({"l": 3}), separate.parameter_count)
        self.assertEqual(stacked.flops({"l": 3}), separate.flops())
        self.assertEqual(stacked.bytes({"l": 3}), separate.bytes())

    def test_separate_layers(self) -> None:
        """Without stacking two LSTM layers fold into 16h^2 + 2hv + 8h + v."""
        graph = build_word_lm(small("word_lm", stack_layers=False))
        self.assertEqual(analyze(graph).parameter_count, 16 * h**2 + 2 * h * v + 8 * h + v)
        self.assertIn("lstm1/gates", graph.ops)
        self.assertNotIn("l", graph.symbol_defaults)

    def test_training_step_matches_separate_layers(self) -> None:
        """Backward and update costs of the stacked layers match the layer-by-layer build."""
        stacked = analyze(build_training(small("word_lm")))
        separate = analyze(build_training(small("word_lm", stack_layers=False)))
        self.assertEqual(stacked.flops(), separate.flops())
        self.assertEqual(stacked.parameter_count.substitute({"l": 2}), separate.parameter_count)

    def test_forward_matmul_flops(self) -> None:
        """Forward MatMul FLOPs are q * b * (16h^2 l + 2hv)."""
        report = analyze(build_word_lm(small("word_lm")))
        matmul = [c.flops for c in report.per_op if c.kind is OpKind.MATMUL]
        self.assertEqual(sum(matmul[1:], matmul[0]), q * b * (16 * h**2 * l + 2 * h * v))

    def test_projection_shrinks_last_layer(self) -> None:
        """A projection replaces h by r in the last layer's state and the output layer."""
        report = analyze(build_word_lm(small("word_lm", projection=4)))
        expected = (
            v * h + 8 * h**2 + 4 * h  # embedding and first layer
            + (h + r) * 4 * h + 4 * h + h * r  # projected layer
            + r * v + v
        )
        self.assertEqual(report.parameter_count, expected)
        self.assertEqual(report.graph.symbol_defaults["r"], 4)

    def test_symbol_defaults_follow_config(self) -> None:
        """Config sizes become the default binding of the graph."""
        graph = build_word_lm(small("word_lm"))
        self.assertEqual(graph.symbol_defaults, {"h": 8, "v": 50, "q": 4, "b": 2, "l": 2})
        self.assertTrue(graph.frozen)

    def test_io_is_ids_labels_and_probabilities(self) -> None:
        """Per step the model reads ids and labels and writes probabilities."""
        graph = build_word_lm(small("word_lm"))
        self.assertEqual(graph.io_inputs, ["ids", "labels"])
        self.assertEqual(analyze(graph).io_bytes, 4 * b * q * (2 + v))
        self.assertEqual(algorithmic_io(graph), 4 * 2 * 4 * 52)

    def test_training_ratio_near_three(self) -> None:
        """At production sizes the training step costs about three forward passes."""
        step = build_training(ModelConfig.fallback("word_lm"))
        ratio = training_flops_ratio(step, step.graph.symbol_defaults)
        self.assertGreater(ratio, 2.9)
        self.assertLess(ratio, 3.1)

    def test_training_ratio_at_wide_hidden(self) -> None:
        """With 2^14 hidden units the step is within 2% of three forward passes."""
        step = build_training(ModelConfig(domain="word_lm", hidden=2**14, subbatch=128))
        ratio = training_flops_ratio(step, step.graph.symbol_defaults)
        self.assertAlmostEqual(ratio, 3.0, delta=3.0 * 0.02)

    def test_physical_unroll_matches_analytic(self) -> None:
        """Literal timesteps cost exactly what the analytic unroll predicts."""
        graph = build_word_lm(small("word_lm"))
        binding = {"h": 8, "v": 50, "q": 3, "b": 2, "l": 2}
        expanded = expand_unrolled(graph, binding)
        self.assertAlmostEqual(analyze(expanded).flops(binding), analyze(graph).flops(binding))
        self.assertIn("lstm/concat@2", expanded.ops)
        self.assertNotIn("lstm/concat@3", expanded.ops)

    def test_training_footprint_exceeds_persistent_state(self) -> None:
        """Activations add to the weights, gradients and optimizer state."""
        from planner.footprint import min_footprint, persistent_bytes

        step = build_training(small("word_lm"))
        binding = step.graph.symbol_defaults
        self.assertGreater(min_footprint(step, binding), persistent_bytes(step, binding))


class TestOtherDomains(unittest.TestCase):
    def test_char_model_is_recurrence_dominated(self) -> None:
        """Embedding and output layers are a tiny share of char-model FLOPs."""
        report = analyze(build_char_rhn(ModelConfig.fallback("char_lm")))
        share = report.share_by(
            lambda c: c.op_id.startswith(("embedding/", "output/"))
        )
        self.assertLess(share, 0.01)

    def test_char_model_recurrence_is_declared(self) -> None:
        """Each highway layer carries its last sublayer state forward."""
        graph = build_char_rhn(small("char_lm"))
        self.assertEqual(graph.recurrences["rhn0/s_prev"], "rhn0/sub2/highway")

    def test_nmt_recurrent_layers_dominate(self) -> None:
        """LSTM layers carry most NMT forward FLOPs."""
        report = analyze(build(ModelConfig.fallback("nmt")))
        self.assertGreater(report.share_by(lambda c: "lstm" in c.op_id), 0.5)

    def test_nmt_attention_memory_stacks_encoder_steps(self) -> None:
        """Attention memory holds one encoder output per source step."""
        graph = build(small("nmt"))
        memory = graph.tensor("encoder/memory")
        self.assertEqual(memory.shape, (b, q, h))
        self.assertIn("encoder/lstm0/bwd/gates", graph.ops)

    def test_unidirectional_encoder(self) -> None:
        """Turning bidirectionality off drops the backward LSTMs."""
        graph = build(small("nmt", encoder_bidirectional=False))
        self.assertNotIn("encoder/lstm0/bwd/gates", graph.ops)

    def test_speech_encoder_dominates(self) -> None:
        """The pyramidal encoder dominates; the location conv is minor."""
        report = analyze(build(ModelConfig.fallback("speech")))
        self.assertGreater(report.share_by(lambda c: c.op_id.startswith("encoder/")), 0.5)
        self.assertLess(report.share_by(lambda c: c.kind is OpKind.CONV2D), 0.05)

    def test_speech_pooling_shortens_sequence(self) -> None:
        """Two pooling layers leave a quarter of the frames in memory."""
        graph = build(small("speech"))
        self.assertEqual(graph.tensor("encoder/memory").shape, (b, q / 4, h))
        self.assertIn("attention/previous", graph.recurrences)

    def test_speech_training_graph(self) -> None:
        """The attention recurrence survives differentiation."""
        step = build_training(small("speech"))
        self.assertIn("attention/location/conv/grad/filter", step.graph.ops)

    def test_resnet_parameters(self) -> None:
        """Parameter counts match the standard ResNet depths."""
        expected = {18: 11689512, 50: 25557032, 152: 60192808}
        for depth, count in expected.items():
            graph = build_resnet(small("image", resnet_depth=depth))
            self.assertEqual(analyze(graph).parameter_count.evaluate({"w": 1}), count)

    def test_resnet_width_scales_quadratically(self) -> None:
        """Parameters grow with the square of the width multiplier."""
        report = analyze(build_resnet(small("image")))
        self.assertEqual(report.parameter_count.degree_in("w"), 2)
        self.assertEqual(report.total_flops.degree_in("b"), 1)

    def test_resnet_trains(self) -> None:
        """Batch norm and residual adds differentiate cleanly."""
        step = build_training(small("image"))
        self.assertIn("update/stem/bn/gamma", step.graph.ops)


class TestDispatch(unittest.TestCase):
    def test_aliases(self) -> None:
        """Model names map onto domains."""
        self.assertEqual(resolve_domain("resnet"), "image")
        self.assertEqual(resolve_domain("char_rhn"), "char_lm")
        with self.assertRaises(InvalidConfig):
            resolve_domain("transformer")

    def test_builder_rejects_other_domain(self) -> None:
        """Each builder only accepts its own domain."""
        with self.assertRaises(InvalidConfig):
            build_word_lm(small("nmt"))


if __name__ == "__main__":
    unittest.main()
