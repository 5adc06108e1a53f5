import json
import math

import numpy as np
import pytest

from conftest import VARIANTS, small_model, tiny_dataset
from mlas.checkpoint import dumps, from_dict, load_checkpoint, save_checkpoint, to_dict
from mlas.data import AttributedSequence, EncodedSequence
from mlas.errors import ConfigError, ParseError, ShapeError
from mlas.fusion import FusionParams, FusionVariant, embed, fusion_forward, init_fusion, output_dim
from mlas.gradcheck import check_instance, random_instance
from mlas.layers import AttNetParams, init_seqnet, seqnet_forward
from mlas.linalg import make_rng


def _zero(params):
    for arr in params.tensors().values():
        arr[...] = 0.0
    return params


def _item(rng, u, r, T, length=None, pid="p"):
    length = T if length is None else length
    m = np.zeros((T, r))
    m[np.arange(length), rng.integers(0, r, size=length)] = 1.0
    return AttributedSequence(pid, rng.normal(size=u), EncodedSequence(m, length))


class TestVariantTag:
    def test_parse(self):
        assert FusionVariant.parse("Seq-Centric") is FusionVariant.SEQ_CENTRIC
        assert FusionVariant.parse(FusionVariant.BALANCED) is FusionVariant.BALANCED

    def test_unknown_lists_valid(self):
        with pytest.raises(ConfigError, match="balanced, att_centric, seq_centric"):
            FusionVariant.parse("hybrid")


class TestForward:
    def test_balanced_all_zero(self, dataset):
        m = _zero(small_model("balanced", dataset))
        for p in dataset:
            np.testing.assert_array_equal(embed(m, p), np.zeros(4))

    def test_att_centric_ignores_sequence_when_block_zeroed(self, dataset):
        m = small_model("att_centric", dataset)
        m.attnet.weights[0][:, dataset.u:] = 0.0
        rng = make_rng(1)
        a = _item(rng, dataset.u, dataset.r, dataset.T)
        b = AttributedSequence("q", a.attributes, _item(rng, dataset.u, dataset.r, dataset.T).sequence)
        np.testing.assert_array_equal(embed(m, a), embed(m, b))

    def test_seq_centric_length_one_oracle(self, dataset):
        m = small_model("seq_centric", dataset, seed=3)
        p = _item(make_rng(2), dataset.u, dataset.r, dataset.T, length=1)
        # AttNet by hand
        v = list(p.attributes)
        for W, b in zip(m.attnet.weights, m.attnet.biases):
            v = [math.tanh(sum(W[i, j] * v[j] for j in range(len(v))) + b[i]) for i in range(len(b))]
        # one LSTM step from zero state by hand
        x = p.sequence.matrix[0]
        sn = m.seqnet
        expected = []
        for k in range(sn.hidden):
            pre = {g: float(sn.gate("W", g)[k] @ x + sn.gate("b", g)[k]) for g in "ifoc"}
            i = 1 / (1 + math.exp(-pre["i"]))
            o = 1 / (1 + math.exp(-pre["o"]))
            c = i * math.tanh(pre["c"])
            expected.append(o * math.tanh(c) + v[k])
        np.testing.assert_allclose(embed(m, p), expected, rtol=1e-13, atol=1e-15)

    def test_seq_centric_reduces_to_seqnet(self, dataset):
        m = small_model("seq_centric", dataset)
        for W, b in zip(m.attnet.weights, m.attnet.biases):
            W[...] = 0.0
            b[...] = 0.0
        for p in dataset:
            np.testing.assert_array_equal(embed(m, p), seqnet_forward(m.seqnet, p.sequence)[0])

    def test_seq_centric_offset_only_at_first_step(self, dataset):
        # shifting V changes h1; later steps see it only through the recursion
        m = small_model("seq_centric", dataset)
        p = _item(make_rng(4), dataset.u, dataset.r, dataset.T, length=2)
        v = np.tanh(m.attnet.weights[1] @ np.tanh(m.attnet.weights[0] @ p.attributes))
        sn = m.seqnet
        d = sn.hidden
        z1 = sn.W @ p.sequence.matrix[0] + sn.b
        c1 = 1 / (1 + np.exp(-z1[:d])) * np.tanh(z1[3 * d:])
        h1 = 1 / (1 + np.exp(-z1[2 * d:3 * d])) * np.tanh(c1) + v
        z2 = sn.W @ p.sequence.matrix[1] + sn.U @ h1 + sn.b
        sig = 1 / (1 + np.exp(-z2[:3 * d]))
        c2 = sig[d:2 * d] * c1 + sig[:d] * np.tanh(z2[3 * d:])
        h2 = sig[2 * d:] * np.tanh(c2)
        np.testing.assert_allclose(embed(m, p), h2, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("block", ["attributes", "sequence"])
    def test_balanced_block_zeroing(self, dataset, block):
        m = small_model("balanced", dataset)
        d_M = m.attnet.output_dim
        if block == "sequence":
            m.W_z[:, d_M:] = 0.0
        else:
            m.W_z[:, :d_M] = 0.0
        rng = make_rng(6)
        a = _item(rng, dataset.u, dataset.r, dataset.T)
        other = _item(rng, dataset.u, dataset.r, dataset.T)
        if block == "sequence":
            b = AttributedSequence("b", a.attributes, other.sequence)
        else:
            b = AttributedSequence("b", other.attributes, a.sequence)
        np.testing.assert_array_equal(embed(m, a), embed(m, b))

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_deterministic(self, dataset, variant):
        m1 = small_model(variant, dataset, seed=8)
        m2 = small_model(variant, dataset, seed=8)
        for p in dataset:
            np.testing.assert_array_equal(embed(m1, p), embed(m2, p))

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_padding_invariance(self, variant):
        ds = tiny_dataset(seed=2)
        m = small_model(variant, ds, seed=2)
        for p in ds:
            padded = AttributedSequence(p.id, p.attributes, p.sequence.padded(ds.T + 3))
            np.testing.assert_array_equal(embed(m, p), embed(m, padded))

    def test_shape_mismatch(self, dataset):
        m = small_model("balanced", dataset)
        bad = _item(make_rng(0), dataset.u + 1, dataset.r, 2)
        with pytest.raises(ShapeError):
            fusion_forward(m, bad)


class TestOutputDim:
    def test_balanced(self):
        rng = make_rng(0)
        m = FusionParams("balanced", AttNetParams([np.ones((8, 3))], [np.zeros(8)]), init_seqnet(2, 8, rng),
                         np.zeros((10, 16)), np.zeros(10))
        assert output_dim(m) == 10

    def test_att_centric(self):
        m = init_fusion("att_centric", 5, 3, [6, 8], 4, seed=0)
        assert output_dim(m) == 8
        assert m.attnet.input_dim == 5 + 4

    def test_seq_centric(self):
        m = init_fusion("seq_centric", 20, 3, [12], 12, seed=0)
        assert output_dim(m) == 12


class TestWiringValidation:
    def test_balanced_needs_fusion_layer(self):
        rng = make_rng(0)
        with pytest.raises(ConfigError):
            FusionParams("balanced", AttNetParams([np.ones((2, 3))], [np.zeros(2)]), init_seqnet(2, 2, rng))

    def test_fusion_width(self):
        rng = make_rng(0)
        with pytest.raises(ConfigError):
            FusionParams("balanced", AttNetParams([np.ones((2, 3))], [np.zeros(2)]), init_seqnet(2, 2, rng),
                         np.zeros((4, 5)), np.zeros(4))

    def test_only_balanced_has_fusion_layer(self):
        rng = make_rng(0)
        with pytest.raises(ConfigError):
            FusionParams("seq_centric", AttNetParams([np.ones((2, 3))], [np.zeros(2)]), init_seqnet(2, 2, rng),
                         np.zeros((4, 4)), np.zeros(4))

    def test_seq_centric_width(self):
        with pytest.raises(ConfigError):
            init_fusion("seq_centric", 5, 3, [4], 6)

    def test_att_centric_input_width(self):
        rng = make_rng(0)
        with pytest.raises(ConfigError):
            FusionParams("att_centric", AttNetParams([np.ones((2, 6))], [np.zeros(2)]), init_seqnet(3, 4, rng),
                         attr_dim=3)

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            init_fusion("balanced", 5, 3, activation="sigmoid")


class TestGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_contrastive_gradients(self, variant, activation):
        for seed in range(4):
            errs = check_instance(random_instance(variant, seed, activation))
            assert max(errs.values()) < 1e-4, errs

    def test_instances_respect_size_limits(self):
        for variant in VARIANTS:
            for seed in range(10):
                inst = random_instance(variant, seed)
                m = inst.params
                assert m.attr_dim <= 5 and m.item_dim <= 4
                assert inst.left.sequence.matrix.shape[0] <= 4 and m.seqnet.hidden <= 6
                assert all(W.shape[0] <= 6 for W in m.attnet.weights)

    def test_corruption_is_detected(self):
        errs = check_instance(random_instance("balanced", 1), corrupt="fusion.W_z")
        assert errs["fusion.W_z"] > 1e-4


class TestCheckpoint:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_round_trip_bit_exact(self, tmp_path, dataset, variant):
        m = small_model(variant, dataset, seed=4)
        for arr in m.tensors().values():
            arr += make_rng(1).normal(size=arr.shape) / 3
        save_checkpoint(m, tmp_path / "m.json", config={"note": 1})
        back, config = load_checkpoint(tmp_path / "m.json")
        assert config == {"note": 1}
        assert back.variant is m.variant and back.activation == m.activation
        assert list(back.tensors()) == list(m.tensors())
        for k, v in m.tensors().items():
            np.testing.assert_array_equal(back.tensors()[k], v)
        assert dumps(back, {"note": 1}) == dumps(m, {"note": 1})

    def test_named_keys(self, dataset):
        doc = to_dict(small_model("balanced", dataset))
        assert {"attnet.layer1.W", "seqnet.W_i", "seqnet.U_c", "seqnet.b_o", "fusion.W_z"} <= set(doc["tensors"])
        assert doc["variant"] == "balanced"

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.json").write_text(json.dumps({"hello": 1}))
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "x.json")

    def test_truncated_tensors(self, dataset):
        doc = to_dict(small_model("balanced", dataset))
        del doc["tensors"]["seqnet.U_f"]
        with pytest.raises(ParseError):
            from_dict(doc)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{")
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "x.json")
