import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointdec import nn
from jointdec import tensor as T
from jointdec.errors import ConfigurationError, DimensionError

from conftest import check_grads


def build(spec, m, seed=0, **kw):
    return nn.build_multihead(spec, m, np.random.default_rng(seed), **kw)


class TestBuild:
    def test_single_head_is_plain_network(self, rng):
        net = build(nn.res_tiny(), 1)
        assert [k for k in net.params if k.startswith("head")] == [
            "head2.bn.gamma", "head2.bn.beta", "head2.fc.weight", "head2.fc.bias",
        ]
        outs = net.forward_all_heads(rng.random((4, 3, 16, 16)))
        assert len(outs) == 1 and outs[0].shape == (4, 3)

    @pytest.mark.parametrize("arch", ["res-tiny", "vgg-tiny"])
    def test_three_heads(self, rng, arch):
        net = build(nn.make_arch(arch), 3)
        outs = net.forward_all_heads(rng.random((5, 3, 16, 16)))
        assert [o.shape for o in outs] == [(5, 3)] * 3
        for o in outs:
            np.testing.assert_allclose(o.data.sum(axis=1), 1, atol=1e-12)

    def test_head_order(self):
        assert build(nn.res_tiny(), 3).head_parts == [2, 1, 0]
        assert build(nn.res_tiny(), 3, head_order="shallow-first").head_parts == [2, 0, 1]

    def test_too_many_heads(self):
        with pytest.raises(ConfigurationError):
            build(nn.res_tiny(), 4)

    def test_extra_heads_on_resnet18_layout(self):
        extra = nn.count_parameters(nn.resnet18_like(), 4) - nn.count_parameters(nn.resnet18_like(), 1)
        # three extra heads (bn + fc on 64/128/256 channels) ~ 0.01M
        assert extra == (2 * 64 + 64 * 10 + 10) + (2 * 128 + 128 * 10 + 10) + (2 * 256 + 256 * 10 + 10)
        assert abs(extra / 1e6 - 0.01) < 0.005

    def test_param_count_matches_layout(self):
        spec = nn.res_tiny()
        net = build(spec, 2)
        assert net.num_parameters() == sum(math.prod(s) for s in nn.parameter_shapes(spec, 2).values())

    def test_bad_input_shape(self, rng):
        with pytest.raises(DimensionError):
            build(nn.res_tiny(), 1).forward_all_heads(rng.random((2, 1, 16, 16)))

    def test_head_options(self, rng):
        spec = nn.res_tiny(head_options=nn.HeadOptions(use_batchnorm=False, use_activation=False))
        net = build(spec, 2)
        assert not any(k.startswith("head") and ".bn." in k for k in net.params)
        assert len(net.forward_all_heads(rng.random((2, 3, 16, 16)))) == 2

    def test_arch_dict_round_trip(self):
        spec = nn.scale_channels(nn.vgg_tiny(num_classes=10), 0.5)
        assert nn.ArchSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_arch(self):
        with pytest.raises(ConfigurationError):
            nn.make_arch("resnet-1000")


class TestScaling:
    def test_identity(self):
        spec = nn.res_tiny()
        assert nn.scale_channels(spec, 1.0) == spec

    @pytest.mark.parametrize("factor", [0.0, -0.5, 1.5])
    def test_invalid(self, factor):
        with pytest.raises(ConfigurationError):
            nn.scale_channels(nn.res_tiny(), factor)

    def test_round_half_up(self):
        assert nn.round_half_up(2.5) == 3 and nn.round_half_up(2.49) == 2

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0.05, 1.0), b=st.floats(0.05, 1.0))
    def test_monotonic(self, a, b):
        lo, hi = sorted((a, b))
        for spec in (nn.res_tiny(), nn.vgg_tiny()):
            assert nn.count_parameters(nn.scale_channels(spec, lo)) <= nn.count_parameters(nn.scale_channels(spec, hi))


class TestForward:
    def test_deterministic(self, rng):
        x = rng.random((3, 3, 16, 16))
        a = [o.data.tobytes() for o in build(nn.res_tiny(), 3, seed=5).forward_all_heads(x)]
        b = [o.data.tobytes() for o in build(nn.res_tiny(), 3, seed=5).forward_all_heads(x)]
        assert a == b

    @pytest.mark.parametrize("arch", ["res-tiny", "vgg-tiny"])
    def test_head_count_invariance(self, rng, arch):
        # adding auxiliary heads must not change the original classifier's output
        x = rng.random((4, 3, 16, 16))
        one = build(nn.make_arch(arch), 1, seed=3).forward_all_heads(x)[0].data
        three = build(nn.make_arch(arch), 3, seed=3).forward_all_heads(x)[0].data
        np.testing.assert_array_equal(one, three)

    def test_predict_proba_batches(self, rng):
        net = build(nn.res_tiny(), 2)
        x = rng.random((7, 3, 16, 16))
        full = [o.data for o in net.forward_all_heads(x)]
        chunked = net.predict_proba(x, batch_size=3)
        for a, b in zip(full, chunked):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
        assert [p.shape for p in net.predict_proba(x[:0])] == [(0, 3), (0, 3)]

    def test_state_round_trip(self, rng):
        a, b = build(nn.res_tiny(), 2, seed=1), build(nn.res_tiny(), 2, seed=2)
        a.forward_all_heads(rng.random((4, 3, 16, 16)), training=True)  # move running stats
        b.load_state_arrays(a.state_arrays())
        x = rng.random((3, 3, 16, 16))
        for oa, ob in zip(a.forward_all_heads(x), b.forward_all_heads(x)):
            np.testing.assert_array_equal(oa.data, ob.data)

    def test_state_shape_mismatch(self):
        a, b = build(nn.res_tiny(), 1), build(nn.scale_channels(nn.res_tiny(), 0.5), 1)
        with pytest.raises(DimensionError):
            b.load_state_arrays(a.state_arrays())

    def test_small_network_gradients(self, rng):
        spec = nn.res_tiny(widths=(3, 4, 5))
        net = build(spec, 3)
        x = rng.random((2, 3, 8, 8))
        labels = np.array([0, 2])
        state = {k: v.copy() for k, v in net.buffers.items()}

        def loss():
            net.buffers.update({k: v.copy() for k, v in state.items()})
            outs = net.forward_all_heads(x, training=True)
            total = None
            for o in outs:
                term = T.scale(T.sum(T.log(T.pick(o, labels))), -0.5)
                total = term if total is None else T.add(total, term)
            return total

        assert check_grads(loss, list(net.parameters()), rng, probes=3) < 1e-5
