import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmitosis.tensor import AdamConfig, HuberConfig, Tensor, adam_step, huber_loss
from uvmitosis.uvnet import (
    UVNetConfig,
    VBlockConfig,
    build_uvnet,
    load_checkpoint,
    save_checkpoint,
    uvnet_forward,
    vblock_forward,
)

from oracles import vblock_unrolled


class TestVBlockConfig:
    def test_f16_trace(self):
        assert VBlockConfig(16).channel_trace() == [16, 20, 24, 28, 32]
        assert VBlockConfig(16).k == 4

    def test_small(self):
        assert VBlockConfig(4).out_channels == 8

    @pytest.mark.parametrize("f,k", [(6, None), (16, 3), (0, None)])
    def test_invalid(self, f, k):
        with pytest.raises(ValueError):
            VBlockConfig(f, k)


def _vblock_weights(f, seed=0):
    cfg = UVNetConfig(in_channels=f, base_f=f, depth=1)
    return build_uvnet(cfg, seed)


class TestVBlockForward:
    @pytest.mark.parametrize("f", [4, 8, 16])
    def test_channel_doubling(self, rng, f):
        w = _vblock_weights(f)
        out = vblock_forward(Tensor(rng.standard_normal((1, f, 6, 6))), VBlockConfig(f), w, "enc0")
        assert out.shape == (1, 2 * f, 6, 6)

    def test_zero_weights_pass_input_through(self, rng):
        w = _vblock_weights(4)
        for p in w:
            p.data[...] = 0
        x = rng.standard_normal((2, 4, 5, 5))
        out = vblock_forward(Tensor(x), VBlockConfig(4), w, "enc0").data
        np.testing.assert_array_equal(out[:, :4], x)
        assert not out[:, 4:].any()

    def test_against_stage_unrolled_oracle(self, rng):
        w = _vblock_weights(8, seed=3)
        x = rng.standard_normal((2, 8, 6, 7))
        out = vblock_forward(Tensor(x), VBlockConfig(8), w, "enc0").data
        np.testing.assert_allclose(out, vblock_unrolled(x, w.params, "enc0", 8), rtol=1e-10, atol=1e-10)

    def test_channel_mismatch(self, rng):
        w = _vblock_weights(4)
        with pytest.raises(ValueError, match="expects 4 input channels"):
            vblock_forward(Tensor(np.zeros((1, 5, 4, 4))), VBlockConfig(4), w, "enc0")


def hand_count_depth1_f4() -> int:
    """Parameter count for in=3, out=2, base_f=4, depth=1, written out by hand."""
    def conv(o, i, k):
        return o * i * k * k + o

    def vblock(f):
        k = f // 4
        return sum(conv(f, f + s * k, 1) + conv(k, f, 3) for s in range(4))

    stem = conv(4, 3, 3)            # 112
    enc0 = vblock(4)                # 252
    mid = vblock(8)                 # 968
    reduce0 = conv(4, 16 + 8, 1)    # 100: upsampled mid output (16) + enc0 skip (8)
    dec0 = vblock(4)                # 252
    head = conv(2, 8, 1)            # 18
    return stem + enc0 + mid + reduce0 + dec0 + head


class TestBuild:
    def test_param_count_hand(self):
        w = build_uvnet(UVNetConfig(base_f=4, depth=1))
        assert hand_count_depth1_f4() == 1702
        assert w.num_parameters() == 1702

    def test_seed_determinism(self):
        a = build_uvnet(UVNetConfig(base_f=8, depth=2, seed=5))
        b = build_uvnet(UVNetConfig(base_f=8, depth=2, seed=5))
        c = build_uvnet(UVNetConfig(base_f=8, depth=2, seed=6))
        assert list(a.params) == list(b.params)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a.params)
        assert not all(np.array_equal(a[n].data, c[n].data) for n in a.params)

    def test_names_unique_and_cover_topology(self):
        w = build_uvnet(UVNetConfig(base_f=8, depth=2))
        names = list(w.params)
        assert len(names) == len(set(names))
        for prefix in ("stem", "enc0.s0", "enc1.s3", "mid.s0", "dec1.reduce", "dec0.s3", "head"):
            assert any(n.startswith(prefix) for n in names), prefix

    def test_he_uniform_bounds(self):
        w = build_uvnet(UVNetConfig(base_f=8, depth=1))
        stem = w["stem.weight"].data
        assert np.abs(stem).max() <= np.sqrt(6 / 27)
        assert not w["stem.bias"].data.any()

    @pytest.mark.parametrize("kw", [{"base_f": 6}, {"depth": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            UVNetConfig(**kw)


class TestForward:
    def test_shape_contract(self, rng):
        w = build_uvnet(UVNetConfig(base_f=8, depth=2))
        out = uvnet_forward(rng.standard_normal((1, 3, 64, 64)), w)
        assert out.shape == (1, 2, 64, 64)
        assert np.isfinite(out.data).all()

    def test_zero_in_zero_weights_zero_out(self):
        w = build_uvnet(UVNetConfig(base_f=4, depth=2))
        for p in w:
            p.data[...] = 0
        assert not uvnet_forward(np.zeros((1, 3, 16, 16)), w).data.any()

    @settings(max_examples=8, deadline=None)
    @given(depth=st.integers(1, 2), mh=st.integers(1, 3), mw=st.integers(1, 3), n=st.integers(1, 2))
    def test_output_matches_input_size(self, depth, mh, mw, n):
        w = build_uvnet(UVNetConfig(base_f=4, depth=depth))
        h, wd = mh * 2**depth, mw * 2**depth
        out = uvnet_forward(np.random.default_rng(0).standard_normal((n, 3, h, wd)), w)
        assert out.shape == (n, 2, h, wd)

    def test_indivisible_names_level(self):
        w = build_uvnet(UVNetConfig(base_f=4, depth=2))
        with pytest.raises(ValueError, match="level 1"):
            uvnet_forward(np.zeros((1, 3, 10, 16)), w)
        with pytest.raises(ValueError, match="level 0"):
            uvnet_forward(np.zeros((1, 3, 9, 16)), w)

    def test_every_parameter_receives_gradient(self, rng):
        w = build_uvnet(UVNetConfig(base_f=4, depth=2, seed=1))
        loss = huber_loss(uvnet_forward(rng.standard_normal((2, 3, 16, 16)), w), rng.random((2, 2, 16, 16)))
        loss.backward()
        dead = [n for n, p in w.params.items() if p.grad is None or not p.grad.any()]
        assert dead == []

    def test_overfit_single_patch(self, rng):
        w = build_uvnet(UVNetConfig(base_f=8, depth=2, seed=0))
        x = rng.standard_normal((1, 3, 32, 32))
        yy, xx = np.mgrid[0:32, 0:32]
        t = np.zeros((1, 2, 32, 32))
        t[0, 0] = np.exp(-((xx - 10) ** 2 + (yy - 20) ** 2) / 18)
        t[0, 1] = np.exp(-((xx - 22) ** 2 + (yy - 8) ** 2) / 18)
        cfg = AdamConfig(1e-3)
        losses = []
        for _ in range(30):
            loss = huber_loss(uvnet_forward(x, w), t, HuberConfig())
            losses.append(loss.item())
            loss.backward()
            adam_step(w.parameters(), cfg)
        assert losses[-1] <= 0.5 * losses[0]

    def test_float32_switch(self, rng):
        w = build_uvnet(UVNetConfig(base_f=4, depth=1)).astype(np.float32)
        out = uvnet_forward(rng.standard_normal((1, 3, 8, 8)).astype(np.float32), w)
        assert out.dtype == np.float32


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        w = build_uvnet(UVNetConfig(base_f=4, depth=2, seed=9))
        save_checkpoint(w, tmp_path / "ck.json", {"epoch": 3})
        w2, extra = load_checkpoint(tmp_path / "ck.json")
        assert extra == {"epoch": 3}
        assert w2.config == w.config
        assert list(w2.params) == list(w.params)
        x = rng.standard_normal((1, 3, 8, 8))
        np.testing.assert_array_equal(uvnet_forward(x, w).data, uvnet_forward(x, w2).data)

    def test_shape_mismatch_rejected(self, tmp_path):
        import json

        w = build_uvnet(UVNetConfig(base_f=4, depth=1))
        save_checkpoint(w, tmp_path / "ck.json")
        doc = json.loads((tmp_path / "ck.json").read_text())
        doc["config"]["base_f"] = 8
        (tmp_path / "ck.json").write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="shape"):
            load_checkpoint(tmp_path / "ck.json")

    def test_version_checked(self, tmp_path):
        (tmp_path / "ck.json").write_text('{"format": "uvmitosis-checkpoint", "version": 99}')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(tmp_path / "ck.json")
