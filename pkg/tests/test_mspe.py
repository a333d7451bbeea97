import numpy as np
import pytest
import torch

from lumiflow.mspe import (
    MspeConfig,
    MultiSignalEncoding,
    apply_mspe,
    build_rotation,
    eval_lens_from_tags,
    ntk_scale_base,
    ntk_scale_frequencies,
    rotary_inv_freq,
)
from lumiflow.tokenizer import Tags


def make_tags(rng, n, w_max=16, h_max=16, t_max=6):
    return Tags(
        w=rng.integers(0, w_max, n),
        h=rng.integers(0, h_max, n),
        t=rng.integers(0, t_max, n),
        c=rng.integers(0, 5, n),  # condition types, no output role here
        r=np.zeros(n, dtype=np.int64),
    )


def shifted(tags, axis, delta):
    d = {k: np.asarray(getattr(tags, k)).copy() for k in ("w", "h", "t", "c", "r")}
    d[axis] = d[axis] + delta
    return Tags(**d)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="sum"):
            MspeConfig(head_dim=32, dims={"w": 12, "h": 12, "t": 4})
        with pytest.raises(ValueError, match="even"):
            MspeConfig(head_dim=31, dims={"w": 12, "h": 12, "t": 7})
        with pytest.raises(ValueError, match="axes"):
            MspeConfig(head_dim=24, dims={"w": 12, "h": 12})

    def test_default_allocation(self):
        cfg = MspeConfig.default_for(32)
        assert sum(cfg.dims.values()) == 32
        assert all(d % 2 == 0 for d in cfg.dims.values())


class TestNtk:
    def test_identity_at_train_length(self):
        cfg = MspeConfig()
        a = ntk_scale_frequencies(cfg, 16, 16, "w")
        b = rotary_inv_freq(cfg.dims["w"], cfg.base)
        assert np.array_equal(a, b)  # bitwise

    def test_double_length_d8(self):
        cfg = MspeConfig()
        assert cfg.dims["t"] == 8
        scaled = ntk_scale_frequencies(cfg, 12, 6, "t")
        expected = rotary_inv_freq(8, 10000.0 * 2.0 ** (8.0 / 6.0))
        assert np.allclose(scaled, expected, rtol=0, atol=0)

    def test_shorter_eval_unchanged(self):
        assert ntk_scale_base(10000.0, 4, 16, 8) == 10000.0

    def test_small_dim_rejected(self):
        with pytest.raises(ValueError, match="dim > 2"):
            ntk_scale_base(10000.0, 32, 16, 2)

    def test_invalid_lengths(self):
        with pytest.raises(ValueError):
            ntk_scale_base(10000.0, 0, 16, 8)


class TestRelativePhase:
    @torch.no_grad()
    def test_joint_translation_invariance_all_axes(self):
        cfg = MspeConfig()
        mspe = MultiSignalEncoding(cfg).double()
        rng = np.random.default_rng(0)
        for axis, room in (("w", 100), ("h", 100), ("t", 100)):
            for trial in range(50):
                tags = make_tags(rng, 2)
                delta = int(rng.integers(1, room))
                q = torch.tensor(rng.normal(size=(2, cfg.head_dim)), dtype=torch.float64)
                base_q = mspe(q, tags)
                logit_base = float(base_q[0] @ base_q[1])
                moved = shifted(tags, axis, delta)
                mv_q = mspe(q, moved)
                logit_moved = float(mv_q[0] @ mv_q[1])
                assert abs(logit_base - logit_moved) < 1e-5, (axis, trial)

    def test_zero_positions_mean_no_rotation(self):
        cfg = MspeConfig()
        rng = np.random.default_rng(1)
        tags = Tags(
            w=np.zeros(3, dtype=np.int64),
            h=np.zeros(3, dtype=np.int64),
            t=np.zeros(3, dtype=np.int64),
            c=np.array([0, 1, 2]),
            r=np.zeros(3, dtype=np.int64),
        )
        x = torch.tensor(rng.normal(size=(3, cfg.head_dim)), dtype=torch.float64)
        out = apply_mspe(x, tags, cfg)  # no additive tables
        assert torch.allclose(out, x, atol=1e-15)

    @torch.no_grad()
    def test_condition_embeddings_distinguish_types(self):
        cfg = MspeConfig()
        mspe = MultiSignalEncoding(cfg).double()
        rng = np.random.default_rng(2)
        x = torch.tensor(rng.normal(size=(2, cfg.head_dim)), dtype=torch.float64)
        tags_a = Tags(w=np.zeros(2, np.int64), h=np.zeros(2, np.int64), t=np.zeros(2, np.int64),
                      c=np.array([0, 1]), r=np.zeros(2, np.int64))
        tags_b = Tags(w=np.zeros(2, np.int64), h=np.zeros(2, np.int64), t=np.zeros(2, np.int64),
                      c=np.array([1, 0]), r=np.zeros(2, np.int64))
        qa = mspe(x, tags_a)
        qb = mspe(x, tags_b)
        logit_a = float(qa[0] @ qa[1])
        logit_b = float(qb[0] @ qb[1])
        assert abs(logit_a - logit_b) > 1e-8

    def test_ntk_engages_only_beyond_train_length(self):
        cfg = MspeConfig(train_lens={"w": 4, "h": 4, "t": 6})
        rng = np.random.default_rng(3)
        tags = make_tags(rng, 4, w_max=4, h_max=4)
        inside = build_rotation(tags, cfg, eval_lens=None)
        explicit = build_rotation(tags, cfg, eval_lens={"w": 4, "h": 4, "t": 6})
        assert torch.equal(inside[0], explicit[0])
        wide = build_rotation(tags, cfg, eval_lens={"w": 16})
        assert not torch.equal(inside[0], wide[0])

    def test_eval_lens_from_tags(self):
        rng = np.random.default_rng(4)
        tags = make_tags(rng, 10, w_max=9, h_max=3, t_max=6)
        lens = eval_lens_from_tags(tags, MspeConfig())
        assert lens["w"] == int(np.max(tags.w)) + 1
        assert lens["h"] == int(np.max(tags.h)) + 1


class TestRotate:
    def test_dim_mismatch_rejected(self):
        cfg = MspeConfig()
        tags = make_tags(np.random.default_rng(0), 2)
        with pytest.raises(ValueError, match="head dim"):
            apply_mspe(torch.zeros(2, 16), tags, cfg)

    def test_preserves_dtype_and_norm(self):
        cfg = MspeConfig()
        rng = np.random.default_rng(5)
        tags = make_tags(rng, 8)
        x = torch.tensor(rng.normal(size=(8, cfg.head_dim)), dtype=torch.float64)
        out = apply_mspe(x, tags, cfg)
        assert out.dtype == torch.float64
        # rotations are norm-preserving
        assert torch.allclose(out.norm(dim=-1), x.norm(dim=-1), atol=1e-12)
