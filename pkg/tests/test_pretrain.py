"""Masking, reconstruction loss, and pre-training loop tests."""

import numpy as np
import pytest

import sedlab.gradcore as gc
from sedlab.context import ContextConfig
from sedlab.encoder import EncoderConfig, PatchEncoder
from sedlab.errors import MaskError
from sedlab.gradcore import Tensor
from sedlab.nn import ParamSet
from sedlab.pretrain import (
    MaskSpec,
    PretrainConfig,
    ReconHead,
    apply_mask,
    masked_mse,
    pretrain_loop,
    sample_block_mask,
)


def spec_from_indices(indices, n_frames, block=10):
    indices = np.asarray(indices, dtype=np.int64)
    return MaskSpec(block, 0.5, n_frames, np.unique(indices // block), indices)


class TestSampleBlockMask:
    def test_exact_block_count(self):
        spec = sample_block_mask(40, 10, 0.75, np.random.default_rng(0))
        assert len(spec.block_ids) == 3
        assert len(spec.indices) == 30

    def test_full_ratio_masks_everything(self):
        spec = sample_block_mask(40, 10, 1.0, np.random.default_rng(1))
        assert len(spec.block_ids) == 4
        np.testing.assert_array_equal(spec.indices, np.arange(40))

    def test_partial_tail_block_is_maskable(self):
        for seed in range(50):
            spec = sample_block_mask(25, 10, 0.9, np.random.default_rng(seed))
            assert set(spec.block_ids) <= {0, 1, 2}
            if 2 in spec.block_ids:
                assert {20, 21, 22, 23, 24} <= set(spec.indices.tolist())

    def test_blocks_are_whole(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            t = int(rng.integers(10, 200))
            ratio = float(rng.uniform(0.1, 1.0))
            if ratio * t < 1:
                continue
            spec = sample_block_mask(t, 10, ratio, rng)
            expected = np.concatenate(
                [np.arange(b * 10, min((b + 1) * 10, t)) for b in spec.block_ids]
            ) if len(spec.block_ids) else np.empty(0, np.int64)
            np.testing.assert_array_equal(spec.indices, expected)

    def test_coverage_within_one_block_of_ratio(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            t = int(rng.integers(10, 400))
            ratio = float(rng.uniform(0.05, 1.0))
            if ratio * t < 1:
                continue
            spec = sample_block_mask(t, 10, ratio, rng)
            assert ratio - 10 / t <= spec.coverage <= ratio + 10 / t

    def test_uniform_block_selection(self):
        rng = np.random.default_rng(4)
        hits = np.zeros(10)
        draws = 10000
        for _ in range(draws):
            spec = sample_block_mask(100, 10, 0.5, rng)
            hits[spec.block_ids] += 1
        np.testing.assert_allclose(hits / draws, 0.5, atol=0.02)

    def test_deterministic_per_seed(self):
        a = sample_block_mask(200, 10, 0.75, np.random.default_rng(5))
        b = sample_block_mask(200, 10, 0.75, np.random.default_rng(5))
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_errors(self):
        with pytest.raises(MaskError):
            sample_block_mask(5, 10, 0.75, np.random.default_rng(0))
        with pytest.raises(MaskError):
            sample_block_mask(40, 10, 0.0, np.random.default_rng(0))
        with pytest.raises(MaskError):
            sample_block_mask(12, 10, 0.05, np.random.default_rng(0))  # masks < 1 frame


class TestApplyMask:
    def test_empty_mask_returns_equal_sequence(self):
        z = Tensor(np.random.default_rng(6).standard_normal((12, 4)))
        out = apply_mask(z, spec_from_indices([], 12), Tensor(np.ones(4)))
        np.testing.assert_array_equal(out.data, z.data)

    def test_full_mask_repeats_token(self):
        z = Tensor(np.random.default_rng(7).standard_normal((12, 4)))
        token = np.array([1.0, 2.0, 3.0, 4.0], np.float32)
        out = apply_mask(z, spec_from_indices(np.arange(12), 12), Tensor(token))
        np.testing.assert_array_equal(out.data, np.tile(token, (12, 1)))

    def test_unmasked_columns_bit_equal_and_input_untouched(self):
        rng = np.random.default_rng(8)
        z_data = rng.standard_normal((20, 4)).astype(np.float32)
        z = Tensor(z_data.copy())
        out = apply_mask(z, spec_from_indices([0, 1, 5], 20), Tensor(rng.standard_normal(4)))
        keep = np.setdiff1d(np.arange(20), [0, 1, 5])
        assert out.data[keep].tobytes() == z_data[keep].tobytes()
        assert z.data.tobytes() == z_data.tobytes()


class TestMaskedMse:
    def test_perfect_reconstruction_zero_loss(self):
        z = Tensor(np.random.default_rng(9).standard_normal((10, 3)))
        assert masked_mse(z, z, spec_from_indices([2, 3], 10)).item() == 0.0

    def test_hand_case(self):
        # C=1, T=2, mask {1}, errors [5, 2] -> only the masked 2^2 counts
        z = Tensor(np.zeros((2, 1), np.float32))
        z_hat = Tensor(np.array([[5.0], [2.0]], np.float32))
        assert masked_mse(z_hat, z, spec_from_indices([1], 2)).item() == 4.0

    def test_unmasked_perturbation_changes_nothing(self):
        rng = np.random.default_rng(10)
        z = Tensor(rng.standard_normal((16, 4)))
        z_hat = rng.standard_normal((16, 4)).astype(np.float32)
        spec = spec_from_indices([4, 5, 6, 7], 16)
        base = masked_mse(Tensor(z_hat), z, spec).item()
        perturbed = z_hat.copy()
        keep = np.setdiff1d(np.arange(16), spec.indices)
        perturbed[keep] += rng.standard_normal((len(keep), 4)).astype(np.float32)
        assert masked_mse(Tensor(perturbed), z, spec).item() == base

    def test_gradient_zero_exactly_at_unmasked_frames(self):
        rng = np.random.default_rng(11)
        z = Tensor(rng.standard_normal((12, 4)))
        z_hat = Tensor(rng.standard_normal((12, 4)), requires_grad=True)
        spec = spec_from_indices([0, 1, 2, 9], 12)
        with gc.tape():
            loss = masked_mse(z_hat, z, spec)
        gc.backward(loss)
        keep = np.setdiff1d(np.arange(12), spec.indices)
        assert (z_hat.grad[keep] == 0.0).all()
        assert (np.abs(z_hat.grad[spec.indices]) > 0).any()

    def test_mask_token_receives_gradient(self):
        rng = np.random.default_rng(12)
        z = Tensor(rng.standard_normal((12, 4)))
        token = Tensor(rng.standard_normal(4), requires_grad=True)
        spec = spec_from_indices([3, 4], 12)
        with gc.tape():
            masked = apply_mask(z, spec, token)
            loss = gc.sum(gc.mul(masked, masked))
        gc.backward(loss)
        assert np.abs(token.grad).sum() > 0

    def test_empty_mask_rejected(self):
        z = Tensor(np.zeros((4, 2), np.float32))
        with pytest.raises(MaskError):
            masked_mse(z, z, spec_from_indices([], 4))


def small_ctx():
    return ContextConfig(dim=32, blocks=2, heads=4, max_rel_dist=16)


class TestPretrainLoop:
    def test_single_clip_overfit(self):
        rng = np.random.default_rng(13)
        latents = [rng.standard_normal((50, 32)).astype(np.float32)]
        cfg = PretrainConfig(steps=200, batch_size=1, lr=1e-3, mask_ratio=0.5)
        result = pretrain_loop(latents, small_ctx(), cfg, seed=0)
        first = np.mean([v for _, v in result.curve[:10]])
        last = np.mean([v for _, v in result.curve[-10:]])
        assert last < 0.10 * first

    def test_rerun_reproduces_curve_bit_exactly(self):
        rng = np.random.default_rng(14)
        latents = [rng.standard_normal((40, 32)).astype(np.float32) for _ in range(3)]
        cfg = PretrainConfig(steps=20, batch_size=2, lr=1e-3)
        a = pretrain_loop(latents, small_ctx(), cfg, seed=1)
        b = pretrain_loop(latents, small_ctx(), cfg, seed=1)
        assert a.curve == b.curve

    def test_encoder_unchanged_by_pretraining(self):
        enc_ps = ParamSet(2)
        enc = PatchEncoder(EncoderConfig(dim=32, depth=1, heads=4), enc_ps, "encoder")
        rng = np.random.default_rng(15)
        mels = [rng.standard_normal((40, 128)).astype(np.float32) for _ in range(2)]
        latents = [enc.forward(m).data.copy() for m in mels]
        before = {n: p.data.tobytes() for n, p in enc_ps.params.items()}
        pretrain_loop(latents, small_ctx(), PretrainConfig(steps=10, batch_size=1), seed=3)
        after = {n: p.data.tobytes() for n, p in enc_ps.params.items()}
        assert before == after

    def test_only_expected_parameters_in_state(self):
        latents = [np.random.default_rng(16).standard_normal((40, 32)).astype(np.float32)]
        result = pretrain_loop(latents, small_ctx(), PretrainConfig(steps=2, batch_size=1), seed=4)
        prefixes = {name.split(".")[0] for name in result.state}
        assert prefixes == {"context", "recon", "mask_token"}

    def test_loss_csv_written(self, tmp_path):
        latents = [np.random.default_rng(17).standard_normal((40, 32)).astype(np.float32)]
        path = tmp_path / "loss.csv"
        pretrain_loop(
            latents, small_ctx(), PretrainConfig(steps=3, batch_size=1), seed=5, csv_path=path
        )
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) == 4


def test_recon_head_shape():
    ps = ParamSet(6)
    head = ReconHead(ps, 32)
    out = head(Tensor(np.zeros((7, 32), np.float32)))
    assert out.data.shape == (7, 32)
