"""Architecture assembly, attention pooling, alignment, checkpoints."""

import numpy as np
import pytest

from prosodyintent import (ModelCheckpoint, align_frames, build_model,
                           grad_check, load_checkpoint, sap_forward,
                           save_checkpoint)
from prosodyintent import autodiff as ad
from prosodyintent.autodiff import Tensor
from prosodyintent.checkpoint import CheckpointError


def rand_inputs(rng, t=10):
    mel = rng.normal(-5.0, 3.0, size=(t, 80)).astype(np.float32)
    pros = rng.normal(size=(t, 6)).astype(np.float32)
    return mel, pros


class TestSapForward:
    def test_single_frame(self):
        feats = Tensor(np.array([[1.0, 2.0, 3.0]]))
        w = Tensor(np.array([[0.5], [0.1], [-0.2]]))
        pooled, alpha = sap_forward(feats, feats, w)
        assert np.allclose(alpha.data, [1.0])
        assert np.allclose(pooled.data, feats.data)

    def test_zero_weights_give_frame_mean(self):
        rng = np.random.default_rng(0)
        feats = Tensor(rng.normal(size=(7, 4)))
        w = Tensor(np.zeros((4, 1)))
        pooled, alpha = sap_forward(feats, feats, w)
        assert np.allclose(alpha.data, 1.0 / 7, atol=1e-7)
        assert np.allclose(pooled.data[0], feats.data.mean(axis=0), atol=1e-6)

    def test_saturated_key_picks_single_row(self):
        rng = np.random.default_rng(1)
        feats = Tensor(rng.normal(size=(5, 3)).astype(np.float64))
        keys = np.zeros((5, 1))
        keys[2, 0] = 50.0
        pooled, alpha = sap_forward(feats, Tensor(keys), Tensor(np.ones((1, 1))))
        assert np.abs(pooled.data[0] - feats.data[2]).max() < 1e-6

    def test_row_mismatch_instructs_alignment(self):
        with pytest.raises(ValueError, match="align"):
            sap_forward(Tensor(np.zeros((4, 2))), Tensor(np.zeros((3, 2))),
                        Tensor(np.zeros((2, 1))))

    def test_alpha_sums_to_one_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            t = int(rng.integers(1, 30))
            feats = Tensor(rng.normal(size=(t, 4)))
            w = Tensor(rng.normal(size=(4, 1)))
            _, alpha = sap_forward(feats, feats, w)
            assert abs(float(alpha.data.sum()) - 1.0) < 1e-6
            assert (alpha.data >= 0).all()

    def test_shift_invariance_of_key_scores(self):
        rng = np.random.default_rng(3)
        feats = Tensor(rng.normal(size=(6, 4)))
        keys = rng.normal(size=(6, 2))
        w = Tensor(np.array([[0.7], [-0.3]]))
        _, a1 = sap_forward(feats, Tensor(keys), w)
        # Shifting every score by a constant: add c along the direction that
        # w maps to 1.
        shifted = keys + np.array([1.0, -1.0]) * 5.0 / (0.7 + 0.3)
        _, a2 = sap_forward(feats, Tensor(shifted), w)
        assert np.abs(a1.data - a2.data).max() < 1e-6


class TestAlignFrames:
    def test_identity(self):
        x = np.arange(8.0).reshape(4, 2)
        assert align_frames(x, 4) is x

    def test_pairwise_means(self):
        x = np.array([[1.0], [3.0], [5.0], [7.0]])
        assert np.allclose(align_frames(x, 2), [[2.0], [6.0]])

    def test_odd_tail_dropped(self):
        x = np.arange(499.0)[:, None]
        out = align_frames(x, 249)
        assert out.shape == (249, 1)
        assert out[-1, 0] == pytest.approx((496.0 + 497.0) / 2)

    def test_odd_input_to_ceil_target_keeps_tail(self):
        x = np.array([[1.0], [3.0], [5.0]])
        out = align_frames(x, 2)  # stride-2 'same' encoders produce ceil(T/2)
        assert np.allclose(out, [[2.0], [5.0]])

    def test_ratio_outside_bounds_rejected(self):
        with pytest.raises(ValueError, match="ratio"):
            align_frames(np.zeros((10, 2)), 3)
        with pytest.raises(ValueError, match="ratio"):
            align_frames(np.zeros((2, 2)), 5)
        with pytest.raises(ValueError, match="pairwise"):
            align_frames(np.zeros((10, 2)), 7)

    def test_tensor_path_differentiable(self):
        x = Tensor(np.random.default_rng(4).normal(size=(6, 3)), requires_grad=True)
        err = grad_check(lambda: ad.mse(align_frames(x, 3), Tensor(np.zeros((3, 3)))), [x])
        assert err < 1e-3


class TestBuildModel:
    def test_teacher_parameter_count_formula(self):
        h, k = 64, 8
        model = build_model("teacher", n_intents=k, seed=0, hidden_channels=h)
        expected = (6 * h * 5 + h) + 2 * (h * h * 5 + h) + h + (h * k + k)
        assert model.num_params() == expected

    def test_same_seed_identical_parameters(self):
        a = build_model("student", n_intents=8, seed=3)
        b = build_model("student", n_intents=8, seed=3)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_different_seed_differs(self):
        a = build_model("student", n_intents=8, seed=3)
        b = build_model("student", n_intents=8, seed=4)
        assert any(not np.array_equal(a.params[n].data, b.params[n].data)
                   for n in a.params)

    def test_student_and_plain_share_initialization(self):
        a = build_model("student", n_intents=8, seed=5)
        b = build_model("baseline_plain", n_intents=8, seed=5)
        assert set(a.params) == set(b.params)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_local_concat_lstm_hidden_matches_paper_scale(self):
        model = build_model("baseline_local_concat", n_intents=8, seed=0,
                            lstm_hidden=256, hidden_channels=64)
        assert model.params["lstm.l0.wx"].data.shape == (64 + 6, 4 * 256)
        assert model.params["lstm.l1.wh"].data.shape == (256, 4 * 256)

    def test_full_width_prosody_encoder_channel_dimension(self):
        model = build_model("teacher", n_intents=8, seed=0, hidden_channels=512)
        pros = np.random.default_rng(0).normal(size=(9, 6)).astype(np.float32)
        _, zf, _, _ = model.forward(prosody=pros)
        assert zf.data.shape == (9, 512)

    def test_prosody_attention_differs_only_in_key_width(self):
        plain = build_model("baseline_plain", n_intents=8, seed=0)
        pa = build_model("baseline_plain", n_intents=8, seed=0, prosody_attention=True)
        assert set(plain.params) == set(pa.params)
        diffs = [n for n in plain.params
                 if plain.params[n].data.shape != pa.params[n].data.shape]
        assert diffs == ["sap.w"]
        assert pa.params["sap.w"].data.shape == (6, 1)

    def test_unknown_arch_rejected(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            build_model("transformer", n_intents=8, seed=0)

    def test_bad_intent_count_rejected(self):
        with pytest.raises(ValueError, match="n_intents"):
            build_model("teacher", n_intents=1, seed=0)


class TestForward:
    def test_prosody_encoder_preserves_frames(self):
        rng = np.random.default_rng(5)
        model = build_model("teacher", n_intents=4, seed=0, hidden_channels=8)
        for t in (1, 2, 9, 57):
            _, zf, alpha, _ = model.forward(prosody=rng.normal(size=(t, 6)).astype(np.float32))
            assert zf.data.shape[0] == t
            assert alpha.data.shape == (t,)

    def test_acoustic_downsample_frame_count(self):
        rng = np.random.default_rng(6)
        model = build_model("student", n_intents=4, seed=0, hidden_channels=8,
                            downsample_factor=2)
        mel, _ = rand_inputs(rng, t=498)
        _, zf, _, _ = model.forward(mel=mel)
        assert zf.data.shape[0] == 249
        model1 = build_model("student", n_intents=4, seed=0, hidden_channels=8,
                             downsample_factor=1)
        _, zf1, _, _ = model1.forward(mel=mel)
        assert zf1.data.shape[0] == 498

    def test_zero_prosody_zero_bias_gives_zero_features(self):
        model = build_model("teacher", n_intents=4, seed=0, hidden_channels=8)
        _, zf, _, _ = model.forward(prosody=np.zeros((5, 6), dtype=np.float32))
        assert np.allclose(zf.data, 0.0)  # biases init to zero, gelu(0)=0

    def test_channel_mismatch_rejected(self):
        model = build_model("teacher", n_intents=4, seed=0, hidden_channels=8)
        with pytest.raises(ValueError, match="channels"):
            model.forward(prosody=np.zeros((5, 5), dtype=np.float32))

    def test_prosody_attention_ignores_acoustic_perturbation(self):
        rng = np.random.default_rng(7)
        model = build_model("baseline_plain", n_intents=4, seed=0, hidden_channels=8,
                            prosody_attention=True)
        mel, pros = rand_inputs(rng, t=12)
        _, _, a1, _ = model.forward(mel=mel, prosody=pros)
        _, _, a2, _ = model.forward(mel=mel + rng.normal(size=mel.shape).astype(np.float32),
                                    prosody=pros)
        assert a1.data.tobytes() == a2.data.tobytes()

    def test_feature_mask_zeroes_pitch_channels(self):
        rng = np.random.default_rng(8)
        masked = build_model("teacher", n_intents=4, seed=0, hidden_channels=8,
                             feature_mask=["e1", "e2", "e3"])
        pros = rng.normal(size=(6, 6)).astype(np.float32)
        out_masked = masked.forward(prosody=pros)[0].data
        pros_zeroed = pros.copy()
        pros_zeroed[:, :3] = 0.0
        full = build_model("teacher", n_intents=4, seed=0, hidden_channels=8)
        out_manual = full.forward(prosody=pros_zeroed)[0].data
        assert np.allclose(out_masked, out_manual)

    def test_mask_excludes_frames_from_attention(self):
        rng = np.random.default_rng(9)
        model = build_model("teacher", n_intents=4, seed=0, hidden_channels=8)
        pros = rng.normal(size=(8, 6)).astype(np.float32)
        mask = np.array([True] * 5 + [False] * 3)
        _, _, alpha, _ = model.forward(prosody=pros, mask=mask)
        assert np.allclose(alpha.data[5:], 0.0)
        assert abs(float(alpha.data.sum()) - 1.0) < 1e-6


ARCH_CASES = [
    ("teacher", {}),
    ("student", {}),
    ("baseline_plain", {}),
    ("baseline_local_concat", {}),
    ("baseline_plain", {"prosody_attention": True}),
]


@pytest.mark.parametrize("arch,extra", ARCH_CASES)
def test_every_architecture_ce_gradient(arch, extra):
    rng = np.random.default_rng(hash(arch) % 2**32)
    model = build_model(arch, n_intents=3, seed=1, hidden_channels=4,
                        lstm_hidden=3, **extra)
    mel, pros = rand_inputs(rng, t=10)

    def loss():
        logits, _, _, _ = model.forward(mel=mel, prosody=pros)
        return ad.cross_entropy(logits, 1)
    err = grad_check(loss, list(model.params.values()), max_entries=40)
    assert err < 1e-3, f"{arch} {extra}: {err}"


class TestCheckpoint:
    def _ckpt(self):
        model = build_model("teacher", n_intents=4, seed=2, hidden_channels=8)
        return ModelCheckpoint.from_model(model, metadata={
            "epoch": 3, "best_validation_accuracy": 0.75, "seed": 2})

    def test_round_trip_byte_identical(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self._ckpt(), path)
        first = path.read_bytes()
        reloaded = load_checkpoint(path)
        save_checkpoint(reloaded, path)
        assert path.read_bytes() == first

    def test_round_trip_preserves_values(self, tmp_path):
        ckpt = self._ckpt()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.metadata == ckpt.metadata
        assert loaded.config == ckpt.config
        for name, arr in ckpt.params.items():
            assert np.array_equal(loaded.params[name], arr)
        model = loaded.to_model()
        assert model.n_intents == 4

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self._ckpt(), path)
        path.write_bytes(path.read_bytes()[:-50])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(self._ckpt(), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version mismatch"):
            load_checkpoint(path)

    def test_corrupted_shape_names_parameter(self, tmp_path):
        ckpt = self._ckpt()
        ckpt.params["sap.w"] = ckpt.params["sap.w"][:4]
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        with pytest.raises(CheckpointError, match="sap.w"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)
