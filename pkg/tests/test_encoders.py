"""Encoders: shape contract, initialisation statistics, weight sharing, differentiability."""
import numpy as np
import pytest

from floormatch.autodiff import Tensor, total
from floormatch.autodiff.gradcheck import finite_diff_check
from floormatch.autodiff.optim import Adam
from floormatch.encoders import Encoder, EncoderBank, EncoderConfig, encoder_bank
from floormatch.errors import DimensionError

SMALL = EncoderConfig(input_size=(16, 16), conv_blocks=((4, 1), (6, 1)), feature_dim=5)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestConfig:
    def test_tap_shapes(self):
        cfg = EncoderConfig()
        assert cfg.stages == ["conv1", "conv2", "conv3", "conv4", "fc6"]
        assert cfg.tap_shape("conv1") == (16, 32, 32)
        assert cfg.tap_shape("conv4") == (64, 4, 4)
        assert cfg.tap_shape("fc6") == (64,)
        assert cfg.tap_shape("image") == (3, 64, 64)

    @pytest.mark.parametrize("bad", [
        dict(input_size=(20, 20)), dict(conv_blocks=()), dict(feature_dim=0), dict(conv_blocks=((0, 1),)),
    ])
    def test_invalid(self, bad):
        with pytest.raises(DimensionError):
            EncoderConfig(**bad).validate()

    def test_unknown_init_or_norm(self):
        with pytest.raises(ValueError):
            EncoderConfig(init="xavier").validate()
        with pytest.raises(ValueError):
            EncoderConfig(norm="layer").validate()

    def test_dict_round_trip(self):
        cfg = EncoderConfig(input_size=(48, 48), init="gaussian", norm="none")
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg


class TestEncode:
    def test_shapes_and_taps(self, rng):
        enc = Encoder(EncoderConfig(), rng)
        feat, taps = enc.encode(rng.normal(size=(2, 3, 64, 64)).astype(np.float32), return_taps=True)
        assert feat.shape == (2, 64)
        for stage in ("conv1", "conv2", "conv3", "conv4"):
            assert taps[stage].shape == (2, *enc.config.tap_shape(stage))
        assert taps["fc6"] is feat

    def test_identical_images_identical_rows(self, rng):
        enc = Encoder(EncoderConfig(input_size=(48, 48)), rng)
        img = rng.normal(size=(1, 3, 48, 48)).astype(np.float32)
        out = enc.encode(np.concatenate([img, img])).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_wrong_input_shape(self, rng):
        enc = Encoder(SMALL, rng)
        with pytest.raises(DimensionError):
            enc.encode(np.zeros((1, 3, 32, 32), np.float32))
        with pytest.raises(DimensionError):
            enc.encode(np.zeros((3, 16, 16), np.float32))

    def test_finite(self, rng):
        enc = Encoder(EncoderConfig(), rng)
        assert np.isfinite(enc.encode(np.ones((1, 3, 64, 64), np.float32)).data).all()

    def test_partial_stacks(self, rng):
        cfg = EncoderConfig()
        head = Encoder(cfg, rng, stop="conv2")
        tail = Encoder(cfg, rng, start_after="conv2")
        x = rng.normal(size=(2, 3, 64, 64)).astype(np.float32)
        mid = head.encode(x)
        assert mid.shape == (2, *cfg.tap_shape("conv2"))
        assert tail.forward(mid).shape == (2, 64)
        assert not any(k.startswith("convs.conv1") for k in tail.named_parameters())

    def test_wider_fused_input(self, rng):
        enc = Encoder(EncoderConfig(), rng, in_channels=9)
        assert enc.encode(np.zeros((1, 9, 64, 64), np.float32)).shape == (1, 64)


class TestInitialisation:
    def test_gaussian_sigma_and_mean(self):
        enc = Encoder(EncoderConfig(init="gaussian"), np.random.default_rng(0))
        w = np.concatenate([p.data.ravel() for k, p in enc.named_parameters().items()
                            if k.endswith("weight") and "_bn" not in k])
        sample = np.random.default_rng(1).choice(w, size=10000, replace=False)
        assert abs(sample.std() - 0.001) <= 0.0001
        assert abs(sample.mean()) <= 1e-4

    def test_scaled_init_follows_fan_in(self):
        enc = Encoder(EncoderConfig(init="scaled"), np.random.default_rng(0))
        w = enc.named_parameters()["convs.conv2_1.weight"].data
        assert abs(w.std() - np.sqrt(2 / (16 * 9))) < 0.01
        assert abs(enc.named_parameters()["fc6.weight"].data.std() - np.sqrt(1 / 1024)) < 0.002

    def test_biases_zero_and_norm_identity(self):
        enc = Encoder(EncoderConfig(), np.random.default_rng(0))
        for k, p in enc.named_parameters().items():
            if k.endswith("bias"):
                assert not p.data.any()
            elif "_bn" in k:
                np.testing.assert_array_equal(p.data, 1.0)

    def test_seeded(self):
        a = Encoder(SMALL, np.random.default_rng(3))
        b = Encoder(SMALL, np.random.default_rng(3))
        assert a.checksum() == b.checksum()


class TestBank:
    def test_modes_share_as_documented(self, rng):
        rooms = ["bathroom", "kitchen", "living_room"]
        aware = EncoderBank("room_aware", rooms, SMALL, rng)
        agnostic = EncoderBank("room_agnostic", rooms, SMALL, rng)
        fc = EncoderBank("room_aware_fc", rooms, SMALL, rng)
        n_enc = Encoder(SMALL, rng).num_parameters()
        assert aware.num_parameters() == 3 * n_enc
        assert agnostic.num_parameters() == n_enc
        assert agnostic["bathroom"] is agnostic["kitchen"]
        assert fc["bathroom"].convs is fc["kitchen"].convs
        assert fc["bathroom"].fc6[0] is not fc["kitchen"].fc6[0]

    def test_room_aware_encoders_diverge_after_disjoint_updates(self, rng):
        bank = EncoderBank("room_aware", ["bathroom", "kitchen"], SMALL, rng)
        bank["kitchen"].load_state_dict(bank["bathroom"].state_dict())  # identical start
        probe = rng.normal(size=(2, 3, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(bank["bathroom"].encode(probe).data, bank["kitchen"].encode(probe).data)
        opt = Adam(bank.named_parameters(), lr=1e-2)
        xa, xb = (rng.normal(size=(4, 3, 16, 16)).astype(np.float32) for _ in range(2))
        (total(bank.encode(xa, ["bathroom"] * 4)) + total(bank.encode(xb, ["kitchen"] * 4))).backward()
        opt.step()
        assert not np.allclose(bank["bathroom"].encode(probe).data, bank["kitchen"].encode(probe).data)

    def test_rows_use_their_encoder(self, rng):
        bank = encoder_bank("room_aware", ["bathroom", "kitchen"], SMALL, rng)
        x = rng.normal(size=(3, 3, 16, 16)).astype(np.float32)
        mixed = bank.encode(x, ["kitchen", "bathroom", "kitchen"]).data
        np.testing.assert_array_equal(mixed[1], bank["bathroom"].encode(x[1:2]).data[0])
        np.testing.assert_array_equal(mixed[[0, 2]], bank["kitchen"].encode(x[[0, 2]]).data)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            EncoderBank("shared", ["bathroom"], SMALL, rng)
        with pytest.raises(ValueError):
            EncoderBank("room_aware", [], SMALL, rng)
        bank = EncoderBank("room_aware", ["bathroom"], SMALL, rng)
        with pytest.raises(DimensionError):
            bank.encode(np.zeros((2, 3, 16, 16), np.float32), ["bathroom"])


class TestDifferentiability:
    @pytest.mark.parametrize("training", [False, True])
    def test_finite_difference_through_encode(self, rng, training):
        cfg = EncoderConfig(input_size=(8, 8), conv_blocks=((3, 1), (4, 1)), feature_dim=4, init="scaled")
        enc = Encoder(cfg, rng).astype(np.float64)
        enc.train(training)
        wts = Tensor(rng.normal(size=(3, 4)))
        x0 = rng.normal(size=(3, 3, 8, 8))
        err = finite_diff_check(lambda x: total(enc.forward(x) * wts), x0, max_coords=40, rng=rng)
        assert err < 1e-5
