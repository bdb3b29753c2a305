"""Two-tower model assembly: forward shapes, purity, captioning loss,
projector, and the vision-only export."""

import numpy as np
import pytest

from deskclip.errors import DataError, ShapeError
from deskclip.models import tokenizer
from deskclip.models.config import (
    ENCODER_PRESETS,
    ModelConfig,
    ProjectorConfig,
    TextConfig,
    micro_model,
)
from deskclip.models.model import (
    TEMPERATURE_NAME,
    build_model,
    caption_decode_loss,
    caption_targets,
    count_params,
    encode_captions,
    encode_image,
    export_vision,
    init_projector,
    param_names,
    projector_forward,
    temperature,
    vision_forward,
)
from deskclip.numerics import Tensor, grad_check


@pytest.fixture(scope="module")
def micro():
    cfg = micro_model()
    return cfg, build_model(cfg, seed=0)


def rand_images(n, resolution, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 3, resolution, resolution), dtype=np.float32)


class TestStore:
    def test_tower_prefixes_present(self, micro):
        cfg, store = micro
        prefixes = {n.split(".")[0] for n in store}
        assert prefixes == {"vision", "text_encoder", "decoder", "temperature"}

    def test_no_decoder_variant(self):
        cfg = micro_model(with_decoder=False)
        store = build_model(cfg, seed=0)
        assert not param_names(store, "decoder.")

    def test_positional_tables_not_parameters(self, micro):
        cfg, store = micro
        assert not [n for n in store if "pos" in n or "pe" in n.split(".")]

    def test_temperature_scalar(self, micro):
        cfg, store = micro
        tau = float(np.asarray(temperature(store).data))
        assert tau == pytest.approx(0.07, rel=1e-5)

    def test_same_seed_same_weights(self):
        cfg = micro_model()
        a = build_model(cfg, seed=3)
        b = build_model(cfg, seed=3)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a)


class TestVisionForward:
    def test_tiny_224_token_shape(self):
        cfg = ModelConfig(vision=ENCODER_PRESETS["tiny"], with_decoder=False, embed_dim=64)
        store = build_model(cfg, seed=0)
        pooled, tokens = vision_forward(store, cfg, rand_images(2, 224))
        assert tokens.shape == (2, 196, 192)
        assert pooled.shape == (2, 192)

    def test_duplicated_images_identical_rows(self, micro):
        cfg, store = micro
        img = rand_images(1, 32)
        batch = np.concatenate([img, img, img])
        embs = encode_image(store, cfg, batch).data
        np.testing.assert_array_equal(embs[0], embs[1])
        np.testing.assert_array_equal(embs[0], embs[2])

    def test_batch_permutation_equivariance(self, micro):
        cfg, store = micro
        images = rand_images(5, 32, seed=4)
        perm = np.array([3, 0, 4, 1, 2])
        a = encode_image(store, cfg, images).data
        b = encode_image(store, cfg, images[perm]).data
        np.testing.assert_allclose(b, a[perm], atol=1e-6)

    def test_same_weights_two_resolutions(self):
        # one parameter set drives towers at 32 and 64: only the derived
        # position table differs
        cfg32 = micro_model(resolution=32)
        store = build_model(cfg32, seed=0)
        cfg64 = ModelConfig(
            vision=cfg32.vision.at_resolution(64),
            text=cfg32.text,
            with_decoder=cfg32.with_decoder,
            embed_dim=cfg32.embed_dim,
        )
        p32, t32 = vision_forward(store, cfg32, rand_images(2, 32))
        p64, t64 = vision_forward(store, cfg64, rand_images(2, 64))
        assert t32.shape == (2, 4, 32)
        assert t64.shape == (2, 16, 32)

    def test_resolution_mismatch_raises(self, micro):
        cfg, store = micro
        with pytest.raises(ShapeError):
            vision_forward(store, cfg, rand_images(1, 64))

    def test_unit_norm_embeddings(self, micro):
        cfg, store = micro
        embs = encode_image(store, cfg, rand_images(6, 32)).data
        np.testing.assert_allclose(np.linalg.norm(embs, axis=1), 1.0, atol=1e-5)


class TestCaptionLoss:
    def test_single_token_vocab_zero_loss(self):
        cfg = ModelConfig(
            vision=micro_model().vision,
            text=TextConfig(layers=1, width=32, heads=2, vocab_size=1),
            with_decoder=True,
            embed_dim=64,
        )
        store = build_model(cfg, seed=0)
        _, tokens = vision_forward(store, cfg, rand_images(2, 32))
        targets = np.zeros((2, 4), dtype=np.int64)
        loss, count = caption_decode_loss(store, cfg, tokens, targets)
        assert count == 8
        assert float(np.asarray(loss.data)) == pytest.approx(0.0, abs=1e-6)

    def test_all_pad_zero_loss_zero_count(self, micro):
        cfg, store = micro
        _, tokens = vision_forward(store, cfg, rand_images(2, 32))
        targets = np.full((2, 5), tokenizer.PAD_ID, dtype=np.int64)
        loss, count = caption_decode_loss(store, cfg, tokens, targets)
        assert count == 0
        assert float(np.asarray(loss.data)) == 0.0

    def test_untrained_loss_near_log_vocab(self, micro):
        cfg, store = micro
        _, tokens = vision_forward(store, cfg, rand_images(4, 32))
        targets = caption_targets(["a red square", "a blue disk", "two dots", "x"], 128)
        loss, _ = caption_decode_loss(store, cfg, tokens, targets)
        expected = np.log(cfg.text.vocab_size)
        assert abs(float(np.asarray(loss.data)) - expected) < 0.1

    def test_out_of_vocab_raises(self, micro):
        cfg, store = micro
        _, tokens = vision_forward(store, cfg, rand_images(1, 32))
        targets = np.array([[5, tokenizer.VOCAB_SIZE + 3, 7]], dtype=np.int64)
        with pytest.raises(DataError):
            caption_decode_loss(store, cfg, tokens, targets)

    def test_context_overflow_raises(self, micro):
        cfg, store = micro
        _, tokens = vision_forward(store, cfg, rand_images(1, 32))
        targets = np.zeros((1, cfg.text.decoder_context + 1), dtype=np.int64)
        with pytest.raises(ShapeError):
            caption_decode_loss(store, cfg, tokens, targets)


class TestProjector:
    def test_identity_linear_round_trip(self):
        cfg = ProjectorConfig(in_width=8, hidden=8, out_width=8, activation="linear")
        store = {}
        init_projector(store, cfg, np.random.default_rng(0))
        store["projector.fc1.w"].data = np.eye(8, dtype=np.float32)
        store["projector.fc1.b"].data = np.zeros(8, dtype=np.float32)
        store["projector.fc2.w"].data = np.eye(8, dtype=np.float32)
        store["projector.fc2.b"].data = np.zeros(8, dtype=np.float32)
        tokens = Tensor(np.random.default_rng(1).random((2, 5, 8), dtype=np.float32))
        out = projector_forward(store, cfg, tokens)
        np.testing.assert_allclose(out.data, tokens.data, atol=1e-6)

    @pytest.mark.parametrize("t", [1, 3, 17])
    def test_token_count_preserved(self, t):
        cfg = ProjectorConfig(in_width=8, hidden=12, out_width=10)
        store = {}
        init_projector(store, cfg, np.random.default_rng(0))
        tokens = Tensor(np.zeros((2, t, 8), dtype=np.float32))
        assert projector_forward(store, cfg, tokens).shape == (2, t, 10)

    def test_width_mismatch_raises(self):
        cfg = ProjectorConfig(in_width=8, hidden=8, out_width=8)
        store = {}
        init_projector(store, cfg, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            projector_forward(store, cfg, Tensor(np.zeros((1, 2, 9), dtype=np.float32)))

    def test_gradients(self):
        cfg = ProjectorConfig(in_width=6, hidden=7, out_width=5)
        store = {}
        init_projector(store, cfg, np.random.default_rng(2))
        for t in store.values():
            t.data = t.data.astype(np.float64)
        tokens = Tensor(np.random.default_rng(3).normal(size=(2, 3, 6)))

        from deskclip.numerics import mul, sum_

        def loss_fn():
            out = projector_forward(store, cfg, tokens)
            return sum_(mul(out, out))

        report = grad_check(loss_fn, store, probes_per_tensor=3)
        assert report.passed, report.summary()


class TestExport:
    def test_export_is_vision_only(self, micro):
        cfg, store = micro
        sub = export_vision(store)
        assert sub
        assert all(n.startswith("vision.") for n in sub)
        assert not any(n.startswith(("text_encoder.", "decoder.")) for n in sub)
        assert TEMPERATURE_NAME not in sub

    def test_export_smaller(self, micro):
        cfg, store = micro
        assert count_params(export_vision(store)) < count_params(store)

    def test_exported_embeddings_match(self, micro):
        cfg, store = micro
        images = rand_images(3, 32, seed=9)
        want = encode_image(store, cfg, images).data
        got = encode_image(export_vision(store), cfg, images).data
        np.testing.assert_allclose(got, want, atol=1e-6)


class TestEncodeCaptions:
    def test_trims_to_longest_caption(self, micro):
        cfg, store = micro
        embs = encode_captions(store, cfg, ["hi", "a longer caption"]).data
        assert embs.shape == (2, cfg.embed_dim)
        np.testing.assert_allclose(np.linalg.norm(embs, axis=1), 1.0, atol=1e-5)

    def test_identical_strings_identical_rows(self, micro):
        cfg, store = micro
        embs = encode_captions(store, cfg, ["same text", "same text"]).data
        np.testing.assert_array_equal(embs[0], embs[1])
