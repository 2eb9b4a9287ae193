import math

import numpy as np
import pytest

from dualfield.backends import EmbeddingVector, ToyEmbedder
from dualfield.metrics import (CaptionPair, MetricError, clip_dir_consistency, clip_t2i,
                               evaluate_edit, psnr, ssim)


def ssim_reference(a, b):
    """Brute-force sliding-window SSIM on luminance, from the definition."""
    luma = np.array([0.299, 0.587, 0.114])
    x = np.asarray(a, dtype=np.float64) @ luma
    y = np.asarray(b, dtype=np.float64) @ luma
    size, sigma = 11, 1.5
    ax = np.arange(size) - (size - 1) / 2.0
    g1 = np.exp(-0.5 * (ax / sigma) ** 2)
    g1 /= g1.sum()
    window = np.outer(g1, g1)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = x.shape
    values = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            px = x[i:i + size, j:j + size]
            py = y[i:i + size, j:j + size]
            mx = (window * px).sum()
            my = (window * py).sum()
            vx = (window * px * px).sum() - mx ** 2
            vy = (window * py * py).sum() - my ** 2
            cov = (window * px * py).sum() - mx * my
            values.append(((2 * mx * my + c1) * (2 * cov + c2))
                          / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(values))


class TestPsnr:
    def test_identical_images_capped(self, rng):
        img = rng.random((8, 8, 3))
        assert psnr(img, img) == 99.0

    def test_mse_hand_values(self):
        a = np.zeros((10, 10, 3))
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)  # MSE 0.01
        assert psnr(a, a + 1.0) == pytest.approx(0.0, abs=1e-12)  # MSE 1

    def test_resolution_mismatch(self):
        with pytest.raises(MetricError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestSsim:
    def test_identical_is_exactly_one(self, rng):
        img = rng.random((16, 16, 3))
        assert ssim(img, img) == 1.0

    def test_constant_offset_closed_form(self):
        # Zero-variance windows collapse the index to the luminance term.
        mu1, mu2 = 0.25, 0.75
        a = np.full((16, 16, 3), mu1)
        b = np.full((16, 16, 3), mu2)
        c1 = 0.01 ** 2
        expected = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_matches_sliding_window_reference(self, rng):
        for _ in range(3):
            a = rng.random((14, 15, 3))
            b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
            assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-4)

    def test_symmetry(self, rng):
        a, b = rng.random((2, 13, 13, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(MetricError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class LookupEmbedder:
    def __init__(self, image_map, text_map):
        self.image_map = image_map
        self.text_map = text_map

    def embed_image(self, image):
        return EmbeddingVector(self.image_map[round(float(np.asarray(image).sum()), 6)])

    def embed_text(self, text):
        return EmbeddingVector(self.text_map[text])


def constant_images(*values):
    return [np.full((4, 4, 3), v) for v in values]


def keyed(images, vectors):
    return {round(float(img.sum()), 6): vec for img, vec in zip(images, vectors)}


class TestClipT2i:
    def caption(self):
        return CaptionPair("A photograph of a person", "A photograph of a statue")

    def test_parallel_directions(self):
        orig, edit = constant_images(0.2, 0.8)
        emb = LookupEmbedder(
            keyed([orig, edit], [np.array([1.0, 0.0]), np.array([3.0, 0.0])]),
            {"A photograph of a person": np.array([0.0, 1.0]),
             "A photograph of a statue": np.array([5.0, 1.0])})
        assert clip_t2i(orig, edit, self.caption(), emb) == pytest.approx(1.0, abs=1e-12)

    def test_antiparallel_directions(self):
        orig, edit = constant_images(0.2, 0.8)
        emb = LookupEmbedder(
            keyed([orig, edit], [np.array([1.0, 0.0]), np.array([0.0, 0.0])]),
            {"A photograph of a person": np.array([0.0, 0.0]),
             "A photograph of a statue": np.array([1.0, 0.0])})
        assert clip_t2i(orig, edit, self.caption(), emb) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_difference_cosine_oracle(self, rng):
        for _ in range(20):
            e = rng.normal(0, 1, (4, 11))
            orig, edit = constant_images(0.1, 0.9)
            emb = LookupEmbedder(keyed([orig, edit], [e[0], e[1]]),
                                 {"A photograph of a person": e[2],
                                  "A photograph of a statue": e[3]})
            v_img = e[1] - e[0]
            v_text = e[3] - e[2]
            expected = float(v_img @ v_text / (np.linalg.norm(v_img) * np.linalg.norm(v_text)))
            assert clip_t2i(orig, edit, self.caption(), emb) == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance_of_directions(self, rng):
        e = rng.normal(0, 1, (4, 6))
        orig, edit = constant_images(0.1, 0.9)

        def score(scale):
            emb = LookupEmbedder(keyed([orig, edit], [scale * e[0], scale * e[1]]),
                                 {"A photograph of a person": e[2],
                                  "A photograph of a statue": e[3]})
            return clip_t2i(orig, edit, self.caption(), emb)

        assert score(4.0) == pytest.approx(score(1.0), abs=1e-12)

    def test_degenerate_direction_rejected(self):
        orig, edit = constant_images(0.2, 0.8)
        emb = LookupEmbedder(keyed([orig, edit], [np.ones(3), np.ones(3)]),
                             {"A photograph of a person": np.array([1.0, 0, 0]),
                              "A photograph of a statue": np.array([0, 1.0, 0])})
        with pytest.raises(MetricError):
            clip_t2i(orig, edit, self.caption(), emb)

    def test_empty_caption_rejected(self):
        with pytest.raises(ValueError):
            CaptionPair("", "A photograph of a statue")


class TestClipDirConsistency:
    def test_constant_sequence_is_one(self, rng):
        img = rng.random((8, 8, 3))
        assert clip_dir_consistency([img, img.copy(), img.copy()], ToyEmbedder()) == 1.0

    def test_orthogonal_toy_embeddings(self):
        black = np.zeros((8, 8, 3))
        white = np.ones((8, 8, 3))
        assert clip_dir_consistency([black, white], ToyEmbedder()) == pytest.approx(0.0, abs=1e-12)

    def test_three_renders_mean_of_pairs(self, rng):
        imgs = constant_images(0.1, 0.5, 0.9)
        vecs = [rng.normal(0, 1, 8) for _ in range(3)]
        emb = LookupEmbedder(keyed(imgs, vecs), {})

        def cos(u, v):
            return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

        expected = (cos(vecs[0], vecs[1]) + cos(vecs[1], vecs[2])) / 2.0
        assert clip_dir_consistency(imgs, emb) == pytest.approx(expected, abs=1e-12)

    def test_requires_two_renders(self):
        with pytest.raises(MetricError):
            clip_dir_consistency([np.zeros((8, 8, 3))], ToyEmbedder())


class TestEvaluateEdit:
    def test_report_fields_finite(self, rng):
        originals = [rng.random((16, 16, 3)) for _ in range(3)]
        edits = [np.clip(o + rng.normal(0, 0.1, o.shape), 0, 1) for o in originals]
        captions = CaptionPair("A photograph of a scene", "A photograph of a red scene")
        report = evaluate_edit(originals, edits, captions, ToyEmbedder())
        data = report.to_dict()
        for key in ("c_t2i", "c_dir", "ssim", "psnr"):
            assert math.isfinite(data[key])
        assert -1.0 <= data["ssim"] <= 1.0
        assert len(data["per_view"]) == 3

    def test_mismatched_sets_rejected(self, rng):
        with pytest.raises(MetricError):
            evaluate_edit([rng.random((12, 12, 3))], [], CaptionPair("a", "b"), ToyEmbedder())
