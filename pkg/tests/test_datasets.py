"""Tests for dataset generation, file formats and splits."""
import sys
import os

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

# Set test environment
os.environ["ENVIRONMENT"] = "test"

import numpy as np
import pytest
from src.datasets.border_ownership import (
    BorderOwnershipSet,
    gen_border_ownership,
    load_border_ownership,
    load_images,
    save_border_ownership,
    save_images,
    shape_labels,
    validate_labels,
)
from src.datasets.io import load_binary, load_continuous, save_binary, save_continuous
from src.datasets.splits import split, split_sizes
from src.datasets.synthetic import gen_rbm_samples, gen_texture, random_rbm_params
from src.errors import DatasetFormatError, InvalidArgumentError
from src.models.params import Label


class TestBorderOwnership:
    """Test the border-ownership generator."""

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(0)

    def test_labels_of_a_square(self):
        filled = np.zeros((7, 7), dtype=bool)
        filled[2:5, 2:5] = True
        labels = shape_labels(filled)
        assert labels[3, 3] == Label.IN
        assert (labels == Label.CONTOUR).sum() == 8
        assert labels[0, 0] == Label.OUT
        assert validate_labels(labels)

    @pytest.mark.parametrize("kind", ["rectangle", "ellipse"])
    def test_every_contour_pixel_separates(self, rng, kind):
        data = gen_border_ownership(20, 12, 12, kind, rng)
        assert len(data) == 20
        for labels in data.labels:
            assert validate_labels(labels)
            assert (labels == Label.IN).any()

    def test_clean_images_show_the_contour(self, rng):
        data = gen_border_ownership(10, 10, 10, "rectangle", rng, p_drop=0.0, n_spurious=0)
        np.testing.assert_array_equal(data.images, (data.labels == Label.CONTOUR).astype(np.int64))

    def test_full_dropout_is_dark(self, rng):
        data = gen_border_ownership(10, 10, 10, "ellipse", rng, p_drop=1.0, n_spurious=0)
        assert data.images.sum() == 0

    def test_dropout_rate(self, rng):
        data = gen_border_ownership(300, 16, 16, "rectangle", rng, p_drop=0.2, n_spurious=0)
        contour = data.labels == Label.CONTOUR
        assert 0.78 <= data.images[contour].mean() <= 0.82

    def test_spurious_segments_add_pixels(self, rng):
        data = gen_border_ownership(10, 12, 12, "rectangle", rng, p_drop=1.0, n_spurious=4)
        assert data.images.sum() > 0

    @pytest.mark.parametrize("R,C,kind", [(6, 12, "rectangle"), (12, 8, "ellipse")])
    def test_grid_too_small(self, rng, R, C, kind):
        with pytest.raises(InvalidArgumentError):
            gen_border_ownership(1, R, C, kind, rng)

    def test_save_and_load(self, rng, tmp_path):
        data = gen_border_ownership(3, 8, 9, "rectangle", rng)
        path = tmp_path / "border.txt"
        save_border_ownership(path, data)
        loaded = load_border_ownership(path)
        np.testing.assert_array_equal(loaded.images, data.images)
        np.testing.assert_array_equal(loaded.labels, data.labels)

    def test_image_only_file(self, rng, tmp_path):
        data = gen_border_ownership(3, 8, 9, "rectangle", rng)
        path = tmp_path / "images.txt"
        save_images(path, data.images)
        np.testing.assert_array_equal(load_images(path), data.images)

    def test_images_from_labelled_file(self, rng, tmp_path):
        data = gen_border_ownership(2, 8, 8, "rectangle", rng)
        path = tmp_path / "border.txt"
        save_border_ownership(path, data)
        np.testing.assert_array_equal(load_images(path), data.images)

    def test_image_block_too_short(self, tmp_path):
        path = tmp_path / "images.txt"
        path.write_text("3 2\n0 1\n1 1\n")
        with pytest.raises(DatasetFormatError):
            load_images(path)

    def test_missing_image_block(self, tmp_path):
        path = tmp_path / "border.txt"
        path.write_text("2 2\n0 1\n0 2\n")
        with pytest.raises(DatasetFormatError):
            load_border_ownership(path)

    def test_bad_label_value(self, tmp_path):
        path = tmp_path / "border.txt"
        path.write_text("1 2\n0 3\n\n0 1\n")
        with pytest.raises(DatasetFormatError) as exc:
            load_border_ownership(path)
        assert exc.value.line == 2

    def test_indexing(self, rng):
        data = gen_border_ownership(4, 8, 8, "rectangle", rng)
        assert len(data[1]) == 1
        assert len(data[np.array([0, 2, 3])]) == 3
        assert data.grid_shape == (8, 8)

    def test_mismatched_stacks(self):
        with pytest.raises(InvalidArgumentError):
            BorderOwnershipSet(np.zeros((2, 3, 3)), np.zeros((1, 3, 3)))


class TestTextFiles:
    """Test the binary and continuous readers."""

    def test_binary_round_trip(self, tmp_path):
        data = np.array([[0, 1, 1], [1, 0, 0]], dtype=np.float64)
        path = tmp_path / "data.txt"
        save_binary(path, data)
        np.testing.assert_array_equal(load_binary(path), data)

    def test_binary_skips_blank_lines(self, tmp_path):
        path = tmp_path / "data.txt"
        path.write_text("0 1\n\n1 1\n")
        assert load_binary(path).shape == (2, 2)

    def test_binary_rejects_other_tokens(self, tmp_path):
        path = tmp_path / "data.txt"
        path.write_text("0 1\n2 1\n")
        with pytest.raises(DatasetFormatError) as exc:
            load_binary(path)
        assert exc.value.line == 2

    def test_binary_rejects_ragged_rows(self, tmp_path):
        path = tmp_path / "data.txt"
        path.write_text("0 1\n1\n")
        with pytest.raises(DatasetFormatError):
            load_binary(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data.txt"
        path.write_text("")
        assert load_binary(path).shape == (0, 0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            load_binary(tmp_path / "absent.txt")

    def test_continuous_bit_exact(self, tmp_path):
        data = np.random.default_rng(0).normal(size=(4, 3))
        path = tmp_path / "data.csv"
        save_continuous(path, data)
        np.testing.assert_array_equal(load_continuous(path), data)

    def test_continuous_rejects_nan(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("0.1,nan\n")
        with pytest.raises(DatasetFormatError):
            load_continuous(path)

    def test_continuous_rejects_text(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("0.1,abc\n")
        with pytest.raises(DatasetFormatError):
            load_continuous(path)


class TestSplits:
    """Test the seeded splits."""

    def test_sizes(self):
        assert split_sizes(100, (0.8, 0.1, 0.1)) == (80, 10, 10)
        assert split_sizes(3, (0.5, 0.5, 0.0)) == (2, 1, 0)

    @pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.8, 0.3, -0.1), (0.5, 0.2, 0.2)])
    def test_invalid_fractions(self, fractions):
        with pytest.raises(InvalidArgumentError):
            split_sizes(10, fractions)

    def test_partition_of_rows(self):
        data = np.arange(50).reshape(50, 1)
        train, valid, test = split(data, (0.6, 0.2, 0.2), seed=4)
        merged = np.sort(np.concatenate([train, valid, test]).ravel())
        np.testing.assert_array_equal(merged, np.arange(50))

    def test_same_seed_same_split(self):
        data = np.arange(20).reshape(20, 1)
        a = split(data, (0.5, 0.25, 0.25), seed=1)
        b = split(data, (0.5, 0.25, 0.25), seed=1)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_border_sets_split(self):
        data = gen_border_ownership(10, 8, 8, "rectangle", np.random.default_rng(0))
        train, valid, test = split(data, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(valid), len(test)) == (8, 1, 1)


class TestSynthetic:
    """Test the synthetic corpora."""

    def test_texture_shape(self):
        images = gen_texture(5, 4, 6, np.random.default_rng(0))
        assert images.shape == (5, 24)
        assert np.all(np.isfinite(images))

    def test_texture_without_noise_uses_templates(self):
        images = gen_texture(50, 4, 4, np.random.default_rng(0), n_templates=1, p_on=1.0, noise_std=0.0)
        np.testing.assert_allclose(images, np.broadcast_to(images[0], images.shape))

    def test_texture_arguments(self):
        with pytest.raises(InvalidArgumentError):
            gen_texture(5, 4, 4, np.random.default_rng(0), p_on=1.5)

    def test_rbm_samples_are_binary(self):
        rng = np.random.default_rng(1)
        params = random_rbm_params(5, 3, rng)
        samples = gen_rbm_samples(params, 100, rng)
        assert samples.shape == (100, 5)
        assert set(np.unique(samples)) <= {0.0, 1.0}

    def test_rbm_sample_means_follow_biases(self):
        rng = np.random.default_rng(2)
        params = random_rbm_params(3, 1, rng)
        params = params.with_tensors(W=np.zeros((1, 3)), c_V=np.array([2.0, 0.0, -2.0]))
        samples = gen_rbm_samples(params, 20_000, rng)
        expected = 1.0 / (1.0 + np.exp(-params.c_V))
        np.testing.assert_allclose(samples.mean(axis=0), expected, atol=0.02)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
