import math

import numpy as np
import pytest

from yolov1.augment import (
    AugmentPipeline, adjust_hue, apply_pipeline, color_jitter, format_pipeline_config, gaussian_blur,
    gaussian_filter, gaussian_kernel, grayscale, hflip, parse_pipeline_config, rotate_box,
    rotation_jitter, scale_jitter, vflip,
)
from yolov1.dataset_io import Sample, generate_synthetic
from yolov1.errors import BadFactor
from yolov1.geometry import BoxYolo, is_valid_label
from yolov1.rng import RngStream


class Forced:
    """Stand-in rng whose uniform draws always return ``value``."""

    def __init__(self, value):
        self.value = value

    def uniform(self, lo, hi):
        return self.value


def image(seed=0, h=24, w=32):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)


def sample(seed=0, size=64):
    return generate_synthetic(seed, 1, img_size=size)[0]


class TestPixelStages:
    def test_zero_jitter_is_identity(self):
        img = image()
        assert np.array_equal(color_jitter(img, 0, 0, 0, 0, RngStream(1)), img)

    def test_forced_brightness(self):
        img = np.full((2, 2, 3), 100, np.uint8)
        assert np.all(color_jitter(img, 1.0, 0, 0, 0, Forced(2.0)) == 200)

    def test_brightness_saturates(self):
        img = np.full((2, 2, 3), 200, np.uint8)
        assert np.all(color_jitter(img, 1.0, 0, 0, 0, Forced(2.0)) == 255)

    def test_full_turn_hue_is_identity(self):
        img = image(3).astype(np.float64)
        assert np.allclose(adjust_hue(img, 1.0), img, atol=1e-9)

    def test_grayscale_red(self):
        out = grayscale(np.array([[[255, 0, 0]]], np.uint8))
        assert out.tolist() == [[[76, 76, 76]]]

    def test_grayscale_idempotent(self):
        g = grayscale(image(1))
        assert np.array_equal(grayscale(g), g)

    def test_kernel_closed_form(self):
        # exp(-1/(2 sigma^2)) at sigma 0.5 is exp(-2)
        e = math.exp(-2.0)
        want = np.array([e, 1.0, e]) / (1 + 2 * e)
        assert np.allclose(gaussian_kernel(3, 0.5), want, rtol=0, atol=1e-15)
        assert gaussian_kernel(3, 0.5)[1] == pytest.approx(0.7870, abs=1e-4)

    def test_impulse_response_is_outer_product(self):
        arr = np.zeros((5, 5))
        arr[2, 2] = 1.0
        k = gaussian_kernel(3, 0.5)
        out = gaussian_filter(arr, 0.5)
        assert np.allclose(out[1:4, 1:4], np.outer(k, k), atol=1e-15)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("sigma", [0.1, 0.7, 2.0])
    def test_constant_image_unchanged_by_blur(self, sigma):
        img = np.full((9, 7, 3), 77, np.uint8)
        assert np.array_equal(gaussian_blur(img, sigma), img)

    def test_kernel_validation(self):
        with pytest.raises(ValueError):
            gaussian_kernel(4, 1.0)
        with pytest.raises(ValueError):
            gaussian_kernel(3, 0.0)

    def test_jitter_keeps_labels(self):
        s = sample(2)
        out = apply_pipeline(s, AugmentPipeline(blur_p=1, grayscale_p=1, hflip_p=0, vflip_p=0, rotation_p=0),
                             RngStream(5))
        assert out.labels == s.labels


class TestFlips:
    def test_reflection(self):
        s = Sample(image(), (BoxYolo(3, 0.3, 0.4, 0.2, 0.1),))
        assert hflip(s).labels[0].cx == pytest.approx(0.7, abs=2.0 ** -40)
        assert vflip(s).labels[0].cy == pytest.approx(0.6, abs=1e-12)
        assert hflip(s).labels[0].class_id == 3

    def test_pixels_mirror(self):
        s = Sample(image(), ())
        assert np.array_equal(hflip(s).image, s.image[:, ::-1])
        assert np.array_equal(vflip(s).image, s.image[::-1])

    @pytest.mark.parametrize("flip", [hflip, vflip])
    def test_involution(self, flip):
        for seed in range(20):
            s = sample(seed)
            assert flip(flip(s)).same_as(s)


class TestRotation:
    def test_zero_angle(self):
        s = sample(4)
        out = rotation_jitter(s, 0.0)
        assert out.same_as(s)

    def test_square_hull_at_45(self):
        b = rotate_box(BoxYolo(0, 0.5, 0.5, 0.2, 0.2), 45.0, 100, 100)
        assert (b.cx, b.cy) == pytest.approx((0.5, 0.5), abs=1e-12)
        assert (b.w, b.h) == pytest.approx((0.2 * math.sqrt(2),) * 2, abs=1e-12)

    def test_direction_counter_clockwise(self):
        # a box right of center moves up when the picture turns counter-clockwise
        b = rotate_box(BoxYolo(0, 0.75, 0.5, 0.1, 0.1), 90.0 / 2, 200, 200)
        assert b.cy < 0.5 and b.cx < 0.75

    def test_pixel_direction_matches_boxes(self):
        img = np.zeros((41, 41, 3), np.uint8)
        img[18:23, 30:35] = 255
        s = Sample(img, (BoxYolo(0, 32.5 / 41, 20.5 / 41, 5 / 41, 5 / 41),))
        out = rotation_jitter(s, 30.0)
        ys, xs = np.nonzero(out.image[..., 0] > 128)
        b = out.labels[0]
        assert abs(xs.mean() + 0.5 - b.cx * 41) < 1.0
        assert abs(ys.mean() + 0.5 - b.cy * 41) < 1.0

    def test_there_and_back(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            cx, cy = rng.uniform(0.3, 0.7, size=2)
            w, h = rng.uniform(0.05, 0.2, size=2)
            theta = float(rng.uniform(-10, 10))
            b = BoxYolo(0, cx, cy, w, h)
            back = rotate_box(rotate_box(b, theta, 448, 448), -theta, 448, 448)
            assert back.cx == pytest.approx(cx, abs=1e-9)
            assert back.cy == pytest.approx(cy, abs=1e-9)
            # hull of a hull only grows; small angles keep that growth modest
            assert back.w >= w - 1e-12 and back.w - w < 0.02 + 2 * abs(math.radians(theta)) * max(w, h)

    def test_fill_is_gray(self):
        s = Sample(np.zeros((32, 32, 3), np.uint8), ())
        out = rotation_jitter(s, 45.0)
        assert out.image[0, 0].tolist() == [128, 128, 128]

    def test_angle_limit(self):
        with pytest.raises(ValueError):
            rotation_jitter(sample(), 46.0)


class TestScale:
    def test_identity(self):
        s = sample(6)
        assert scale_jitter(s, 1.0).same_as(s)

    def test_centered_box(self):
        s = Sample(image(h=20, w=20), (BoxYolo(0, 0.5, 0.5, 0.5, 0.5),))
        b = scale_jitter(s, 1.2).labels[0]
        assert b.fields() == pytest.approx((0.5, 0.5, 0.6, 0.6), abs=1e-12)

    def test_border_box_is_clamped(self):
        s = Sample(image(h=20, w=20), (BoxYolo(0, 0.05, 0.5, 0.1, 0.1),))
        for b in scale_jitter(s, 1.2).labels:
            assert is_valid_label(b)

    @pytest.mark.parametrize("factor", [0.99, 1.21])
    def test_bad_factor(self, factor):
        with pytest.raises(BadFactor):
            scale_jitter(sample(), factor)


class TestPipeline:
    def test_identity(self):
        s = sample(7)
        assert apply_pipeline(s, AugmentPipeline.identity(), RngStream(9)).same_as(s)

    def test_determinism(self):
        s = sample(8)
        p = AugmentPipeline(scale_p=0.5, blur_p=0.5)
        a = apply_pipeline(s, p, RngStream(123))
        b = apply_pipeline(s, p, RngStream(123))
        assert a.image.tobytes() == b.image.tobytes() and a.labels == b.labels

    def test_labels_stay_valid(self):
        p = AugmentPipeline(rotation_p=1.0, rotation_max_degrees=45, scale_p=1.0, vflip_p=0.5)
        for i, s in enumerate(generate_synthetic(10, 50, img_size=32)):
            out = apply_pipeline(s, p, RngStream(i))
            assert all(is_valid_label(b) for b in out.labels)
            assert {b.class_id for b in out.labels} <= {b.class_id for b in s.labels}

    def test_config_round_trip(self):
        p = AugmentPipeline(hue=0.1, blur_kernel=5, scale_p=0.3)
        assert parse_pipeline_config(format_pipeline_config(p)) == p

    def test_config_partial_and_comments(self):
        p = parse_pipeline_config("# no flips\nhflip_p = 0\n\nrotation_max_degrees=5  # smaller\n")
        assert p.hflip_p == 0 and p.rotation_max_degrees == 5 and p.brightness == 0.2

    @pytest.mark.parametrize("text", ["hflip_p 0", "bogus = 1", "hflip_p = 2"])
    def test_config_errors(self, text):
        with pytest.raises(ValueError):
            parse_pipeline_config(text)

    def test_scale_max_out_of_range(self):
        with pytest.raises(BadFactor):
            AugmentPipeline(scale_max=1.3)
