import colorsys
from collections import Counter

import numpy as np
import pytest

from advrand import tensor as T
from advrand.classifier import ModelArch, forward_logits, init_model, predict
from advrand.defense import (
    ColorJitter, PatternSpec, RandomizationParams, adjust_brightness, adjust_contrast, adjust_hue,
    adjust_saturation, apply_pattern, apply_patterns, count_patterns, enumerate_patterns,
    hsv_to_rgb, randomized_predict, rgb_to_hsv, sample_pattern,
)
from advrand.errors import ContractError
from advrand.tensor import Tensor

from conftest import check_grad


def brute_counts(max_target):
    """``table[t][r]``: valid (left, top) offsets for side ``r`` on a ``t`` canvas, by exhaustive mask."""
    table = np.zeros((max_target + 1, max_target + 2), dtype=np.int64)
    offsets = np.arange(max_target + 1)
    left, top = np.meshgrid(offsets, offsets, indexing="ij")
    for t in range(1, max_target + 1):
        for r in range(1, max_target + 1):
            table[t, r] = np.count_nonzero((left + r <= t) & (top + r <= t))
    return table


class TestPatternCount:
    @pytest.mark.parametrize("lo, hi, t, expected", [
        (299, 331, 331, 12528), (330, 331, 331, 4), (331, 332, 331, 1),
    ])
    def test_known_values(self, lo, hi, t, expected):
        params = RandomizationParams(lo if lo < t else t, lo, hi, t)
        assert count_patterns(params) == expected

    def test_invalid_range_rejected(self):
        with pytest.raises(ContractError):
            RandomizationParams(28, 30, 38, 36)
        with pytest.raises(ContractError):
            RandomizationParams(28, 30, 30, 36)

    def test_brute_force_all_small_targets(self):
        table = brute_counts(40)
        checked = 0
        for t in range(1, 41):
            for lo in range(1, t + 1):
                for hi in range(lo + 1, t + 2):
                    params = RandomizationParams(lo, lo, hi, t)
                    assert count_patterns(params) == table[t, lo:hi].sum()
                    checked += 1
        assert checked == sum(t * (t + 1) // 2 for t in range(1, 41))

    @pytest.mark.parametrize("lo, hi, t", [(28, 36, 36), (5, 9, 9), (3, 4, 7), (1, 6, 5)])
    def test_enumeration_matches_count(self, lo, hi, t):
        params = RandomizationParams(lo, lo, hi, t)
        specs = list(enumerate_patterns(params))
        assert len(specs) == len(set(specs)) == count_patterns(params)
        assert all(s.fits(t) for s in specs)

    def test_desk_default(self):
        assert count_patterns(RandomizationParams()) == sum((36 - r + 1) ** 2 for r in range(28, 36))


class TestSampling:
    def test_identity_range(self):
        params = RandomizationParams(28, 28, 29, 28)
        rng = np.random.default_rng(0)
        assert {sample_pattern(params, rng) for _ in range(20)} == {PatternSpec(28, 0, 0)}

    def test_seeded(self):
        params = RandomizationParams(flip_prob=0.5, jitter=ColorJitter.standard())
        a = [sample_pattern(params, np.random.default_rng(3)) for _ in range(5)]
        b = [sample_pattern(params, np.random.default_rng(3)) for _ in range(5)]
        assert a == b

    def test_uniform_over_four_patterns(self):
        params = RandomizationParams(330, 330, 331, 331)
        rng = np.random.default_rng(12)
        n = 10 ** 6
        counts = Counter(sample_pattern(params, rng) for _ in range(n))
        assert len(counts) == 4
        freq = np.array(list(counts.values())) / n
        assert np.all(np.abs(freq - 0.25) < 0.01)
        chi2 = np.sum((np.array(list(counts.values())) - n / 4) ** 2 / (n / 4))
        assert chi2 < 16.27  # 3 degrees of freedom, p = 0.001

    def test_ranges(self):
        params = RandomizationParams(jitter=ColorJitter.standard(), flip_prob=0.5)
        rng = np.random.default_rng(5)
        specs = [sample_pattern(params, rng) for _ in range(2000)]
        assert {s.resize_to for s in specs} == set(range(28, 36))
        assert all(s.fits(36) for s in specs)
        assert 0.4 < np.mean([s.flip for s in specs]) < 0.6
        assert all(abs(s.brightness) <= 32 / 255 and 0.5 <= s.saturation <= 1.5 for s in specs)
        assert all(abs(s.hue) <= 0.2 and 0.5 <= s.contrast <= 1.5 for s in specs)

    def test_unknown_jitter(self):
        with pytest.raises(ContractError):
            ColorJitter.standard("sharpness")


class TestApplyPattern:
    def test_identity_bit_exact(self):
        x = np.random.default_rng(0).random((28, 28, 3))
        out = apply_pattern(x, PatternSpec(28, 0, 0), 28).data
        assert out.tobytes() == x.tobytes()

    def test_one_pixel_example(self):
        v = 0.37
        out = apply_pattern(np.full((1, 1, 1), v), PatternSpec(2, 1, 0), 3).data[..., 0]
        assert out.tolist() == [[0, v, v], [0, v, v], [0, 0, 0]]

    @pytest.mark.parametrize("seed", range(10))
    def test_energy_preserved_by_padding(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((28, 28, 1))
        spec = sample_pattern(RandomizationParams(), rng)
        resized = T.resize_bilinear(Tensor(x), spec.resize_to).data
        out = apply_pattern(x, spec, 36).data
        assert abs(out.sum() - resized.sum()) < 1e-9

    def test_flip(self):
        x = np.random.default_rng(1).random((5, 5, 1))
        out = apply_pattern(x, PatternSpec(5, 0, 0, flip=True), 5).data
        assert np.array_equal(out, x[:, ::-1])

    @pytest.mark.parametrize("seed", range(10))
    def test_output_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        params = RandomizationParams(jitter=ColorJitter.standard(), flip_prob=0.5)
        out = apply_pattern(rng.random((28, 28, 3)), sample_pattern(params, rng), 36).data
        assert out.shape == (36, 36, 3) and out.min() >= 0.0 and out.max() <= 1.0

    def test_bad_spec(self):
        with pytest.raises(ContractError):
            apply_pattern(np.zeros((4, 4, 1)), PatternSpec(5, 1, 0), 5)

    def test_colour_refused_under_gradient(self):
        x = Tensor(np.full((4, 4, 3), 0.5), requires_grad=True)
        with pytest.raises(ContractError):
            apply_pattern(x, PatternSpec(4, 0, 0, brightness=0.1), 4)
        with pytest.raises(ContractError):
            apply_patterns(x, [PatternSpec(4, 0, 0, hue=0.1)], 4)

    def test_stack_matches_single(self):
        rng = np.random.default_rng(2)
        x = rng.random((28, 28, 1))
        specs = list(enumerate_patterns(RandomizationParams(28, 34, 36, 36)))[:6]
        stack = apply_patterns(x, specs, 36).data
        for i, s in enumerate(specs):
            assert np.array_equal(stack[i], apply_pattern(x, s, 36).data)


class TestPatternGradient:
    """Model composed with a fixed pattern, 20 random instances."""

    @pytest.mark.parametrize("seed", range(20))
    def test_model_through_pattern(self, seed):
        rng = np.random.default_rng(seed)
        w = init_model(ModelArch(input_side=6, conv1=2, conv2=3), seed)
        r = int(rng.integers(5, 9))
        spec = PatternSpec(r, int(rng.integers(0, 9 - r + 1)), int(rng.integers(0, 9 - r + 1)),
                           bool(seed % 2))
        check_grad(lambda x: T.sum(forward_logits(w, apply_pattern(x, spec, 9))),
                   rng.uniform(0.05, 0.95, (6, 6, 1)))


class TestColour:
    @pytest.mark.parametrize("seed", range(5))
    def test_hsv_matches_colorsys(self, seed):
        rgb = np.random.default_rng(seed).random((50, 3))
        rgb[0] = [0.5, 0.5, 0.5]
        rgb[1] = 0.0
        ours = rgb_to_hsv(rgb)
        ref = np.array([colorsys.rgb_to_hsv(*p) for p in rgb])
        assert np.allclose(ours, ref, atol=1e-12)
        back = np.array([colorsys.hsv_to_rgb(*p) for p in ref])
        assert np.allclose(hsv_to_rgb(ref), back, atol=1e-12)

    def test_red_to_green(self):
        out = adjust_hue(np.array([[[1.0, 0.0, 0.0]]]), 1 / 3)
        assert np.allclose(out, [[[0.0, 1.0, 0.0]]], atol=1e-12)

    def test_brightness_clamps(self):
        assert np.array_equal(adjust_brightness(np.full((2, 2, 1), 0.8), 0.5), np.ones((2, 2, 1)))

    def test_identities(self):
        x = np.random.default_rng(3).random((6, 6, 3))
        assert np.array_equal(adjust_brightness(x, 0.0), x)
        assert np.allclose(adjust_contrast(x, 1.0), x, atol=1e-15)
        assert np.allclose(adjust_saturation(x, 1.0), x, atol=1e-12)
        assert np.allclose(adjust_hue(x, 0.0), x, atol=1e-12)

    def test_contrast_formula(self):
        x = np.array([[[0.2], [0.6]]])
        assert np.allclose(adjust_contrast(x, 0.5), [[[0.3], [0.5]]], atol=1e-15)

    def test_saturation_zero_is_grey(self):
        out = adjust_saturation(np.random.default_rng(4).random((3, 3, 3)), 0.0)
        assert np.allclose(out[..., 0], out[..., 1]) and np.allclose(out[..., 1], out[..., 2])

    def test_single_channel_rejected(self):
        x = np.full((3, 3, 1), 0.5)
        with pytest.raises(ContractError):
            adjust_saturation(x, 1.2)
        with pytest.raises(ContractError):
            adjust_hue(x, 0.1)


class TestRandomizedPredict:
    def test_probabilities_sum_to_one(self, small_data, small_model):
        params = RandomizationParams(flip_prob=0.5)
        for i in range(5):
            _, probs = randomized_predict(small_model, small_data[1].images[i], params, 7,
                                          np.random.default_rng(i))
            assert abs(probs.sum() - 1.0) < 1e-9 and probs.shape == (10,)

    def test_identity_params_match_bare_model(self, small_data, small_model):
        params = RandomizationParams(28, 28, 29, 28)
        images = small_data[1].images[:20]
        bare = predict(small_model, images)
        ours = [randomized_predict(small_model, im, params, 1, np.random.default_rng(0))[0] for im in images]
        assert ours == bare.tolist()

    def test_more_iterations_do_not_hurt(self, small_data, small_model):
        test = small_data[1].subset(range(150))
        params = RandomizationParams()

        def acc(n):
            preds = [randomized_predict(small_model, im, params, n, np.random.default_rng(i))[0]
                     for i, im in enumerate(test.images)]
            return 100.0 * np.mean(np.array(preds) == test.labels)

        assert acc(30) >= acc(1) - 0.5

    def test_zero_iterations(self, small_model):
        with pytest.raises(ContractError):
            randomized_predict(small_model, np.zeros((28, 28, 1)), RandomizationParams(), 0,
                               np.random.default_rng(0))
