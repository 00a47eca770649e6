import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advrand import tensor as T
from advrand.attacks import AttackConfig, AttackResult
from advrand.classifier import ModelArch, forward_logits, init_model, select_correct_subset
from advrand.data import LabeledDataset
from advrand.defense import PatternSpec, RandomizationParams, apply_pattern, count_patterns
from advrand.errors import ContractError
from advrand.harness import (
    PatternTarget, ScenarioReport, ScenarioSpec, centered_pattern, default_ensemble,
    ensemble_target_accuracy, evaluate_defense, image_rng, make_ensemble_pattern_target,
    make_single_pattern_target, make_vanilla_target, normalized_score, one_pixel_pad_params,
    one_pixel_resize_params, placement_patterns, resize_images, run_diagnostic_one_pixel_pad,
    run_diagnostic_one_pixel_resize, run_scenario, score_reports,
)
from advrand.tensor import Tensor

from conftest import check_grad


def tiny_weights(seed=0, side=6):
    return init_model(ModelArch(input_side=side, conv1=2, conv2=3), seed)


class TestTargets:
    def test_vanilla_gradient_equals_model(self):
        w = tiny_weights()
        x = np.random.default_rng(0).random((6, 6, 1))
        a, b = Tensor(x, requires_grad=True), Tensor(x, requires_grad=True)
        ga = T.grad(T.softmax_cross_entropy(make_vanilla_target(w)(a), 2), a)
        gb = T.grad(T.softmax_cross_entropy(forward_logits(w, b), 2), b)
        assert np.array_equal(ga, gb)

    def test_centered_default(self):
        assert centered_pattern(28, 36) == PatternSpec(28, 4, 4)
        target = make_single_pattern_target(init_model(ModelArch(), 0), target=36)
        assert target.patterns == (PatternSpec(28, 4, 4),)

    def test_odd_margin(self):
        with pytest.raises(ContractError, match="odd margin"):
            centered_pattern(28, 35)

    def test_default_ensemble_has_21(self):
        params = RandomizationParams()
        patterns = default_ensemble(params)
        assert len(patterns) == 21 == len(set(patterns))
        assert {p.resize_to for p in patterns} == {28, 30, 32, 34, 36}
        assert all(p.fits(36) for p in patterns)

    def test_singleton_ensemble_equals_single(self):
        w = tiny_weights()
        spec = PatternSpec(6, 1, 2)
        x = Tensor(np.random.default_rng(1).random((6, 6, 1)))
        a = make_ensemble_pattern_target(w, [spec], 9)(x).data
        b = make_single_pattern_target(w, spec, 9)(x).data
        assert np.array_equal(a, b)

    def test_empty_ensemble(self):
        with pytest.raises(ContractError):
            make_ensemble_pattern_target(tiny_weights(), [], 9)

    @pytest.mark.parametrize("seed", range(20))
    def test_ensemble_gradient_is_mean_of_parts(self, seed):
        rng = np.random.default_rng(seed)
        w = tiny_weights(seed)
        specs = [PatternSpec(int(r), int(rng.integers(0, 10 - r)), int(rng.integers(0, 10 - r)))
                 for r in rng.integers(6, 10, size=4)]
        x0 = rng.random((6, 6, 1))
        label = seed % 10

        def mean_loss(x):
            z = make_ensemble_pattern_target(w, specs, 9)(x)
            return T.mean(T.softmax_cross_entropy(z, np.full(len(specs), label)))

        x = Tensor(x0, requires_grad=True)
        g = T.grad(mean_loss(x), x)
        parts = []
        for s in specs:
            xi = Tensor(x0, requires_grad=True)
            parts.append(T.grad(T.softmax_cross_entropy(forward_logits(w, apply_pattern(xi, s, 9)), label), xi))
        assert np.max(np.abs(g - np.mean(parts, axis=0))) < 1e-10
        check_grad(mean_loss, x0)

    def test_ensemble_target_accuracy_count(self):
        # 7 of 21 patterns predict class 0
        class Fake(PatternTarget):
            def __call__(self, x):
                z = np.zeros((21, 10))
                z[:7, 0] = 1.0
                z[7:, 1] = 1.0
                return Tensor(z)

        fake = Fake(tiny_weights(), tuple(PatternSpec(1, i, 0) for i in range(21)), 30)
        res = [AttackResult(np.zeros((6, 6, 1)), np.zeros((6, 6, 1)), 0, False, 1)]
        assert ensemble_target_accuracy(fake, res) == pytest.approx(1 / 3, abs=1e-15)

    def test_ensemble_accuracy_needs_pattern_target(self):
        with pytest.raises(ContractError):
            ensemble_target_accuracy(make_vanilla_target(tiny_weights()), [])

    def test_clean_ensemble_accuracy_is_mean_pattern_accuracy(self, small_data, small_model):
        sub = small_data[1].subset(range(10))
        patterns = default_ensemble(RandomizationParams())[:5]
        target = make_ensemble_pattern_target(small_model, patterns, 36)
        res = [AttackResult(im, np.zeros_like(im), int(y), False, 0) for im, y in zip(sub.images, sub.labels)]
        per_pattern = []
        for p in patterns:
            z = forward_logits(small_model, Tensor(np.stack([apply_pattern(im, p, 36).data for im in sub.images])))
            per_pattern.append(np.mean(np.argmax(z.data, axis=1) == sub.labels))
        assert ensemble_target_accuracy(target, res) == pytest.approx(np.mean(per_pattern), abs=1e-12)


@pytest.fixture(scope="module")
def subset(small_data, small_model):
    return select_correct_subset([small_model], small_data[1], 12, seed=0)


class TestScenarios:
    def test_spec_validation(self):
        with pytest.raises(ContractError):
            ScenarioSpec("bogus")
        with pytest.raises(ContractError):
            ScenarioSpec("ensemble", pattern_set=())
        with pytest.raises(ContractError):
            ScenarioSpec(defense_runs=0)

    def test_zero_epsilon_fgsm(self, small_model, subset):
        params = RandomizationParams()
        rep = run_scenario(small_model, ScenarioSpec("vanilla"), AttackConfig("fgsm", epsilon=0.0),
                           subset, params, master_seed=0)
        assert rep.target_accuracy == 1.0
        clean = evaluate_defense(small_model, subset.images, subset.labels, params, 3, 0, "Vanilla")
        assert rep.defense_accuracy_runs == [float(v) for v in clean.mean(axis=1)]
        assert rep.defense_accuracy_mean == pytest.approx(np.mean(rep.defense_accuracy_runs))

    def test_report_fields(self, small_model, subset):
        rep = run_scenario(small_model, ScenarioSpec("single", defense_runs=2),
                           AttackConfig("fgsm", epsilon=5 / 255), subset, RandomizationParams(), 1)
        assert rep.scenario == "SinglePattern" and rep.attack == "FGSM-5" and rep.n_images == 12
        assert len(rep.defense_accuracy_runs) == 2 and np.array(rep.defense_correct).shape == (2, 12)
        assert all(0.0 <= v <= 1.0 for v in rep.defense_accuracy_runs + [rep.target_accuracy])
        again = ScenarioReport.from_dict(rep.to_dict())
        assert again.to_dict() == rep.to_dict()

    def test_sweep_label(self, small_model, subset):
        rep = run_scenario(small_model, ScenarioSpec("vanilla", defense_runs=1),
                           AttackConfig("fgsm", epsilon=0.0), subset.subset(range(3)),
                           RandomizationParams(), 0, n_iterations=5)
        assert rep.scenario == "Vanilla@5" and rep.config["n_iterations"] == 5

    def test_deterministic_and_worker_independent(self, small_model, subset):
        args = (small_model, ScenarioSpec("vanilla"), AttackConfig("deepfool", max_iter=10),
                subset.subset(range(6)), RandomizationParams(), 4)
        a = run_scenario(*args).to_dict()
        b = run_scenario(*args).to_dict()
        c = run_scenario(*args, workers=2).to_dict()
        assert a == b == c

    def test_image_rng_streams(self):
        a = image_rng(0, 1, 0, "Vanilla").random()
        assert a == image_rng(0, 1, 0, "Vanilla").random()
        others = {image_rng(0, 2, 0, "Vanilla").random(), image_rng(0, 1, 1, "Vanilla").random(),
                  image_rng(0, 1, 0, "SinglePattern").random(), image_rng(1, 1, 0, "Vanilla").random()}
        assert a not in others and len(others) == 4

    def test_empty_dataset(self, small_model):
        empty = LabeledDataset(np.zeros((0, 28, 28, 1)), np.zeros(0, int))
        rep = run_scenario(small_model, ScenarioSpec("vanilla"), AttackConfig("fgsm"), empty,
                           RandomizationParams(), 0)
        assert rep.n_images == 0


class TestDiagnostics:
    def test_pattern_spaces(self):
        assert count_patterns(one_pixel_pad_params(36)) == 4
        assert count_patterns(one_pixel_resize_params(36)) == 1

    def test_four_placements_distinct(self):
        x = np.random.default_rng(0).random((35, 35, 1))
        canvases = [apply_pattern(x, p, 36).data for p in placement_patterns(35, 36, ("tl", "tr", "bl", "br"))]
        assert all(not np.array_equal(canvases[i], canvases[j]) for i in range(4) for j in range(i + 1, 4))

    def test_wrong_side_rejected(self, small_data, small_model):
        with pytest.raises(ContractError):
            run_diagnostic_one_pixel_pad(small_model, AttackConfig("fgsm"), small_data[1].subset(range(2)), 0)

    def test_resize_zero_epsilon_is_clean_accuracy(self, small_data, small_model):
        data = resize_images(small_data[1].subset(range(20)), 35)
        rep = run_diagnostic_one_pixel_resize(small_model, AttackConfig("fgsm", epsilon=0.0), data, 0)
        canvases = np.stack([apply_pattern(im, PatternSpec(36, 0, 0), 36).data for im in data.images])
        clean = np.mean(np.argmax(forward_logits(small_model, canvases).data, axis=1) == data.labels)
        assert rep.defense_accuracy_mean == pytest.approx(clean)
        assert len(rep.defense_accuracy_runs) == 1 and rep.config["pattern_space"] == 1

    def test_pad_runs_once(self, small_data, small_model):
        data = resize_images(small_data[1].subset(range(4)), 35)
        rep = run_diagnostic_one_pixel_pad(small_model, AttackConfig("fgsm", epsilon=2 / 255), data, 0)
        assert len(rep.defense_accuracy_runs) == 1 and rep.n_patterns == 3
        assert rep.config["pattern_space"] == 4


class TestScore:
    def test_hand_count(self):
        assert abs(normalized_score([[1, 0, 1], [1, 1, 0]]) - 4 / 6) < 1e-12

    def test_all_correct(self):
        assert normalized_score([[1, 1], [1, 1, 1]]) == 1.0

    def test_single_attack_is_accuracy(self):
        assert normalized_score([[1, 0, 0, 1]]) == 0.5

    def test_runs_are_averaged_per_image(self):
        assert normalized_score([[[1, 0, 1], [1, 1, 1]]]) == pytest.approx(5 / 6, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ContractError):
            normalized_score([])
        with pytest.raises(ContractError):
            normalized_score([[]])

    def test_from_reports(self):
        reps = [ScenarioReport("m", "a", "s", 0.0, 0.5, [0.5], 2, defense_correct=[[1, 0]]),
                ScenarioReport("m", "b", "s", 0.0, 1.0, [1.0], 1, defense_correct=[[1]])]
        assert score_reports(reps) == pytest.approx(2 / 3, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=20), min_size=1, max_size=6))
    def test_bounded_and_counts(self, outcomes):
        s = normalized_score(outcomes)
        assert 0.0 <= s <= 1.0
        flat = [v for row in outcomes for v in row]
        assert abs(s - sum(flat) / len(flat)) < 1e-12
        if len({len(r) for r in outcomes}) == 1:
            assert abs(s - np.mean([np.mean(r) for r in outcomes])) < 1e-12
