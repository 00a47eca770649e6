import numpy as np
import pytest

from advrand import tensor as T
from advrand.classifier import (
    PARAM_NAMES, ModelArch, accuracy, adversarial_train, forward_logits, init_model, predict,
    select_correct_subset, train,
)
from advrand.data import LabeledDataset, make_synthetic
from advrand.errors import ContractError, DimensionError
from advrand.tensor import Tensor

from conftest import check_grad

TINY = ModelArch(conv1=3, conv2=4)


class TestForward:
    @pytest.mark.parametrize("side", [28, 29, 31, 36, 40])
    def test_logit_shape_any_side(self, side):
        w = init_model(ModelArch(), 0)
        x = np.random.default_rng(side).random((side, side, 1))
        assert forward_logits(w, x).shape == (10,)
        assert forward_logits(w, x[None].repeat(2, 0)).shape == (2, 10)

    def test_batch_equals_single(self):
        w = init_model(ModelArch(), 1)
        xs = np.random.default_rng(0).random((3, 30, 30, 1))
        batch = forward_logits(w, xs).data
        for i in range(3):
            assert np.allclose(forward_logits(w, xs[i]).data, batch[i], atol=1e-12)

    def test_init_is_deterministic(self):
        a, b = init_model(ModelArch(), 5), init_model(ModelArch(), 5)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in PARAM_NAMES)
        c = init_model(ModelArch(), 6)
        assert not np.array_equal(a.params["conv1.w"], c.params["conv1.w"])

    def test_wrong_channels(self):
        with pytest.raises(DimensionError):
            forward_logits(init_model(ModelArch(), 0), np.zeros((28, 28, 3)))

    def test_too_small(self):
        w = init_model(ModelArch(), 0)
        with pytest.raises(DimensionError):
            forward_logits(w, np.zeros((w.arch.min_side - 1,) * 2 + (1,)))
        assert forward_logits(w, np.zeros((w.arch.min_side,) * 2 + (1,))).shape == (10,)

    def test_predict_ties_lowest_index(self):
        w = init_model(ModelArch(), 0)
        for k in PARAM_NAMES:
            w.params[k] = np.zeros_like(w.params[k])
        assert predict(w, np.zeros((2, 28, 28, 1))).tolist() == [0, 0]

    def test_fingerprint(self):
        assert ModelArch().fingerprint() == "in28x1-conv3x3s1c16-conv3x3s2c32-gap-dense10"


class TestModelGradients:
    """Gradient of the loss through the whole network, with respect to the image and the weights."""

    @pytest.mark.parametrize("seed", range(20))
    def test_input_gradient(self, seed):
        rng = np.random.default_rng(seed)
        w = init_model(ModelArch(input_side=8, conv1=3, conv2=4), seed)
        check_grad(lambda x: T.softmax_cross_entropy(forward_logits(w, x), seed % 10),
                   rng.random((8, 8, 1)))

    def test_weight_gradients(self):
        rng = np.random.default_rng(4)
        w = init_model(ModelArch(input_side=7, conv1=2, conv2=3), 4)
        x = Tensor(rng.random((2, 7, 7, 1)))

        def build(*leaves):
            params = dict(zip(PARAM_NAMES, leaves))
            return T.mean(T.softmax_cross_entropy(forward_logits(w, x, params), np.array([1, 3])))

        check_grad(build, *[w.params[k] + rng.normal(0, 0.05, w.params[k].shape) for k in PARAM_NAMES])


class TestTraining:
    def test_loss_decreases(self, small_data):
        train_set, _ = small_data
        hist = []
        train(init_model(TINY, 0), train_set.subset(range(300)), epochs=3, lr=0.05,
              batch_size=32, seed=0, history=hist)
        assert hist[-1] < hist[0]

    def test_deterministic(self, small_data):
        data = small_data[0].subset(range(96))
        a = train(init_model(TINY, 0), data, 1, 0.05, 32, seed=7, scale_range=(28, 31))
        b = train(init_model(TINY, 0), data, 1, 0.05, 32, seed=7, scale_range=(28, 31))
        assert all(np.array_equal(a.params[k], b.params[k]) for k in PARAM_NAMES)

    def test_mix_zero_equals_train(self, small_data):
        data = small_data[0].subset(range(96))
        a = train(init_model(TINY, 0), data, 1, 0.05, 32, seed=3)
        b = adversarial_train(init_model(TINY, 0), data, 1, 0.05, 32, [0.01], 0.0, seed=3)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in PARAM_NAMES)
        assert not b.adversarially_trained

    def test_adversarial_flag_and_meta(self, small_data):
        data = small_data[0].subset(range(64))
        w = adversarial_train(init_model(TINY, 0), data, 1, 0.05, 32, [2 / 255, 4 / 255], 0.5, seed=0)
        assert w.adversarially_trained and w.meta["mix_fraction"] == 0.5

    def test_input_weights_untouched(self, small_data):
        w0 = init_model(TINY, 0)
        before = w0.params["dense.w"].copy()
        train(w0, small_data[0].subset(range(32)), 1, 0.05, 32, seed=0)
        assert np.array_equal(w0.params["dense.w"], before)

    @pytest.mark.parametrize("kw", [
        dict(mix_fraction=1.5), dict(epsilon_list=[0.0]), dict(epsilon_list=[]), dict(epochs=0),
    ])
    def test_rejects_bad_arguments(self, small_data, kw):
        args = dict(epochs=1, lr=0.05, batch_size=32, epsilon_list=[0.01], mix_fraction=0.5, seed=0)
        args.update(kw)
        with pytest.raises(ContractError):
            adversarial_train(init_model(TINY, 0), small_data[0].subset(range(8)), **args)

    def test_empty_dataset(self):
        empty = LabeledDataset(np.zeros((0, 28, 28, 1)), np.zeros(0, int))
        with pytest.raises(ContractError):
            train(init_model(TINY, 0), empty, 1, 0.05, 32, seed=0)

    def test_small_model_learns(self, small_data, small_model):
        assert accuracy(small_model, small_data[1]) > 0.75


class TestCorrectSubset:
    def test_subset_is_all_correct(self, small_data, small_model):
        sub = select_correct_subset([small_model], small_data[1], 50, seed=0)
        assert len(sub) == 50 and accuracy(small_model, sub) == 1.0
        assert sub.meta["source_index"] == sorted(sub.meta["source_index"])

    def test_seeded(self, small_data, small_model):
        a = select_correct_subset([small_model], small_data[1], 20, seed=1)
        b = select_correct_subset([small_model], small_data[1], 20, seed=1)
        assert a.meta["source_index"] == b.meta["source_index"]

    def test_zero_gives_empty(self, small_data, small_model):
        assert len(select_correct_subset([small_model], small_data[1], 0, seed=0)) == 0

    def test_too_many_reports_count(self, small_data, small_model):
        n_ok = int(np.sum(predict(small_model, small_data[1].images) == small_data[1].labels))
        with pytest.raises(ContractError, match=f"only {n_ok} images"):
            select_correct_subset([small_model], small_data[1], n_ok + 1, seed=0)

    def test_intersection_of_models(self, small_data, small_model):
        other = init_model(ModelArch(conv1=8, conv2=16), 9)
        test = small_data[1]
        both = (predict(small_model, test.images) == test.labels) & (predict(other, test.images) == test.labels)
        n = int(both.sum())
        sub = select_correct_subset([small_model, other], test, n, seed=0)
        assert sub.meta["source_index"] == np.flatnonzero(both).tolist()


class TestData:
    def test_balanced_and_seeded(self):
        a, _ = make_synthetic(n_train=100, n_test=20, seed=4)
        b, _ = make_synthetic(n_train=100, n_test=20, seed=4)
        assert np.array_equal(a.images, b.images)
        assert np.bincount(a.labels).tolist() == [10] * 10

    def test_rgb_in_range(self):
        _, test = make_synthetic(n_train=0, n_test=20, channels=3, seed=1)
        assert test.images.shape == (20, 28, 28, 3)
        assert 0.0 <= test.images.min() and test.images.max() <= 1.0

    def test_dataset_validation(self):
        with pytest.raises(ContractError):
            LabeledDataset(np.full((1, 4, 4, 1), 1.5), [0])
        with pytest.raises(ContractError):
            LabeledDataset(np.zeros((1, 4, 4, 1)), [10])
