import numpy as np
import pytest

from advrand.classifier import ModelArch, init_model, train
from advrand.data import make_synthetic
from advrand.tensor import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grad(build, *arrays, tol=1e-4, h=1e-5):
    """``build(*tensors)`` returns a scalar tensor; compare tape and numeric gradients for every input."""
    from advrand import tensor as T

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    tape = T.grad(build(*leaves), *leaves)
    tape = tape if isinstance(tape, list) else [tape]
    for i, a in enumerate(arrays):
        def f(v, i=i):
            args = [Tensor(v) if j == i else Tensor(arrays[j]) for j in range(len(arrays))]
            return build(*args).item()

        err = rel_err(tape[i], numeric_grad(f, a, h))
        assert err < tol, f"input {i}: relative error {err:.2e}"


@pytest.fixture(scope="session")
def small_data():
    return make_synthetic(n_train=3000, n_test=400, seed=3)


@pytest.fixture(scope="session")
def small_model(small_data):
    """A quickly trained model: good enough for directional checks."""
    train_set, _ = small_data
    w = init_model(ModelArch(), seed=0)
    return train(w, train_set, epochs=8, lr=0.05, batch_size=32, seed=0, scale_range=(28, 37))


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
