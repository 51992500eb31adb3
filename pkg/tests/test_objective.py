import math

import numpy as np
import pytest

from czsl_stagewise import autodiff as ad
from czsl_stagewise.autodiff import Tensor, grad_check
from czsl_stagewise.errors import ParameterError
from czsl_stagewise.objective import LossWeights, branch_loss, branch_probs, total_loss


def test_uniform_when_dots_equal():
    V = Tensor(np.array([[1.0, 0.0]]))
    T = Tensor(np.array([[1.0, 1.0], [1.0, -1.0], [1.0, 0.5]]) * [1, 0])
    p = branch_probs(V, T, 0.01).data
    assert np.allclose(p, 1 / 3, atol=1e-15)


def test_two_candidate_closed_form():
    V = Tensor(np.array([[1.0, 0.0]]))
    T = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    p = branch_probs(V, T, 1.0, normalize=False).data[0]
    assert np.allclose(p, [0.7311, 0.2689], atol=1e-4)


def test_lower_temperature_sharpens(rng):
    for _ in range(50):
        V, T = Tensor(rng.standard_normal((1, 4))), Tensor(rng.standard_normal((5, 4)))
        assert branch_probs(V, T, 0.05).data.max() > branch_probs(V, T, 0.1).data.max()


def test_rows_sum_to_one(rng):
    p = branch_probs(Tensor(rng.standard_normal((6, 4))), Tensor(rng.standard_normal((7, 4))), 0.01)
    assert np.all(np.abs(p.data.sum(1) - 1) < 1e-12)


def test_branch_loss_values():
    assert branch_loss(Tensor(np.eye(3)), [0, 1, 2]).item() == 0.0
    assert abs(branch_loss(Tensor(np.full((2, 10), 0.1)), [3, 7]).item() - math.log(10)) < 1e-12
    probs = Tensor(np.array([[1.0, 0.0], [math.exp(-2), 1 - math.exp(-2)]]))
    assert abs(branch_loss(probs, [0, 0]).item() - 1.0) < 1e-12


def test_branch_loss_permutation_equivariant(rng):
    p = ad.softmax(Tensor(rng.standard_normal((4, 6)))).data
    lab = rng.integers(0, 6, 4)
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    a = branch_loss(Tensor(p), lab).item()
    b = branch_loss(Tensor(p[:, perm]), inv[lab]).item()
    assert a == b


def test_total_loss_selectors():
    Ls, Lo, Lc = Tensor(0.5), Tensor(0.25), Tensor(0.25)
    assert total_loss(Ls, Lo, Lc, LossWeights(0, 0, 1)).item() == 0.25
    assert total_loss(Ls, Lo, Lc, LossWeights(1, 1, 1)).item() == 1.0
    with pytest.raises(ParameterError):
        LossWeights(0, 0, 0)


def test_total_grad_is_weighted_sum(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    T = [Tensor(rng.standard_normal((n, 4))) for n in (2, 3, 5)]
    lab = [rng.integers(0, n, 3) for n in (2, 3, 5)]

    def parts():
        return [branch_loss(branch_probs(x, t, 0.5), l) for t, l in zip(T, lab)]

    grads = []
    for i in range(3):
        x.zero_grad()
        parts()[i].backward()
        grads.append(x.grad.copy())
    x.zero_grad()
    w = LossWeights(0.5, 2.0, 1.5)
    total_loss(*parts(), w).backward()
    assert np.allclose(x.grad, 0.5 * grads[0] + 2.0 * grads[1] + 1.5 * grads[2], atol=1e-12)
    rep = grad_check(lambda: total_loss(*parts(), w), {"x": x}, tolerance=1e-5)
    assert rep.passed
