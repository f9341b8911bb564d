import numpy as np
import pytest

from equiflow import (
    Dataset,
    ScalarField,
    canonical_shear,
    dataset_loss,
    default_recipe,
    linear_model,
    mlp_tanh,
    pullback_loss,
    quadratic_loss,
)


def tanh_unit_loss():
    """Loss of a single tanh unit w2*tanh(w1*x + b) on two fixed samples."""
    samples = [(0.5, 0.3), (-1.0, -0.2)]

    def fn(theta):
        w1, b, w2 = theta[0], theta[1], theta[2]
        total = 0.0
        for x, y in samples:
            resid = w2 * np.tanh(w1 * x + b) - y
            total = total + 0.5 * resid * resid
        return total / len(samples)

    return ScalarField(3, fn, name="tanh-unit mse")


def fd_scalar_corpus():
    """Named scalar fields covering every loss family the laboratory uses."""
    spd = np.array([[2.0, 1.0], [1.0, 3.0]])
    corpus = [
        ("quadratic-2d", quadratic_loss(spd)),
        ("tanh-unit", tanh_unit_loss()),
    ]
    for dim in (2, 4, 8):
        model, data = default_recipe(dim, seed=0, kind="mlp-tanh")
        corpus.append((f"mlp-loss-{dim}", dataset_loss(model, data)))
    model, data = default_recipe(4, seed=0)
    loss = dataset_loss(model, data)
    corpus.append(("linear-loss-4", loss))
    corpus.append(("sheared-linear-loss-4", pullback_loss(canonical_shear(0.5, dim=4), loss)))
    return corpus


def fd_vector_corpus():
    """Named vector maps: reparameterizations and model outputs."""
    from equiflow import affine_diffeomorphism, sample_diffeomorphism

    rng = np.random.default_rng(11)
    corpus = []
    for family in ("euclidean", "affine", "shear"):
        g = sample_diffeomorphism(family, 3, rng)
        corpus.append((f"{family}-forward", g.forward_map))
        corpus.append((f"{family}-inverse", g.inverse_map))
    scale = affine_diffeomorphism(np.diag([2.0, 0.5, 1.5]))
    corpus.append(("diagonal-forward", scale.forward_map))
    model = mlp_tanh(1, 1, 1, bias=True)
    corpus.append(("mlp-output", model.output_map([0.7])))
    lin = linear_model(3, 2)
    corpus.append(("linear-output", lin.output_map([0.2, -0.4, 1.1])))
    return corpus


@pytest.fixture(scope="session")
def scalar_corpus():
    return fd_scalar_corpus()


@pytest.fixture(scope="session")
def vector_corpus():
    return fd_vector_corpus()


@pytest.fixture()
def two_point_linear():
    model = linear_model(1, 1)
    data = Dataset([[1.0], [2.0]], [[2.0], [1.0]])
    return model, data
