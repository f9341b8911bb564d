"""Small-step limiting flow fields of common training algorithms.

Each constructor returns a `FlowField` mapping an `OptimizerState` to a
`StateVelocity`.  Preconditioned flows re-evaluate their preconditioner at
every state; nonautonomous flows regularize the 1/xi damping below `XI_MIN`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import diffcalc
from .diffcalc import ScalarField
from .errors import ConfigurationError, SingularMatrixError
from .geometry import Connection, OptimizerState, Preconditioner, StateVelocity
from .models import Dataset, GaussianHead, Model

# 1/xi terms are evaluated at max(xi, XI_MIN); trajectories start there too.
XI_MIN = 1e-3

# Damping constant of the accelerated-gradient limit.
NESTEROV_DAMPING = 3.0

# Relative singular-value cutoff of the pseudo-inverse fallback.
PINV_CUTOFF = 1e-10

# Beyond this condition number a Hessian solve is refused.
HESSIAN_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class FlowField:
    """State-velocity field of one algorithm on one loss."""

    algorithm: str
    order: int
    autonomous: bool
    velocity: Callable
    metadata: dict = field(default_factory=dict)

    def __call__(self, state: OptimizerState) -> StateVelocity:
        if state.order != self.order:
            raise ConfigurationError(
                f"{self.algorithm} flow has order {self.order}, state has {state.order}"
            )
        return self.velocity(state)


def gradient_flow(loss: ScalarField) -> FlowField:
    """dtheta/dxi = -grad L."""

    def velocity(state):
        return StateVelocity((-diffcalc.gradient(loss, state.theta),))

    return FlowField("gd", order=1, autonomous=True, velocity=velocity)


def nesterov_flow(loss: ScalarField, xi_min: float = XI_MIN) -> FlowField:
    """d^2 theta/dxi^2 = -(3/xi) dtheta/dxi - grad L, started at small xi."""

    def velocity(state):
        damping = NESTEROV_DAMPING / max(state.time, xi_min)
        grad = diffcalc.gradient(loss, state.theta)
        return StateVelocity((state.velocity, -damping * state.velocity - grad))

    return FlowField("nesterov", order=2, autonomous=False, velocity=velocity)


def adam_stationary_flow(loss: ScalarField, epsilon: float = 1e-8) -> FlowField:
    """Stationary-moment full-batch limit: componentwise -g / (|g| + eps)."""
    if epsilon <= 0.0:
        raise ConfigurationError(f"adam epsilon must be positive, got {epsilon}")

    def velocity(state):
        grad = diffcalc.gradient(loss, state.theta)
        return StateVelocity((-grad / (np.abs(grad) + epsilon),))

    return FlowField("adam", order=1, autonomous=True, velocity=velocity)


def newton_flow(loss: ScalarField, connection: Optional[Connection] = None) -> FlowField:
    """dtheta/dxi = -H^-1 grad L with H the (optionally covariant) Hessian."""

    def velocity(state):
        grad = diffcalc.gradient(loss, state.theta)
        hess = diffcalc.hessian(loss, state.theta)
        if connection is not None:
            gamma = connection.christoffel_at(state.theta)
            hess = hess - np.einsum("kij,k->ij", gamma, grad)
        if np.linalg.cond(hess) > HESSIAN_MAX_CONDITION:
            raise SingularMatrixError(
                "Hessian too ill-conditioned for Newton flow", point=state.theta
            )
        return StateVelocity((-np.linalg.solve(hess, grad),))

    tag = "newton" if connection is None else "newton-covariant"
    return FlowField(tag, order=1, autonomous=True, velocity=velocity)


def ggn_matrix(model: Model, data: Dataset, weight, theta) -> Preconditioner:
    """Generalized Gauss-Newton form (1/|S|) sum J^T M J, summed in index order."""
    weight = np.asarray(weight, dtype=float)
    p = model.out_dim
    if weight.shape != (p, p):
        raise ConfigurationError(
            f"GGN weight shape {weight.shape} does not match output dim {p}"
        )
    if np.max(np.abs(weight - weight.T)) > 1e-10 or np.min(np.linalg.eigvalsh(weight)) < -1e-10:
        raise ConfigurationError("GGN weight must be symmetric positive semidefinite")
    if data.inputs.shape[1] != model.in_dim or data.targets.shape[1] != model.out_dim:
        raise ConfigurationError("dataset dimensions do not match model")

    theta = np.asarray(theta, dtype=float)
    total = np.zeros((model.param_dim, model.param_dim))
    for k in range(data.size):
        jac = diffcalc.jacobian(model.output_map(data.inputs[k]), theta)
        total = total + jac.T @ (weight @ jac)
    out = total / data.size
    return Preconditioner(0.5 * (out + out.T), variance="covariant")


def fisher_matrix(head: GaussianHead, data: Dataset, theta) -> Preconditioner:
    """Fisher information of the Gaussian head, realized as GGN with the
    inverse noise variance on the diagonal."""
    weight = np.eye(head.model.out_dim) / head.noise_variance
    return ggn_matrix(head.model, data, weight, theta)


def _apply_inverse(matrix, vec, metadata, theta):
    # SVD pseudo-inverse; drops directions below PINV_CUTOFF * sigma_max
    u, s, vt = np.linalg.svd(matrix)
    s_max = s[0] if s.size else 0.0
    keep = s > PINV_CUTOFF * s_max
    if not np.all(keep):
        metadata["pinv_cutoff_applied"] = True
        metadata["pinv_cutoff_points"] = metadata.get("pinv_cutoff_points", 0) + 1
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return vt.T @ (inv_s * (u.T @ vec))


def preconditioned_flow(loss: ScalarField, precond: Callable) -> FlowField:
    """dtheta/dxi = -P(theta)^-1 grad L for a covariant preconditioner field."""
    metadata: dict = {}

    def velocity(state):
        grad = diffcalc.gradient(loss, state.theta)
        form = precond(state.theta)
        if form.variance == "contravariant":
            step = form.matrix @ grad
        else:
            step = _apply_inverse(form.matrix, grad, metadata, state.theta)
        return StateVelocity((-step,))

    return FlowField(
        "preconditioned", order=1, autonomous=True, velocity=velocity, metadata=metadata
    )


def accelerated_flow(
    loss: ScalarField,
    precond: Callable,
    r: float = NESTEROV_DAMPING,
    connection: Optional[Connection] = None,
    xi_min: float = XI_MIN,
) -> FlowField:
    """Accelerated preconditioned flow:

        d^2 theta/dxi^2 = -(r/xi) dtheta/dxi - P(theta)^-1 grad L,

    with the acceleration read covariantly when a connection is supplied
    (the quadratic-in-velocity Christoffel term then enters the right side).
    """
    if r <= 0.0:
        raise ConfigurationError(f"damping constant r must be positive, got {r}")
    metadata: dict = {}

    def velocity(state):
        damping = r / max(state.time, xi_min)
        grad = diffcalc.gradient(loss, state.theta)
        form = precond(state.theta)
        if form.variance == "contravariant":
            step = form.matrix @ grad
        else:
            step = _apply_inverse(form.matrix, grad, metadata, state.theta)
        accel = -damping * state.velocity - step
        if connection is not None:
            gamma = connection.christoffel_at(state.theta)
            accel = accel - np.einsum("kij,i,j->k", gamma, state.velocity, state.velocity)
        return StateVelocity((state.velocity, accel))

    return FlowField(
        "accelerated", order=2, autonomous=False, velocity=velocity, metadata=metadata
    )


def identity_preconditioner(dim: int) -> Callable:
    """Constant identity form; reduces preconditioned flows to their plain kin."""
    eye = np.eye(dim)
    return lambda theta: Preconditioner(eye, variance="covariant")
