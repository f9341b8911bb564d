"""Reparameterizations and how losses, states, and bilinear forms transform.

The diffeomorphism catalog covers the five families the laboratory classifies
against: translations, Euclidean motions, signed permutations with shifts,
general affine maps, and triangular shears.  Shears are the only nonlinear
family; their triangular structure gives an exact forward-substitution
inverse and a unit-determinant Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import diffcalc
from .diffcalc import ScalarField, VectorMap
from .errors import ConfigurationError, EvaluationDomainError, SingularMatrixError
from .models import Model

FAMILIES = ("translation", "euclidean", "signed-permutation", "affine", "shear")

NATURALIZER_CONDITIONS = ("orthogonal-jacobian", "signed-permutation", "affine")

# Matrices whose inversion backs a transform are rejected beyond this.
MAX_CONDITION = 1e12

_SHEAR_FUNCS = {"sin": np.sin, "tanh": np.tanh}


# ---------------------------------------------------------------------------
# optimizer states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    """Flow time plus the stack [theta, dtheta/dxi, ...] up to order-1 entries."""

    time: float
    derivs: tuple

    def __post_init__(self):
        derivs = tuple(np.asarray(d, dtype=float) for d in self.derivs)
        object.__setattr__(self, "derivs", derivs)
        if not 1 <= len(derivs) <= 2:
            raise ConfigurationError(f"state order must be 1 or 2, got {len(derivs)}")
        if not math.isfinite(self.time) or self.time < 0.0:
            raise ConfigurationError(f"state time must be finite and >= 0, got {self.time}")
        for d in derivs:
            if not np.all(np.isfinite(d)):
                raise EvaluationDomainError("non-finite entry in optimizer state")

    @property
    def order(self) -> int:
        return len(self.derivs)

    @property
    def theta(self) -> np.ndarray:
        return self.derivs[0]

    @property
    def velocity(self) -> np.ndarray:
        if self.order < 2:
            raise ConfigurationError("order-1 state has no velocity entry")
        return self.derivs[1]

    def as_vector(self) -> np.ndarray:
        return np.concatenate(self.derivs)


@dataclass(frozen=True)
class StateVelocity:
    """The xi-derivative of each state entry."""

    dderivs: tuple

    def __post_init__(self):
        dderivs = tuple(np.asarray(d, dtype=float) for d in self.dderivs)
        object.__setattr__(self, "dderivs", dderivs)
        for d in dderivs:
            if not np.all(np.isfinite(d)):
                raise EvaluationDomainError("non-finite entry in state velocity")

    @property
    def order(self) -> int:
        return len(self.dderivs)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(self.dderivs)


def state_order1(theta, time: float = 0.0) -> OptimizerState:
    return OptimizerState(time, (np.asarray(theta, dtype=float),))


def state_order2(theta, velocity, time: float) -> OptimizerState:
    return OptimizerState(
        time, (np.asarray(theta, dtype=float), np.asarray(velocity, dtype=float))
    )


# ---------------------------------------------------------------------------
# preconditioners and connections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preconditioner:
    """A symmetric bilinear form with its index placement.

    `variance` is "covariant" for lower-index forms (Fisher, GGN, Hessian)
    and "contravariant" for upper-index forms (their inverses).
    """

    matrix: np.ndarray
    variance: str = "covariant"

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError("preconditioner must be a square matrix")
        if self.variance not in ("covariant", "contravariant"):
            raise ConfigurationError(f"unknown variance tag {self.variance!r}")
        if matrix.size and np.max(np.abs(matrix - matrix.T)) > 1e-8:
            raise ConfigurationError("preconditioner matrix is not symmetric")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Connection:
    """Christoffel symbols Gamma^k_ij(theta), symmetric in (i, j)."""

    dim: int
    christoffel: Callable

    def christoffel_at(self, theta) -> np.ndarray:
        gamma = np.asarray(self.christoffel(np.asarray(theta, dtype=float)), dtype=float)
        if gamma.shape != (self.dim, self.dim, self.dim):
            raise ConfigurationError(f"christoffel shape {gamma.shape} for dim {self.dim}")
        return gamma


def flat_connection(dim: int) -> Connection:
    zeros = np.zeros((dim, dim, dim))
    return Connection(dim, lambda theta: zeros)


# ---------------------------------------------------------------------------
# diffeomorphisms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diffeomorphism:
    """Invertible smooth reparameterization with exact inverse and derivatives."""

    family: str
    forward_map: VectorMap
    inverse_map: VectorMap
    label: str = ""

    @property
    def dim(self) -> int:
        return self.forward_map.in_dim

    def forward(self, theta) -> np.ndarray:
        return self.forward_map.value(theta)

    def inverse(self, theta_bar) -> np.ndarray:
        return self.inverse_map.value(theta_bar)

    def jacobian(self, theta) -> np.ndarray:
        return diffcalc.jacobian(self.forward_map, theta)

    def second_derivatives(self, theta) -> np.ndarray:
        return diffcalc.second_derivatives(self.forward_map, theta)

    def inverse_jacobian(self, theta_bar) -> np.ndarray:
        return diffcalc.jacobian(self.inverse_map, theta_bar)

    def inverse_second_derivatives(self, theta_bar) -> np.ndarray:
        return diffcalc.second_derivatives(self.inverse_map, theta_bar)


def affine_diffeomorphism(matrix, shift=None, family="affine", label="") -> Diffeomorphism:
    """theta_bar = A theta + c with the exact inverse A^-1 (theta_bar - c)."""
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    if matrix.shape != (n, n) or shift.shape != (n,):
        raise ConfigurationError("affine map needs square matrix and matching shift")
    if np.linalg.cond(matrix) > MAX_CONDITION:
        raise SingularMatrixError("affine matrix is numerically singular")
    inv = np.linalg.inv(matrix)

    fwd = VectorMap(n, n, lambda theta: matrix @ np.asarray(theta) + shift, name="affine")
    bwd = VectorMap(n, n, lambda tbar: inv @ (np.asarray(tbar) - shift), name="affine^-1")
    return Diffeomorphism(family, fwd, bwd, label or family)


def translation(shift) -> Diffeomorphism:
    shift = np.asarray(shift, dtype=float)
    return affine_diffeomorphism(np.eye(shift.shape[0]), shift, family="translation")


def identity(dim: int) -> Diffeomorphism:
    return affine_diffeomorphism(np.eye(dim), family="translation", label="identity")


def shear_diffeomorphism(coeffs, func: str = "sin", label="") -> Diffeomorphism:
    """Triangular shear theta_bar_k = theta_k + sum_{j<k} C[k,j] phi(theta_j).

    The strictly lower-triangular coefficient matrix guarantees a
    unit-determinant Jacobian and an exact forward-substitution inverse.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[0]
    if coeffs.shape != (n, n) or np.any(np.triu(coeffs) != 0.0):
        raise ConfigurationError("shear coefficients must be strictly lower triangular")
    if func not in _SHEAR_FUNCS:
        raise ConfigurationError(f"unknown shear function {func!r}")
    phi = _SHEAR_FUNCS[func]

    def fwd(theta):
        theta = np.asarray(theta)
        out = [theta[0]]
        for k in range(1, n):
            acc = theta[k]
            for j in range(k):
                if coeffs[k, j] != 0.0:
                    acc = acc + coeffs[k, j] * phi(theta[j])
            out.append(acc)
        return np.array(out)

    def bwd(tbar):
        tbar = np.asarray(tbar)
        out = [tbar[0]]
        for k in range(1, n):
            acc = tbar[k]
            for j in range(k):
                if coeffs[k, j] != 0.0:
                    acc = acc - coeffs[k, j] * phi(out[j])
            out.append(acc)
        return np.array(out)

    return Diffeomorphism(
        "shear",
        VectorMap(n, n, fwd, name="shear"),
        VectorMap(n, n, bwd, name="shear^-1"),
        label or f"shear[{func}]",
    )


def canonical_shear(beta: float, dim: int = 2, func: str = "sin") -> Diffeomorphism:
    """The reference shear (theta_1, theta_2 + beta phi(theta_1), ...)."""
    coeffs = np.zeros((dim, dim))
    for k in range(1, dim):
        coeffs[k, k - 1] = beta
    return shear_diffeomorphism(coeffs, func=func, label=f"shear[{func},{beta}]")


def invert(g: Diffeomorphism) -> Diffeomorphism:
    """The inverse diffeomorphism (forward and inverse maps swapped)."""
    return Diffeomorphism(
        g.family, g.inverse_map, g.forward_map, label=f"{g.label or g.family}^-1"
    )


def compose(outer: Diffeomorphism, inner: Diffeomorphism) -> Diffeomorphism:
    """The diffeomorphism applying `inner` first, then `outer`."""
    if outer.dim != inner.dim:
        raise ConfigurationError("cannot compose maps of different dimensions")
    n = outer.dim
    fwd = VectorMap(n, n, lambda theta: outer.forward_map.fn(inner.forward_map.fn(theta)))
    bwd = VectorMap(n, n, lambda tbar: inner.inverse_map.fn(outer.inverse_map.fn(tbar)))
    return Diffeomorphism(
        "composite", fwd, bwd, label=f"{outer.label or outer.family}*{inner.label or inner.family}"
    )


# ---------------------------------------------------------------------------
# random group elements
# ---------------------------------------------------------------------------


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix: QR of a Gaussian with sign-fixed R diagonal."""
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def random_signed_permutation(dim: int, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(dim)
    signs = rng.choice([-1.0, 1.0], size=dim)
    mat = np.zeros((dim, dim))
    mat[np.arange(dim), perm] = signs
    return mat


def random_invertible(
    dim: int, rng: np.random.Generator, max_cond: float = 50.0
) -> np.ndarray:
    """Generic invertible matrix with condition number capped at `max_cond`,
    kept away from the orthogonal group."""
    for _ in range(64):
        mat = rng.standard_normal((dim, dim))
        u, s, vt = np.linalg.svd(mat)
        s = np.clip(s, s.max() / max_cond, None)
        mat = (u * s) @ vt
        if np.max(np.abs(mat @ mat.T - np.eye(dim))) > 1e-2:
            return mat
    raise ConfigurationError("failed to sample a non-orthogonal invertible matrix")


def nearest_signed_permutation(matrix: np.ndarray) -> np.ndarray | None:
    """Snap entries to {-1, 0, 1}; None when the result is not a signed
    permutation matrix."""
    snapped = np.zeros_like(matrix)
    snapped[matrix > 0.5] = 1.0
    snapped[matrix < -0.5] = -1.0
    abs_snapped = np.abs(snapped)
    if np.any(abs_snapped.sum(axis=0) != 1.0) or np.any(abs_snapped.sum(axis=1) != 1.0):
        return None
    return snapped


def is_near_signed_permutation(matrix: np.ndarray, tol: float = 1e-3) -> bool:
    snapped = nearest_signed_permutation(matrix)
    return snapped is not None and np.max(np.abs(matrix - snapped)) < tol


def sample_diffeomorphism(
    family: str, dim: int, rng: np.random.Generator
) -> Diffeomorphism:
    """Draw one catalog entry from the named family."""
    if family == "translation":
        return translation(rng.uniform(-1.0, 1.0, size=dim))
    if family == "euclidean":
        # generic rotation: stays 1e-3 away from every signed permutation
        for _ in range(64):
            q = random_orthogonal(dim, rng)
            if not is_near_signed_permutation(q):
                break
        return affine_diffeomorphism(
            q, rng.uniform(-1.0, 1.0, size=dim), family="euclidean"
        )
    if family == "signed-permutation":
        return affine_diffeomorphism(
            random_signed_permutation(dim, rng),
            rng.uniform(-1.0, 1.0, size=dim),
            family="signed-permutation",
        )
    if family == "affine":
        return affine_diffeomorphism(
            random_invertible(dim, rng), rng.uniform(-1.0, 1.0, size=dim)
        )
    if family == "shear":
        coeffs = np.zeros((dim, dim))
        for k in range(1, dim):
            coeffs[k, :k] = rng.uniform(0.3, 0.8, size=k) * rng.choice(
                [-1.0, 1.0], size=k
            )
        func = "sin" if rng.uniform() < 0.5 else "tanh"
        return shear_diffeomorphism(coeffs, func=func)
    raise ConfigurationError(f"unknown diffeomorphism family {family!r}")


def catalog(family: str, dim: int, seed: int) -> Diffeomorphism:
    """Catalog entry addressable by family name and seed."""
    return sample_diffeomorphism(family, dim, np.random.default_rng([seed, dim]))


# ---------------------------------------------------------------------------
# pullbacks and pushforwards
# ---------------------------------------------------------------------------


def pullback_loss(g: Diffeomorphism, loss: ScalarField) -> ScalarField:
    """The intrinsic loss in the barred chart: theta_bar -> L(g^-1(theta_bar))."""
    if g.dim != loss.dim:
        raise ConfigurationError("diffeomorphism and loss dimensions differ")
    return ScalarField(
        loss.dim,
        lambda tbar: loss.fn(g.inverse_map.fn(tbar)),
        name=f"{loss.name or 'loss'}|{g.label or g.family}",
    )


def pullback_model(g: Diffeomorphism, model: Model) -> Model:
    """The model re-expressed in the barred chart; inputs are chart-independent."""
    if g.dim != model.param_dim:
        raise ConfigurationError("diffeomorphism and model parameter dimensions differ")
    return Model(
        kind=model.kind,
        in_dim=model.in_dim,
        out_dim=model.out_dim,
        param_dim=model.param_dim,
        forward=lambda x, tbar: model.forward(x, g.inverse_map.fn(tbar)),
    )


def pushforward_state(g: Diffeomorphism, state: OptimizerState) -> OptimizerState:
    """Chain rule on the derivative stack: theta maps, velocities rotate by J."""
    theta_bar = g.forward(state.theta)
    if state.order == 1:
        return OptimizerState(state.time, (theta_bar,))
    jac = g.jacobian(state.theta)
    return OptimizerState(state.time, (theta_bar, jac @ state.velocity))


def pushforward_tangent(
    g: Diffeomorphism, state: OptimizerState, velocity: StateVelocity
) -> StateVelocity:
    """The induced map on state-space tangents at `state`."""
    if velocity.order != state.order:
        raise ConfigurationError("state and velocity orders differ")
    jac = g.jacobian(state.theta)
    if state.order == 1:
        return StateVelocity((jac @ velocity.dderivs[0],))
    u = state.velocity
    d2 = g.second_derivatives(state.theta)
    quad = np.einsum("lij,i,j->l", d2, velocity.dderivs[0], u)
    return StateVelocity((jac @ velocity.dderivs[0], jac @ velocity.dderivs[1] + quad))


def transform_bilinear(
    g: Diffeomorphism, form: Preconditioner, theta_bar
) -> Preconditioner:
    """Tensorial transform of a bilinear form into the barred chart.

    Covariant forms contract with the inverse-map Jacobian twice; contravariant
    forms with the forward Jacobian twice.
    """
    theta_bar = np.asarray(theta_bar, dtype=float)
    if form.variance == "covariant":
        jac = g.inverse_jacobian(theta_bar)
    else:
        jac = g.jacobian(g.inverse(theta_bar))
        jac = jac.T  # contract theta_bar-per-theta indices symmetrically below
    if np.linalg.cond(jac) > MAX_CONDITION:
        raise SingularMatrixError("singular Jacobian in bilinear transform", theta_bar)
    out = jac.T @ form.matrix @ jac
    return Preconditioner(0.5 * (out + out.T), variance=form.variance)


def pullback_connection(g: Diffeomorphism) -> Connection:
    """The flat connection of the unbarred chart, expressed in barred coordinates."""
    dim = g.dim

    def christoffel(theta_bar):
        theta = g.inverse(theta_bar)
        jac_fwd = g.jacobian(theta)
        if np.linalg.cond(jac_fwd) > MAX_CONDITION:
            raise SingularMatrixError("singular Jacobian in connection pullback", theta_bar)
        d2_inv = g.inverse_second_derivatives(theta_bar)
        return np.einsum("kl,lij->kij", jac_fwd, d2_inv)

    return Connection(dim, christoffel)


# ---------------------------------------------------------------------------
# naturalizer membership
# ---------------------------------------------------------------------------


def naturalizer_membership(
    g: Diffeomorphism,
    condition: str,
    samples: Sequence,
    tol: float = 1e-8,
) -> tuple[bool, float]:
    """Check the named Jacobian condition at every sample point.

    All three conditions additionally require the Jacobian to be constant
    across samples, since the derived naturalizers are globally affine.
    Returns (member, max violation).
    """
    if condition not in NATURALIZER_CONDITIONS:
        raise ConfigurationError(f"unknown naturalizer condition {condition!r}")
    samples = [np.asarray(s, dtype=float) for s in samples]
    if not samples:
        raise ConfigurationError("naturalizer membership needs at least one sample")

    jacs = [g.jacobian(s) for s in samples]
    violation = max(
        (float(np.max(np.abs(j - jacs[0]))) for j in jacs[1:]), default=0.0
    )
    eye = np.eye(g.dim)
    for theta, jac in zip(samples, jacs):
        if condition == "orthogonal-jacobian":
            violation = max(violation, float(np.max(np.abs(jac @ jac.T - eye))))
        elif condition == "signed-permutation":
            snapped = nearest_signed_permutation(jac)
            if snapped is None:
                violation = max(violation, 1.0)
            else:
                violation = max(violation, float(np.max(np.abs(jac - snapped))))
        else:  # affine: vanishing second derivatives everywhere
            violation = max(
                violation, float(np.max(np.abs(g.second_derivatives(theta))))
            )
    return violation <= tol, violation
