"""Naturality verdicts: residuals, per-family classification, summary table.

A `FlowBuilder` knows how to construct one algorithm's flow either in the
base chart or, given a reparameterization, intrinsically in the barred chart
(pulled-back loss and model, transform-consistent connection).  The
naturality residual compares the pushed-forward flow value against the
intrinsic barred flow value; classification runs seeded trials per
reparameterization family and demands a crisp verdict.

All randomness flows from one integer seed: every trial uses a PCG64
generator seeded with SeedSequence([seed, dim, algorithm_index,
family_index, trial_index]), and the built-in corpus with
SeedSequence([seed, dim, 101]).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffcalc
from .diffcalc import ScalarField
from .errors import ConfigurationError, SingularMatrixError, ToleranceGapError
from .flows import (
    FlowField,
    accelerated_flow,
    adam_stationary_flow,
    fisher_matrix,
    ggn_matrix,
    gradient_flow,
    nesterov_flow,
    newton_flow,
    preconditioned_flow,
)
from .geometry import (
    FAMILIES,
    Diffeomorphism,
    OptimizerState,
    pullback_connection,
    pullback_loss,
    pullback_model,
    pushforward_state,
    pushforward_tangent,
    sample_diffeomorphism,
    state_order1,
    state_order2,
)
from .models import Dataset, GaussianHead, Model, dataset_loss, linear_model, mlp_tanh

ALGORITHMS = (
    "gd",
    "nesterov",
    "adam",
    "newton",
    "newton-covariant",
    "ngd",
    "ggn",
    "nngd",
    "agn",
)

_ORDER2 = frozenset({"nesterov", "nngd", "agn"})
_NEEDS_MODEL = frozenset({"ngd", "ggn", "nngd", "agn"})
_CONNECTION_AWARE = frozenset({"newton-covariant", "nngd", "agn"})

# Verdict classification thresholds: residual max <= tolerance is
# equivariant, >= threshold is violated, anything between fails loudly.
EQUIVARIANCE_TOLERANCE = 1e-7
VIOLATION_THRESHOLD = 1e-3

# States are drawn uniformly from this box, rejecting ill-conditioned points.
STATE_BOX = 1.5
STATE_MAX_CONDITION = 1e8

# Reference equivariance group of each algorithm's flow.
EQUIVARIANCE_GROUPS = {
    "gd": "E(N)",
    "nesterov": "E(N)",
    "adam": "B_N x T(N)",
    "newton": "Aff(N,R)",
    "newton-covariant": "Diff(M)",
    "ngd": "Diff(M)",
    "ggn": "Diff(M)",
    "nngd": "Diff(M)",
    "agn": "Diff(M)",
}

_EQUIVARIANT_FAMILIES = {
    "gd": frozenset({"translation", "euclidean", "signed-permutation"}),
    "nesterov": frozenset({"translation", "euclidean", "signed-permutation"}),
    "adam": frozenset({"translation", "signed-permutation"}),
    "newton": frozenset({"translation", "euclidean", "signed-permutation", "affine"}),
    "newton-covariant": frozenset(FAMILIES),
    "ngd": frozenset(FAMILIES),
    "ggn": frozenset(FAMILIES),
    "nngd": frozenset(FAMILIES),
    "agn": frozenset(FAMILIES),
}


def expected_verdict(algorithm: str, family: str) -> str:
    return "equivariant" if family in _EQUIVARIANT_FAMILIES[algorithm] else "violated"


@dataclass(frozen=True)
class FlowBuilder:
    """Recipe turning a chart description into one algorithm's flow field.

    Building with `reparam=None` yields the base-chart flow; building with a
    diffeomorphism yields the flow computed intrinsically in the barred
    chart.  Building is deterministic, so repeated builds are identical.
    """

    algorithm: str
    loss: ScalarField
    model: Optional[Model] = None
    data: Optional[Dataset] = None
    noise_variance: float = 0.5
    ggn_weight: Optional[np.ndarray] = None
    r: float = 3.0
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm in _NEEDS_MODEL and (self.model is None or self.data is None):
            raise ConfigurationError(
                f"{self.algorithm} needs a model and a dataset for its preconditioner"
            )
        if self.model is not None and self.model.param_dim != self.loss.dim:
            raise ConfigurationError("model parameter dimension does not match loss")

    @property
    def dim(self) -> int:
        return self.loss.dim

    @property
    def order(self) -> int:
        return 2 if self.algorithm in _ORDER2 else 1

    def _weight(self) -> np.ndarray:
        if self.ggn_weight is not None:
            return np.asarray(self.ggn_weight, dtype=float)
        return np.eye(self.model.out_dim)

    def _precondition_fn(self, reparam: Optional[Diffeomorphism]):
        model = self.model if reparam is None else pullback_model(reparam, self.model)
        if self.algorithm in ("ngd", "nngd"):
            head = GaussianHead(model, self.noise_variance)
            return lambda theta: fisher_matrix(head, self.data, theta)
        weight = self._weight()
        return lambda theta: ggn_matrix(model, self.data, weight, theta)

    def _connection(self, reparam: Optional[Diffeomorphism]):
        # The flat base-chart connection is implicit (Gamma = 0); only the
        # barred chart carries nonzero Christoffel symbols.
        if reparam is None:
            return None
        return pullback_connection(reparam)

    def build(self, reparam: Optional[Diffeomorphism] = None) -> FlowField:
        loss = self.loss if reparam is None else pullback_loss(reparam, self.loss)
        alg = self.algorithm
        if alg == "gd":
            return gradient_flow(loss)
        if alg == "nesterov":
            return nesterov_flow(loss)
        if alg == "adam":
            return adam_stationary_flow(loss, epsilon=self.epsilon)
        if alg == "newton":
            return newton_flow(loss)
        if alg == "newton-covariant":
            return newton_flow(loss, connection=self._connection(reparam))
        if alg == "ngd" or alg == "ggn":
            return preconditioned_flow(loss, self._precondition_fn(reparam))
        # nngd / agn
        return accelerated_flow(
            loss,
            self._precondition_fn(reparam),
            r=self.r,
            connection=self._connection(reparam),
        )

    def inverted_matrix_fn(self, reparam: Optional[Diffeomorphism]):
        """theta -> the matrix this algorithm inverts in the given chart,
        or None when the algorithm inverts nothing."""
        alg = self.algorithm
        if alg in ("newton", "newton-covariant"):
            loss = self.loss if reparam is None else pullback_loss(reparam, self.loss)
            connection = self._connection(reparam) if alg == "newton-covariant" else None

            def hess_fn(theta):
                hess = diffcalc.hessian(loss, theta)
                if connection is not None:
                    grad = diffcalc.gradient(loss, theta)
                    hess = hess - np.einsum(
                        "kij,k->ij", connection.christoffel_at(theta), grad
                    )
                return hess

            return hess_fn
        if alg in _NEEDS_MODEL:
            precond = self._precondition_fn(reparam)
            return lambda theta: precond(theta).matrix
        return None


@dataclass(frozen=True)
class ResidualReport:
    """Classification outcome for one (algorithm, family) cell."""

    algorithm: str
    family: str
    trials: int
    max_residual: float
    mean_residual: float
    verdict: str
    seed: int
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "family": self.family,
            "trials": self.trials,
            "max_residual": self.max_residual,
            "mean_residual": self.mean_residual,
            "verdict": self.verdict,
            "seed": self.seed,
            "tolerance": self.tolerance,
        }


def _residual(
    base_flow: FlowField,
    barred_flow: FlowField,
    g: Diffeomorphism,
    state: OptimizerState,
) -> float:
    try:
        value = base_flow(state)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"base chart: {exc}", point=exc.point) from exc
    pushed = pushforward_tangent(g, state, value)
    state_bar = pushforward_state(g, state)
    try:
        value_bar = barred_flow(state_bar)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"barred chart: {exc}", point=exc.point) from exc
    return float(np.linalg.norm(pushed.as_vector() - value_bar.as_vector()))


def naturality_residual(
    builder: FlowBuilder, g: Diffeomorphism, state: OptimizerState
) -> float:
    """Commutative-diagram defect at one state.

    Norm of (tangent-pushforward of the base flow value) minus (the
    intrinsically built barred flow at the pushed-forward state).
    """
    return _residual(builder.build(), builder.build(g), g, state)


def _sample_state(
    rng: np.random.Generator,
    builder: FlowBuilder,
    g: Diffeomorphism,
    base_matrix_fn,
    barred_matrix_fn,
    max_tries: int = 100,
) -> OptimizerState:
    dim = builder.dim
    for _ in range(max_tries):
        theta = rng.uniform(-STATE_BOX, STATE_BOX, size=dim)
        if builder.order == 2:
            velocity = rng.uniform(-STATE_BOX, STATE_BOX, size=dim)
            state = state_order2(theta, velocity, time=rng.uniform(0.5, 1.5))
        else:
            state = state_order1(theta)
        if base_matrix_fn is not None:
            try:
                if np.linalg.cond(base_matrix_fn(theta)) > STATE_MAX_CONDITION:
                    continue
                theta_bar = g.forward(theta)
                if np.linalg.cond(barred_matrix_fn(theta_bar)) > STATE_MAX_CONDITION:
                    continue
            except (np.linalg.LinAlgError, SingularMatrixError):
                continue
        return state
    raise ConfigurationError(
        f"could not sample a well-conditioned state for {builder.algorithm}"
    )


_ALG_INDEX = {name: i for i, name in enumerate(ALGORITHMS)}
_FAMILY_INDEX = {name: i for i, name in enumerate(FAMILIES)}


def trial_rng(seed: int, dim: int, algorithm: str, family: str, trial: int):
    """The documented per-trial generator (PCG64 over a structured seed)."""
    return np.random.default_rng(
        [seed, dim, _ALG_INDEX[algorithm], _FAMILY_INDEX[family], trial]
    )


def classify_equivariance(
    builder: FlowBuilder,
    families: Sequence[str] = FAMILIES,
    trials_per_family: int = 8,
    states_per_trial: int = 2,
    tolerance: float = EQUIVARIANCE_TOLERANCE,
    violation_threshold: float = VIOLATION_THRESHOLD,
    seed: int = 0,
) -> list[ResidualReport]:
    """Monte-Carlo membership verdicts for the given reparameterization families.

    Raises `ToleranceGapError` when a family's peak residual falls between
    the tolerance and the violation threshold, so verdicts never rest on
    borderline roundoff.
    """
    if trials_per_family < 1:
        raise ConfigurationError("trials_per_family must be >= 1")
    if states_per_trial < 1:
        raise ConfigurationError("states_per_trial must be >= 1")
    if tolerance >= violation_threshold:
        raise ConfigurationError(
            f"tolerance {tolerance} must sit below the violation threshold "
            f"{violation_threshold}"
        )

    base_flow = builder.build()
    base_matrix_fn = builder.inverted_matrix_fn(None)
    reports = []
    for family in families:
        if family not in FAMILIES:
            raise ConfigurationError(f"unknown family {family!r}")
        residuals = []
        for trial in range(trials_per_family):
            rng = trial_rng(seed, builder.dim, builder.algorithm, family, trial)
            g = sample_diffeomorphism(family, builder.dim, rng)
            barred_flow = builder.build(g)
            barred_matrix_fn = builder.inverted_matrix_fn(g)
            for _ in range(states_per_trial):
                state = _sample_state(rng, builder, g, base_matrix_fn, barred_matrix_fn)
                residuals.append(_residual(base_flow, barred_flow, g, state))
        peak = float(np.max(residuals))
        if peak <= tolerance:
            verdict = "equivariant"
        elif peak >= violation_threshold:
            verdict = "violated"
        else:
            raise ToleranceGapError(
                f"{builder.algorithm} x {family}: max residual {peak:.3e} lies in "
                f"the gap ({tolerance:.0e}, {violation_threshold:.0e})"
            )
        reports.append(
            ResidualReport(
                algorithm=builder.algorithm,
                family=family,
                trials=trials_per_family,
                max_residual=peak,
                mean_residual=float(np.mean(residuals)),
                verdict=verdict,
                seed=seed,
                tolerance=tolerance,
            )
        )
    return reports


# ---------------------------------------------------------------------------
# built-in corpus
# ---------------------------------------------------------------------------


def default_recipe(dim: int, seed: int = 0, kind: str = "linear") -> tuple[Model, Dataset]:
    """The standard model/dataset pair at one parameter dimension.

    Classification defaults to the linear model: its base-chart loss is an
    exact quadratic, so the Fisher, GGN, and Hessian stay well-conditioned
    across the whole state box and verdicts never rest on amplified solve
    roundoff.  The barred charts still carry fully state-dependent forms.
    The tanh networks are the nonlinear half of the corpus, used by the
    derivative-oracle checks and available to experiment configs.
    """
    if kind == "linear":
        model = linear_model(dim, 1)
        size = 2 * dim
    elif kind == "mlp-tanh":
        if dim == 2:
            model = mlp_tanh(1, 1, 1, bias=False)
        elif dim == 4:
            model = mlp_tanh(1, 1, 1, bias=True)
        elif dim == 8:
            model = mlp_tanh(2, 2, 2, bias=False)
        else:
            raise ConfigurationError(f"no built-in tanh network with {dim} parameters")
        size = 6
    else:
        raise ConfigurationError(f"unknown recipe kind {kind!r}")
    rng = np.random.default_rng([seed, dim, 101])
    inputs = rng.uniform(-1.5, 1.5, size=(size, model.in_dim))
    targets = rng.uniform(-1.0, 1.0, size=(size, model.out_dim))
    return model, Dataset(inputs, targets)


def default_flow_builder(
    algorithm: str,
    dim: int,
    seed: int = 0,
    noise_variance: float = 0.5,
    r: float = 3.0,
    epsilon: float = 1e-8,
    kind: str = "linear",
) -> FlowBuilder:
    model, data = default_recipe(dim, seed, kind=kind)
    return FlowBuilder(
        algorithm=algorithm,
        loss=dataset_loss(model, data),
        model=model,
        data=data,
        noise_variance=noise_variance,
        r=r,
        epsilon=epsilon,
    )


# ---------------------------------------------------------------------------
# table reproduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TableReport:
    """Verdict matrix over (dim, algorithm, family) with expected groups."""

    dims: tuple
    algorithms: tuple
    families: tuple
    trials_per_family: int
    states_per_trial: int
    seed: int
    tolerance: float
    violation_threshold: float
    reports: tuple  # (dim, ResidualReport) pairs in deterministic order
    mismatches: tuple  # (dim, algorithm, family, verdict, expected)

    @property
    def matches_expected(self) -> bool:
        return not self.mismatches

    def verdicts(self, dim: int) -> dict:
        out: dict = {alg: {} for alg in self.algorithms}
        for d, report in self.reports:
            if d == dim:
                out[report.algorithm][report.family] = report.verdict
        return out

    def as_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "algorithms": list(self.algorithms),
            "families": list(self.families),
            "trials_per_family": self.trials_per_family,
            "states_per_trial": self.states_per_trial,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "violation_threshold": self.violation_threshold,
            "equivariance_groups": {a: EQUIVARIANCE_GROUPS[a] for a in self.algorithms},
            "expected": {
                a: {f: expected_verdict(a, f) for f in self.families}
                for a in self.algorithms
            },
            "reports": [
                {"dim": dim, **report.as_dict()} for dim, report in self.reports
            ],
            "mismatches": [
                {
                    "dim": dim,
                    "algorithm": alg,
                    "family": family,
                    "verdict": verdict,
                    "expected": expected,
                }
                for dim, alg, family, verdict, expected in self.mismatches
            ],
        }


def reproduce_table(
    dims: Sequence[int] = (2, 4, 8),
    algorithms: Sequence[str] = ALGORITHMS,
    families: Sequence[str] = FAMILIES,
    trials_per_family: int = 32,
    states_per_trial: int = 2,
    seed: int = 0,
    tolerance: float = EQUIVARIANCE_TOLERANCE,
    violation_threshold: float = VIOLATION_THRESHOLD,
    noise_variance: float = 0.5,
    r: float = 3.0,
    epsilon: float = 1e-8,
) -> TableReport:
    """Run the full classification matrix and compare against expectations."""
    reports = []
    mismatches = []
    for dim in dims:
        for algorithm in algorithms:
            builder = default_flow_builder(
                algorithm,
                dim,
                seed=seed,
                noise_variance=noise_variance,
                r=r,
                epsilon=epsilon,
            )
            for report in classify_equivariance(
                builder,
                families=families,
                trials_per_family=trials_per_family,
                states_per_trial=states_per_trial,
                tolerance=tolerance,
                violation_threshold=violation_threshold,
                seed=seed,
            ):
                reports.append((dim, report))
                expected = expected_verdict(algorithm, report.family)
                if report.verdict != expected:
                    mismatches.append(
                        (dim, algorithm, report.family, report.verdict, expected)
                    )
    return TableReport(
        dims=tuple(dims),
        algorithms=tuple(algorithms),
        families=tuple(families),
        trials_per_family=trials_per_family,
        states_per_trial=states_per_trial,
        seed=seed,
        tolerance=tolerance,
        violation_threshold=violation_threshold,
        reports=tuple(reports),
        mismatches=tuple(mismatches),
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_reports_text(reports: Sequence[ResidualReport]) -> str:
    """Aligned-column text for a list of classification reports."""
    header = (
        "algorithm",
        "family",
        "trials",
        "max_residual",
        "mean_residual",
        "verdict",
    )
    rows = [header]
    for rep in reports:
        rows.append(
            (
                rep.algorithm,
                rep.family,
                str(rep.trials),
                f"{rep.max_residual:.3e}",
                f"{rep.mean_residual:.3e}",
                rep.verdict,
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)


def render_table_text(table: TableReport) -> str:
    """Human-readable verdict matrix, one block per dimension."""
    short = {"equivariant": "equivariant", "violated": "violated"}
    blocks = []
    for dim in table.dims:
        verdicts = table.verdicts(dim)
        header = ["algorithm"] + list(table.families) + ["group"]
        rows = [header]
        for alg in table.algorithms:
            rows.append(
                [alg]
                + [short[verdicts[alg][f]] for f in table.families]
                + [EQUIVARIANCE_GROUPS[alg]]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = [f"N = {dim}"]
        lines += [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
            for row in rows
        ]
        blocks.append("\n".join(lines))
    if table.mismatches:
        mm = ["mismatches:"]
        mm += [
            f"  N={dim} {alg} x {family}: got {verdict}, expected {expected}"
            for dim, alg, family, verdict, expected in table.mismatches
        ]
        blocks.append("\n".join(mm))
    else:
        blocks.append("all verdicts match the expected equivariance groups")
    return "\n\n".join(blocks)
