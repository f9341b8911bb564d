import numpy as np
import pytest

from equiflow import (
    ConfigurationError,
    FlowBuilder,
    ScalarField,
    SingularMatrixError,
    ToleranceGapError,
    affine_diffeomorphism,
    classify_equivariance,
    compose,
    default_flow_builder,
    expected_verdict,
    identity,
    naturality_residual,
    quadratic_loss,
    render_reports_text,
    render_table_text,
    reproduce_table,
    sample_diffeomorphism,
    state_order1,
    state_order2,
)


class TestNaturalityResidual:
    def test_gradient_descent_hand_value(self):
        builder = FlowBuilder("gd", quadratic_loss(np.eye(1)))
        g = affine_diffeomorphism([[2.0]])
        residual = naturality_residual(builder, g, state_order1([1.0]))
        assert abs(residual - 1.5) <= 1e-9

    def test_identity_residual_vanishes(self):
        loss = quadratic_loss(np.array([[2.0, 1.0], [1.0, 3.0]]))
        g = identity(2)
        for algorithm in ("gd", "adam", "newton"):
            builder = FlowBuilder(algorithm, loss)
            residual = naturality_residual(builder, g, state_order1([0.7, -0.3]))
            assert residual <= 1e-12, algorithm
        builder = FlowBuilder("nesterov", loss)
        s = state_order2([0.7, -0.3], [0.2, 0.4], time=1.0)
        assert naturality_residual(builder, g, s) <= 1e-12

    def test_euclidean_keeps_gradient_flow(self):
        builder = default_flow_builder("gd", 4, seed=0)
        g = sample_diffeomorphism("euclidean", 4, np.random.default_rng(1))
        residual = naturality_residual(builder, g, state_order1([0.4, -0.2, 0.8, 0.1]))
        assert residual <= 1e-9

    def test_shear_keeps_preconditioned_flows(self):
        g = sample_diffeomorphism("shear", 4, np.random.default_rng(2))
        state = state_order1([0.4, -0.2, 0.8, 0.1])
        for algorithm in ("ngd", "ggn"):
            builder = default_flow_builder(algorithm, 4, seed=0)
            assert naturality_residual(builder, g, state) <= 1e-7, algorithm

    def test_composition_subadditive_for_equivariant_pair(self):
        builder = default_flow_builder("gd", 3, seed=0)
        rng = np.random.default_rng(3)
        g1 = sample_diffeomorphism("euclidean", 3, rng)
        g2 = sample_diffeomorphism("euclidean", 3, rng)
        state = state_order1([0.5, -0.5, 0.2])
        r1 = naturality_residual(builder, g1, state)
        r2 = naturality_residual(builder, g2, state)
        r12 = naturality_residual(builder, compose(g2, g1), state)
        assert r12 <= r1 + r2 + 1e-9

    def test_adam_inverse_scaling_violation(self):
        # theta_bar = theta / gamma with gamma = 2: 0.5 per active component
        loss = quadratic_loss(np.eye(1))
        builder = FlowBuilder("adam", loss)
        g = affine_diffeomorphism([[0.5]])
        residual = naturality_residual(builder, g, state_order1([1.0]))
        assert abs(residual - 0.5) <= 1e-3
        loss2 = quadratic_loss(np.eye(2))
        builder2 = FlowBuilder("adam", loss2)
        g2 = affine_diffeomorphism(0.5 * np.eye(2))
        residual2 = naturality_residual(builder2, g2, state_order1([1.0, -1.0]))
        assert abs(residual2 - 0.5 * np.sqrt(2)) <= 1e-3

    def test_singularity_tagged_with_chart(self):
        quartic = ScalarField(1, lambda t: 0.25 * t[0] ** 4)
        builder = FlowBuilder("newton", quartic)
        g = affine_diffeomorphism([[2.0]])
        with pytest.raises(SingularMatrixError, match="base chart"):
            naturality_residual(builder, g, state_order1([0.0]))


class TestFlowBuilderValidation:
    def test_unknown_algorithm(self):
        with pytest.raises(ConfigurationError):
            FlowBuilder("sgd", quadratic_loss(np.eye(1)))

    def test_preconditioned_needs_model(self):
        with pytest.raises(ConfigurationError):
            FlowBuilder("ngd", quadratic_loss(np.eye(2)))

    def test_building_twice_is_identical(self):
        from equiflow import pushforward_state

        builder = default_flow_builder("ngd", 2, seed=0)
        g = sample_diffeomorphism("shear", 2, np.random.default_rng(4))
        state = pushforward_state(g, state_order1([0.3, 0.8]))
        a = builder.build(g)(state)
        b = builder.build(g)(state)
        assert np.array_equal(a.as_vector(), b.as_vector())


class TestClassifyEquivariance:
    def test_expected_matrix_dim2(self):
        for algorithm in ("gd", "adam", "newton", "ngd"):
            builder = default_flow_builder(algorithm, 2, seed=0)
            reports = classify_equivariance(
                builder, trials_per_family=3, states_per_trial=2, seed=0
            )
            for report in reports:
                assert report.verdict == expected_verdict(algorithm, report.family), (
                    algorithm,
                    report.family,
                )

    def test_verdicts_stable_across_seeds(self):
        for seed in (0, 1, 2):
            builder = default_flow_builder("nesterov", 2, seed=seed)
            reports = classify_equivariance(
                builder, trials_per_family=2, states_per_trial=1, seed=seed
            )
            verdicts = {r.family: r.verdict for r in reports}
            assert verdicts == {
                "translation": "equivariant",
                "euclidean": "equivariant",
                "signed-permutation": "equivariant",
                "affine": "violated",
                "shear": "violated",
            }

    def test_single_trial_matches_many_trials(self):
        builder = default_flow_builder("newton-covariant", 2, seed=0)
        one = classify_equivariance(builder, trials_per_family=1, seed=0)
        many = classify_equivariance(builder, trials_per_family=4, seed=0)
        assert [r.verdict for r in one] == [r.verdict for r in many]

    def test_gap_residual_fails_loudly(self):
        # an O(1) violation lands inside an absurdly wide gap
        builder = default_flow_builder("gd", 2, seed=0)
        with pytest.raises(ToleranceGapError):
            classify_equivariance(
                builder,
                families=("affine",),
                trials_per_family=1,
                tolerance=1e-7,
                violation_threshold=1e6,
                seed=0,
            )

    def test_tolerance_ordering_enforced(self):
        builder = default_flow_builder("gd", 2, seed=0)
        with pytest.raises(ConfigurationError):
            classify_equivariance(builder, tolerance=1e-2, violation_threshold=1e-3)

    def test_report_schema(self):
        builder = default_flow_builder("gd", 2, seed=0)
        report = classify_equivariance(
            builder, families=("translation",), trials_per_family=2, seed=0
        )[0]
        entry = report.as_dict()
        assert set(entry) == {
            "algorithm",
            "family",
            "trials",
            "max_residual",
            "mean_residual",
            "verdict",
            "seed",
            "tolerance",
        }
        assert entry["verdict"] == "equivariant"
        assert entry["max_residual"] <= entry["tolerance"]


class TestReproduceTable:
    def test_small_run_matches_expectations(self):
        table = reproduce_table(
            dims=(2,), trials_per_family=2, states_per_trial=1, seed=0
        )
        assert table.matches_expected
        verdicts = table.verdicts(2)
        assert verdicts["gd"]["affine"] == "violated"
        assert verdicts["newton"]["affine"] == "equivariant"
        assert verdicts["newton"]["shear"] == "violated"
        assert verdicts["adam"]["euclidean"] == "violated"
        assert verdicts["agn"]["shear"] == "equivariant"

    def test_empty_families_give_empty_report(self):
        table = reproduce_table(dims=(2,), families=(), trials_per_family=1, seed=0)
        assert table.reports == ()
        assert table.mismatches == ()

    def test_as_dict_round_trips_json(self):
        import json

        table = reproduce_table(
            dims=(2,), algorithms=("gd",), trials_per_family=1, seed=0
        )
        payload = json.dumps(table.as_dict(), sort_keys=True)
        assert "equivariance_groups" in payload

    def test_render_text(self):
        table = reproduce_table(
            dims=(2,), algorithms=("gd", "newton"), trials_per_family=1, seed=0
        )
        text = render_table_text(table)
        assert "N = 2" in text
        assert "all verdicts match" in text
        reports = [rep for _, rep in table.reports]
        listing = render_reports_text(reports)
        assert "algorithm" in listing and "verdict" in listing
