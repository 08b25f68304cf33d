import numpy as np
import pytest

from jodscale.errors import DisconnectedGraphError, IntegrityError
from jodscale.model import ConditionId
from jodscale.scaling import LinkParams, ObserverModel, preference_probability
from jodscale.simulate import (
    GroundTruth,
    RecoveryConfig,
    recovery_experiment,
    simulate_comparison,
    simulate_ratings,
    synthesize_collection,
)


def _truth(n=6, seed=0, links=None):
    conds = [ConditionId.reference("rd")]
    conds += [ConditionId("rd", f"c{i}", "d", 1) for i in range(n - 1)]
    rng = np.random.default_rng(123)
    q = np.concatenate([[0.0], rng.uniform(-4, 0, n - 1)])
    return GroundTruth(tuple(conds), q, links or {}, ObserverModel(), seed)


class TestGroundTruth:
    def test_reference_must_be_zero(self):
        conds = (ConditionId.reference("x"), ConditionId("x", "c0", "d", 1))
        with pytest.raises(IntegrityError):
            GroundTruth(conds, np.array([-1.0, 0.0]), {})

    def test_shape_checked(self):
        conds = (ConditionId.reference("x"),)
        with pytest.raises(IntegrityError):
            GroundTruth(conds, np.array([0.0, 1.0]), {})


class TestSimulateComparison:
    def test_symmetric_pair_near_half(self):
        truth = _truth(seed=1)
        object.__setattr__(truth, "q_true", np.zeros(6))
        c_ij, c_ji = simulate_comparison(truth, 1, 2, 10_000)
        assert c_ij + c_ji == 10_000
        assert abs(c_ij / 10_000 - 0.5) < 0.015

    def test_one_unit_gap_near_75(self):
        conds = (ConditionId.reference("x"), ConditionId("x", "c0", "d", 1))
        truth = GroundTruth(conds, np.array([0.0, -1.0]), {}, ObserverModel(), 5)
        c_ref, c_test = simulate_comparison(truth, 0, 1, 10_000)
        assert abs(c_ref / 10_000 - 0.75) < 0.015

    def test_deterministic_given_seed(self):
        truth = _truth(seed=9)
        assert simulate_comparison(truth, 0, 3, 500) == simulate_comparison(truth, 0, 3, 500)

    def test_stream_index_gives_fresh_draws(self):
        truth = _truth(seed=9)
        base = simulate_comparison(truth, 0, 3, 500, stream=0)
        redraw = simulate_comparison(truth, 0, 3, 500, stream=1)
        assert base != redraw  # distinct streams almost surely differ

    def test_zero_trials(self):
        truth = _truth()
        assert simulate_comparison(truth, 0, 1, 0) == (0, 0)

    def test_converges_to_model_probability(self):
        truth = _truth(seed=17)
        rng = np.random.default_rng(3)
        n = 100_000
        for _ in range(20):
            i, j = (int(v) for v in rng.integers(0, 6, size=2))
            if i == j:
                continue
            p = float(preference_probability(truth.q_true[i], truth.q_true[j]))
            c_ij, _ = simulate_comparison(truth, i, j, n)
            bound = 4.0 * np.sqrt(p * (1 - p) / n)
            assert abs(c_ij / n - p) < bound


class TestSimulateRatings:
    def test_noiseless_limit(self):
        link = LinkParams(a=1.6, b=-0.7, c=1e-9)
        truth = _truth(seed=2, links={"rd": link})
        table = simulate_ratings(truth, "rd", 3)
        for record in table.records:
            expected = (truth.q_true[record.condition] - link.b) / link.a
            assert record.score == pytest.approx(expected, abs=1e-6)

    def test_sample_mean_clt_bound(self):
        link = LinkParams(a=1.0, b=0.5, c=0.8)
        truth = _truth(seed=3, links={"rd": link})
        table = simulate_ratings(truth, "rd", 10_000)
        sigma = truth.model.sigma
        for idx in range(6):
            scores = table.scores[table.condition_indices == idx]
            expected = (truth.q_true[idx] - link.b) / link.a
            bound = 3.0 * (link.c * sigma / link.a) / np.sqrt(10_000)
            assert abs(float(scores.mean()) - expected) < bound

    def test_quality_domain_noise_scale(self):
        # ratings carry noise c * sigma in rating units, so the link maps
        # them to quality-domain residuals of a * c * sigma, matching the
        # spread assumed by the rating likelihood
        link = LinkParams(a=1.7, b=-0.3, c=0.9)
        truth = _truth(seed=4, links={"rd": link})
        table = simulate_ratings(truth, "rd", 20_000)
        sigma = truth.model.sigma
        one_condition = table.scores[table.condition_indices == 2]
        assert float(one_condition.std()) == pytest.approx(link.c * sigma, rel=0.05)
        mapped = link.a * table.scores + link.b
        residual = mapped - truth.q_true[table.condition_indices]
        assert float(residual.mean()) == pytest.approx(0.0, abs=0.03)
        assert float(residual.std()) == pytest.approx(link.a * link.c * sigma, rel=0.02)

    def test_deterministic(self):
        link = LinkParams(a=1.0, b=0.0, c=1.0)
        truth = _truth(seed=8, links={"rd": link})
        first = simulate_ratings(truth, "rd", 7)
        second = simulate_ratings(truth, "rd", 7)
        assert first.records == second.records

    def test_unknown_dataset_rejected(self):
        truth = _truth()
        with pytest.raises(IntegrityError):
            simulate_ratings(truth, "nope", 3)


class TestSynthesizeCollection:
    def test_deterministic_output(self):
        config = RecoveryConfig(n_conditions=20, n_datasets=2, seed=6)
        truth_a, coll_a = synthesize_collection(config)
        truth_b, coll_b = synthesize_collection(config)
        np.testing.assert_array_equal(truth_a.q_true, truth_b.q_true)
        assert coll_a.conditions == coll_b.conditions
        assert coll_a.graph == coll_b.graph
        for name in coll_a.ratings:
            assert coll_a.ratings[name].records == coll_b.ratings[name].records

    def test_structure(self):
        config = RecoveryConfig(n_conditions=21, n_datasets=3, seed=1)
        truth, coll = synthesize_collection(config)
        assert coll.n == 21
        assert len(coll.dataset_names()) == 3
        assert len(coll.reference_indices()) == 3
        assert set(coll.ratings) == {"ds1", "ds2"}
        assert coll.manifest["ds0"].experiment == "pwc"
        assert coll.manifest["ds1"].experiment == "rating"


class TestRecoveryExperiment:
    def test_small_instance_recovers(self):
        config = RecoveryConfig(
            n_conditions=20, n_datasets=2, trials_per_pair=40, observers=10, seed=3
        )
        report = recovery_experiment(config)
        assert report["srocc"] > 0.95
        assert report["converged"]

    def test_no_data_reports_disconnected(self):
        config = RecoveryConfig(
            n_conditions=12, n_datasets=2, trials_per_pair=0, observers=0, seed=0
        )
        with pytest.raises(DisconnectedGraphError):
            recovery_experiment(config)

    def test_more_trials_reduce_error(self):
        rmse = {10: [], 40: []}
        for seed in range(10):
            for trials in (10, 40):
                config = RecoveryConfig(
                    n_conditions=12,
                    n_datasets=2,
                    trials_per_pair=trials,
                    observers=6,
                    seed=seed,
                )
                rmse[trials].append(recovery_experiment(config)["rmse"])
        assert np.median(rmse[40]) <= np.median(rmse[10])

    def test_config_validation(self):
        with pytest.raises(IntegrityError):
            RecoveryConfig(n_conditions=3, n_datasets=2)
        with pytest.raises(IntegrityError):
            RecoveryConfig(seed=-1)
