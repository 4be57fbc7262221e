import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cafe.data import PredictionSet, TrialDataset
from cafe.engine import (Decision, GroupSummary, cafe_m_test, cafe_test, decide, diagnose,
                         group_summaries, run_test, two_stage_diagnose)
from cafe.errors import AttributionUnavailableError, OccupancyError, ZeroVarianceError
from cafe.partition import Partition, PartitionRule, build_partition, quantile_partition

import oracles


def summaries_from_z(z):
    return [GroupSummary(k, 20, 10, 10, 0.0, 1.0, 0.0, float(v)) for k, v in enumerate(z)]


def one_group(y1, y0, tau_hat=0.0):
    y = list(y1) + list(y0)
    a = [1] * len(y1) + [0] * len(y0)
    ds = TrialDataset(np.zeros((len(y), 1)), a, y)
    part = Partition(np.zeros(len(y), dtype=int), 1, ())
    return ds, PredictionSet(np.full(len(y), tau_hat)), part


class TestGroupSummaries:
    def test_hand_example(self):
        ds, preds, part = one_group([2, 4], [1, 1.5])
        (g,) = group_summaries(ds, preds, part)
        assert g.tau_rct_k == pytest.approx(1.75)
        assert g.sigma2_k == pytest.approx(1.0625)
        assert g.z_k == pytest.approx(1.75 / math.sqrt(1.0625))
        assert g.z_k == pytest.approx(1.69775, abs=1e-5)
        assert (g.n_k, g.n1_k, g.n0_k) == (4, 2, 2)

    def test_exact_fit_gives_zero(self, trial):
        part = quantile_partition(trial.column("x1"), 3)
        tau = np.empty(trial.n)
        for k in range(3):
            rows = part.members(k)
            a, y = trial.treatment[rows], trial.outcome[rows]
            tau[rows] = y[a == 1].mean() - y[a == 0].mean()
        gs = group_summaries(trial, PredictionSet(tau), part)
        assert all(abs(g.z_k) < 1e-12 for g in gs)
        rep = cafe_test(gs)
        assert rep.p_value == 1.0 and not rep.reject

    def test_zero_variance(self):
        ds, preds, part = one_group([3, 3], [1, 1])
        with pytest.raises(ZeroVarianceError) as exc:
            group_summaries(ds, preds, part)
        assert exc.value.group == 1

    def test_occupancy_names_group(self, trial):
        a = trial.treatment.copy()
        part = quantile_partition(trial.column("x1"), 3)
        rows = part.members(2)
        a[rows] = 1
        a[rows[:1]] = 0
        ds = TrialDataset(trial.covariates, a, trial.outcome)
        with pytest.raises(OccupancyError, match="group 3 of 3") as exc:
            group_summaries(ds, PredictionSet(np.zeros(ds.n)), part)
        assert exc.value.group == 3


class TestCafe:
    def test_zero(self):
        rep = cafe_test(summaries_from_z([0, 0, 0]))
        assert rep.statistic == 0 and rep.p_value == 1.0 and not rep.reject

    def test_three(self):
        rep = cafe_test(summaries_from_z([1, -1, 1]))
        assert rep.statistic == 3
        # quadrature oracle: 0.391625176
        assert rep.p_value == pytest.approx(0.3916, abs=1e-4)
        assert rep.params == {"df": 3}

    def test_reject(self):
        rep = cafe_test(summaries_from_z([3, 3, 3]), alpha=0.05)
        assert rep.statistic == 27 and rep.p_value < 1e-4 and rep.reject


class TestCafeM:
    def test_zero(self):
        rep = cafe_m_test(summaries_from_z([0, 0, 0]))
        assert rep.statistic == 0
        # oracle composition: a=0.967422, g=-0.935904, p=0.921881
        assert rep.p_value == pytest.approx(0.9218807224, abs=1e-8)

    def test_at_location(self):
        a = oracles.normal_quantile_bisect(1 - 1 / 6)
        rep = cafe_m_test(summaries_from_z([a, 0, 0]))
        assert rep.p_value == pytest.approx(1 - math.exp(-1), abs=1e-12)

    def test_reject(self):
        rep = cafe_m_test(summaries_from_z([0, 0, 6]), alpha=0.05)
        assert rep.statistic == 6
        assert rep.p_value == pytest.approx(0.0076544782, abs=1e-8)
        assert rep.reject

    def test_single_group_rejected(self):
        with pytest.raises(ValueError, match="K >= 2"):
            cafe_m_test(summaries_from_z([1.0]))

    def test_family(self):
        rep = cafe_m_test(summaries_from_z([1, 2, 3, 4]))
        assert rep.family == "gumbel"
        assert rep.params["b"] == pytest.approx(1 / rep.params["a"])


@given(st.lists(st.floats(-8, 8), min_size=2, max_size=6), st.floats(0.01, 3))
def test_p_values_decrease_with_statistic(z, bump):
    z = np.array(z)
    big = z.copy()
    i = int(np.argmax(np.abs(z)))
    big[i] = np.sign(z[i] or 1) * (abs(z[i]) + bump)
    assert cafe_test(summaries_from_z(big)).p_value <= cafe_test(summaries_from_z(z)).p_value
    assert cafe_m_test(summaries_from_z(big)).p_value <= cafe_m_test(summaries_from_z(z)).p_value


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.randoms())
def test_group_permutation(z, rnd):
    perm = list(z)
    rnd.shuffle(perm)
    assert cafe_test(summaries_from_z(perm)).statistic == pytest.approx(cafe_test(summaries_from_z(z)).statistic, rel=1e-14)
    assert cafe_m_test(summaries_from_z(perm)).statistic == cafe_m_test(summaries_from_z(z)).statistic


def random_instance(rng):
    K = int(rng.integers(2, 5))
    n = int(rng.integers(4 * K + 4, 51))
    while True:
        a = rng.integers(0, 2, n)
        groups = rng.permutation(np.arange(n) % K)
        ok = all(((a == 1) & (groups == k)).sum() >= 2 and ((a == 0) & (groups == k)).sum() >= 2
                 for k in range(K))
        if ok:
            break
    y = rng.normal(size=n) * rng.uniform(0.5, 3) + rng.normal()
    tau = rng.normal(size=n)
    return y, a, tau, groups, K


def test_oracle_equivalence():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        y, a, tau, groups, K = random_instance(rng)
        ds = TrialDataset(np.zeros((len(y), 1)), a, y)
        part = Partition(groups, K, ())
        gs = group_summaries(ds, PredictionSet(tau), part)
        T_ref, M_ref = oracles.naive_statistics(y, a, tau, groups, K)
        assert cafe_test(gs).statistic == pytest.approx(T_ref, abs=1e-12, rel=1e-12)
        assert cafe_m_test(gs).statistic == pytest.approx(M_ref, abs=1e-12, rel=1e-12)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 10**6), st.floats(0.1, 50), st.floats(-100, 100))
def test_affine_outcome_invariance(seed, c, d):
    rng = np.random.default_rng(seed)
    y, a, tau, groups, K = random_instance(rng)
    part = Partition(groups, K, ())
    X = np.zeros((len(y), 1))
    g1 = group_summaries(TrialDataset(X, a, y), PredictionSet(tau), part)
    g2 = group_summaries(TrialDataset(X, a, c * y + d), PredictionSet(c * tau), part)
    for s1, s2 in zip(g1, g2):
        assert s2.z_k == pytest.approx(s1.z_k, abs=1e-10)
    assert cafe_test(g2).p_value == pytest.approx(cafe_test(g1).p_value, abs=1e-10)
    assert cafe_m_test(g2).p_value == pytest.approx(cafe_m_test(g1).p_value, abs=1e-10)


class TestTwoStage:
    def report(self, p, alpha=0.05):
        rep = cafe_test(summaries_from_z([0, 0]), alpha)
        rep.p_value, rep.reject = p, p < alpha
        return rep

    def test_d1(self):
        d = two_stage_diagnose(self.report(0.30))
        assert d.label == "D1" and d.stage2 is None

    def test_d2_d3(self):
        assert decide(self.report(0.01), self.report(0.40)).label == "D2"
        assert decide(self.report(0.01), self.report(0.004)).label == "D3"

    def test_unavailable(self):
        with pytest.raises(AttributionUnavailableError, match="attribution unavailable"):
            two_stage_diagnose(self.report(0.01))

    def test_decision_invariants(self):
        with pytest.raises(ValueError):
            Decision("D1", self.report(0.01))
        with pytest.raises(ValueError):
            Decision("D2", self.report(0.01), self.report(0.01))

    def test_stage2_uses_os_difference_in_means(self, trial):
        rule = PartitionRule("covariate", "x1", 2)
        # predictions far from the trial contrast -> stage 1 rejects
        far = PredictionSet(np.full(trial.n, 25.0))
        part = build_partition(trial, far, rule)
        stage1 = run_test(trial, far, part)
        assert stage1.reject
        # an OS test set whose arm contrast matches the predictions -> D2
        os_y = trial.outcome + 24.0 * trial.treatment
        os_test = TrialDataset(trial.covariates, trial.treatment, os_y, source="OS")
        d = two_stage_diagnose(stage1, (os_test, far, build_partition(os_test, far, rule, K=2)))
        assert d.label == "D2"
        d = diagnose(trial, far, rule, os_test, far)
        assert d.label == "D2" and d.stage2.K == 2
        # same OS outcomes as the trial -> both stages reject -> D3
        d = diagnose(trial, far, rule, trial, far)
        assert d.label == "D3"

    def test_stage2_k_must_match(self, trial):
        far = PredictionSet(np.full(trial.n, 25.0))
        stage1 = run_test(trial, far, build_partition(trial, far, PartitionRule("covariate", "x1", 2)))
        part3 = build_partition(trial, far, PartitionRule("covariate", "x1", 3))
        with pytest.raises(ValueError, match="K"):
            two_stage_diagnose(stage1, (trial, far, part3))


def test_report_json_layout(trial, trial_preds):
    part = build_partition(trial, trial_preds, PartitionRule("propensity"))
    rep = run_test(trial, trial_preds, part, "cafe-m")
    d = json.loads(rep.to_json())
    assert list(d) == ["test", "statistic", "family", "params", "p_value", "K", "alpha", "reject",
                       "partition", "groups", "notes"]
    assert d["partition"]["variable"] == "propensity"
    assert [g["group"] for g in d["groups"]] == [1, 2, 3]
    text = rep.render()
    assert "Gumbel" in text and "diff-in-means" in text


def test_reported_p_value_clamped():
    rep = cafe_test(summaries_from_z([60, 60, 60]))
    assert rep.p_value == 0.0
    assert rep.to_dict()["p_value"] == 1e-300
