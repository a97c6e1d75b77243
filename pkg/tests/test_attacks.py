"""Tests for the likelihood-ratio and robust membership attacks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakaudit.attacks import (
    AttackScores,
    LiraParams,
    RmiaParams,
    lira_score,
    load_scores,
    rescale_confidence,
    rmia_score,
    run_lira,
    run_rmia,
    save_scores,
)
from leakaudit.game import Challenge, ConfidenceMatrix, ShadowEnsemble, TargetArtifacts


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def make_fixture():
    """Three candidates, two shadows, confidences chosen for closed-form ratios.

    With variance_floor = 1, every single-observation Gaussian fit has unit
    variance, so log LR = ((o - mu_out)^2 - (o - mu_in)^2) / 2 exactly.
    """
    # (target logit, in logit, out logit) per candidate
    logits = {
        "A": (0.0, 0.0, -2.0),   # LR = e^2
        "B": (0.0, 1.0, -1.0),   # LR = e^0 = 1
        "C": (1.0, 2.0, -2.0),   # LR = e^4
    }
    ids = ("A", "B", "C")
    target_confs = {i: sigmoid(logits[i][0]) for i in ids}
    # shadow 0 includes A and C; shadow 1 includes B
    mask = np.array([[1, 0], [0, 1], [1, 0]], dtype=np.uint8)
    values = np.empty((3, 2))
    for r, i in enumerate(ids):
        _, in_logit, out_logit = logits[i]
        values[r, mask[r].argmax()] = sigmoid(in_logit)
        values[r, 1 - mask[r].argmax()] = sigmoid(out_logit)
    challenge = Challenge(member_ids=("A", "B"), nonmember_ids=("C",), p_member=0.67, seed=0)
    artifacts = TargetArtifacts(model=None, confidences=target_confs, challenge=challenge, split=None)
    confs = ConfidenceMatrix(ids=ids, values=values, mask=mask)
    expected = {"A": math.exp(2.0), "B": 1.0, "C": math.exp(4.0)}
    return artifacts, confs, expected


class TestRescale:
    def test_logit_of_half_is_zero(self):
        assert rescale_confidence(0.5) == 0.0

    def test_antisymmetry(self):
        assert rescale_confidence(0.8) == pytest.approx(-rescale_confidence(0.2))

    def test_clipping_bounds_extremes(self):
        hi = rescale_confidence(1.0, eps=1e-6)
        assert hi == pytest.approx(math.log((1 - 1e-6) / 1e-6))
        assert rescale_confidence(0.0, eps=1e-6) == pytest.approx(-hi)

    @given(st.floats(1e-5, 1 - 1e-5))
    @settings(max_examples=50, deadline=None)
    def test_monotone(self, p):
        assert rescale_confidence(p + 1e-6) > rescale_confidence(p)


class TestLiraScore:
    def test_closed_form_unit_variance(self):
        # o = 0, in fit N(0,1), out fit N(-2,1): LR = e^2
        score = lira_score(0.0, [0.0], [-2.0], LiraParams(variance_floor=1.0))
        assert score == pytest.approx(math.exp(2.0), rel=1e-12)

    def test_symmetric_fits_give_unit_ratio(self):
        score = lira_score(0.5, [1.0], [0.0], LiraParams(variance_floor=1.0))
        assert score == pytest.approx(1.0, rel=1e-12)

    def test_multi_sample_fits(self):
        o_in = [1.0, 2.0, 3.0]
        o_out = [-1.0, 0.0, 1.0]
        score = lira_score(2.0, o_in, o_out)
        var = 1.0  # both samples have unbiased variance 1
        expected = math.exp(-((2.0 - 2.0) ** 2) / (2 * var)) / math.exp(-((2.0 - 0.0) ** 2) / (2 * var))
        assert score == pytest.approx(expected, rel=1e-12)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            LiraParams(clip_eps=0.7)
        with pytest.raises(ValueError):
            LiraParams(variance_floor=0.0)


class TestRunLira:
    def test_hand_fixture_exact(self):
        artifacts, confs, expected = make_fixture()
        table = run_lira(artifacts, confs, LiraParams(variance_floor=1.0))
        for i, value in expected.items():
            assert table.scores[i] == pytest.approx(value, rel=1e-10)
        assert table.flags == {}

    def test_no_out_shadow_uses_pooled_fallback(self):
        artifacts, confs, _ = make_fixture()
        confs.mask[0] = [1, 1]  # candidate A now has no out-shadow
        table = run_lira(artifacts, confs, LiraParams(variance_floor=1.0))
        assert table.flags == {"A": "no_out_shadow"}
        # fallback fits the pooled out logits of B and C: mean -1.5, floored var 1;
        # A's in-fit now covers both shadows: logits (0, -2), mean -1, variance 2
        o = 0.0
        pooled_mean, pooled_var = -1.5, 1.0
        mu_in, var_in = -1.0, 2.0
        log_num = -0.5 * math.log(2 * math.pi * var_in) - (o - mu_in) ** 2 / (2 * var_in)
        log_den = -0.5 * math.log(2 * math.pi * pooled_var) - (o - pooled_mean) ** 2 / (2 * pooled_var)
        assert table.scores["A"] == pytest.approx(math.exp(log_num - log_den), rel=1e-10)

    def test_no_in_shadow_flagged(self):
        artifacts, confs, _ = make_fixture()
        confs.mask[1] = [0, 0]
        table = run_lira(artifacts, confs, LiraParams(variance_floor=1.0))
        assert table.flags == {"B": "no_in_shadow"}

    def test_global_variance_mode(self):
        rng = np.random.default_rng(0)
        n, k = 12, 6
        ids = tuple(f"c{i}" for i in range(n))
        values = rng.uniform(0.2, 0.8, size=(n, k))
        mask = np.zeros((n, k), dtype=np.uint8)
        mask[:, : k // 2] = 1
        challenge = Challenge(member_ids=ids[:6], nonmember_ids=ids[6:], p_member=0.5, seed=0)
        artifacts = TargetArtifacts(
            model=None,
            confidences={i: float(rng.uniform(0.2, 0.8)) for i in ids},
            challenge=challenge, split=None,
        )
        confs = ConfidenceMatrix(ids=ids, values=values, mask=mask)
        table = run_lira(artifacts, confs, LiraParams(global_variance=True))

        # shared variance: log LR reduces to a distance difference over one sigma^2
        logits = rescale_confidence(values)
        residuals = np.concatenate([
            logits[r, half] - logits[r, half].mean()
            for r in range(n)
            for half in (slice(None, k // 2), slice(k // 2, None))
        ])
        gv = float(residuals @ residuals / (residuals.size - 1))
        for r, i in enumerate(ids):
            o = rescale_confidence(artifacts.confidences[i])
            mu_in = logits[r, : k // 2].mean()
            mu_out = logits[r, k // 2 :].mean()
            expected = math.exp(((o - mu_out) ** 2 - (o - mu_in) ** 2) / (2 * gv))
            assert table.scores[i] == pytest.approx(expected, rel=1e-10)

    def test_scores_finite_and_complete(self):
        artifacts, confs, _ = make_fixture()
        table = run_lira(artifacts, confs)
        assert set(table.scores) == {"A", "B", "C"}
        assert all(math.isfinite(s) for s in table.scores.values())


class TestRmiaScore:
    def test_counting_fixture_scores_half(self):
        # ratio_m = 0.75 / mean(0.5, 0.25) = 2; z ratios 1.0 and 2.0; gamma=2
        # dominates z1 (2/1 >= 2) but not z2 (2/2 < 2): score 1/2
        score = rmia_score(
            target_conf=0.75,
            shadow_confs=np.array([0.5, 0.25]),
            out_mask=np.array([False, True]),
            z_target_confs=np.array([0.5, 0.8]),
            z_shadow_confs=np.array([[0.9, 0.5], [0.1, 0.4]]),
            gamma=2.0,
        )
        assert score == pytest.approx(0.5, abs=1e-12)

    def test_p_m_averages_all_shadows(self):
        # out_mask only affects P(z); P(m) uses every shadow
        s1 = rmia_score(0.6, np.array([0.2, 0.4]), np.array([True, False]),
                        np.array([0.5]), np.array([[0.5, 0.5]]))
        s2 = rmia_score(0.6, np.array([0.2, 0.4]), np.array([False, True]),
                        np.array([0.5]), np.array([[0.5, 0.5]]))
        assert s1 == s2

    def test_no_excluding_shadow_falls_back_to_all(self):
        score = rmia_score(0.9, np.array([0.3, 0.3]), np.array([False, False]),
                           np.array([0.3]), np.array([[0.3, 0.3]]))
        assert score == 1.0

    def test_empty_z_rejected(self):
        with pytest.raises(ValueError):
            rmia_score(0.5, np.array([0.5]), np.array([True]),
                       np.array([]), np.zeros((0, 1)))

    def test_gamma_validation(self):
        with pytest.raises(ValueError):
            RmiaParams(gamma=0.0)

    @given(st.floats(0.5, 4.0), st.floats(0.5, 4.0))
    @settings(max_examples=50, deadline=None)
    def test_score_non_increasing_in_gamma(self, g1, g2):
        lo, hi = sorted([g1, g2])
        rng = np.random.default_rng(0)
        args = dict(
            target_conf=0.7,
            shadow_confs=rng.uniform(0.1, 0.9, size=4),
            out_mask=np.array([True, False, True, False]),
            z_target_confs=rng.uniform(0.1, 0.9, size=8),
            z_shadow_confs=rng.uniform(0.1, 0.9, size=(8, 4)),
        )
        assert rmia_score(**args, gamma=lo) >= rmia_score(**args, gamma=hi)


class TestRunRmia:
    def make_ensemble_fixture(self):
        artifacts, confs, _ = make_fixture()
        z_ids = ("z0", "z1")
        artifacts.confidences.update({"z0": 0.5, "z1": 0.8})
        ensemble = ShadowEnsemble(
            models=(), ids=confs.ids, mask=confs.mask, z_ids=z_ids, z_records=(),
            shadow_epochs=1, seed=0,
            z_confidences=np.array([[0.9, 0.5], [0.1, 0.4]]),
        )
        return artifacts, confs, ensemble

    def test_hand_fixture(self):
        artifacts, confs, ensemble = self.make_ensemble_fixture()
        table = run_rmia(artifacts, confs, ensemble)
        # candidate A: conf 0.5, shadows (0.5, sigma(-2)); out shadow is column 1
        p_m = float(np.mean(confs.values[0]))
        ratio_m = 0.5 / p_m
        p_z = np.array([0.5, 0.4])  # excluding-shadow column means
        ratio_z = np.array([0.5, 0.8]) / p_z
        expected = float(np.mean(ratio_m / ratio_z >= 2.0))
        assert table.scores["A"] == pytest.approx(expected, abs=1e-12)
        assert set(table.scores) == {"A", "B", "C"}

    def test_no_excluding_shadow_flagged(self):
        artifacts, confs, ensemble = self.make_ensemble_fixture()
        confs.mask[2] = [1, 1]
        table = run_rmia(artifacts, confs, ensemble)
        assert table.flags == {"C": "no_out_shadow"}

    def test_empty_z_rejected(self):
        artifacts, confs, _ = self.make_ensemble_fixture()
        ensemble = ShadowEnsemble(
            models=(), ids=confs.ids, mask=confs.mask, z_ids=(), z_records=(),
            shadow_epochs=1, seed=0,
        )
        with pytest.raises(ValueError):
            run_rmia(artifacts, confs, ensemble)


class TestScoreTable:
    def test_missing_candidate_rejected(self):
        challenge = Challenge(member_ids=("a",), nonmember_ids=("b",), p_member=0.5, seed=0)
        with pytest.raises(ValueError):
            AttackScores(attack="lira", scores={"a": 1.0}, challenge=challenge)

    def test_non_finite_score_rejected(self):
        challenge = Challenge(member_ids=("a",), nonmember_ids=(), p_member=0.5, seed=0)
        with pytest.raises(ValueError):
            AttackScores(attack="lira", scores={"a": float("inf")}, challenge=challenge)

    def test_save_load_round_trip(self, tmp_path):
        artifacts, confs, _ = make_fixture()
        table = run_lira(artifacts, confs, LiraParams(variance_floor=1.0))
        path = tmp_path / "scores.csv"
        save_scores(table, path)
        loaded = load_scores(path, "lira", p_member=0.67)
        assert loaded.scores == table.scores
        assert set(loaded.challenge.member_ids) == set(table.challenge.member_ids)
        assert loaded.flags == table.flags
