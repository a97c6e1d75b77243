"""Tests for challenge construction, target training and shadow ensembles."""

import json

import numpy as np
import pytest

from leakaudit.game import (
    Challenge,
    GameConfig,
    ShadowEnsemble,
    assign_membership,
    collect_confidences,
    run_game,
    save_manifest,
    train_shadow_ensemble,
)
from leakaudit.nnet import TrainConfig
from leakaudit.synth import SynthSpec, synth_dataset

FAST_CFG = TrainConfig(hidden_dims=(4,), dropout_rate=0.0, learning_rate=1e-2,
                       max_epochs=3, patience=3, seed=0)


@pytest.fixture(scope="module")
def dataset():
    return synth_dataset(SynthSpec(n=240, dim=4, positive_fraction=0.4, separation=3.0, seed=0))


@pytest.fixture(scope="module")
def artifacts(dataset):
    return run_game(dataset, FAST_CFG, GameConfig(seed=5), fixed_epochs=3)


@pytest.fixture(scope="module")
def ensemble(dataset, artifacts):
    pool = dataset.subset(artifacts.split.population_ids)
    candidates = dataset.subset(artifacts.challenge.candidate_ids)
    return train_shadow_ensemble(pool, candidates, k=4, cfg=FAST_CFG, seed=11, shadow_epochs=2)


class TestChallenge:
    def test_rejects_overlapping_sets(self):
        with pytest.raises(ValueError):
            Challenge(member_ids=("a",), nonmember_ids=("a",), p_member=0.5, seed=0)

    def test_membership_bits(self):
        ch = Challenge(member_ids=("a", "b"), nonmember_ids=("c",), p_member=0.67, seed=0)
        assert ch.membership_bits() == {"a": 1, "b": 1, "c": 0}
        assert ch.candidate_ids == ("a", "b", "c")
        assert ch.is_member("a") and not ch.is_member("c")


class TestAssignMembership:
    def test_deterministic(self):
        ids = [f"s{i}" for i in range(50)]
        assert assign_membership(ids, 0.67, 3) == assign_membership(ids, 0.67, 3)

    def test_ratio_approximate(self):
        ids = [f"s{i}" for i in range(5000)]
        ch = assign_membership(ids, 0.67, 0)
        assert len(ch.member_ids) / 5000 == pytest.approx(0.67, abs=0.03)

    def test_partition_complete(self):
        ids = [f"s{i}" for i in range(30)]
        ch = assign_membership(ids, 0.5, 1)
        assert sorted(ch.candidate_ids) == sorted(ids)

    def test_empty_candidates_raise(self):
        with pytest.raises(ValueError):
            assign_membership([], 0.5, 0)

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            assign_membership(["a"], 1.5, 0)


class TestRunGame:
    def test_members_are_training_split(self, artifacts):
        assert set(artifacts.challenge.member_ids) == set(artifacts.split.train_ids)

    def test_nonmembers_come_from_population(self, artifacts):
        assert set(artifacts.challenge.nonmember_ids) <= set(artifacts.split.population_ids)

    def test_p_member_ratio(self, artifacts):
        n_mem = len(artifacts.challenge.member_ids)
        n_non = len(artifacts.challenge.nonmember_ids)
        assert n_non == round(n_mem * 0.33 / 0.67)

    def test_confidences_cover_all_candidates(self, artifacts):
        assert set(artifacts.confidences) == set(artifacts.challenge.candidate_ids)
        assert all(0.0 < c < 1.0 for c in artifacts.confidences.values())

    def test_deterministic(self, dataset):
        a = run_game(dataset, FAST_CFG, GameConfig(seed=5), fixed_epochs=3)
        b = run_game(dataset, FAST_CFG, GameConfig(seed=5), fixed_epochs=3)
        assert a.challenge == b.challenge
        assert a.confidences == b.confidences

    def test_population_too_small(self, dataset):
        game = GameConfig(p_member=0.2, fractions=(0.7, 0.1, 0.2), seed=0)
        with pytest.raises(ValueError):
            run_game(dataset, FAST_CFG, game, fixed_epochs=1)

    def test_overfit_target_separates_members(self, dataset):
        cfg = TrainConfig(hidden_dims=(16,), dropout_rate=0.0, weight_decay=0.0,
                          learning_rate=1e-2, max_epochs=40, patience=40, seed=0)
        art = run_game(dataset, cfg, GameConfig(seed=2), fixed_epochs=40)
        bits = art.challenge.membership_bits()
        mem = [c for i, c in art.confidences.items() if bits[i] == 1]
        non = [c for i, c in art.confidences.items() if bits[i] == 0]
        assert np.mean(mem) > np.mean(non)


class TestShadowEnsemble:
    def test_mask_dimensions(self, ensemble):
        assert ensemble.mask.shape == (len(ensemble.ids), 4)
        assert len(ensemble.models) == 4
        assert len(ensemble.shadow_seeds) == 4

    def test_z_ids_have_zero_rows(self, ensemble):
        for zid in ensemble.z_ids:
            assert not ensemble.mask_row(zid).any()

    def test_z_excludes_candidates(self, ensemble, artifacts):
        assert not set(ensemble.z_ids) & set(artifacts.challenge.candidate_ids)

    def test_z_size(self, dataset, artifacts, ensemble):
        pool = dataset.subset(artifacts.split.population_ids)
        assert len(ensemble.z_ids) == round(0.25 * len(pool))

    def test_z_cap(self, dataset, artifacts):
        pool = dataset.subset(artifacts.split.population_ids)
        ens = train_shadow_ensemble(pool, None, k=2, cfg=FAST_CFG, seed=0,
                                    shadow_epochs=1, z_cap=5)
        assert len(ens.z_ids) == 5

    def test_every_shadow_saw_two_classes(self, dataset, ensemble):
        for j in range(ensemble.k):
            included = [i for i, row in zip(ensemble.ids, ensemble.mask) if row[j]]
            labels = {dataset[i].label for i in included}
            assert labels == {0, 1}

    def test_deterministic(self, dataset, artifacts):
        pool = dataset.subset(artifacts.split.population_ids)
        candidates = dataset.subset(artifacts.challenge.candidate_ids)
        e1 = train_shadow_ensemble(pool, candidates, k=3, cfg=FAST_CFG, seed=4, shadow_epochs=2)
        e2 = train_shadow_ensemble(pool, candidates, k=3, cfg=FAST_CFG, seed=4, shadow_epochs=2)
        assert np.array_equal(e1.mask, e2.mask)
        assert e1.z_ids == e2.z_ids
        for m1, m2 in zip(e1.models, e2.models):
            for w1, w2 in zip(m1.model.weights, m2.model.weights):
                assert np.array_equal(w1, w2)

    def test_shadow_epochs_respected(self, ensemble):
        for m in ensemble.models:
            assert len(m.train_losses) == 2

    def test_rejects_tiny_k(self, dataset):
        with pytest.raises(ValueError):
            train_shadow_ensemble(dataset, None, k=1, cfg=FAST_CFG)

    def test_mask_shape_validated(self):
        with pytest.raises(ValueError):
            ShadowEnsemble(
                models=(), ids=("a", "b"), mask=np.zeros((3, 2), dtype=np.uint8),
                z_ids=(), z_records=(), shadow_epochs=1, seed=0,
            )

    def test_z_in_training_set_rejected(self):
        with pytest.raises(ValueError):
            ShadowEnsemble(
                models=(), ids=("a",), mask=np.ones((1, 2), dtype=np.uint8),
                z_ids=("a",), z_records=(), shadow_epochs=1, seed=0,
            )


class TestConfidences:
    def test_matrix_aligned_with_mask(self, dataset, artifacts, ensemble):
        candidates = dataset.subset(artifacts.challenge.candidate_ids)
        confs = collect_confidences(ensemble, candidates.samples)
        assert confs.values.shape == (len(candidates), ensemble.k)
        assert confs.ids == candidates.ids
        row = {i: r for r, i in enumerate(ensemble.ids)}
        for r, sample_id in enumerate(confs.ids):
            assert np.array_equal(confs.mask[r], ensemble.mask[row[sample_id]])

    def test_values_in_open_interval(self, dataset, artifacts, ensemble):
        candidates = dataset.subset(artifacts.challenge.candidate_ids)
        confs = collect_confidences(ensemble, candidates.samples)
        assert np.all((confs.values > 0.0) & (confs.values < 1.0))


class TestManifest:
    def test_manifest_round_trip(self, ensemble, tmp_path):
        path = tmp_path / "manifest.json"
        save_manifest(ensemble, path, checkpoint_paths=["s0.npz"])
        manifest = json.loads(path.read_text(encoding="utf-8"))
        assert manifest["seed"] == ensemble.seed
        assert tuple(manifest["z_ids"]) == ensemble.z_ids
        assert np.array_equal(np.array(manifest["mask"], dtype=np.uint8), ensemble.mask)
        assert manifest["checkpoints"] == ["s0.npz"]
