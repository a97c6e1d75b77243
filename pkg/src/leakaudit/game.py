"""Membership-inference game orchestration.

Builds the challenge (candidate samples with hidden membership bits),
trains the target model, and constructs shadow-model ensembles with
per-sample inclusion tracking and a reserved Z set excluded from all
shadow training.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from leakaudit.data import Dataset, SampleRecord, SplitAssignment, split_dataset
from leakaudit.nnet import TrainConfig, TrainedModel, fit, predict_confidences
from leakaudit.seeds import derive_rng, derive_seed

__all__ = [
    "Challenge",
    "GameConfig",
    "TargetArtifacts",
    "ShadowEnsemble",
    "ConfidenceMatrix",
    "assign_membership",
    "run_game",
    "train_shadow_ensemble",
    "collect_confidences",
    "save_manifest",
]

log = logging.getLogger(__name__)

DEFAULT_P_MEMBER = 0.67
DEFAULT_SHADOW_COUNT = 10
DEFAULT_INCLUSION_RATE = 0.5
DEFAULT_SHADOW_EPOCHS = 15
DEFAULT_Z_FRACTION = 0.25


@dataclass(frozen=True)
class Challenge:
    """Candidate ids with their hidden membership bits (1 = member)."""

    member_ids: tuple[str, ...]
    nonmember_ids: tuple[str, ...]
    p_member: float
    seed: int

    def __post_init__(self):
        if set(self.member_ids) & set(self.nonmember_ids):
            raise ValueError("member and non-member id sets must be disjoint")

    @property
    def candidate_ids(self) -> tuple[str, ...]:
        return self.member_ids + self.nonmember_ids

    def is_member(self, sample_id: str) -> bool:
        return sample_id in set(self.member_ids)

    def membership_bits(self) -> dict[str, int]:
        bits = {i: 1 for i in self.member_ids}
        bits.update({i: 0 for i in self.nonmember_ids})
        return bits


@dataclass(frozen=True)
class GameConfig:
    p_member: float = DEFAULT_P_MEMBER
    fractions: tuple[float, float, float] = (0.45, 0.10, 0.45)
    seed: int = 0


@dataclass
class TargetArtifacts:
    """Everything the adversary receives about one target model."""

    model: TrainedModel | None
    confidences: dict[str, float]
    challenge: Challenge
    split: SplitAssignment | None


@dataclass
class ShadowEnsemble:
    """K shadow models with a (sample x shadow) inclusion mask.

    ``ids`` indexes the mask rows and covers every sample the ensemble
    saw or reserved; the reserved Z ids always have all-zero rows.
    """

    models: tuple[TrainedModel, ...]
    ids: tuple[str, ...]
    mask: np.ndarray
    z_ids: tuple[str, ...]
    z_records: tuple[SampleRecord, ...]
    shadow_epochs: int
    seed: int
    shadow_seeds: tuple[int, ...] = ()
    z_confidences: np.ndarray | None = None

    def __post_init__(self):
        if self.mask.shape != (len(self.ids), self.k):
            raise ValueError(f"mask shape {self.mask.shape} does not match ids x shadows")
        row = {i: r for r, i in enumerate(self.ids)}
        for zid in self.z_ids:
            if zid in row and self.mask[row[zid]].any():
                raise ValueError(f"reserved Z id {zid!r} appears in a shadow training set")

    @property
    def k(self) -> int:
        return len(self.models) if self.models else self.mask.shape[1]

    def mask_row(self, sample_id: str) -> np.ndarray:
        return self.mask[self.ids.index(sample_id)]


@dataclass
class ConfidenceMatrix:
    """(sample x shadow) true-label confidences with the parallel inclusion mask."""

    ids: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask.shape or self.values.shape[0] != len(self.ids):
            raise ValueError("confidence matrix dimensions disagree with ids/mask")


def assign_membership(candidate_ids: Sequence[str], p_member: float, seed: int) -> Challenge:
    """Independent biased coin flip per candidate; deterministic under seed."""
    if not candidate_ids:
        raise ValueError("candidate set must be non-empty")
    if not 0.0 <= p_member <= 1.0:
        raise ValueError(f"p_member must be in [0,1], got {p_member}")
    rng = derive_rng(seed, "membership")
    bits = rng.random(len(candidate_ids)) < p_member
    members = tuple(i for i, b in zip(candidate_ids, bits) if b)
    nonmembers = tuple(i for i, b in zip(candidate_ids, bits) if not b)
    return Challenge(member_ids=members, nonmember_ids=nonmembers, p_member=p_member, seed=seed)


def run_game(
    dataset: Dataset,
    cfg: TrainConfig,
    game: GameConfig,
    fixed_epochs: int | None = None,
) -> TargetArtifacts:
    """Split, train the target, and record per-candidate true-label confidences.

    All training-split samples are member candidates; non-member candidates
    are drawn from the population split so that members make up
    ``game.p_member`` of the challenge.
    """
    split = split_dataset(dataset, game.fractions, derive_seed(game.seed, "split"))
    n_members = len(split.train_ids)
    n_nonmembers = int(round(n_members * (1.0 - game.p_member) / game.p_member))
    if n_nonmembers > len(split.population_ids):
        raise ValueError(
            f"population split too small: need {n_nonmembers} non-members, "
            f"have {len(split.population_ids)}"
        )
    rng = derive_rng(game.seed, "nonmembers")
    nonmembers = tuple(
        str(i) for i in rng.choice(np.array(split.population_ids), size=n_nonmembers, replace=False)
    )
    challenge = Challenge(
        member_ids=tuple(split.train_ids),
        nonmember_ids=nonmembers,
        p_member=game.p_member,
        seed=game.seed,
    )

    train_cfg = replace(cfg, seed=derive_seed(game.seed, "target"))
    trained = fit(
        dataset.subset(split.train_ids),
        dataset.subset(split.validation_ids),
        train_cfg,
        fixed_epochs=fixed_epochs,
    )

    candidates = dataset.subset(challenge.candidate_ids)
    confs = predict_confidences(trained, candidates.features_array(), candidates.labels_array())
    confidences = dict(zip(candidates.ids, map(float, confs)))
    return TargetArtifacts(model=trained, confidences=confidences, challenge=challenge, split=split)


def train_shadow_ensemble(
    pool: Dataset,
    candidates: Dataset | None,
    k: int = DEFAULT_SHADOW_COUNT,
    inclusion_rate: float = DEFAULT_INCLUSION_RATE,
    z_fraction: float = DEFAULT_Z_FRACTION,
    cfg: TrainConfig | None = None,
    seed: int = 0,
    shadow_epochs: int = DEFAULT_SHADOW_EPOCHS,
    z_cap: int | None = None,
    candidate_ids_to_watch: Sequence[str] | None = None,
) -> ShadowEnsemble:
    """Train K shadows over the pool-plus-candidates sampling universe.

    A Z set of ``z_fraction * len(pool)`` pool samples (never candidates,
    optionally capped at ``z_cap``) is reserved and excluded from every
    shadow. Every remaining sample enters each shadow independently with
    probability ``inclusion_rate``. Shadows reuse the target
    hyperparameters and train for exactly ``shadow_epochs`` epochs.
    """
    if k < 2:
        raise ValueError(f"need at least 2 shadow models, got {k}")
    if not 0.0 < inclusion_rate < 1.0:
        raise ValueError(f"inclusion_rate must be in (0,1), got {inclusion_rate}")
    if not 0.0 <= z_fraction < 1.0:
        raise ValueError(f"z_fraction must be in [0,1), got {z_fraction}")
    if len(pool) == 0:
        raise ValueError("empty shadow pool")
    cfg = cfg or TrainConfig()

    candidate_id_set = set(candidates.ids) if candidates is not None else set()
    z_eligible = [i for i in pool.ids if i not in candidate_id_set]
    n_z = int(round(z_fraction * len(pool)))
    if z_cap is not None:
        n_z = min(n_z, z_cap)
    n_z = min(n_z, len(z_eligible))
    rng = derive_rng(seed, "z-reserve")
    z_ids = tuple(str(i) for i in rng.choice(np.array(z_eligible), size=n_z, replace=False)) if n_z else ()
    z_set = set(z_ids)

    # sampling universe: pool minus Z, union candidates
    universe: list[SampleRecord] = [rec for rec in pool.samples if rec.id not in z_set]
    seen = {rec.id for rec in universe}
    if candidates is not None:
        universe.extend(rec for rec in candidates.samples if rec.id not in seen)
    universe_ids = [rec.id for rec in universe]

    coin_rng = derive_rng(seed, "inclusion")
    incl = (coin_rng.random((len(universe), k)) < inclusion_rate).astype(np.uint8)
    # a shadow with no samples or one class cannot train; re-flip such columns
    labels = np.array([rec.label for rec in universe])
    for j in range(k):
        tries = 0
        while True:
            col = incl[:, j].astype(bool)
            if col.any() and len(set(labels[col])) == 2:
                break
            tries += 1
            if tries > 100:
                raise ValueError(f"could not draw a two-class training set for shadow {j}")
            incl[:, j] = (coin_rng.random(len(universe)) < inclusion_rate).astype(np.uint8)

    z_dataset = Dataset([pool[i] for i in z_ids]) if z_ids else None
    models: list[TrainedModel] = []
    shadow_seeds: list[int] = []
    for j in range(k):
        s_seed = derive_seed(seed, "shadow", j)
        shadow_seeds.append(s_seed)
        included = [rec for rec, flag in zip(universe, incl[:, j]) if flag]
        d_train = Dataset(included)
        d_val = z_dataset if z_dataset is not None else d_train
        models.append(fit(d_train, d_val, replace(cfg, seed=s_seed), fixed_epochs=shadow_epochs))

    all_ids = tuple(universe_ids) + z_ids
    mask = np.vstack([incl, np.zeros((len(z_ids), k), dtype=np.uint8)])

    watch = candidate_ids_to_watch
    if watch is None and candidates is not None:
        watch = candidates.ids
    if watch:
        row = {i: r for r, i in enumerate(all_ids)}
        n_no_in = sum(1 for i in watch if i in row and not mask[row[i]].any())
        n_no_out = sum(1 for i in watch if i in row and mask[row[i]].all())
        if n_no_in or n_no_out:
            log.warning(
                "shadow ensemble: %d candidates have no in-shadow, %d have no out-shadow",
                n_no_in, n_no_out,
            )

    return ShadowEnsemble(
        models=tuple(models),
        ids=all_ids,
        mask=mask,
        z_ids=z_ids,
        z_records=tuple(pool[i] for i in z_ids),
        shadow_epochs=shadow_epochs,
        seed=seed,
        shadow_seeds=tuple(shadow_seeds),
    )


def collect_confidences(ensemble: ShadowEnsemble, samples: Sequence[SampleRecord]) -> ConfidenceMatrix:
    """True-label confidence of every (sample, shadow) pair, with mask rows aligned."""
    if not ensemble.models:
        raise ValueError("ensemble carries no trained models")
    X = np.stack([np.asarray(rec.features, dtype=float) for rec in samples])
    y = np.array([rec.label for rec in samples])
    values = np.column_stack([predict_confidences(m, X, y) for m in ensemble.models])
    row = {i: r for r, i in enumerate(ensemble.ids)}
    mask = np.zeros((len(samples), ensemble.k), dtype=np.uint8)
    for r, rec in enumerate(samples):
        if rec.id in row:
            mask[r] = ensemble.mask[row[rec.id]]
    return ConfidenceMatrix(ids=tuple(rec.id for rec in samples), values=values, mask=mask)


def save_manifest(ensemble: ShadowEnsemble, path: str | Path,
                  checkpoint_paths: Sequence[str] | None = None) -> None:
    """Write a JSON manifest sufficient to re-verify the inclusion mask offline."""
    manifest = {
        "seed": ensemble.seed,
        "shadow_epochs": ensemble.shadow_epochs,
        "shadow_seeds": list(ensemble.shadow_seeds),
        "z_ids": list(ensemble.z_ids),
        "ids": list(ensemble.ids),
        "mask": ensemble.mask.tolist(),
        "checkpoints": list(checkpoint_paths) if checkpoint_paths else [],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
