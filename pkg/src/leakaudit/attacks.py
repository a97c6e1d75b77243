"""Per-sample membership scores: likelihood-ratio (LiRA) and robust (RMIA) attacks.

Both attacks consume the target model's true-label confidences and the
shadow ConfidenceMatrix; they are pure functions of their inputs and
bit-deterministic on recomputation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from leakaudit.game import Challenge, ConfidenceMatrix, ShadowEnsemble, TargetArtifacts, collect_confidences
from leakaudit.nnet import predict_confidences
from leakaudit.stats import fit_gaussian, gaussian_pdf

__all__ = [
    "LiraParams",
    "RmiaParams",
    "AttackScores",
    "rescale_confidence",
    "lira_score",
    "run_lira",
    "rmia_score",
    "run_rmia",
    "save_scores",
    "load_scores",
]

log = logging.getLogger(__name__)

DEFAULT_CLIP_EPS = 1e-6
DEFAULT_VARIANCE_FLOOR = 1e-6
DEFAULT_GAMMA = 2.0


@dataclass(frozen=True)
class LiraParams:
    clip_eps: float = DEFAULT_CLIP_EPS
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    global_variance: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 0.5:
            raise ValueError(f"clip_eps must be in (0, 0.5), got {self.clip_eps}")
        if self.variance_floor <= 0:
            raise ValueError(f"variance_floor must be positive, got {self.variance_floor}")


@dataclass(frozen=True)
class RmiaParams:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass
class AttackScores:
    """Per-candidate membership scores; higher means more likely a member."""

    attack: str
    scores: dict[str, float]
    challenge: Challenge
    flags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.challenge.candidate_ids) - set(self.scores)
        if missing:
            raise ValueError(f"missing scores for {len(missing)} candidates")
        bad = [i for i, s in self.scores.items() if not math.isfinite(s)]
        if bad:
            raise ValueError(f"non-finite scores for ids {bad[:5]}")


def rescale_confidence(p: float | np.ndarray, eps: float = DEFAULT_CLIP_EPS) -> float | np.ndarray:
    """Logit rescaling log(p / (1 - p)) with endpoint clipping."""
    clipped = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    out = np.log(clipped / (1.0 - clipped))
    return float(out) if np.ndim(p) == 0 else out


def lira_score(
    o_target: float,
    o_in: Sequence[float],
    o_out: Sequence[float],
    params: LiraParams = LiraParams(),
) -> float:
    """Gaussian likelihood ratio N(o|in-fit) / N(o|out-fit)."""
    fit_in = fit_gaussian(o_in, floor=params.variance_floor)
    fit_out = fit_gaussian(o_out, floor=params.variance_floor)
    # ratio in log space to survive saturated logits
    log_l_in = _log_normal_pdf(o_target, fit_in.mean, fit_in.variance)
    log_l_out = _log_normal_pdf(o_target, fit_out.mean, fit_out.variance)
    return float(np.exp(log_l_in - log_l_out))


def _log_normal_pdf(x: float, mean: float, var: float) -> float:
    return -0.5 * math.log(2.0 * math.pi * var) - (x - mean) ** 2 / (2.0 * var)


def run_lira(
    artifacts: TargetArtifacts,
    confs: ConfidenceMatrix,
    params: LiraParams = LiraParams(),
) -> AttackScores:
    """Per-candidate likelihood ratios from the shadow confidence matrix.

    Candidates lacking an in-shadow (or out-shadow) population are scored
    against a Gaussian pooled over all candidates' out-shadow logits and
    flagged.
    """
    logits = rescale_confidence(confs.values, params.clip_eps)
    mask = confs.mask.astype(bool)
    pooled_out = logits[~mask]
    pooled_fit = fit_gaussian(pooled_out, floor=params.variance_floor) if pooled_out.size else None
    global_var = None
    if params.global_variance:
        # Within-candidate variance pooled across the whole matrix: residuals
        # against each candidate's own in-mean and out-mean. Between-candidate
        # spread is deliberately excluded; it reflects sample difficulty, not
        # shadow-training noise.
        residuals = []
        for r in range(logits.shape[0]):
            for side in (logits[r][mask[r]], logits[r][~mask[r]]):
                if side.size >= 2:
                    residuals.append(side - side.mean())
        if residuals:
            pooled = np.concatenate(residuals)
            global_var = max(float(np.dot(pooled, pooled) / (pooled.size - 1)), params.variance_floor)

    scores: dict[str, float] = {}
    flags: dict[str, str] = {}
    for r, sample_id in enumerate(confs.ids):
        o_target = rescale_confidence(artifacts.confidences[sample_id], params.clip_eps)
        o_in = logits[r][mask[r]]
        o_out = logits[r][~mask[r]]
        flag = []
        if o_in.size == 0:
            if pooled_fit is None:
                raise ValueError(f"candidate {sample_id!r}: no in-shadows and no pooled fallback")
            mu_in, var_in = pooled_fit.mean, pooled_fit.variance
            flag.append("no_in_shadow")
        else:
            g = fit_gaussian(o_in, floor=params.variance_floor)
            mu_in, var_in = g.mean, g.variance
            if global_var is not None:
                var_in = global_var
        if o_out.size == 0:
            if pooled_fit is None:
                raise ValueError(f"candidate {sample_id!r}: no out-shadows and no pooled fallback")
            mu_out, var_out = pooled_fit.mean, pooled_fit.variance
            flag.append("no_out_shadow")
        else:
            g = fit_gaussian(o_out, floor=params.variance_floor)
            mu_out, var_out = g.mean, g.variance
            if global_var is not None:
                var_out = global_var
        log_lr = _log_normal_pdf(o_target, mu_in, var_in) - _log_normal_pdf(o_target, mu_out, var_out)
        # clip in log space to keep the ratio finite; the ROC only uses ranks
        scores[sample_id] = float(np.exp(np.clip(log_lr, -700.0, 700.0)))
        if flag:
            flags[sample_id] = ",".join(flag)
    if flags:
        log.warning("LiRA: %d candidates scored via pooled fallback", len(flags))
    return AttackScores(attack="lira", scores=scores, challenge=artifacts.challenge, flags=flags)


def rmia_score(
    target_conf: float,
    shadow_confs: np.ndarray,
    out_mask: np.ndarray,
    z_target_confs: np.ndarray,
    z_shadow_confs: np.ndarray,
    gamma: float = DEFAULT_GAMMA,
) -> float:
    """Fraction of reference points z dominated by factor gamma.

    ``out_mask`` marks the shadows that excluded the candidate; the z
    probabilities average over exactly those shadows.
    """
    if z_target_confs.size == 0:
        raise ValueError("Z reference set must be non-empty")
    p_m = float(np.mean(shadow_confs))
    ratio_m = target_conf / p_m
    out = out_mask.astype(bool)
    if not out.any():
        out = np.ones_like(out, dtype=bool)
    p_z = z_shadow_confs[:, out].mean(axis=1)
    ratio_z = z_target_confs / p_z
    return float(np.mean(ratio_m / ratio_z >= gamma))


def run_rmia(
    artifacts: TargetArtifacts,
    confs: ConfidenceMatrix,
    ensemble: ShadowEnsemble,
    params: RmiaParams = RmiaParams(),
) -> AttackScores:
    """RMIA scores for every candidate against the ensemble's shared Z table."""
    if not ensemble.z_ids:
        raise ValueError("ensemble carries an empty Z set")
    if ensemble.z_confidences is not None:
        z_shadow = ensemble.z_confidences
    else:
        z_shadow = collect_confidences(ensemble, ensemble.z_records).values
    z_target = _z_target_confidences(artifacts, ensemble)

    mask = confs.mask.astype(bool)
    scores: dict[str, float] = {}
    flags: dict[str, str] = {}
    for r, sample_id in enumerate(confs.ids):
        out = ~mask[r]
        if not out.any():
            flags[sample_id] = "no_out_shadow"
        scores[sample_id] = rmia_score(
            artifacts.confidences[sample_id],
            confs.values[r],
            out,
            z_target,
            z_shadow,
            gamma=params.gamma,
        )
    if flags:
        log.warning("RMIA: %d candidates had no excluding shadow; averaged over all shadows",
                    len(flags))
    return AttackScores(attack="rmia", scores=scores, challenge=artifacts.challenge, flags=flags)


def _z_target_confidences(artifacts: TargetArtifacts, ensemble: ShadowEnsemble) -> np.ndarray:
    known = artifacts.confidences
    if all(zid in known for zid in ensemble.z_ids):
        return np.array([known[zid] for zid in ensemble.z_ids])
    if artifacts.model is None:
        raise ValueError("target confidences for Z unavailable and no target model to query")
    X = np.stack([np.asarray(rec.features, dtype=float) for rec in ensemble.z_records])
    y = np.array([rec.label for rec in ensemble.z_records])
    return predict_confidences(artifacts.model, X, y)


def save_scores(scores: AttackScores, path: str | Path) -> None:
    """Write the score table as CSV ``id,score,is_member,flags``."""
    bits = scores.challenge.membership_bits()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "is_member", "flags"])
        for sample_id in scores.challenge.candidate_ids:
            writer.writerow([
                sample_id,
                repr(scores.scores[sample_id]),
                bits[sample_id],
                scores.flags.get(sample_id, ""),
            ])


def load_scores(path: str | Path, attack: str, p_member: float = 0.0, seed: int = 0) -> AttackScores:
    """Rebuild an AttackScores table (and its challenge) from a score CSV."""
    members, nonmembers = [], []
    values: dict[str, float] = {}
    flags: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            values[row["id"]] = float(row["score"])
            (members if row["is_member"] == "1" else nonmembers).append(row["id"])
            if row["flags"]:
                flags[row["id"]] = row["flags"]
    challenge = Challenge(
        member_ids=tuple(members), nonmember_ids=tuple(nonmembers), p_member=p_member, seed=seed
    )
    return AttackScores(attack=attack, scores=values, challenge=challenge, flags=flags)
