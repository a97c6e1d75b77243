"""Experiment configuration: flat ``key = value`` files with dotted namespaces.

Unknown keys and range violations are all reported at once. Defaults
carry the audit's standard constants (p_member 0.67, 10 shadows trained
for 15 epochs at 0.5 inclusion, gamma 2, 45/10/45 splits, FPR targets
0 and 1e-3).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from leakaudit.attacks import LiraParams, RmiaParams
from leakaudit.nnet import TrainConfig
from leakaudit.synth import SynthSpec

__all__ = ["ConfigError", "ShadowParams", "ExperimentConfig", "parse_config_text", "validate_config"]


class ConfigError(ValueError):
    """Carries the full list of configuration problems."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass(frozen=True)
class ShadowParams:
    count: int = 10
    inclusion_rate: float = 0.5
    epochs: int = 15
    z_fraction: float = 0.25
    z_cap: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str | None = None
    synth: SynthSpec | None = None
    fractions: tuple[float, float, float] = (0.45, 0.10, 0.45)
    train: TrainConfig = field(default_factory=TrainConfig)
    target_fixed_epochs: int | None = None
    shadow: ShadowParams = field(default_factory=ShadowParams)
    lira: LiraParams = field(default_factory=LiraParams)
    rmia: RmiaParams = field(default_factory=RmiaParams)
    p_member: float = 0.67
    repetitions: int = 5
    fpr_targets: tuple[float, ...] = (0.0, 1e-3)
    seed: int = 0
    output_dir: str = "leakaudit_out"
    metadata_key: str | None = None
    write_svg: bool = True


_KNOWN_KEYS = {
    "data.path", "data.synth.n", "data.synth.dim", "data.synth.positive_fraction",
    "data.synth.separation", "data.synth.seed",
    "split.train", "split.validation", "split.population",
    "train.hidden_dims", "train.dropout", "train.learning_rate", "train.weight_decay",
    "train.batch_size", "train.max_epochs", "train.patience", "train.fixed_epochs",
    "shadow.count", "shadow.inclusion_rate", "shadow.epochs", "shadow.z_fraction",
    "shadow.z_cap",
    "attack.lira.clip_eps", "attack.lira.variance_floor", "attack.lira.global_variance",
    "attack.rmia.gamma",
    "game.p_member",
    "run.repetitions", "run.fpr_targets", "run.seed", "run.output_dir", "run.svg",
    "report.metadata_key",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    pairs: dict[str, str] = {}
    errors: list[str] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            errors.append(f"line {line_no}: duplicate key {key!r}")
            continue
        pairs[key] = value.strip()
    if errors:
        raise ConfigError(errors)
    return pairs


def _get(pairs, key, cast, default, errors):
    if key not in pairs:
        return default
    raw = pairs[key]
    try:
        return cast(raw)
    except (TypeError, ValueError):
        errors.append(f"{key}: cannot parse {raw!r}")
        return default


def _int_tuple(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(v.strip()) for v in raw.split(","))


def _float_tuple(raw: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in raw.split(","))


def _opt_int(raw: str) -> int | None:
    raw = raw.strip()
    return None if raw in ("", "none") else int(raw)


def validate_config(path: str | Path) -> ExperimentConfig:
    """Load, default-fill and validate a config file.

    Raises :class:`ConfigError` carrying every violation found.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"no such config file: {path}"])
    pairs = parse_config_text(path.read_text(encoding="utf-8"))

    errors: list[str] = [f"unknown key {k!r}" for k in pairs if k not in _KNOWN_KEYS]

    dataset_path = pairs.get("data.path")
    synth = None
    if "data.synth.n" in pairs or "data.synth.dim" in pairs:
        n = _get(pairs, "data.synth.n", int, 0, errors)
        dim = _get(pairs, "data.synth.dim", int, 0, errors)
        pos = _get(pairs, "data.synth.positive_fraction", float, 0.5, errors)
        sep = _get(pairs, "data.synth.separation", float, 1.0, errors)
        sseed = _get(pairs, "data.synth.seed", int, 0, errors)
        try:
            synth = SynthSpec(n=n, dim=dim, positive_fraction=pos, separation=sep, seed=sseed)
        except ValueError as exc:
            errors.append(f"data.synth: {exc}")
    if dataset_path is None and synth is None:
        errors.append("config must set data.path or data.synth.*")
    if dataset_path is not None and synth is not None:
        errors.append("data.path and data.synth.* are mutually exclusive")

    f_train = _get(pairs, "split.train", float, 0.45, errors)
    f_val = _get(pairs, "split.validation", float, 0.10, errors)
    f_pop = _get(pairs, "split.population", float, 0.45, errors)
    fractions = (f_train, f_val, f_pop)
    if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        errors.append(f"split fractions must be non-negative and sum to 1, got {fractions}")

    try:
        train = TrainConfig(
            hidden_dims=_get(pairs, "train.hidden_dims", _int_tuple, (256, 128), errors),
            dropout_rate=_get(pairs, "train.dropout", float, 0.2, errors),
            learning_rate=_get(pairs, "train.learning_rate", float, 1e-3, errors),
            weight_decay=_get(pairs, "train.weight_decay", float, 1e-4, errors),
            batch_size=_get(pairs, "train.batch_size", int, 64, errors),
            max_epochs=_get(pairs, "train.max_epochs", int, 100, errors),
            patience=_get(pairs, "train.patience", int, 10, errors),
        )
    except ValueError as exc:
        errors.append(f"train: {exc}")
        train = TrainConfig()
    target_fixed_epochs = _get(pairs, "train.fixed_epochs", _opt_int, None, errors)
    if target_fixed_epochs is not None and target_fixed_epochs < 1:
        errors.append(f"train.fixed_epochs must be >= 1, got {target_fixed_epochs}")

    shadow = ShadowParams(
        count=_get(pairs, "shadow.count", int, 10, errors),
        inclusion_rate=_get(pairs, "shadow.inclusion_rate", float, 0.5, errors),
        epochs=_get(pairs, "shadow.epochs", int, 15, errors),
        z_fraction=_get(pairs, "shadow.z_fraction", float, 0.25, errors),
        z_cap=_get(pairs, "shadow.z_cap", _opt_int, None, errors),
    )
    if shadow.count < 2:
        errors.append(f"shadow.count must be >= 2, got {shadow.count}")
    if not 0.0 < shadow.inclusion_rate < 1.0:
        errors.append(f"shadow.inclusion_rate must be in (0,1), got {shadow.inclusion_rate}")
    if shadow.epochs < 1:
        errors.append(f"shadow.epochs must be >= 1, got {shadow.epochs}")
    if not 0.0 <= shadow.z_fraction < 1.0:
        errors.append(f"shadow.z_fraction must be in [0,1), got {shadow.z_fraction}")

    try:
        lira = LiraParams(
            clip_eps=_get(pairs, "attack.lira.clip_eps", float, 1e-6, errors),
            variance_floor=_get(pairs, "attack.lira.variance_floor", float, 1e-6, errors),
            global_variance=_get(pairs, "attack.lira.global_variance",
                                 lambda s: s.lower() in ("1", "true", "yes"), False, errors),
        )
    except ValueError as exc:
        errors.append(f"attack.lira: {exc}")
        lira = LiraParams()
    try:
        rmia = RmiaParams(gamma=_get(pairs, "attack.rmia.gamma", float, 2.0, errors))
    except ValueError as exc:
        errors.append(f"attack.rmia.gamma: {exc}")
        rmia = RmiaParams()

    p_member = _get(pairs, "game.p_member", float, 0.67, errors)
    if not 0.0 < p_member < 1.0:
        errors.append(f"game.p_member must be in (0,1), got {p_member}")

    repetitions = _get(pairs, "run.repetitions", int, 5, errors)
    if repetitions < 1:
        errors.append(f"run.repetitions must be >= 1, got {repetitions}")
    fpr_targets = _get(pairs, "run.fpr_targets", _float_tuple, (0.0, 1e-3), errors)
    if any(not 0.0 <= f <= 1.0 for f in fpr_targets):
        errors.append(f"run.fpr_targets must lie in [0,1], got {fpr_targets}")

    cfg = ExperimentConfig(
        dataset_path=dataset_path,
        synth=synth,
        fractions=fractions,
        train=train,
        target_fixed_epochs=target_fixed_epochs,
        shadow=shadow,
        lira=lira,
        rmia=rmia,
        p_member=p_member,
        repetitions=repetitions,
        fpr_targets=fpr_targets,
        seed=_get(pairs, "run.seed", int, 0, errors),
        output_dir=pairs.get("run.output_dir", "leakaudit_out"),
        metadata_key=pairs.get("report.metadata_key"),
        write_svg=_get(pairs, "run.svg", lambda s: s.lower() in ("1", "true", "yes"), True, errors),
    )
    if errors:
        raise ConfigError(errors)
    return cfg
