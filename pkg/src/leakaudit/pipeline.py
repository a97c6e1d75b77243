"""End-to-end repeated experiments: split, train, attack, evaluate, aggregate.

Each repetition writes its artifacts (checkpoints, ensemble manifest,
score and ROC CSVs) into its own directory and finishes with a
``rep_report.json`` marker; re-running resumes from completed repetitions
and reproduces byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from leakaudit.attacks import AttackScores, load_scores, run_lira, run_rmia, save_scores
from leakaudit.config import ExperimentConfig
from leakaudit.data import Dataset, load_dataset
from leakaudit.evaluation import (
    RocCurve,
    aggregate_repetitions,
    baseline_tpr,
    auroc,
    characteristic_analysis,
    identified_members,
    minority_tpr,
    overlap_analysis,
    roc_curve,
    star_level,
    tpr_at_fpr,
)
from leakaudit.game import (
    Challenge,
    GameConfig,
    ShadowEnsemble,
    TargetArtifacts,
    collect_confidences,
    run_game,
    save_manifest,
    train_shadow_ensemble,
)
from leakaudit.nnet import load_model, predict_confidences, save_model
from leakaudit.seeds import derive_seed
from leakaudit.stats import wilcoxon_signed_rank
from leakaudit.synth import synth_dataset

__all__ = ["run_experiment", "rerun_attacks", "report_render", "flatten_report", "unflatten_report"]

log = logging.getLogger(__name__)

ATTACK_NAMES = ("lira", "rmia")


def _fpr_key(fpr: float) -> str:
    return repr(float(fpr))


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.synth is not None:
        return synth_dataset(cfg.synth)
    return load_dataset(cfg.dataset_path)


def _rep_dir(out_dir: Path, rep: int) -> Path:
    return out_dir / f"rep_{rep:03d}"


def _write_roc_csv(roc: RocCurve, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("threshold,fpr,tpr\n")
        for t, f, tp in zip(roc.thresholds, roc.fpr, roc.tpr):
            fh.write(f"{float(t)!r},{float(f)!r},{float(tp)!r}\n")


def _run_single_rep(
    dataset: Dataset,
    cfg: ExperimentConfig,
    rep: int,
    rep_dir: Path,
) -> dict:
    rep_seed = derive_seed(cfg.seed, "rep", rep)
    game_cfg = GameConfig(p_member=cfg.p_member, fractions=cfg.fractions, seed=rep_seed)
    artifacts = run_game(dataset, cfg.train, game_cfg, fixed_epochs=cfg.target_fixed_epochs)
    challenge = artifacts.challenge

    pool = dataset.subset(artifacts.split.population_ids)
    candidates = dataset.subset(challenge.candidate_ids)
    ensemble = train_shadow_ensemble(
        pool,
        candidates,
        k=cfg.shadow.count,
        inclusion_rate=cfg.shadow.inclusion_rate,
        z_fraction=cfg.shadow.z_fraction,
        cfg=cfg.train,
        seed=derive_seed(rep_seed, "ensemble"),
        shadow_epochs=cfg.shadow.epochs,
        z_cap=cfg.shadow.z_cap,
    )
    confs = collect_confidences(ensemble, candidates.samples)
    scores = {
        "lira": run_lira(artifacts, confs, cfg.lira),
        "rmia": run_rmia(artifacts, confs, ensemble, cfg.rmia),
    }

    rep_dir.mkdir(parents=True, exist_ok=True)
    save_model(artifacts.model, rep_dir / "target.npz")
    checkpoints = []
    for j, shadow in enumerate(ensemble.models):
        name = f"shadow_{j:02d}.npz"
        save_model(shadow, rep_dir / name)
        checkpoints.append(name)
    save_manifest(ensemble, rep_dir / "manifest.json", checkpoint_paths=checkpoints)
    with open(rep_dir / "challenge.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "member_ids": list(challenge.member_ids),
                "nonmember_ids": list(challenge.nonmember_ids),
                "p_member": challenge.p_member,
                "seed": challenge.seed,
            },
            fh, indent=2, sort_keys=True,
        )

    summary = _evaluate_rep(dataset, cfg, scores)
    summary["rep"] = rep
    summary["population_auroc"] = _population_auroc(dataset, artifacts)
    for name in ATTACK_NAMES:
        save_scores(scores[name], rep_dir / f"scores_{name}.csv")
        _write_roc_csv(roc_curve(scores[name]), rep_dir / f"roc_{name}.csv")
    with open(rep_dir / "rep_report.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _population_auroc(dataset: Dataset, artifacts: TargetArtifacts) -> float:
    pop = dataset.subset(artifacts.split.population_ids)
    # score = predicted probability of class 1
    conf1 = predict_confidences(
        artifacts.model, pop.features_array(), np.ones(len(pop), dtype=int)
    )
    return auroc(conf1, pop.labels_array())


def _evaluate_rep(dataset: Dataset, cfg: ExperimentConfig, scores: dict[str, AttackScores]) -> dict:
    labels = {rec.id: rec.label for rec in dataset.samples}
    summary: dict = {"attacks": {}}
    any_challenge = next(iter(scores.values())).challenge
    summary["n_members"] = len(any_challenge.member_ids)
    summary["n_nonmembers"] = len(any_challenge.nonmember_ids)
    summary["member_ids"] = list(any_challenge.member_ids)
    summary["baseline_tpr"] = baseline_tpr(len(any_challenge.member_ids))
    for name, table in scores.items():
        roc = roc_curve(table)
        entry: dict = {"tpr": {}, "minority_tpr": {}, "identified": {}, "n_flagged": len(table.flags)}
        for fpr in cfg.fpr_targets:
            key = _fpr_key(fpr)
            entry["tpr"][key] = tpr_at_fpr(roc, fpr)
            ident = identified_members(table, fpr)
            entry["identified"][key] = sorted(ident.ids)
            try:
                entry["minority_tpr"][key] = minority_tpr(table, labels, fpr)
            except ValueError:
                entry["minority_tpr"][key] = None
        summary["attacks"][name] = entry
    zero = _fpr_key(0.0)
    if all(zero in summary["attacks"][n]["identified"] for n in ATTACK_NAMES):
        a = set(summary["attacks"]["lira"]["identified"][zero])
        b = set(summary["attacks"]["rmia"]["identified"][zero])
        summary["combined_identified_fpr0"] = sorted(a | b)
    return summary


def _load_rep(rep_dir: Path) -> dict | None:
    marker = rep_dir / "rep_report.json"
    if not marker.exists():
        return None
    with open(marker, encoding="utf-8") as fh:
        return json.load(fh)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run (or resume) all repetitions and write the aggregated report JSON.

    A repetition that fails is recorded under ``errors`` and the
    experiment continues with the remaining ones.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)

    rep_summaries: list[dict] = []
    errors: dict[str, str] = {}
    for rep in range(cfg.repetitions):
        rep_dir = _rep_dir(out_dir, rep)
        summary = _load_rep(rep_dir)
        if summary is None:
            try:
                summary = _run_single_rep(dataset, cfg, rep, rep_dir)
            except Exception as exc:  # noqa: BLE001 - record and continue
                log.exception("repetition %d failed", rep)
                errors[str(rep)] = f"{type(exc).__name__}: {exc}"
                continue
        rep_summaries.append(summary)

    report = _aggregate(dataset, cfg, rep_summaries, errors)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    if cfg.write_svg:
        try:
            report_render(out_dir / "report.json", "svg")
        except Exception:  # noqa: BLE001 - rendering is best-effort
            log.exception("SVG rendering failed")
    return report


def _aggregate(
    dataset: Dataset,
    cfg: ExperimentConfig,
    reps: Sequence[dict],
    errors: dict[str, str],
) -> dict:
    labels = {rec.id: rec.label for rec in dataset.samples}
    report: dict = {
        "config": {
            "p_member": cfg.p_member,
            "fractions": list(cfg.fractions),
            "shadow_count": cfg.shadow.count,
            "shadow_epochs": cfg.shadow.epochs,
            "inclusion_rate": cfg.shadow.inclusion_rate,
            "z_fraction": cfg.shadow.z_fraction,
            "gamma": cfg.rmia.gamma,
            "fpr_targets": [float(f) for f in cfg.fpr_targets],
            "repetitions_requested": cfg.repetitions,
            "seed": cfg.seed,
        },
        "n_repetitions_completed": len(reps),
        "errors": errors,
        "repetitions": list(reps),
        "attacks": {},
    }
    if not reps:
        return report

    baselines = np.array([r["baseline_tpr"] for r in reps])
    zero = _fpr_key(0.0)
    for name in ATTACK_NAMES:
        entry: dict = {"tpr": {}, "minority_tpr_median": {}}
        for fpr in cfg.fpr_targets:
            key = _fpr_key(fpr)
            tprs = np.array([r["attacks"][name]["tpr"][key] for r in reps])
            test = wilcoxon_signed_rank(tprs - baselines, mu0=0.0, alternative="greater")
            entry["tpr"][key] = {
                "per_rep": [float(t) for t in tprs],
                "median": float(np.median(tprs)),
                "baseline": float(np.mean(baselines)),
                "p_value": test.p_value,
                "stars": star_level(test.p_value),
            }
            m_tprs = [r["attacks"][name]["minority_tpr"][key] for r in reps]
            m_tprs = [t for t in m_tprs if t is not None]
            entry["minority_tpr_median"][key] = float(np.median(m_tprs)) if m_tprs else None
        report["attacks"][name] = entry

    # identified-set analyses at FPR 0
    ident = {
        name: [set(r["attacks"][name]["identified"][zero]) for r in reps]
        for name in ATTACK_NAMES
    }
    # members per rep: reconstruct from per-rep counts is not enough; use scores files?
    # the identified sets are subsets of members; for characteristics we need the
    # member id sets, which the rep summaries carry via identified + tpr only.
    member_sets = [set(r.get("member_ids", [])) for r in reps]
    report["combined_fpr0_sizes"] = [len(set(r.get("combined_identified_fpr0", []))) for r in reps]
    report["per_attack_fpr0_sizes"] = {
        name: [len(s) for s in ident[name]] for name in ATTACK_NAMES
    }

    omega = [r["n_members"] for r in reps]
    try:
        ov = overlap_analysis(list(zip(ident["lira"], ident["rmia"])), omega)
        report["overlap"] = {
            "observed": list(ov.observed),
            "expected": list(ov.expected),
            "observed_mean": ov.observed_mean,
            "expected_mean": ov.expected_mean,
            "p_value": ov.p_value,
            "stars": ov.stars,
            "n_skipped": ov.n_skipped,
        }
    except ValueError as exc:
        report["overlap"] = {"not_applicable": str(exc)}

    if all(member_sets):
        for name in ATTACK_NAMES:
            try:
                res = characteristic_analysis(ident[name], member_sets, labels, mode="label")
                report["attacks"][name]["label_analysis"] = {
                    "identified_positive_fraction": res.identified_summary,
                    "rest_positive_fraction": res.rest_summary,
                    "p_value": res.test.p_value,
                    "stars": res.stars,
                    "n_skipped": res.n_skipped,
                }
            except ValueError as exc:
                report["attacks"][name]["label_analysis"] = {"not_applicable": str(exc)}
            if cfg.metadata_key:
                meta = {
                    rec.id: (rec.metadata or {}).get(cfg.metadata_key)
                    for rec in dataset.samples
                }
                if any(v is None for v in meta.values()):
                    report["attacks"][name]["metadata_analysis"] = {
                        "not_applicable": f"metadata key {cfg.metadata_key!r} absent"
                    }
                else:
                    try:
                        res = characteristic_analysis(ident[name], member_sets, meta, mode="metadata")
                        report["attacks"][name]["metadata_analysis"] = {
                            "key": cfg.metadata_key,
                            "identified_mean": res.identified_summary,
                            "rest_mean": res.rest_summary,
                            "p_value": res.test.p_value,
                            "stars": res.stars,
                            "n_skipped": res.n_skipped,
                        }
                    except ValueError as exc:
                        report["attacks"][name]["metadata_analysis"] = {"not_applicable": str(exc)}

    report["population_auroc"] = {
        "per_rep": [r["population_auroc"] for r in reps],
        "median": float(np.median([r["population_auroc"] for r in reps])),
    }
    return report


def rerun_attacks(cfg: ExperimentConfig) -> None:
    """Recompute attack scores from stored checkpoints and manifests."""
    out_dir = Path(cfg.output_dir)
    dataset = build_dataset(cfg)
    found = False
    for rep in range(cfg.repetitions):
        rep_dir = _rep_dir(out_dir, rep)
        if not (rep_dir / "manifest.json").exists():
            continue
        found = True
        with open(rep_dir / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(rep_dir / "challenge.json", encoding="utf-8") as fh:
            ch = json.load(fh)
        challenge = Challenge(
            member_ids=tuple(ch["member_ids"]),
            nonmember_ids=tuple(ch["nonmember_ids"]),
            p_member=ch["p_member"],
            seed=ch["seed"],
        )
        target = load_model(rep_dir / "target.npz")
        candidates = dataset.subset(challenge.candidate_ids)
        confs_target = predict_confidences(
            target, candidates.features_array(), candidates.labels_array()
        )
        artifacts = TargetArtifacts(
            model=target,
            confidences=dict(zip(candidates.ids, map(float, confs_target))),
            challenge=challenge,
            split=None,
        )
        models = tuple(load_model(rep_dir / name) for name in manifest["checkpoints"])
        z_ids = tuple(manifest["z_ids"])
        ensemble = ShadowEnsemble(
            models=models,
            ids=tuple(manifest["ids"]),
            mask=np.array(manifest["mask"], dtype=np.uint8),
            z_ids=z_ids,
            z_records=tuple(dataset[i] for i in z_ids),
            shadow_epochs=manifest["shadow_epochs"],
            seed=manifest["seed"],
            shadow_seeds=tuple(manifest["shadow_seeds"]),
        )
        confs = collect_confidences(ensemble, candidates.samples)
        for name, table in (
            ("lira", run_lira(artifacts, confs, cfg.lira)),
            ("rmia", run_rmia(artifacts, confs, ensemble, cfg.rmia)),
        ):
            save_scores(table, rep_dir / f"scores_{name}.csv")
            _write_roc_csv(roc_curve(table), rep_dir / f"roc_{name}.csv")
        log.info("re-ran attacks for repetition %d", rep)
    if not found:
        raise FileNotFoundError(f"no stored repetition artifacts under {out_dir}")


# --- report rendering -------------------------------------------------------


def flatten_report(report: dict, prefix: str = "") -> dict[str, object]:
    """Flatten nested dicts/lists into slash-separated path keys."""
    flat: dict[str, object] = {}
    if isinstance(report, dict):
        items = report.items()
    else:
        items = ((str(i), v) for i, v in enumerate(report))
    for key, value in items:
        path = f"{prefix}/{key}" if prefix else str(key)
        if isinstance(value, (dict, list)):
            flat[path + "{}" if isinstance(value, dict) else path + "[]"] = len(value)
            flat.update(flatten_report(value, path))
        else:
            flat[path] = value
    return flat


def unflatten_report(flat: dict[str, object]) -> dict:
    """Inverse of :func:`flatten_report`."""
    root: dict = {}
    containers: dict[str, object] = {"": root}
    # container declarations first, sorted so parents precede children
    for key in sorted(flat, key=len):
        if key.endswith("{}") or key.endswith("[]"):
            path = key[:-2]
            containers[path] = {} if key.endswith("{}") else []
            _attach(containers, path, containers[path])
    for key, value in flat.items():
        if key.endswith("{}") or key.endswith("[]"):
            continue
        _attach(containers, key, value)
    return root


def _attach(containers: dict, path: str, value) -> None:
    if "/" in path:
        parent_path, leaf = path.rsplit("/", 1)
    else:
        parent_path, leaf = "", path
    parent = containers[parent_path]
    if isinstance(parent, list):
        idx = int(leaf)
        while len(parent) <= idx:
            parent.append(None)
        parent[idx] = value
    else:
        parent[leaf] = value


def _csv_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_render(report_path: str | Path, fmt: str) -> list[Path]:
    """Emit summary tables or plots next to the report file.

    ``csv`` writes a per-attack summary, a label-fraction table, an
    overlap table and a lossless flat dump; ``svg`` writes a log-FPR ROC
    plot with one polyline per attack; ``json`` re-emits a normalized
    pretty-printed copy.
    """
    report_path = Path(report_path)
    if not report_path.exists():
        raise FileNotFoundError(f"no such report: {report_path}")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    out_dir = report_path.parent
    written: list[Path] = []

    if fmt == "json":
        path = out_dir / "report_pretty.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        written.append(path)
    elif fmt == "csv":
        path = out_dir / "summary.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("attack,fpr_target,median_tpr,baseline,p_value,stars\n")
            for name, entry in sorted(report.get("attacks", {}).items()):
                for key, agg in sorted(entry.get("tpr", {}).items()):
                    fh.write(
                        f"{name},{key},{_csv_value(agg['median'])},{_csv_value(agg['baseline'])},"
                        f"{_csv_value(agg['p_value'])},{agg['stars']}\n"
                    )
        written.append(path)
        path = out_dir / "label_fractions.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("attack,identified_positive_fraction,rest_positive_fraction,p_value,stars\n")
            for name, entry in sorted(report.get("attacks", {}).items()):
                la = entry.get("label_analysis") or {}
                if "identified_positive_fraction" in la:
                    fh.write(
                        f"{name},{_csv_value(la['identified_positive_fraction'])},"
                        f"{_csv_value(la['rest_positive_fraction'])},"
                        f"{_csv_value(la['p_value'])},{la['stars']}\n"
                    )
        written.append(path)
        path = out_dir / "overlap.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("observed_mean,expected_mean,p_value,stars\n")
            ov = report.get("overlap") or {}
            if "observed_mean" in ov:
                fh.write(
                    f"{_csv_value(ov['observed_mean'])},{_csv_value(ov['expected_mean'])},"
                    f"{_csv_value(ov['p_value'])},{ov['stars']}\n"
                )
        written.append(path)
        path = out_dir / "report_flat.csv"
        flat = flatten_report(report)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            import csv as _csv

            writer = _csv.writer(fh)
            writer.writerow(["path", "value"])
            # JSON-encoded values keep the dump lossless (None vs empty string,
            # ints vs floats) so the report can be rebuilt exactly
            for key in sorted(flat):
                writer.writerow([key, json.dumps(flat[key])])
        written.append(path)
    elif fmt == "svg":
        written.append(_render_roc_svg(report, out_dir))
    else:
        raise ValueError(f"unknown format {fmt!r} (expected json, csv or svg)")
    return written


def load_flat_csv(path: str | Path) -> dict:
    """Rebuild a report dict from the flat CSV dump."""
    import csv as _csv

    flat: dict[str, object] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            flat[row["path"]] = json.loads(row["value"])
    return unflatten_report(flat)


def _render_roc_svg(report: dict, out_dir: Path) -> Path:
    """Log-FPR ROC plot from the first completed repetition's ROC CSVs."""
    width, height, margin = 640, 480, 60
    colors = {"lira": "#1f77b4", "rmia": "#d62728"}
    curves: dict[str, list[tuple[float, float]]] = {}
    for rep_dir in sorted(out_dir.glob("rep_*")):
        for name in ATTACK_NAMES:
            csv_path = rep_dir / f"roc_{name}.csv"
            if csv_path.exists() and name not in curves:
                pts = []
                with open(csv_path, encoding="utf-8") as fh:
                    next(fh)
                    for line in fh:
                        _, f, t = line.strip().split(",")
                        pts.append((float(f), float(t)))
                curves[name] = pts
        if len(curves) == len(ATTACK_NAMES):
            break
    if not curves:
        raise FileNotFoundError("no per-repetition ROC CSVs found")

    fpr_floor = 10 ** math.floor(
        math.log10(min(min((f for f, _ in pts if f > 0), default=1e-3) for pts in curves.values()))
    )
    log_min = math.log10(fpr_floor)

    def sx(f: float) -> float:
        f = max(f, fpr_floor)
        return margin + (math.log10(f) - log_min) / (0.0 - log_min) * (width - 2 * margin)

    def sy(t: float) -> float:
        return height - margin - t * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="14">false positive rate (log)</text>',
        f'<text x="18" y="{height / 2}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {height / 2})">true positive rate</text>',
    ]
    decade = int(round(math.log10(fpr_floor)))
    for d in range(decade, 1):
        x = sx(10 ** d)
        parts.append(f'<line x1="{x}" y1="{height - margin}" x2="{x}" y2="{height - margin + 5}" stroke="black"/>')
        parts.append(f'<text x="{x}" y="{height - margin + 20}" text-anchor="middle" font-size="12">1e{d}</text>')
    for i, (name, pts) in enumerate(sorted(curves.items())):
        coords = " ".join(f"{sx(f):.2f},{sy(t):.2f}" for f, t in pts)
        parts.append(f'<polyline fill="none" stroke="{colors.get(name, "black")}" stroke-width="2" points="{coords}"/>')
        parts.append(
            f'<text x="{width - margin - 80}" y="{margin + 20 + 18 * i}" font-size="13" '
            f'fill="{colors.get(name, "black")}">{name}</text>'
        )
    parts.append("</svg>")
    path = out_dir / "roc.svg"
    path.write_text("\n".join(parts), encoding="utf-8")
    return path
