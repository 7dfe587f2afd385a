"""Accuracy, per-group miss-rate fairness, CV fairness, be-less-wrong, and the fold loop.

A recommendation set is a mapping (or sequence) from user index to a
ranked array of item indices; the truth is one held-out item per user.
"""
from __future__ import annotations

import csv
import decimal
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from fairrec.dataset import EvalSplit, leave_one_out_split
from fairrec.grouping import Grouping, user_groupings

logger = logging.getLogger(__name__)

# Column set of the per-fold results table; latent diversity is not computed.
TABLE3_COLUMNS = (
    "hit_rate", "mrr", "country_mred", "user_mred", "trackpop_mred",
    "artistpop_mred", "gender_mred", "be_less_wrong", "latent_diversity",
)
SCORE_COLUMN = "score"
# grouping name -> (report column, whose group decides the test case)
GROUPING_COLUMNS = {
    "country": ("country_mred", "user_group"),
    "activity": ("user_mred", "user_group"),
    "track_pop": ("trackpop_mred", "item_group_of_truth"),
    "artist_pop": ("artistpop_mred", "item_group_of_truth"),
    "gender": ("gender_mred", "user_group"),
}


class EvaluationError(ValueError):
    pass


def _truth(truth) -> np.ndarray:
    return np.asarray(truth.held_out if isinstance(truth, EvalSplit) else truth, dtype=np.int64)


def _lists(recs, n_users: int) -> list[np.ndarray]:
    if isinstance(recs, Mapping):
        missing = [u for u in range(n_users) if u not in recs]
        if missing:
            raise EvaluationError(f"no recommendation list for users {missing[:20]}{'...' if len(missing) > 20 else ''}")
        return [np.asarray(recs[u]) for u in range(n_users)]
    recs = list(recs)
    if len(recs) != n_users:
        raise EvaluationError(f"got {len(recs)} recommendation lists for {n_users} users")
    missing = [u for u, r in enumerate(recs) if r is None]
    if missing:
        raise EvaluationError(f"no recommendation list for users {missing[:20]}")
    return [np.asarray(getattr(r, "items", r)) for r in recs]


def hit_ranks(recs, truth, k: int | None = None) -> np.ndarray:
    """1-based rank of each user's held-out item within the top ``k``, 0 when absent."""
    held = _truth(truth)
    ranks = np.zeros(len(held), dtype=np.int64)
    for u, items in enumerate(_lists(recs, len(held))):
        top = items if k is None else items[:k]
        pos = np.flatnonzero(top == held[u])
        if len(pos):
            ranks[u] = pos[0] + 1
    return ranks


# Sums use math.fsum so results do not depend on user order.

def hit_rate(recs, truth, k: int | None = None) -> float:
    ranks = hit_ranks(recs, truth, k)
    return math.fsum(ranks > 0) / len(ranks)


def mrr(recs, truth, k: int | None = None) -> float:
    ranks = hit_ranks(recs, truth, k)
    return math.fsum(1.0 / r for r in ranks[ranks > 0].tolist()) / len(ranks)


@dataclass
class GroupMissRates:
    grouping: str
    labels: tuple[str, ...]
    miss_rates: np.ndarray
    hit_rates: np.ndarray
    sizes: np.ndarray
    overall_mr: float
    excluded: tuple[str, ...] = ()


def group_miss_rates(recs, truth, grouping: Grouping, by: str = "user_group", k: int | None = None) -> GroupMissRates:
    """Miss rate per group plus the overall miss rate.

    With ``by="item_group_of_truth"`` each user's test case is attributed to the
    group of their held-out item; with ``by="user_group"`` to the user's own group.
    Empty groups are dropped and listed in ``excluded``.
    """
    held = _truth(truth)
    hits = hit_ranks(recs, held, k) > 0
    if by == "user_group":
        case_group = grouping.assignment
    elif by == "item_group_of_truth":
        case_group = grouping.assignment[held]
    else:
        raise ValueError(f"unknown attribution {by!r}")
    if len(case_group) != len(held):
        raise EvaluationError("grouping does not cover every evaluated user")
    sizes = np.bincount(case_group, minlength=grouping.n_groups)
    group_hits = np.bincount(case_group, weights=hits, minlength=grouping.n_groups)
    present = sizes > 0
    hr = group_hits[present] / sizes[present]
    return GroupMissRates(
        grouping.name,
        tuple(lab for lab, p in zip(grouping.labels, present) if p),
        1.0 - hr,
        hr,
        sizes[present],
        float(1.0 - hits.mean()),
        tuple(lab for lab, p in zip(grouping.labels, present) if not p),
    )


def mred(group_mrs, overall_mr: float) -> float:
    """Negated mean absolute deviation of group miss rates from the overall one."""
    group_mrs = np.asarray(group_mrs, dtype=np.float64)
    if group_mrs.size == 0:
        raise ValueError("mred needs at least one group")
    return float(-np.abs(group_mrs - overall_mr).mean())


def cv_fairness(group_hit_rates, hr_avg: float | None = None, center: str = "overall") -> float:
    """Root-mean-square deviation of group hit rates from ``hr_avg``, divided by ``hr_avg``.

    ``center="overall"`` expects ``hr_avg`` to be the overall hit rate;
    ``center="group_mean"`` ignores it and uses the mean of the group hit rates.
    Evaluated in 40-digit decimal arithmetic on the inputs' shortest decimal
    representations, so e.g. ``cv_fairness([0.1, 0.3], 0.2)`` is exactly 0.5.
    """
    hrs = [float(h) for h in np.asarray(group_hit_rates, dtype=np.float64).ravel()]
    if not hrs:
        raise ValueError("cv_fairness needs at least one group")
    with decimal.localcontext() as ctx:
        ctx.prec = 40
        dec = [decimal.Decimal(repr(h)) for h in hrs]
        if center == "group_mean":
            avg = sum(dec) / len(dec)
        elif center == "overall":
            avg = None if hr_avg is None else decimal.Decimal(repr(float(hr_avg)))
        else:
            raise ValueError(f"unknown center {center!r}")
        if avg is None or avg <= 0:
            raise EvaluationError("cv_fairness is undefined when the average hit rate is 0")
        var = sum((avg - h) ** 2 for h in dec) / len(dec)
        return float(var.sqrt() / avg)


def be_less_wrong(top1, truth, embeddings: np.ndarray) -> tuple[float, int]:
    """Mean cosine similarity between predicted top-1 and held-out item embeddings.

    Users whose either embedding has zero norm are skipped; returns
    ``(mean, n_skipped)``.
    """
    top1 = np.asarray(top1, dtype=np.int64)
    held = _truth(truth)
    a, b = embeddings[top1], embeddings[held]
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        return float("nan"), int(len(held))
    cos = (a[ok] * b[ok]).sum(axis=1) / (na[ok] * nb[ok])
    return float(cos.mean()), int((~ok).sum())


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def aggregate_score(row: Mapping[str, float], weights: Mapping[str, float] | None = None) -> float:
    """Simple mean of the available metric columns, or a weighted sum with ``weights``."""
    values = {c: row.get(c) for c in TABLE3_COLUMNS}
    values = {c: v for c, v in values.items() if v is not None and not math.isnan(v)}
    if weights is None:
        return float(np.mean(list(values.values()))) if values else float("nan")
    unknown = set(weights) - set(TABLE3_COLUMNS)
    if unknown:
        raise EvaluationError(f"weights for unknown columns {sorted(unknown)}")
    return float(sum(w * values[c] for c, w in weights.items() if c in values))


@dataclass
class MetricsReport:
    fold_id: int | str
    hit_rate: float
    mrr: float
    groups: dict[str, GroupMissRates] = field(default_factory=dict)
    mred: dict[str, float] = field(default_factory=dict)
    cv: dict[str, float] = field(default_factory=dict)
    be_less_wrong: float = float("nan")
    be_less_wrong_skipped: int = 0
    latent_diversity: float = float("nan")
    score: float = float("nan")

    def row(self) -> dict[str, float]:
        out = {"hit_rate": self.hit_rate, "mrr": self.mrr}
        for name, (column, _) in GROUPING_COLUMNS.items():
            out[column] = self.mred.get(name, float("nan"))
        out["be_less_wrong"] = self.be_less_wrong
        out["latent_diversity"] = self.latent_diversity
        return {c: out[c] for c in TABLE3_COLUMNS}

    def to_dict(self) -> dict:
        return {
            "fold": self.fold_id,
            **{c: _jsonable(v) for c, v in self.row().items()},
            SCORE_COLUMN: _jsonable(self.score),
            "be_less_wrong_skipped": self.be_less_wrong_skipped,
            "cv": {k: _jsonable(v) for k, v in self.cv.items()},
            "groups": {
                name: {
                    "labels": list(g.labels),
                    "sizes": [int(s) for s in g.sizes],
                    "miss_rates": [float(m) for m in g.miss_rates],
                    "overall_mr": g.overall_mr,
                    "excluded": list(g.excluded),
                }
                for name, g in self.groups.items()
            },
        }


def _jsonable(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def evaluate(
    recs,
    split: EvalSplit,
    groupings: Sequence[Grouping],
    embeddings: np.ndarray | None = None,
    k: int | None = None,
    cv_center: str = "overall",
    weights: Mapping[str, float] | None = None,
) -> MetricsReport:
    """Full report for one fold. Groupings with fewer than two populated groups get no MRED."""
    lists = _lists(recs, len(split.held_out))
    report = MetricsReport(split.fold_id, hit_rate(lists, split, k), mrr(lists, split, k))
    for grouping in groupings:
        column, by = GROUPING_COLUMNS[grouping.name]
        g = group_miss_rates(lists, split, grouping, by, k)
        report.groups[grouping.name] = g
        if len(g.labels) < 2:
            logger.info("skipping %s: only %d populated group(s)", grouping.name, len(g.labels))
            continue
        report.mred[grouping.name] = mred(g.miss_rates, g.overall_mr)
        try:
            report.cv[grouping.name] = cv_fairness(g.hit_rates, 1.0 - g.overall_mr, cv_center)
        except EvaluationError:
            logger.info("no CV for %s: zero average hit rate", grouping.name)
    if embeddings is not None:
        top1 = np.array([items[0] for items in lists])
        report.be_less_wrong, report.be_less_wrong_skipped = be_less_wrong(top1, split, embeddings)
    report.score = aggregate_score(report.row(), weights)
    return report


def average_report(reports: Sequence[MetricsReport], weights=None) -> MetricsReport:
    rows = [r.row() for r in reports]
    mean = {c: float(np.mean([row[c] for row in rows])) for c in TABLE3_COLUMNS}
    avg = MetricsReport("average", mean["hit_rate"], mean["mrr"])
    for name, (column, _) in GROUPING_COLUMNS.items():
        if not math.isnan(mean[column]):
            avg.mred[name] = mean[column]
    names = set.intersection(*(set(r.cv) for r in reports)) if reports else set()
    avg.cv = {n: float(np.mean([r.cv[n] for r in reports])) for n in sorted(names)}
    avg.be_less_wrong = mean["be_less_wrong"]
    avg.latent_diversity = mean["latent_diversity"]
    avg.score = aggregate_score(avg.row(), weights)
    return avg


def write_reports(directory, reports: Sequence[MetricsReport], stem: str = "report") -> tuple[Path, Path]:
    """CSV with one row per fold (Table-3 columns plus score) and a JSON with group detail."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = directory / f"{stem}.csv", directory / f"{stem}.json"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fold",) + TABLE3_COLUMNS + (SCORE_COLUMN,))
        for r in reports:
            row = r.row()
            writer.writerow([r.fold_id] + [_fmt(row[c]) for c in TABLE3_COLUMNS] + [_fmt(r.score)])
    json_path.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def _fmt(v: float) -> str:
    return "" if v is None or math.isnan(v) else repr(float(v))


def run_folds(data, catalog, users, config, n_folds: int | None = None, fold_ids: Sequence[int] | None = None):
    """Split, fit, recommend and evaluate each fold; returns ``(fold_reports, average)``.

    ``fold_ids`` overrides the default ``0..n_folds-1`` (repeating an id
    repeats the fold exactly).
    """
    from fairrec import pipeline

    if fold_ids is None:
        fold_ids = list(range(n_folds if n_folds is not None else config.folds))
    track_g, artist_g = pipeline.item_groupings(catalog, config)
    reports = []
    for fold in fold_ids:
        try:
            split = leave_one_out_split(data, fold, config.seed)
            fitted = pipeline.fit(split.train, catalog, config, fold)
            recs = pipeline.recommend(fitted, split.train, catalog, config)
            groupings = user_groupings(users, split.train, config.grouping.top_countries) + [track_g, artist_g]
            report = evaluate(
                recs, split, groupings, fitted.bpr.item_factors, config.evaluation.k,
                config.evaluation.cv_center, config.evaluation.weights,
            )
        except Exception as exc:
            raise RuntimeError(f"fold {fold} failed: {exc}") from exc
        logger.info("fold %s: HR %.4f MRR %.4f", fold, report.hit_rate, report.mrr)
        reports.append(report)
    return reports, average_report(reports, config.evaluation.weights)
