"""Final list assembly from the per-artist-group VAEs, the tail-track VAE and BPRMF.

Layout of a list of length ``1 + sum(counts) + 1``::

    [bpr top-1]
    + first ``head`` items of each group, in ``order``
    + the rest of each group's quota, in ``order``
    + [top item of the least-popular-track model]

A later duplicate of the BPR item or of the tail-track item is dropped and
the gap is refilled from artist group 0's next-ranked candidates, placed
just before the final slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fairrec.grouping import Grouping

DEFAULT_COUNTS = (38, 20, 20, 20)
DEFAULT_ORDER = (2, 1, 3, 0)
DEFAULT_HEAD = 5
SOURCES = ("bpr", "g0", "g1", "g2", "g3", "ltrack")


class CurationError(RuntimeError):
    pass


@dataclass
class CurationConfig:
    counts: tuple[int, ...] = DEFAULT_COUNTS
    order: tuple[int, ...] = DEFAULT_ORDER
    head: int = DEFAULT_HEAD
    backfill_group: int = 0

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        self.order = tuple(int(g) for g in self.order)
        if sorted(self.order) != list(range(len(self.counts))):
            raise ValueError(f"order {self.order} must be a permutation of the {len(self.counts)} groups")
        if any(c < self.head for c in self.counts):
            raise ValueError("every group quota must cover the head block")

    @property
    def k(self) -> int:
        return sum(self.counts) + 2


@dataclass
class Candidates:
    ranked: list[np.ndarray]
    backfill: np.ndarray
    shortfall: dict[int, int] = field(default_factory=dict)


@dataclass
class RecommendationList:
    user: int
    items: np.ndarray
    sources: list[str]
    backfilled: int = 0
    shortfall: dict[int, int] = field(default_factory=dict)

    @property
    def least_track_kept(self) -> bool:
        return self.sources[-1] == "ltrack"


def per_group_candidates(
    scores: np.ndarray,
    grouping: Grouping,
    counts: Sequence[int] = DEFAULT_COUNTS,
    backfill_group: int = 0,
    reserve: int | None = None,
) -> Candidates:
    """Top ``counts[g]`` unseen items of each artist group by score.

    ``scores`` is one user's full item score vector with seen items at
    ``-inf``. Groups short of candidates return what they have and the
    deficit is recorded in ``shortfall``. ``backfill`` holds the next
    ``reserve`` candidates of ``backfill_group`` after its quota.
    """
    if len(counts) != grouping.n_groups:
        raise ValueError("need one count per group")
    if reserve is None:
        reserve = sum(counts) + 2
    ranked, shortfall, backfill = [], {}, np.zeros(0, dtype=np.int64)
    for g, want in enumerate(counts):
        members = grouping.members(g)
        s = scores[members]
        members = members[np.isfinite(s)]
        s = s[np.isfinite(s)]
        order = members[np.argsort(-s, kind="stable")]
        ranked.append(order[:want])
        if len(order) < want:
            shortfall[g] = want - len(order)
        if g == backfill_group:
            backfill = order[want:want + reserve]
    return Candidates(ranked, backfill, shortfall)


def assemble_list(
    candidates: Candidates,
    least_track_item: int,
    bpr_item: int,
    order: Sequence[int] = DEFAULT_ORDER,
    head: int = DEFAULT_HEAD,
    k: int | None = None,
    user: int = -1,
) -> RecommendationList:
    if k is None:
        k = sum(len(r) for r in candidates.ranked) + sum(candidates.shortfall.values()) + 2
    streams = {g: [int(i) for i in candidates.ranked[g] if i != bpr_item] for g in order}
    items, sources = [int(bpr_item)], ["bpr"]
    for g in order:
        block = streams[g][:head]
        items += block
        sources += [f"g{g}"] * len(block)
    for g in order:
        block = streams[g][head:]
        items += block
        sources += [f"g{g}"] * len(block)
    taken = set(items)
    if len(taken) != len(items):
        raise CurationError(f"user {user}: candidate lists overlap across groups")
    keep_tail = int(least_track_item) not in taken
    missing = k - len(items) - (1 if keep_tail else 0)
    backfilled = 0
    for i in candidates.backfill:
        if missing <= 0:
            break
        i = int(i)
        if i in taken or i == least_track_item:
            continue
        items.append(i)
        sources.append("g0")
        taken.add(i)
        missing -= 1
        backfilled += 1
    if keep_tail:
        items.append(int(least_track_item))
        sources.append("ltrack")
    if len(items) != k:
        raise CurationError(
            f"user {user}: assembled {len(items)} of {k} items "
            f"(shortfall {candidates.shortfall}, backfill pool {len(candidates.backfill)})"
        )
    return RecommendationList(user, np.asarray(items, dtype=np.int64), sources, backfilled, dict(candidates.shortfall))


def curate_all(
    group_scores: np.ndarray,
    least_track_top: np.ndarray,
    bpr_top: np.ndarray,
    grouping: Grouping,
    config: CurationConfig | None = None,
) -> list[RecommendationList]:
    """Curated lists for every user from precomputed score matrices and top-1 picks."""
    config = config or CurationConfig()
    out = []
    for u in range(group_scores.shape[0]):
        cands = per_group_candidates(group_scores[u], grouping, config.counts, config.backfill_group)
        out.append(assemble_list(cands, int(least_track_top[u]), int(bpr_top[u]), config.order, config.head, config.k, u))
    return out


def write_recommendations(path, lists: Sequence[RecommendationList], user_ids: Sequence[str], item_ids: Sequence[str]) -> None:
    """TSV dump: ``user_id, rank, track_id, source`` with 1-based ranks."""
    with open(Path(path), "w") as fh:
        fh.write("user_id\trank\ttrack_id\tsource\n")
        for rec in lists:
            uid = user_ids[rec.user]
            for rank, (i, src) in enumerate(zip(rec.items, rec.sources), start=1):
                fh.write(f"{uid}\t{rank}\t{item_ids[i]}\t{src}\n")


def read_recommendations(path, user_index: dict[str, int], item_index: dict[str, int]):
    """Inverse of :func:`write_recommendations`: returns ``{user: (items, sources)}``."""
    per_user: dict[int, list[tuple[int, int, str]]] = {}
    with open(Path(path)) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["user_id", "rank", "track_id", "source"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, line in enumerate(fh, start=2):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            uid, rank, tid, src = fields
            if uid not in user_index or tid not in item_index:
                raise ValueError(f"{path}:{lineno}: unknown user or track id")
            per_user.setdefault(user_index[uid], []).append((int(rank), item_index[tid], src))
    out = {}
    for u, rows in per_user.items():
        rows.sort()
        out[u] = (np.array([r[1] for r in rows], dtype=np.int64), [r[2] for r in rows])
    return out
