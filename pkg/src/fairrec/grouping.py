"""Partitions of items and users over which fairness is measured."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fairrec.dataset import Catalog, Interactions, UserMeta, GENDERS

TRACK_EDGES = (10, 100, 1000)
ARTIST_EDGES = (100, 1000, 10000)


@dataclass(frozen=True, eq=False)
class Grouping:
    name: str
    labels: tuple[str, ...]
    assignment: np.ndarray

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"group labels must be unique: {self.labels}")
        if len(self.assignment) and (self.assignment.min() < 0 or self.assignment.max() >= len(self.labels)):
            raise ValueError("assignment refers to a missing group")

    @property
    def n_groups(self) -> int:
        return len(self.labels)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_groups)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == g)

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "sizes": {lab: int(n) for lab, n in zip(self.labels, self.sizes())}},
            indent=2,
        )


def threshold_grouping(name: str, values, edges: Sequence[int], labels: Sequence[str] | None = None) -> Grouping:
    """Bin ``values`` into right-open intervals ``[edge_k, edge_k+1)``.

    The first bin also absorbs anything below the first edge (including 0).
    Default labels are the lower edges, starting from "1".
    """
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"edges must be strictly increasing: {edges}")
    if labels is None:
        labels = ["1"] + [str(e) for e in edges]
    if len(labels) != len(edges) + 1:
        raise ValueError("need one label per bin")
    assignment = np.searchsorted(np.asarray(edges), np.asarray(values), side="right")
    return Grouping(name, tuple(labels), assignment.astype(np.int64))


def track_popularity_grouping(catalog: Catalog, edges: Sequence[int] = TRACK_EDGES) -> Grouping:
    return threshold_grouping("track_pop", catalog.track_playcount, edges)


def artist_popularity_grouping(catalog: Catalog, edges: Sequence[int] = ARTIST_EDGES) -> Grouping:
    """Group items by their artist's total playcount; group 0 is least popular."""
    return threshold_grouping("artist_pop", catalog.artist_playcount, edges)


def gender_grouping(users: UserMeta) -> Grouping:
    index = {g: k for k, g in enumerate(GENDERS)}
    return Grouping("gender", GENDERS, np.array([index.get(g, 2) for g in users.gender], dtype=np.int64))


def country_grouping(users: UserMeta, top: int = 9) -> Grouping:
    """Top ``top`` countries by user count, everything else in "other".

    A population with a single country collapses to one "other" group.
    """
    counts = Counter(users.country)
    if len(counts) <= 1:
        return Grouping("country", ("other",), np.zeros(len(users), dtype=np.int64))
    # ties broken alphabetically so the grouping is reproducible
    ranked = sorted(counts, key=lambda c: (-counts[c], c))
    kept = [c for c in ranked[:top] if c != "other"]
    labels = tuple(kept) + (("other",) if len(ranked) > len(kept) else ())
    index = {c: k for k, c in enumerate(kept)}
    other = len(kept)
    return Grouping("country", labels, np.array([index.get(c, other) for c in users.country], dtype=np.int64))


def activity_grouping(train: Interactions, n_bins: int = 4) -> Grouping:
    """Quantile bins of training-row length by rank; ties broken by user index."""
    n = train.n_users
    order = np.argsort(train.row_lengths, kind="stable")
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = (np.arange(n) * n_bins) // max(n, 1)
    return Grouping("activity", tuple(f"q{k + 1}" for k in range(n_bins)), assignment)


def user_groupings(users: UserMeta, train: Interactions, top_countries: int = 9) -> list[Grouping]:
    if len(users) != train.n_users:
        raise ValueError("user metadata and interactions disagree on the number of users")
    return [gender_grouping(users), country_grouping(users, top_countries), activity_grouping(train)]
