"""Interaction data model, TSV ingestion, synthetic corpora and leave-one-out folds."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from fairrec.numerics import rng_stream

logger = logging.getLogger(__name__)

GENDERS = ("m", "f", "n")

# Categorical used by the synthetic generator; skewed like a music service's user base.
_SYNTH_COUNTRIES = ("US", "RU", "DE", "UK", "PL", "BR", "FI", "NL", "SE", "ES", "JP", "CA")
_SYNTH_COUNTRY_P = np.array([0.22, 0.12, 0.11, 0.10, 0.09, 0.08, 0.06, 0.06, 0.05, 0.04, 0.04, 0.03])
_SYNTH_GENDER_P = np.array([0.62, 0.24, 0.14])

# Scale of the full LFM-1b challenge corpus; documented only, never loaded in tests.
LFM1B_SCALE = {"users": 119_555, "tracks": 820_998, "interactions": 37_926_429}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Interactions:
    """Binary user x item implicit feedback in CSR layout.

    Row ``u`` holds the sorted, duplicate-free item indices user ``u``
    interacted with.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        if len(self.indptr) != self.n_users + 1:
            raise DatasetError("indptr length must be n_users + 1")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n_items):
            raise DatasetError("item index out of range")
        if len(self.indices) > 1:
            row_start = np.zeros(len(self.indices), dtype=bool)
            inner = self.indptr[1:-1]
            row_start[inner[inner < len(self.indices)]] = True
            bad = (np.diff(self.indices) <= 0) & ~row_start[1:]
            if bad.any():
                pos = int(np.flatnonzero(bad)[0]) + 1
                u = int(np.searchsorted(self.indptr, pos, side="right") - 1)
                raise DatasetError(f"row {u} is not strictly increasing")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]], n_items: int) -> "Interactions":
        clean = [np.unique(np.asarray(r, dtype=np.int64)) for r in rows]
        indptr = np.zeros(len(clean) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in clean])
        indices = np.concatenate(clean) if clean else np.zeros(0, dtype=np.int64)
        return cls(len(clean), int(n_items), indptr, indices.astype(np.int64))

    def row(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    @property
    def rows(self) -> list[np.ndarray]:
        return [self.row(u) for u in range(self.n_users)]

    @property
    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n_items)

    def to_csr(self) -> sp.csr_matrix:
        data = np.ones(self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_users, self.n_items))

    def __eq__(self, other):
        if not isinstance(other, Interactions):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )


@dataclass(frozen=True, eq=False)
class Catalog:
    item_ids: list[str]
    artist_ids: list[str]
    track_playcount: np.ndarray
    artist_playcount: np.ndarray

    def __len__(self):
        return len(self.item_ids)

    def __eq__(self, other):
        if not isinstance(other, Catalog):
            return NotImplemented
        return (
            self.item_ids == other.item_ids
            and self.artist_ids == other.artist_ids
            and np.array_equal(self.track_playcount, other.track_playcount)
            and np.array_equal(self.artist_playcount, other.artist_playcount)
        )


@dataclass(frozen=True, eq=False)
class UserMeta:
    user_ids: list[str]
    gender: list[str]
    country: list[str]
    activity_playcount: np.ndarray

    def __len__(self):
        return len(self.user_ids)

    def __eq__(self, other):
        if not isinstance(other, UserMeta):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and self.gender == other.gender
            and self.country == other.country
            and np.array_equal(self.activity_playcount, other.activity_playcount)
        )


@dataclass(frozen=True)
class EvalSplit:
    fold_id: int
    held_out: np.ndarray
    train: Interactions


def artist_playcounts(artist_ids: Sequence[str], track_playcount: np.ndarray) -> np.ndarray:
    """Sum track playcounts per artist and broadcast back to each track."""
    _, inverse = np.unique(np.asarray(artist_ids, dtype=object), return_inverse=True)
    totals = np.bincount(inverse, weights=track_playcount).astype(np.int64)
    return totals[inverse]


def normalize_gender(raw: str) -> str:
    raw = raw.strip().lower()
    return raw if raw in GENDERS else "n"


# -- TSV ingestion -------------------------------------------------------------

def _read_tsv(path: Path, n_fields: int, header: Sequence[str], header_required: bool):
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for lineno, fields in enumerate(reader, start=1):
            if lineno == 1:
                if [f.strip() for f in fields] == list(header):
                    continue
                if header_required:
                    raise DatasetError(f"{path}:1: expected header {'<TAB>'.join(header)}")
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != n_fields:
                raise DatasetError(f"{path}:{lineno}: expected {n_fields} fields, got {len(fields)}")
            yield lineno, [f.strip() for f in fields]


def _parse_count(value: str, path: Path, lineno: int) -> int:
    try:
        n = int(value)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: playcount {value!r} is not an integer") from None
    if n < 0:
        raise DatasetError(f"{path}:{lineno}: negative playcount {n}")
    return n


def load_dataset(interactions_path, tracks_path, users_path, min_interactions: int = 2):
    """Load the three TSV files into dense-indexed structures.

    Items are indexed in ``tracks.tsv`` order and users in ``users.tsv`` order,
    after dropping users with fewer than ``min_interactions`` distinct tracks.

    Returns
    -------
    (Interactions, Catalog, UserMeta)
    """
    interactions_path, tracks_path, users_path = map(Path, (interactions_path, tracks_path, users_path))

    item_ids, artist_ids, track_pc = [], [], []
    item_index: dict[str, int] = {}
    for lineno, (tid, aid, pc) in _read_tsv(tracks_path, 3, ("track_id", "artist_id", "track_playcount"), False):
        if tid in item_index:
            raise DatasetError(f"{tracks_path}:{lineno}: duplicate track id {tid!r}")
        item_index[tid] = len(item_ids)
        item_ids.append(tid)
        artist_ids.append(aid)
        track_pc.append(_parse_count(pc, tracks_path, lineno))

    raw_users: dict[str, tuple[str, str, int]] = {}
    user_order: list[str] = []
    for lineno, (uid, gender, country, pc) in _read_tsv(users_path, 4, ("user_id", "gender", "country", "playcount"), False):
        if uid in raw_users:
            raise DatasetError(f"{users_path}:{lineno}: duplicate user id {uid!r}")
        raw_users[uid] = (normalize_gender(gender), country or "unknown", _parse_count(pc, users_path, lineno))
        user_order.append(uid)

    per_user: dict[str, set[int]] = {}
    for lineno, (uid, tid, pc) in _read_tsv(interactions_path, 3, ("user_id", "track_id", "playcount"), True):
        _parse_count(pc, interactions_path, lineno)
        if tid not in item_index:
            raise DatasetError(f"{interactions_path}:{lineno}: track {tid!r} missing from {tracks_path.name}")
        if uid not in raw_users:
            raise DatasetError(f"{interactions_path}:{lineno}: user {uid!r} missing from {users_path.name}")
        per_user.setdefault(uid, set()).add(item_index[tid])

    kept = [uid for uid in user_order if len(per_user.get(uid, ())) >= min_interactions]
    dropped = sum(1 for uid in per_user if len(per_user[uid]) < min_interactions)
    data = Interactions.from_rows([sorted(per_user[uid]) for uid in kept], n_items=len(item_ids))
    track_pc = np.asarray(track_pc, dtype=np.int64)
    catalog = Catalog(item_ids, artist_ids, track_pc, artist_playcounts(artist_ids, track_pc))
    users = UserMeta(
        kept,
        [raw_users[u][0] for u in kept],
        [raw_users[u][1] for u in kept],
        np.asarray([raw_users[u][2] for u in kept], dtype=np.int64),
    )
    logger.info(
        "loaded %d users (%d dropped below %d interactions), %d tracks, %d interactions",
        data.n_users, dropped, min_interactions, data.n_items, data.nnz,
    )
    return data, catalog, users


def write_dataset(directory, data: Interactions, catalog: Catalog, users: UserMeta) -> dict[str, Path]:
    """Write the TSV triple understood by :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": directory / "interactions.tsv",
        "tracks": directory / "tracks.tsv",
        "users": directory / "users.tsv",
    }
    with open(paths["interactions"], "w") as fh:
        fh.write("user_id\ttrack_id\tplaycount\n")
        for u in range(data.n_users):
            uid = users.user_ids[u]
            for i in data.row(u):
                fh.write(f"{uid}\t{catalog.item_ids[i]}\t1\n")
    with open(paths["tracks"], "w") as fh:
        fh.write("track_id\tartist_id\ttrack_playcount\n")
        for tid, aid, pc in zip(catalog.item_ids, catalog.artist_ids, catalog.track_playcount):
            fh.write(f"{tid}\t{aid}\t{int(pc)}\n")
    with open(paths["users"], "w") as fh:
        fh.write("user_id\tgender\tcountry\tplaycount\n")
        for uid, g, c, pc in zip(users.user_ids, users.gender, users.country, users.activity_playcount):
            fh.write(f"{uid}\t{g}\t{c}\t{int(pc)}\n")
    return paths


# -- synthetic corpora ---------------------------------------------------------

def generate_synthetic(
    n_users: int,
    n_items: int,
    n_artists: int,
    interactions_per_user: float,
    popularity_exponent: float,
    seed: int,
    activity_sigma: float = 0.5,
):
    """Power-law implicit-feedback corpus with artist and demographic metadata.

    Item ``k`` in a random popularity order receives weight ``(k + 1) ** -exponent``.
    Each user holds a log-normally distributed number ``L`` of distinct items,
    drawn so that item ``i`` is included with probability ``min(1, c * w_i)``
    (``c`` chosen so the probabilities sum to ``L``). Expected item counts are
    therefore proportional to the weights until they saturate at one per user.
    Track playcounts are the realized interaction counts.
    """
    if not n_items >= n_artists >= 1:
        raise ValueError("need n_items >= n_artists >= 1")
    if n_items < 2:
        raise ValueError("need at least two items so every user can hold two interactions")
    if popularity_exponent < 0:
        raise ValueError("popularity_exponent must be non-negative")
    rng = rng_stream(seed, "synthetic")

    popularity_rank = rng.permutation(n_items)
    weights = np.exp(-popularity_exponent * np.log1p(popularity_rank.astype(np.float64)))
    by_weight = np.argsort(-weights, kind="stable")
    sorted_w = weights[by_weight]
    # tail_sum[m] = total weight of all items ranked m and below
    tail_sum = np.concatenate([np.cumsum(sorted_w[::-1])[::-1], [0.0]])

    mu = -0.5 * activity_sigma ** 2
    rows = []
    for _ in range(n_users):
        length = 0
        for _attempt in range(100):
            length = int(round(interactions_per_user * rng.lognormal(mu, activity_sigma)))
            if length >= 2:
                break
        length = min(max(length, 2), n_items)
        incl = np.empty(n_items)
        incl[by_weight] = _capped_inclusion(sorted_w, tail_sum, length)
        rows.append(_systematic_sample(incl, rng))
    data = Interactions.from_rows(rows, n_items)

    artist_of = np.concatenate([rng.permutation(n_artists), rng.integers(0, n_artists, n_items - n_artists)])
    rng.shuffle(artist_of)
    width = len(str(max(n_items, n_users, n_artists)))
    artist_ids = [f"a{a:0{width}d}" for a in artist_of]
    track_pc = data.item_counts().astype(np.int64)
    catalog = Catalog(
        [f"t{i:0{width}d}" for i in range(n_items)],
        artist_ids,
        track_pc,
        artist_playcounts(artist_ids, track_pc),
    )
    users = UserMeta(
        [f"u{u:0{width}d}" for u in range(n_users)],
        [GENDERS[g] for g in rng.choice(3, size=n_users, p=_SYNTH_GENDER_P)],
        [_SYNTH_COUNTRIES[c] for c in rng.choice(len(_SYNTH_COUNTRIES), size=n_users, p=_SYNTH_COUNTRY_P)],
        data.row_lengths.astype(np.int64),
    )
    return data, catalog, users


def _capped_inclusion(sorted_w: np.ndarray, tail_sum: np.ndarray, length: int) -> np.ndarray:
    """Inclusion probabilities ``min(1, c * w)`` summing to ``length`` (weights sorted descending)."""
    m = np.arange(length + 1)
    with np.errstate(divide="ignore"):
        c = (length - m) / tail_sum[m]
    # smallest number of capped items for which the next item stays below 1
    ok = np.flatnonzero(c * sorted_w[np.minimum(m, len(sorted_w) - 1)] <= 1.0 + 1e-12)
    n_capped = int(ok[0]) if len(ok) else length
    probs = np.minimum(1.0, c[n_capped] * sorted_w) if n_capped < len(sorted_w) else np.ones_like(sorted_w)
    probs[:n_capped] = 1.0
    return probs


def _systematic_sample(incl: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Fixed-size sample with the given inclusion probabilities (randomly ordered systematic sampling)."""
    order = rng.permutation(len(incl))
    cum = np.cumsum(incl[order])
    length = int(round(cum[-1]))
    hits = np.searchsorted(cum, rng.random() + np.arange(length), side="right")
    return np.sort(order[hits])


# -- leave-one-out -------------------------------------------------------------

def leave_one_out_split(data: Interactions, fold_id: int, seed: int, draws: Sequence[int] | None = None) -> EvalSplit:
    """Mask one uniformly chosen item per user.

    ``draws`` forces the position (within each row) of the held-out item;
    otherwise positions come from the ``(seed, "loo", fold_id)`` stream.
    """
    lengths = data.row_lengths
    if np.any(lengths < 2):
        bad = int(np.flatnonzero(lengths < 2)[0])
        raise DatasetError(f"user {bad} has {lengths[bad]} interactions; leave-one-out needs at least 2")
    if draws is None:
        rng = rng_stream(seed, "loo", fold_id)
        draws = np.floor(rng.random(data.n_users) * lengths).astype(np.int64)
    else:
        draws = np.asarray(draws, dtype=np.int64)
        if draws.shape != (data.n_users,) or np.any(draws < 0) or np.any(draws >= lengths):
            raise ValueError("draws must give one in-range position per user")
    held_pos = data.indptr[:-1] + draws
    held_out = data.indices[held_pos].copy()
    keep = np.ones(data.nnz, dtype=bool)
    keep[held_pos] = False
    indptr = np.zeros_like(data.indptr)
    indptr[1:] = np.cumsum(lengths - 1)
    train = Interactions(data.n_users, data.n_items, indptr, data.indices[keep].copy())
    return EvalSplit(int(fold_id), held_out, train)
