"""Fit and recommend for one fold: the curated ensemble or a single baseline model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from fairrec import bprmf, vae
from fairrec.config import RunConfig
from fairrec.curation import RecommendationList, curate_all
from fairrec.dataset import Catalog, Interactions, generate_synthetic, load_dataset
from fairrec.grouping import Grouping, artist_popularity_grouping, track_popularity_grouping

logger = logging.getLogger(__name__)


@dataclass
class FittedPipeline:
    kind: str
    bpr: bprmf.BprModel
    ensemble: vae.GroupedVaeEnsemble | None = None
    single: vae.VaeModel | None = None


def load_data(config: RunConfig):
    """Dataset described by ``config.data``: ``(Interactions, Catalog, UserMeta)``."""
    d = config.data
    if d.source == "files":
        return load_dataset(d.interactions, d.tracks, d.users, min_interactions=d.min_interactions)
    s = d.synthetic
    return generate_synthetic(s.n_users, s.n_items, s.n_artists, s.interactions_per_user, s.popularity_exponent, s.seed)


def item_groupings(catalog: Catalog, config: RunConfig) -> tuple[Grouping, Grouping]:
    return (
        track_popularity_grouping(catalog, config.grouping.track_edges),
        artist_popularity_grouping(catalog, config.grouping.artist_edges),
    )


def fold_seed(seed: int, fold_id: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold_id)]).generate_state(1)[0])


def fit(train: Interactions, catalog: Catalog, config: RunConfig, fold_id: int = 0) -> FittedPipeline:
    track_g, artist_g = item_groupings(catalog, config)
    seed = fold_seed(config.seed, fold_id)
    vcfg = replace(config.vae, seed=seed)
    bpr_model = bprmf.train_bpr(train, replace(config.bpr, seed=seed))
    if config.pipeline == "curated":
        ltcfg = replace(vcfg, latent=config.least_track.latent, epochs=config.least_track.epochs)
        ens = vae.train_grouped(train, artist_g, track_g, vcfg, ltcfg, config.extra_epochs_least_popular)
        return FittedPipeline("curated", bpr_model, ensemble=ens)
    if config.pipeline == "vae_item":
        rows = train.to_csr().T.tocsr()
        model = vae.train(rows, vcfg, vae.ITEM_BASED, row_groups=track_g.assignment, tag="vae-item")
        return FittedPipeline("vae_item", bpr_model, single=model)
    if config.pipeline == "vae_user":
        model = vae.train(train.to_csr(), vcfg, vae.USER_BASED, tag="vae-user")
        return FittedPipeline("vae_user", bpr_model, single=model)
    return FittedPipeline("bprmf", bpr_model)


def recommend(fitted: FittedPipeline, train: Interactions, catalog: Catalog, config: RunConfig) -> list[RecommendationList]:
    """Ranked lists for every user. Baselines use the source label of their model."""
    bpr_top = bprmf.bpr_top1_all(fitted.bpr, train)
    if fitted.kind == "curated":
        _, artist_g = item_groupings(catalog, config)
        group_scores = vae.ensemble_scores(fitted.ensemble, train)
        lt_scores, lt_items = vae.score_matrix(fitted.ensemble.least_track_model, train)
        lt_top = lt_items[vae.rank_items(lt_scores, 1)[:, 0]]
        return curate_all(group_scores, lt_top, bpr_top, artist_g, config.curation)
    if fitted.kind == "bprmf":
        scores, label = bprmf.bpr_scores(fitted.bpr, train), "bpr"
    else:
        scores, items = vae.score_matrix(fitted.single, train)
        label = fitted.kind
    top = vae.rank_items(scores, config.evaluation.k)
    return [RecommendationList(u, top[u], [label] * top.shape[1]) for u in range(train.n_users)]


def save_fitted(fitted: FittedPipeline, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "bprmf.json"]
    bprmf.save_model(fitted.bpr, written[0])
    models: dict[str, vae.VaeModel] = {}
    if fitted.ensemble is not None:
        for g, m in enumerate(fitted.ensemble.artist_models):
            models[f"vae_artist{g}"] = m
        models["vae_least_track"] = fitted.ensemble.least_track_model
    if fitted.single is not None:
        models[f"{fitted.kind}"] = fitted.single
    for name, m in models.items():
        path = directory / f"{name}.json"
        vae.save_model(m, path)
        vae.write_training_curve(m, directory / f"{name}_curve.csv")
        written.append(path)
    return written


def load_fitted(directory, config: RunConfig) -> FittedPipeline:
    directory = Path(directory)

    def need(name):
        path = directory / f"{name}.json"
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}")
        return path

    bpr_model = bprmf.load_model(need("bprmf"))
    if config.pipeline == "curated":
        n_groups = len(config.grouping.artist_edges) + 1
        ens = vae.GroupedVaeEnsemble(
            [vae.load_model(need(f"vae_artist{g}")) for g in range(n_groups)],
            vae.load_model(need("vae_least_track")),
        )
        return FittedPipeline("curated", bpr_model, ensemble=ens)
    if config.pipeline in ("vae_item", "vae_user"):
        return FittedPipeline(config.pipeline, bpr_model, single=vae.load_model(need(config.pipeline)))
    return FittedPipeline("bprmf", bpr_model)
