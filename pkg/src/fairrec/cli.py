"""Command-line entry point: ``fairrec {generate,train,recommend,evaluate,run-folds}``.

Every command works inside one output directory (``--out``)::

    interactions.tsv tracks.tsv users.tsv manifest.json   # generate
    run_config.json split.json checkpoints/               # train
    recommendations.tsv                                   # recommend
    report.csv report.json                                # evaluate / run-folds
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

from fairrec import pipeline
from fairrec.config import ConfigError, PROFILES, RunConfig, deep_merge, make_config
from fairrec.curation import read_recommendations, write_recommendations
from fairrec.dataset import leave_one_out_split, load_dataset, write_dataset
from fairrec.evaluation import evaluate, run_folds, write_reports
from fairrec.grouping import user_groupings
from fairrec.numerics import CHECKPOINT_VERSION

logger = logging.getLogger("fairrec")

EXIT_ERROR = 1
EXIT_INVARIANT = 3


class CommandError(RuntimeError):
    pass


class InvariantViolation(RuntimeError):
    pass


def _config(args) -> RunConfig:
    overrides: dict = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if getattr(args, "folds", None) is not None:
        flags["folds"] = args.folds
    if getattr(args, "weights", None):
        flags["evaluation"] = {"weights": json.loads(Path(args.weights).read_text())}
    return make_config(deep_merge(overrides, flags), args.profile)


def _guard(paths, force: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise CommandError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _workspace_data(config: RunConfig, out: Path):
    """Dataset from ``config.data``, falling back to TSVs written by ``generate`` in ``out``."""
    if config.data.source == "synthetic" and (out / "manifest.json").exists():
        return load_dataset(out / "interactions.tsv", out / "tracks.tsv", out / "users.tsv",
                            min_interactions=config.data.min_interactions)
    return pipeline.load_data(config)


def cmd_generate(args) -> int:
    config = _config(args)
    out = Path(args.out)
    files = [out / n for n in ("interactions.tsv", "tracks.tsv", "users.tsv", "manifest.json")]
    _guard(files, args.force)
    if config.data.source != "synthetic":
        raise CommandError("generate needs data.source = 'synthetic'")
    data, catalog, users = pipeline.load_data(config)
    write_dataset(out, data, catalog, users)
    manifest = {"generator": "fairrec.generate_synthetic", "parameters": asdict(config.data.synthetic),
                "n_users": data.n_users, "n_items": data.n_items, "n_interactions": data.nnz}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {data.n_users} users, {data.n_items} tracks, {data.nnz} interactions to {out}")
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    out = Path(args.out)
    ckpt = out / "checkpoints"
    marker = ckpt / "manifest.json"
    if marker.exists():
        prior = json.loads(marker.read_text())
        if prior.get("version") != CHECKPOINT_VERSION:
            raise CommandError(f"{marker}: checkpoint version {prior.get('version')} != {CHECKPOINT_VERSION}")
        if prior.get("config") != config.fingerprint() and not args.force:
            raise CommandError(f"{ckpt} holds checkpoints from a different configuration (use --force)")
    data, catalog, _ = _workspace_data(config, out)
    split = leave_one_out_split(data, config.fold_id, config.seed)
    fitted = pipeline.fit(split.train, catalog, config, config.fold_id)
    written = pipeline.save_fitted(fitted, ckpt)
    marker.write_text(json.dumps({"version": CHECKPOINT_VERSION, "config": config.fingerprint()}, indent=2) + "\n")
    (out / "run_config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "split.json").write_text(json.dumps(
        {"fold_id": split.fold_id, "seed": config.seed, "held_out": split.held_out.tolist()}) + "\n")
    print(f"wrote {len(written)} checkpoints to {ckpt}")
    return 0


def _split_for(config: RunConfig, out: Path, data):
    split = leave_one_out_split(data, config.fold_id, config.seed)
    stored = out / "split.json"
    if stored.exists():
        saved = json.loads(stored.read_text())
        if saved["held_out"] != split.held_out.tolist():
            raise CommandError(f"{stored} does not match the split implied by the configuration")
    return split


def cmd_recommend(args) -> int:
    config = _config(args)
    out = Path(args.out)
    path = out / "recommendations.tsv"
    _guard([path], args.force)
    data, catalog, users = _workspace_data(config, out)
    split = _split_for(config, out, data)
    fitted = pipeline.load_fitted(out / "checkpoints", config)
    recs = pipeline.recommend(fitted, split.train, catalog, config)
    write_recommendations(path, recs, users.user_ids, catalog.item_ids)
    print(f"wrote {sum(len(r.items) for r in recs)} rows to {path}")
    return 0


def check_invariants(report) -> None:
    problems = []
    if not 0.0 <= report.hit_rate <= 1.0:
        problems.append(f"hit rate {report.hit_rate} outside [0, 1]")
    if report.mrr > report.hit_rate + 1e-12:
        problems.append(f"MRR {report.mrr} exceeds hit rate {report.hit_rate}")
    problems += [f"MRED {name} = {v} > 0" for name, v in report.mred.items() if v > 0]
    problems += [f"CV {name} = {v} < 0" for name, v in report.cv.items() if v < 0]
    if problems:
        raise InvariantViolation("; ".join(problems))


def cmd_evaluate(args) -> int:
    config = _config(args)
    out = Path(args.out)
    _guard([out / "report.csv", out / "report.json"], args.force)
    data, catalog, users = _workspace_data(config, out)
    split = _split_for(config, out, data)
    path = out / "recommendations.tsv"
    if not path.exists():
        raise CommandError(f"missing {path}; run 'fairrec recommend' first")
    per_user = read_recommendations(
        path, {u: k for k, u in enumerate(users.user_ids)}, {t: k for k, t in enumerate(catalog.item_ids)})
    missing = [users.user_ids[u] for u in range(data.n_users) if u not in per_user]
    if missing:
        raise CommandError(f"recommendations missing for {len(missing)} users: {missing[:20]}")
    fitted_bpr = pipeline.load_fitted(out / "checkpoints", config).bpr
    track_g, artist_g = pipeline.item_groupings(catalog, config)
    groupings = user_groupings(users, split.train, config.grouping.top_countries) + [track_g, artist_g]
    report = evaluate(
        {u: items for u, (items, _) in per_user.items()}, split, groupings, fitted_bpr.item_factors,
        config.evaluation.k, config.evaluation.cv_center, config.evaluation.weights,
    )
    write_reports(out, [report])
    check_invariants(report)
    print(_summary([report]))
    return 0


def cmd_run_folds(args) -> int:
    config = _config(args)
    out = Path(args.out)
    _guard([out / "report.csv", out / "report.json"], args.force)
    data, catalog, users = _workspace_data(config, out)
    reports, avg = run_folds(data, catalog, users, config)
    write_reports(out, reports + [avg])
    for r in reports:
        check_invariants(r)
    print(_summary(reports + [avg]))
    return 0


def _summary(reports) -> str:
    lines = [f"{'fold':>8} {'HR':>8} {'MRR':>8} {'score':>8}"]
    for r in reports:
        score = "nan" if math.isnan(r.score) else f"{r.score:.4f}"
        lines.append(f"{str(r.fold_id):>8} {r.hit_rate:8.4f} {r.mrr:8.4f} {score:>8}")
    return "\n".join(lines)


@contextlib.contextmanager
def _thread_cap():
    n = os.environ.get("FAIRREC_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate": cmd_generate, "train": cmd_train, "recommend": cmd_recommend,
        "evaluate": cmd_evaluate, "run-folds": cmd_run_folds,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--profile", choices=sorted(PROFILES), help="hyperparameter profile applied before --config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="working directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name in ("evaluate", "run-folds"):
            p.add_argument("--weights", help="JSON {column: weight} for a weighted aggregate score")
        if name == "run-folds":
            p.add_argument("--folds", type=int)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_cap():
            return args.func(args)
    except InvariantViolation as exc:
        print(f"fairrec: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (CommandError, ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"fairrec: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
