import csv
import json
import shutil
from collections import Counter

import pytest

from fairrec import cli
from fairrec.config import PROFILES, ConfigError, RunConfig, load_config, make_config
from fairrec.evaluation import TABLE3_COLUMNS, MetricsReport

from conftest import SMOKE_CONFIG


class TestConfig:
    def test_phase1_profile(self):
        c = make_config(profile="phase1")
        assert (c.vae.hidden, c.vae.latent, c.vae.epochs) == (300, 500, 5)
        assert (c.bpr.dim, c.bpr.batch_size, c.bpr.epochs, c.bpr.lr) == (64, 8192, 10, 1e-3)
        assert c.vae.batch_size == 32

    def test_phase2_profile(self):
        c = make_config(profile="phase2")
        assert (c.vae.latent, c.vae.epochs, c.vae.beta, c.vae.gamma) == (17, 2, 1e-4, 3e-3)
        assert (c.least_track.latent, c.least_track.epochs) == (15, 2)
        assert c.extra_epochs_least_popular == 2
        assert c.bpr.dim == 200

    def test_override_on_top_of_profile(self):
        c = make_config({"vae": {"epochs": 1}}, profile="phase2")
        assert c.vae.epochs == 1 and c.vae.latent == 17

    @pytest.mark.parametrize("bad", [
        {"bogus": 1}, {"vae": {"latnt": 3}}, {"data": {"synthetic": {"users": 5}}}, {"vae": 3},
    ])
    def test_unknown_keys_rejected(self, bad):
        with pytest.raises(ConfigError):
            make_config(bad)

    @pytest.mark.parametrize("bad", [
        {"pipeline": "magic"}, {"folds": 0}, {"vae": {"gamma": -1}}, {"data": {"source": "files"}},
        {"evaluation": {"cv_center": "x"}}, {"curation": {"counts": [38, 20, 20]}},
    ])
    def test_invalid_values_rejected(self, bad):
        with pytest.raises(ConfigError):
            make_config(bad)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            make_config(profile="phase3")

    def test_load_and_fingerprint(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps(SMOKE_CONFIG))
        a = load_config(tmp_path / "c.json")
        assert isinstance(a, RunConfig) and a.data.synthetic.n_users == 200
        assert a.fingerprint() == make_config(SMOKE_CONFIG).fingerprint()
        assert a.fingerprint() != make_config({**SMOKE_CONFIG, "seed": 1}).fingerprint()
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")

    def test_profiles_documented(self):
        assert set(PROFILES) == {"phase1", "phase2"}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMOKE_CONFIG))
    out = root / "run"
    assert run("generate", "--config", cfg, "--out", out) == 0
    assert run("train", "--config", cfg, "--out", out) == 0
    assert run("recommend", "--config", cfg, "--out", out) == 0
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    return cfg, out


def read_tsv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


class TestGenerate:
    def test_files_and_manifest(self, workspace):
        _, out = workspace
        for name in ("interactions.tsv", "tracks.tsv", "users.tsv", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["parameters"]["seed"] == 0 and manifest["n_users"] == 200

    def test_refuses_overwrite(self, workspace, capsys):
        cfg, out = workspace
        assert run("generate", "--config", cfg, "--out", out) == cli.EXIT_ERROR
        assert "--force" in capsys.readouterr().err

    def test_force_reproduces_identical_files(self, workspace, tmp_path):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        before = (copy / "interactions.tsv").read_bytes()
        assert run("generate", "--config", cfg, "--out", copy, "--force") == 0
        assert (copy / "interactions.tsv").read_bytes() == before

    def test_manifest_parameters_reproduce(self, workspace, tmp_path):
        _, out = workspace
        params = json.loads((out / "manifest.json").read_text())["parameters"]
        (tmp_path / "c.json").write_text(json.dumps({"data": {"synthetic": params}}))
        assert run("generate", "--config", tmp_path / "c.json", "--out", tmp_path / "again") == 0
        for name in ("interactions.tsv", "tracks.tsv", "users.tsv"):
            assert (tmp_path / "again" / name).read_bytes() == (out / name).read_bytes()

    def test_thread_cap_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAIRREC_THREADS", "1")
        assert run("generate", "--out", tmp_path / "t") == 0


class TestTrainRecommend:
    def test_checkpoints(self, workspace):
        _, out = workspace
        names = sorted(p.name for p in (out / "checkpoints").glob("*.json"))
        assert names == sorted(["bprmf.json", "manifest.json", "vae_least_track.json"]
                               + [f"vae_artist{g}.json" for g in range(4)])
        assert (out / "checkpoints" / "vae_artist0_curve.csv").read_text().startswith("epoch,loss,F,KL")

    def test_retrain_identical(self, workspace, tmp_path):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        assert run("train", "--config", cfg, "--out", copy) == 0
        for p in (out / "checkpoints").iterdir():
            assert (copy / "checkpoints" / p.name).read_bytes() == p.read_bytes()

    def test_rows_and_census(self, workspace):
        _, out = workspace
        rows = read_tsv(out / "recommendations.tsv")
        assert len(rows) == 100 * 200
        by_user = {}
        for r in rows:
            by_user.setdefault(r["user_id"], []).append(r)
        assert len(by_user) == 200
        for recs in by_user.values():
            assert [int(r["rank"]) for r in recs] == list(range(1, 101))
            assert len({r["track_id"] for r in recs}) == 100
            census = Counter(r["source"] for r in recs)
            assert recs[0]["source"] == "bpr" and census["bpr"] == 1
            assert census["ltrack"] <= 1
            assert all(census[f"g{g}"] in (19, 20) for g in (1, 2, 3))
            assert 38 <= census["g0"] <= 40
            assert {r["source"] for r in recs[1:6]} == {"g2"} or census["g2"] == 19

    def test_no_training_items_recommended(self, workspace):
        _, out = workspace
        split = json.loads((out / "split.json").read_text())
        config = make_config(SMOKE_CONFIG)
        from fairrec.dataset import leave_one_out_split, load_dataset
        data, catalog, users = load_dataset(out / "interactions.tsv", out / "tracks.tsv", out / "users.tsv")
        train = leave_one_out_split(data, config.fold_id, config.seed).train
        assert split["held_out"] == leave_one_out_split(data, 0, 0).held_out.tolist()
        uidx = {u: k for k, u in enumerate(users.user_ids)}
        tidx = {t: k for k, t in enumerate(catalog.item_ids)}
        seen = {u: set(train.row(u).tolist()) for u in range(train.n_users)}
        for r in read_tsv(out / "recommendations.tsv"):
            assert tidx[r["track_id"]] not in seen[uidx[r["user_id"]]]

    def test_recommend_deterministic(self, workspace, tmp_path):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        assert run("recommend", "--config", cfg, "--out", copy) == cli.EXIT_ERROR  # exists, no --force
        assert run("recommend", "--config", cfg, "--out", copy, "--force") == 0
        assert (copy / "recommendations.tsv").read_bytes() == (out / "recommendations.tsv").read_bytes()

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        (copy / "checkpoints" / "vae_artist2.json").unlink()
        assert run("recommend", "--config", cfg, "--out", copy, "--force") == cli.EXIT_ERROR
        assert "vae_artist2.json" in capsys.readouterr().err

    def test_version_mismatch(self, workspace, tmp_path, capsys):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        marker = copy / "checkpoints" / "manifest.json"
        marker.write_text(json.dumps({**json.loads(marker.read_text()), "version": 99}))
        assert run("train", "--config", cfg, "--out", copy) == cli.EXIT_ERROR
        assert "version" in capsys.readouterr().err

    def test_config_mismatch(self, workspace, tmp_path, capsys):
        _, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        other = tmp_path / "other.json"
        other.write_text(json.dumps({**SMOKE_CONFIG, "seed": 5}))
        assert run("train", "--config", other, "--out", copy) == cli.EXIT_ERROR
        assert "different configuration" in capsys.readouterr().err


class TestEvaluate:
    def test_report(self, workspace):
        _, out = workspace
        with open(out / "report.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["fold", *TABLE3_COLUMNS, "score"]
        assert len(rows) == 2
        doc = json.loads((out / "report.json").read_text())
        assert 0 <= doc[0]["hit_rate"] <= 1

    def test_coverage_gap(self, workspace, tmp_path, capsys):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        lines = (copy / "recommendations.tsv").read_text().splitlines(keepends=True)
        first_user = lines[1].split("\t")[0]
        (copy / "recommendations.tsv").write_text("".join(l for l in lines if not l.startswith(first_user + "\t")))
        assert run("evaluate", "--config", cfg, "--out", copy, "--force") == cli.EXIT_ERROR
        assert first_user in capsys.readouterr().err

    def test_weights(self, workspace, tmp_path):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        (tmp_path / "w.json").write_text(json.dumps({"hit_rate": 2.0, "mrr": 1.0}))
        assert run("evaluate", "--config", cfg, "--out", copy, "--force", "--weights", tmp_path / "w.json") == 0
        doc = json.loads((copy / "report.json").read_text())[0]
        assert doc["score"] == pytest.approx(2 * doc["hit_rate"] + doc["mrr"])

    def test_invariant_exit_code(self, workspace, tmp_path, monkeypatch):
        cfg, out = workspace
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        bad = MetricsReport(0, 0.3, 0.5)
        monkeypatch.setattr(cli, "evaluate", lambda *a, **k: bad)
        assert run("evaluate", "--config", cfg, "--out", copy, "--force") == cli.EXIT_INVARIANT

    def test_check_invariants(self):
        ok = MetricsReport(0, 0.3, 0.1, mred={"gender": -0.01}, cv={"gender": 0.2})
        cli.check_invariants(ok)
        for bad in (MetricsReport(0, 1.2, 0.1), MetricsReport(0, 0.3, 0.1, mred={"g": 0.01}),
                    MetricsReport(0, 0.3, 0.1, cv={"g": -0.1})):
            with pytest.raises(cli.InvariantViolation):
                cli.check_invariants(bad)


def test_run_folds_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMOKE_CONFIG))
    assert run("run-folds", "--config", cfg, "--out", tmp_path / "rf", "--folds", 2) == 0
    with open(tmp_path / "rf" / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows[1:]] == ["0", "1", "average"]


def test_bad_config_exit(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"nope": 1}))
    assert run("generate", "--config", tmp_path / "c.json", "--out", tmp_path / "x") == cli.EXIT_ERROR
    assert "nope" in capsys.readouterr().err
