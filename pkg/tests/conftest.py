import json
import sys
from pathlib import Path

import pytest

from fairrec.dataset import Interactions, generate_synthetic

FIXTURES = Path(__file__).parent / "fixtures"

# 200-user desk-scale corpus; artist edges rescaled so all four groups are populated.
SMOKE_CONFIG = {
    "data": {"synthetic": {"n_users": 200, "n_items": 600, "n_artists": 30,
                           "interactions_per_user": 30, "popularity_exponent": 1.2, "seed": 0}},
    "grouping": {"artist_edges": [100, 160, 250]},
    "folds": 4,
    "seed": 0,
}


@pytest.fixture(scope="session")
def published_tables():
    return json.loads((FIXTURES / "published_tables.json").read_text())


@pytest.fixture
def toy_interactions():
    return Interactions.from_rows([[0, 2], [1, 2, 3], [0, 1, 3]], n_items=4)


@pytest.fixture(scope="session")
def synthetic_small():
    return generate_synthetic(100, 200, 20, 30, 1.2, 7)


@pytest.fixture
def smoke_config():
    return json.loads(json.dumps(SMOKE_CONFIG))


def write_tsv(path, header, rows):
    lines = ["\t".join(header)] if header else []
    lines += ["\t".join(str(x) for x in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


@pytest.fixture
def tsv_fixture(tmp_path):
    """Three users (u3 has a single interaction and must be dropped), four tracks."""
    write_tsv(tmp_path / "interactions.tsv", ["user_id", "track_id", "playcount"], [
        ("u1", "tA", 3), ("u1", "tC", 1),
        ("u2", "tB", 5), ("u2", "tC", 2), ("u2", "tD", 1),
        ("u4", "tA", 1), ("u4", "tB", 2), ("u4", "tD", 9),
        ("u3", "tA", 7),
    ])
    write_tsv(tmp_path / "tracks.tsv", ["track_id", "artist_id", "track_playcount"], [
        ("tA", "ar1", 11), ("tB", "ar2", 7), ("tC", "ar1", 3), ("tD", "ar3", 10),
    ])
    write_tsv(tmp_path / "users.tsv", ["user_id", "gender", "country", "playcount"], [
        ("u1", "m", "US", 4), ("u2", "f", "DE", 8), ("u3", "x", "US", 7), ("u4", "n", "PL", 12),
    ])
    return tmp_path


def random_binary(rng, shape, p=0.4):
    x = (rng.random(shape) < p).astype(float)
    x[:, 0] = 1.0
    return x


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
