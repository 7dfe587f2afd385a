# coding: utf-8

# # The command line, end to end
#
# Five subcommands share one working directory: generate, train, recommend,
# evaluate and run-folds. This drives them through ``fairrec.cli.main`` on a
# smoke-sized corpus.

# In[1]:

import json
import tempfile
from pathlib import Path

from fairrec import cli

out = Path(tempfile.mkdtemp())
config = {
    "data": {"synthetic": {"n_users": 200, "n_items": 600, "n_artists": 30,
                           "interactions_per_user": 30, "popularity_exponent": 1.2, "seed": 0}},
    "grouping": {"artist_edges": [100, 160, 250]},
    "folds": 2,
}
(out / "config.json").write_text(json.dumps(config))
common = ["--config", str(out / "config.json"), "--out", str(out)]


# In[2]:

for command in ("generate", "train", "recommend", "evaluate"):
    code = cli.main([command] + common)
    print(command, "->", code)
print(sorted(p.name for p in out.iterdir()))


# Each user gets a 100-row block in the recommendations file.

# In[3]:

lines = (out / "recommendations.tsv").read_text().splitlines()
print("\n".join(lines[:4]))
print(len(lines) - 1, "rows")


# The JSON report carries the per-group breakdown behind every metric.

# In[4]:

report = json.loads((out / "report.json").read_text())[0]
print({k: v for k, v in report.items() if not isinstance(v, dict)})
print(report["groups"]["gender"])


# Existing outputs are protected unless ``--force`` is given; errors exit
# with status 1.

# In[5]:

print("rerun without --force ->", cli.main(["evaluate"] + common))


# run-folds repeats the whole fit per fold and appends an averaged row.

# In[6]:

print(cli.main(["run-folds", "--force"] + common))
