# coding: utf-8

# # Curated lists
#
# A 100-item list is stitched together from several sources: the BPR top-1,
# per-artist-group VAE candidates in a fixed group order, and the top item of
# a VAE trained only on the least popular tracks. Duplicates are skipped and
# the gap is filled from the least popular artist group.

# In[1]:

from collections import Counter

import numpy as np

from fairrec.curation import CurationConfig, assemble_list, per_group_candidates
from fairrec.grouping import Grouping

cfg = CurationConfig()
print("quotas", cfg.counts, "order", cfg.order, "head", cfg.head, "length", cfg.k)


# A toy user with random scores over 400 items in four artist groups.

# In[2]:

rng = np.random.default_rng(0)
grouping = Grouping("artist_pop", ("1", "100", "1000", "10000"), rng.permutation(np.arange(400) % 4))
scores = rng.normal(size=400)
scores[rng.choice(400, 30, replace=False)] = -np.inf  # already played
cands = per_group_candidates(scores, grouping)
print([len(r) for r in cands.ranked], "backfill pool", len(cands.backfill))


# A BPR pick and a least-track pick that do not collide with anything.

# In[3]:

used = set(np.concatenate(cands.ranked).tolist()) | set(cands.backfill.tolist())
fresh = [i for i in np.flatnonzero(np.isfinite(scores)) if i not in used]
rec = assemble_list(cands, least_track_item=fresh[1], bpr_item=fresh[0])
print(rec.sources[:8], "...", rec.sources[-2:])
print(Counter(rec.sources))


# When the BPR pick is already one of the group 2 candidates it keeps slot 0,
# the group 2 block loses that item and group 0 backfills one slot.

# In[4]:

dup = int(cands.ranked[2][1])
rec = assemble_list(cands, least_track_item=fresh[1], bpr_item=dup)
print(Counter(rec.sources), "backfilled", rec.backfilled)


# A least-track pick that duplicates a candidate is dropped, and the list
# records that the final slot went elsewhere.

# In[5]:

rec = assemble_list(cands, least_track_item=int(cands.ranked[1][7]), bpr_item=fresh[0])
print("least track kept:", rec.least_track_kept, "last source:", rec.sources[-1], "length", len(rec.items))
