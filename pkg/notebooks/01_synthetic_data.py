# coding: utf-8

# # Synthetic listening data
#
# The generator builds a power-law corpus: a few tracks collect most of the
# plays and a long tail is barely touched. This mimics real listening logs
# closely enough to exercise every part of the pipeline.

# In[1]:

import numpy as np

from fairrec.dataset import generate_synthetic, leave_one_out_split

data, catalog, users = generate_synthetic(
    n_users=500, n_items=2000, n_artists=150,
    interactions_per_user=30, popularity_exponent=1.2, seed=0,
)
print(data.n_users, "users,", data.n_items, "tracks,", data.nnz, "interactions")


# Interactions are stored row-wise, one sorted array of item indices per user.

# In[2]:

print(data.row(0)[:10])
print("row lengths: min", data.row_lengths.min(), "median", np.median(data.row_lengths), "max", data.row_lengths.max())


# How concentrated is the catalog? Sort the play counts and look at the share
# held by the top decile.

# In[3]:

counts = np.sort(data.item_counts())[::-1]
top = counts[: len(counts) // 10].sum() / counts.sum()
print(f"top 10% of tracks hold {top:.1%} of interactions")
print("tracks never played:", int((counts == 0).sum()))


# Artist playcounts are the sum over the artist's tracks, copied back onto each
# track. Users get a gender and a country for the user-side fairness groups.

# In[4]:

print(catalog.item_ids[:3], catalog.artist_ids[:3])
print(catalog.track_playcount[:3], catalog.artist_playcount[:3])
print(sorted(set(users.gender)), len(set(users.country)), "countries")


# # Leave-one-out
#
# Every fold hides one random interaction per user. Different fold ids give
# different draws; the same fold id always gives the same one.

# In[5]:

split = leave_one_out_split(data, fold_id=0, seed=0)
again = leave_one_out_split(data, fold_id=0, seed=0)
other = leave_one_out_split(data, fold_id=1, seed=0)
print("train nnz", split.train.nnz, "held out", len(split.held_out))
print("reproducible:", np.array_equal(split.held_out, again.held_out))
print("fold 1 differs for", int((split.held_out != other.held_out).sum()), "users")
