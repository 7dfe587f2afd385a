# coding: utf-8

# # Fairness groups
#
# Items are grouped by popularity (track playcount and artist playcount),
# users by gender, country and activity. Each grouping is an integer
# assignment plus a tuple of labels.

# In[1]:

import numpy as np

from fairrec.dataset import generate_synthetic, leave_one_out_split
from fairrec.grouping import (
    artist_popularity_grouping,
    threshold_grouping,
    track_popularity_grouping,
    user_groupings,
)

data, catalog, users = generate_synthetic(1000, 2000, 150, 30, 1.2, seed=0)
split = leave_one_out_split(data, 0, 0)


# Thresholds are right-open: a value equal to an edge moves up a bin, and
# anything below the first edge (zero included) lands in the first bin.

# In[2]:

g = threshold_grouping("demo", [0, 9, 10, 99, 100, 5000], edges=[10, 100, 1000])
print(g.labels)
print(g.assignment)


# Track popularity with the default edges 10, 100 and 1000. The synthetic
# corpus is small so the top bin may be empty.

# In[3]:

track = track_popularity_grouping(catalog)
print(track.to_json())


# Artist playcounts on a desk-sized corpus are far below real scrobble counts,
# so the edges are scaled down to give four populated groups.

# In[4]:

edges = np.quantile(catalog.artist_playcount, [0.25, 0.5, 0.75]).astype(int)
artist = artist_popularity_grouping(catalog, edges=edges)
print("edges", edges.tolist())
print(dict(zip(artist.labels, artist.sizes().tolist())))


# User groupings. Activity uses quartiles of the training row length.

# In[5]:

for grouping in user_groupings(users, split.train):
    print(grouping.name, dict(zip(grouping.labels, grouping.sizes().tolist())))
