# coding: utf-8

# # BPR matrix factorization
#
# BPR learns from (user, positive item, negative item) triplets and pushes
# the positive score above the negative one. Instead of weight decay, any
# factor matrix whose largest entry grows past 1 is rescaled.

# In[1]:

import numpy as np

from fairrec import bprmf
from fairrec.dataset import generate_synthetic, leave_one_out_split

data, catalog, users = generate_synthetic(300, 800, 60, 30, 1.2, seed=0)
split = leave_one_out_split(data, 0, 0)


# Triplets sample a user uniformly, a positive from the user's row and a
# negative the user has not played.

# In[2]:

trip = bprmf.sample_triplets(split.train, 5, np.random.default_rng(0))
print(trip)


# In[3]:

cfg = bprmf.BprConfig(dim=32, epochs=20, batch_size=512, lr=0.05, seed=0)
before = bprmf.init_model(split.train.n_users, split.train.n_items, cfg, np.random.default_rng(0))
model = bprmf.train_bpr(split.train, cfg)
print("loss per epoch", np.round(model.losses, 3))
print(f"pairwise AUC {bprmf.pairwise_auc(before, split.train):.3f} -> {bprmf.pairwise_auc(model, split.train):.3f}")
print("largest factor entries", np.abs(model.user_factors).max(), np.abs(model.item_factors).max())


# The curated list uses only the single best unseen item per user from BPR.

# In[4]:

top1 = bprmf.bpr_top1_all(model, split.train)
print("top-1 for first users", top1[:8])
print("top-1 equals held-out item for", int((top1 == split.held_out).sum()), "users")
print("distinct top-1 items", len(np.unique(top1)))
