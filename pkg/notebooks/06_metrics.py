# coding: utf-8

# # Accuracy and fairness metrics
#
# Leave-one-out gives one held-out item per user, so hit rate and MRR look
# for that single item in each list. Fairness compares miss rates across
# groups.

# In[1]:

import numpy as np

from fairrec.evaluation import aggregate_score, cv_fairness, group_miss_rates, hit_rate, mred, mrr
from fairrec.grouping import Grouping

truth = np.array([3, 7, 1, 9])
recs = [np.array([3, 4, 5]), np.array([0, 7, 2]), np.array([8, 6, 5]), np.array([2, 1, 9])]
print("HR", hit_rate(recs, truth), "MRR", mrr(recs, truth))


# Ranks: user 0 hits at 1, user 1 at 2, user 2 misses, user 3 at 3.
# MRR is (1 + 1/2 + 1/3) / 4.

# In[2]:

print(np.isclose(mrr(recs, truth), (1 + 1 / 2 + 1 / 3) / 4))


# MRED is minus the mean absolute distance between each group's miss rate and
# the overall miss rate. Zero means parity.

# In[3]:

users = Grouping("gender", ("m", "f"), np.array([0, 0, 1, 1]))
g = group_miss_rates(recs, truth, users)
print(g.labels, g.miss_rates, g.overall_mr)
print("MRED", mred(g.miss_rates, g.overall_mr))


# CV is the coefficient of variation of per-group hit rates around the
# overall hit rate. Hit rates 0.5 and 1.0 against an average 0.75 give 0.5
# with no rounding error.

# In[4]:

print(cv_fairness([0.5, 1.0], 0.75))
print(cv_fairness(g.hit_rates, 1 - g.overall_mr))


# The headline score averages whichever columns are present, or takes a
# weighted sum when weights are supplied.

# In[5]:

row = {"hit_rate": 0.6, "mrr": 0.2, "gender_mred": -0.05, "trackpop_mred": -0.1}
print(aggregate_score(row))
print(aggregate_score(row, {"hit_rate": 1.0, "trackpop_mred": 2.0}))
