"""Fairness-aware music recommendation with item-based multinomial VAEs and BPRMF."""
from fairrec.dataset import (
    Catalog,
    EvalSplit,
    Interactions,
    UserMeta,
    generate_synthetic,
    leave_one_out_split,
    load_dataset,
    write_dataset,
)
from fairrec.evaluation import cv_fairness, hit_rate, mred, mrr

__version__ = "0.1.0"

__all__ = [
    "Catalog", "EvalSplit", "Interactions", "UserMeta",
    "generate_synthetic", "leave_one_out_split", "load_dataset", "write_dataset",
    "cv_fairness", "hit_rate", "mred", "mrr",
]
