"""Independent reference implementations used by several test modules."""
import math
from collections import defaultdict


def knn_oracle(train_X, train_y, query, k):
    """Brute-force k-NN with the documented tie rules, in plain Python."""
    ranked = sorted(
        ((math.dist(row, query), label) for row, label in zip(train_X, train_y)),
        key=lambda p: (p[0], p[1]),
    )[:k]
    votes = defaultdict(int)
    dsum = defaultdict(float)
    for d, label in ranked:
        votes[label] += 1
        dsum[label] += d
    return min(votes, key=lambda lab: (-votes[lab], dsum[lab], lab))
