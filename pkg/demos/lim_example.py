"""Adjusted weights for a row-normalised (linear-in-means) network.

For a three-person group the reported row of person 1 has four possible
values. The adjusted weight of each report is chosen so that, averaged over
the misclassification noise, it equals the row-normalised true link. This
script prints the report-given-truth probabilities, the weights for the
links 1->2 and 1->3, and checks the unbiasedness property numerically.
It then transforms a small simulated network.
"""
import numpy as np

from mislink.lim import (
    cond_prob_matrix,
    example_table,
    lim_transform_group,
    row_normalized_targets,
)

p0, p1 = 0.1, 0.2
tab = example_table(p0, p1)
labels = ["".join(map(str, r)) for r in tab["support"]]

np.set_printoptions(precision=4, suppress=True)
print(f"rates p0={p0}, p1={p1}; row reports (h12 h13): {labels}\n")
print("P[true row, reported row]:")
print(tab["P"])
print("\nweights for 1->2:", tab["W12"])
print("weights for 1->3:", tab["W13"])

# expectation of the weight under every possible true row
P = cond_prob_matrix(3, p0, p1)
print("\nE[weight | true row] for 1->2:", P @ tab["W12"])
print("target g_12 / sum(g):           ", row_normalized_targets(3, 0))

# a whole group at once; rows with the same number of reported links share
# the same weights, so the cost is small even for large groups
rng = np.random.default_rng(0)
G = (rng.random((6, 6)) < 0.4).astype(int)
np.fill_diagonal(G, 0)
flip = rng.random(G.shape)
H = np.where(G == 1, flip >= p1, flip < p0).astype(int)
np.fill_diagonal(H, 0)
print("\nreported network:\n", H)
print("adjusted row-normalised network:\n", lim_transform_group(H, p0, p1))
