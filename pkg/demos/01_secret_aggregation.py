"""
Delta-masked aggregation in a few rounds
=========================================

Three clients share one transformed frame per round.  The server only ever
learns the mean; round 0 travels encrypted.
"""

import numpy as np

from fedtt.tst import server_view, simulate_protocol

rng = np.random.default_rng(0)
frames = rng.normal(0, 10, (4, 3, 5, 3))  # rounds, clients, sensors, features

# %% run the protocol and compare with the plain mean
aggregates, transcript = simulate_protocol(frames)
for r, agg in enumerate(aggregates):
    print(f"round {r}: max |aggregate - mean| = {np.max(np.abs(agg - frames[r].mean(axis=0))):.2e}")

print(transcript.counts())

# %% shift every client by a constant, shifts summing to zero
shift = rng.normal(0, 50, (3, 5, 3))
shift -= shift.mean(axis=0)
_, shifted = simulate_protocol(frames + shift[None])
gap = max(np.max(np.abs(a - b)) for a, b in zip(server_view(transcript), server_view(shifted)))
print(f"server view changes by at most {gap:.1e} although every client's data moved")

# the masks do expose each client's round-over-round change, scaled by 1/n
