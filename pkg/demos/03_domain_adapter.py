"""
Moving one city's traffic into another's layout
===============================================

Two cities read the same latent traffic through different sensors and an
affine distortion.  Two fitted matrices map sensors across; a small generator,
trained against a discriminator, does the rest.
"""

import numpy as np

from fedtt.data import SynthesisConfig, synthesize_multi_city
from fedtt.tda import (AdapterConfig, alignment_loss, discriminator_accuracy, fit_transforms, generate,
                       mixed_batch, train_adapter)

cities = synthesize_multi_city(SynthesisConfig(sensor_counts=[10, 8], scales=[[1.3, 0.8, 1.1], [1, 1, 1]],
                                               offsets=[[50, -5, 0.02], [0, 0, 0]]), 1)
src = cities[0].truth / cities[0].truth.mean(axis=(0, 1))
tgt = cities[1].truth / cities[1].truth.mean(axis=(0, 1))
train_src, test_src, train_tgt, test_tgt = src[:480], src[480:], tgt[:480], tgt[480:]
proto = train_tgt.mean(axis=0)

# %% transforms: graph structure and mean frame
tb = fit_transforms(cities[0].network.adjacency, cities[1].network.adjacency, train_src.mean(axis=0), proto)
print(f"transform residuals: network {tb.residual_net:.3g}, prototype {tb.residual_proto:.3g}")
print("shape", tb.a_net.shape, "(target sensors x source sensors)")

# %% adversarial training
run = train_adapter(train_src, train_tgt, proto, tb, AdapterConfig(seed=1))
print(f"alignment {run.alignment[0]:.3f} -> {run.alignment[-1]:.3f}")

held_out = generate(test_src, run.gen, tb)
print("held-out alignment", alignment_loss(held_out, proto)[0])
print("discriminator accuracy on held-out frames", discriminator_accuracy(run.dis, *mixed_batch(held_out, test_tgt)))
# near 0.5: the discriminator can no longer tell transformed frames from target frames
