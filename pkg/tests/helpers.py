"""Shared test helpers: finite-difference checks on list-of-block gradients."""

import numpy as np

from fedtt.gradcheck import check_gradient
from fedtt.nn import flat_grads


def gradient_error(model, loss_and_grads, n_coords=20, seed=0, h=1e-5):
    """Max relative error between analytic and central-difference gradients on random coordinates."""
    def flat():
        loss, grads = loss_and_grads()
        return loss, flat_grads(grads)
    err, coords = check_gradient(flat, model, n_coords, np.random.default_rng(seed), h)
    assert len(coords) >= min(n_coords, flat()[1].size)
    return err
