import numpy as np
import pytest
import torch

torch.set_num_threads(2)


def structured_batch(n_per_class=2, seed=0, classes=2):
    """Tiny separable image batch: each class brightens its own vertical
    strip on top of low noise."""
    g = torch.Generator().manual_seed(seed)
    n = classes * n_per_class
    x = torch.randn(n, 3, 224, 224, generator=g) * 0.2
    y = torch.arange(classes).repeat_interleave(n_per_class)
    strip = 224 // classes
    for c in range(classes):
        rows = y == c
        x[rows, :, :, c * strip : (c + 1) * strip] += 1.5
    return x, y


@pytest.fixture
def rng():
    return np.random.default_rng(0)
