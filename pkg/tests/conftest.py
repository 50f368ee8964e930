import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_boxes(rng, n, min_side=0.02):
    w = rng.uniform(min_side, 0.6, n)
    h = rng.uniform(min_side, 0.6, n)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.stack([cx, cy, w, h], axis=1)


def grid_areas(a, b, res=1e-3):
    """Intersection, union and enclosing area of two boxes by counting grid cell centers."""
    xs = (np.arange(int(round(1 / res))) + 0.5) * res
    X, Y = np.meshgrid(xs, xs, indexing="ij")

    def inside(box):
        cx, cy, w, h = box
        return (np.abs(X - cx) <= w / 2) & (np.abs(Y - cy) <= h / 2)

    ina, inb = inside(a), inside(b)
    inter = (ina & inb).sum() * res * res
    union = (ina | inb).sum() * res * res
    x0 = min(a[0] - a[2] / 2, b[0] - b[2] / 2)
    x1 = max(a[0] + a[2] / 2, b[0] + b[2] / 2)
    y0 = min(a[1] - a[3] / 2, b[1] - b[3] / 2)
    y1 = max(a[1] + a[3] / 2, b[1] + b[3] / 2)
    hull = ((X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)).sum() * res * res
    return inter, union, hull
