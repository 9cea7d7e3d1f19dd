import numpy as np

from depthfuse.core import DepthMap, GradientMap, Scale


def random_depth(rng, shape=(6, 8), scale=Scale.LINEAR, hole_fraction=0.0, lo=0.5, hi=4.0):
    values = rng.uniform(lo, hi, shape)
    if scale is Scale.LOG:
        values = np.log(values)
    mask = rng.random(shape) >= hole_fraction
    return DepthMap(values, mask, scale)


def random_gradients(rng, shape=(6, 8), scale=Scale.LINEAR, sigma=0.5, hole_fraction=0.0):
    mask = rng.random(shape) >= hole_fraction
    return GradientMap(sigma * rng.standard_normal(shape), sigma * rng.standard_normal(shape),
                       mask, scale)
