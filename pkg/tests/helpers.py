"""Shared test utilities: finite-difference oracles and toy architectures."""

import numpy as np

from bwcnn.network import LayerSpec, NetworkSpec


def central_diff(f, x, eps=1e-4):
    """Elementwise central-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def max_rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def tiny_spec(in_hw=(6, 6), in_channels=2):
    """Two-layer toy: conv 3x3/3 feats + relu + pool, then fc 2 head."""
    layers = (
        LayerSpec("conv", size=3, stride=1, features=3),
        LayerSpec("relu"),
        LayerSpec("maxpool", size=2, stride=2),
        LayerSpec("fc", features=2),
    )
    return NetworkSpec(layers, in_channels=in_channels, input_hw=in_hw)


def dyadic_uniform(rng, shape, bits=10, lo=0.25, hi=2.0):
    """Random positive floats with few mantissa bits (sums stay exact)."""
    scale = 1 << bits
    vals = rng.integers(int(lo * scale), int(hi * scale), size=shape)
    return vals.astype(np.float64) / scale
