"""Per-kernel weight binarization: W ~ alpha*B with alpha >= 0, B in {+1,-1}.

For a kernel w of n entries the squared-reconstruction-optimal pair is
alpha = mean(|w|) and B = sign(w) (sign(0) := +1). One alpha per output
kernel; biases are never binarized.
"""

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkParams, NetworkSpec


@dataclass
class BinarizedKernel:
    """Scale and sign matrix of one output kernel; signs has the kernel's
    (in_channels, kh, kw) shape and holds only +1.0 / -1.0."""

    alpha: float
    signs: np.ndarray

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.float64)
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not np.isin(self.signs, (-1.0, 1.0)).all():
            raise ValueError("signs must contain only +1/-1")

    @property
    def n(self) -> int:
        return self.signs.size


def binarize_kernel(w: np.ndarray) -> BinarizedKernel:
    """Optimal (alpha, B) for one kernel: alpha = mean|w|, B = sign(w)."""
    w = np.asarray(w, dtype=np.float64)
    if w.size < 1:
        raise ValueError("empty kernel")
    if not np.isfinite(w).all():
        raise ValueError("non-finite kernel entries")
    alpha = float(np.abs(w).mean())
    signs = np.where(w >= 0, 1.0, -1.0)
    return BinarizedKernel(alpha, signs)


def reconstruction_cost(w: np.ndarray, kernel: BinarizedKernel) -> float:
    """Squared reconstruction error sum((w - alpha*B)^2)."""
    w = np.asarray(w, dtype=np.float64)
    if w.size != kernel.n:
        raise ValueError(f"length mismatch: kernel has {kernel.n} entries, w has {w.size}")
    return float(((w.reshape(kernel.signs.shape) - kernel.alpha * kernel.signs) ** 2).sum())


def effective_weights(kernel: BinarizedKernel) -> np.ndarray:
    """The weights actually used in binarized forward passes: alpha * B."""
    return kernel.alpha * kernel.signs


def effective_weights_array(weights: np.ndarray) -> np.ndarray:
    """Vectorized alpha*B over a whole layer's (out, in, kh, kw) weight array.

    Same per-kernel math as binarize_kernel + effective_weights, computed for
    all output kernels at once (the training hot path).
    """
    w = np.asarray(weights, dtype=np.float64)
    alpha = np.abs(w).mean(axis=(1, 2, 3))
    signs = np.where(w >= 0, 1.0, -1.0)
    return alpha[:, None, None, None] * signs


@dataclass
class BinarizedLayer:
    kernels: list  # one BinarizedKernel per output feature
    biases: np.ndarray  # float, untouched by binarization
    stride: int = 1


@dataclass
class BinarizedNetwork:
    spec: NetworkSpec
    layers: list = field(default_factory=list)

    def total_cost(self, params: NetworkParams):
        """Per-layer and total reconstruction cost against float params."""
        per_layer = []
        for blayer, player in zip(self.layers, params.layers):
            cost = sum(
                reconstruction_cost(player.weights[k], kern)
                for k, kern in enumerate(blayer.kernels)
            )
            per_layer.append(cost)
        return per_layer, float(sum(per_layer))


def binarize_network(params: NetworkParams) -> BinarizedNetwork:
    """Binarize every conv/FC layer kernel-by-kernel; copy biases through."""
    params.validate()
    layers = []
    for p in params.layers:
        kernels = [binarize_kernel(p.weights[k]) for k in range(p.out_features)]
        layers.append(BinarizedLayer(kernels, p.biases.copy(), p.stride))
    return BinarizedNetwork(params.spec, layers)
