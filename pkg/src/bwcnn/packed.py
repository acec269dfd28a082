"""Bit-packed test-phase path: one sign bit per weight, one alpha per kernel.

A packed convolution window costs n sign-gated add/subtracts plus a single
multiply by alpha, instead of n multiplies: out = alpha * (sum of inputs under
+1 bits - sum of inputs under -1 bits) + bias. Accumulation runs in float32.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .binarization import BinarizedKernel, BinarizedNetwork
from .layers import check_tensor4, conv_output_hw, im2col, maxpool_forward, relu_forward, softmax_probs
from .network import NetworkSpec


@dataclass
class PackedKernel:
    """One kernel's sign bits plus its scale and bias.

    bits holds one bit per weight in (in_channel, kh, kw) row-major order,
    MSB-first within each byte, zero-padded to a byte boundary; bit 1 means +1
    and bit 0 means -1. alpha and bias are float32.
    """

    alpha: np.float32
    bias: np.float32
    bits: bytes
    shape: tuple  # (in_channels, kh, kw)

    def __post_init__(self):
        self.alpha = np.float32(self.alpha)
        self.bias = np.float32(self.bias)
        if len(self.bits) != math.ceil(self.n / 8):
            raise ValueError(
                f"bits length {len(self.bits)} != ceil({self.n}/8) for shape {self.shape}"
            )

    @property
    def n(self) -> int:
        c, kh, kw = self.shape
        return c * kh * kw


def pack(kernel: BinarizedKernel, bias: float = 0.0) -> PackedKernel:
    """Pack a sign matrix into bytes (MSB-first, +1 -> 1, zero padding)."""
    bits01 = (kernel.signs.ravel() > 0).astype(np.uint8)
    packed = np.packbits(bits01)  # MSB-first, pads trailing bits with 0
    return PackedKernel(
        np.float32(kernel.alpha), np.float32(bias), packed.tobytes(), kernel.signs.shape
    )


def unpack(pk: PackedKernel) -> BinarizedKernel:
    """Invert pack; rejects nonzero padding bits (corruption signal)."""
    u = np.unpackbits(np.frombuffer(pk.bits, dtype=np.uint8))
    if u[pk.n :].any():
        raise ValueError("nonzero padding bits in packed kernel")
    signs = np.where(u[: pk.n] == 1, 1.0, -1.0).reshape(pk.shape)
    return BinarizedKernel(float(pk.alpha), signs)


def _sign_masks(pk: PackedKernel) -> np.ndarray:
    """Boolean +1 mask of length n from the packed bits."""
    u = np.unpackbits(np.frombuffer(pk.bits, dtype=np.uint8))
    if u[pk.n :].any():
        raise ValueError("nonzero padding bits in packed kernel")
    return u[: pk.n].astype(bool)


def packed_conv2d(x: np.ndarray, kernels, stride: int = 1) -> np.ndarray:
    """Multiplication-free valid convolution over packed kernels.

    Per window: accumulate inputs with + where the bit is 1 and - where it is
    0, scale the single accumulated sum by alpha, add bias. float32 throughout.
    """
    x = check_tensor4(x, "packed conv input")
    if not kernels:
        raise ValueError("no kernels")
    shape = kernels[0].shape
    if any(k.shape != shape for k in kernels):
        raise ValueError("kernels disagree on shape")
    c, kh, kw = shape
    n, xc, h, w = x.shape
    if xc != c:
        raise ValueError(f"channel mismatch: input shape {x.shape} vs kernel shape {shape}")
    cols, oh, ow = im2col(np.ascontiguousarray(x, dtype=np.float32), kh, kw, stride)
    out = np.empty((len(kernels), cols.shape[0]), dtype=np.float32)
    for k, pk in enumerate(kernels):
        plus = _sign_masks(pk)
        acc = cols[:, plus].sum(axis=1, dtype=np.float32)
        acc -= cols[:, ~plus].sum(axis=1, dtype=np.float32)
        out[k] = pk.alpha * acc + pk.bias
    out = out.reshape(len(kernels), n, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out)


@dataclass
class PackedLayer:
    kernels: list  # PackedKernel per output feature (each carries its bias)
    stride: int = 1


@dataclass
class PackedNetwork:
    spec: NetworkSpec
    layers: list = field(default_factory=list)


def pack_network(net: BinarizedNetwork) -> PackedNetwork:
    layers = []
    for bl in net.layers:
        kernels = [pack(kern, bl.biases[k]) for k, kern in enumerate(bl.kernels)]
        layers.append(PackedLayer(kernels, bl.stride))
    return PackedNetwork(net.spec, layers)


def packed_forward(model: PackedNetwork, x: np.ndarray):
    """End-to-end packed inference.

    Returns (labels, probs): argmax class per sample (exact logit ties resolve
    to class 0) and softmax class probabilities.
    """
    x = check_tensor4(x, "batch")
    if x.shape[1] != model.spec.in_channels or x.shape[2:] != model.spec.input_hw:
        raise ValueError(
            f"input shape {x.shape[1:]} does not match network input "
            f"{(model.spec.in_channels, *model.spec.input_hw)}"
        )
    t = np.ascontiguousarray(x, dtype=np.float32)
    li = 0
    for layer in model.spec.layers:
        if layer.kind in ("conv", "fc"):
            t = packed_conv2d(t, model.layers[li].kernels, model.layers[li].stride)
            li += 1
        elif layer.kind == "relu":
            t = relu_forward(t)
        elif layer.kind == "maxpool":
            t, _ = maxpool_forward(t, layer.size, layer.stride)
    probs = softmax_probs(t)
    labels = probs.argmax(axis=1)  # argmax takes the first max, so ties -> 0
    return labels, probs


def op_count_report(spec: NetworkSpec, batch: int = 1) -> dict:
    """Static multiply/add-subtract counts for one forward pass.

    Dense does n multiplies per window per kernel; the packed path does n
    add/subtracts plus one multiply by alpha per window (zero if alpha == 1,
    reported separately). Bias adds are identical on both paths and excluded.
    """
    c, (h, w) = spec.in_channels, spec.input_hw
    per_layer = []
    mult_dense = addsubs = mult_packed = 0
    for layer, (nc, nh, nw) in zip(spec.layers, spec.shape_chain()):
        if layer.kind in ("conv", "fc"):
            if layer.kind == "conv":
                kh = kw = layer.size
                oh, ow = conv_output_hw((h, w), (kh, kw), layer.stride)
            else:
                kh, kw = h, w
                oh = ow = 1
            n_weights = c * kh * kw
            windows = batch * layer.features * oh * ow
            per_layer.append(
                {
                    "kind": layer.kind,
                    "windows": windows,
                    "weights_per_window": n_weights,
                    "multiplies_dense": windows * n_weights,
                    "multiplies_packed": windows,
                    "addsubs": windows * n_weights,
                }
            )
            mult_dense += windows * n_weights
            mult_packed += windows
            addsubs += windows * n_weights
        c, h, w = nc, nh, nw
    return {
        "multiplies_dense": mult_dense,
        "multiplies_packed": mult_packed,
        "multiplies_packed_unit_alpha": 0,
        "addsubs": addsubs,
        "per_layer": per_layer,
    }
