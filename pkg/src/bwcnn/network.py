"""Network architecture description, parameter containers, and the dense pass.

The canonical architecture is a 118x118 RGB classifier: four conv+pool stages
(3x3/8, 3x3/16, 5x5/32, 5x5/32, each followed by a rectifier and 2x2/2 max
pool) and two fully connected heads (128 then 2), FC realized as valid
convolution over the full remaining spatial extent.
"""

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    ConvLayerParams,
    check_tensor4,
    conv2d_backward,
    conv2d_forward_cols,
    conv_output_hw,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
)

INPUT_CHANNELS = 3
INPUT_HW = (118, 118)


@dataclass(frozen=True)
class LayerSpec:
    """One layer descriptor: kind is "conv", "maxpool", "relu", or "fc".

    size is the kernel/window edge (0 for fc means "full spatial extent",
    0 for relu is unused); features is the output feature count for conv/fc.
    """

    kind: str
    size: int = 0
    stride: int = 1
    features: int = 0


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple = ()
    in_channels: int = INPUT_CHANNELS
    input_hw: tuple = INPUT_HW

    def shape_chain(self):
        """(c, h, w) after every layer, validating each stage stays positive."""
        c, (h, w) = self.in_channels, self.input_hw
        chain = []
        for layer in self.layers:
            if layer.kind == "conv":
                h, w = conv_output_hw((h, w), (layer.size, layer.size), layer.stride)
                c = layer.features
            elif layer.kind == "maxpool":
                if h % layer.size or w % layer.size:
                    raise ValueError(f"pool over odd spatial size {h}x{w}")
                h, w = h // layer.stride, w // layer.stride
            elif layer.kind == "fc":
                c, h, w = layer.features, 1, 1
            elif layer.kind == "relu":
                pass
            else:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
            if min(c, h, w) < 1:
                raise ValueError(f"layer {layer} collapses the feature map to {c}x{h}x{w}")
            chain.append((c, h, w))
        return chain

    def kernel_shapes(self):
        """(out, in, kh, kw, stride) for each parameterized (conv/fc) layer."""
        c, (h, w) = self.in_channels, self.input_hw
        shapes = []
        for layer, (nc, nh, nw) in zip(self.layers, self.shape_chain()):
            if layer.kind == "conv":
                shapes.append((layer.features, c, layer.size, layer.size, layer.stride))
            elif layer.kind == "fc":
                shapes.append((layer.features, c, h, w, 1))
            c, h, w = nc, nh, nw
        return shapes


def canonical_network() -> NetworkSpec:
    """The production architecture: conv 3x3/8, 3x3/16, 5x5/32, 5x5/32 with
    rectifier + 2x2/2 max pool after each, then FC 128 (+rectifier) and FC 2."""
    layers = []
    for size, feats in ((3, 8), (3, 16), (5, 32), (5, 32)):
        layers.append(LayerSpec("conv", size=size, stride=1, features=feats))
        layers.append(LayerSpec("relu"))
        layers.append(LayerSpec("maxpool", size=2, stride=2))
    layers.append(LayerSpec("fc", features=128))
    layers.append(LayerSpec("relu"))
    layers.append(LayerSpec("fc", features=2))
    return NetworkSpec(layers=tuple(layers))


@dataclass
class NetworkParams:
    """Float master weights and biases, one ConvLayerParams per conv/fc layer."""

    spec: NetworkSpec
    layers: list = field(default_factory=list)

    def validate(self):
        shapes = self.spec.kernel_shapes()
        if len(shapes) != len(self.layers):
            raise ValueError(
                f"expected {len(shapes)} parameterized layers, got {len(self.layers)}"
            )
        for i, (p, (o, c, kh, kw, s)) in enumerate(zip(self.layers, shapes)):
            if p.weights.shape != (o, c, kh, kw) or p.stride != s:
                raise ValueError(
                    f"layer {i}: weights {p.weights.shape}/stride {p.stride} "
                    f"do not match spec {(o, c, kh, kw)}/stride {s}"
                )
        return self

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.spec,
            [
                ConvLayerParams(p.weights.copy(), p.biases.copy(), p.stride)
                for p in self.layers
            ],
        )

    def allclose(self, other: "NetworkParams") -> bool:
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Fan-in-scaled uniform init: weights ~ U(-b, b) with b = sqrt(3/fan_in),
    biases zero. Deterministic in seed."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    layers = []
    for o, c, kh, kw, s in spec.kernel_shapes():
        fan_in = c * kh * kw
        bound = np.sqrt(3.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(o, c, kh, kw))
        layers.append(ConvLayerParams(w, np.zeros(o), s))
    return NetworkParams(spec, layers).validate()


def network_forward(params: NetworkParams, x: np.ndarray, weights=None):
    """Forward pass to logits.

    weights optionally overrides the master weight array of each parameterized
    layer (used for forwarding through binarized effective weights); biases
    always come from params. Returns (logits, cache) where cache feeds
    network_backward.
    """
    x = check_tensor4(x, "network input")
    if x.shape[1] != params.spec.in_channels or x.shape[2:] != params.spec.input_hw:
        raise ValueError(
            f"input shape {x.shape[1:]} does not match network input "
            f"{(params.spec.in_channels, *params.spec.input_hw)}"
        )
    cache = []
    t = x
    li = 0
    for layer in params.spec.layers:
        if layer.kind in ("conv", "fc"):
            p = params.layers[li]
            if weights is not None:
                p = ConvLayerParams(weights[li], p.biases, p.stride)
            out, cols = conv2d_forward_cols(t, p)
            cache.append(("conv", t, p, cols))
            t = out
            li += 1
        elif layer.kind == "relu":
            cache.append(("relu", t, None, None))
            t = relu_forward(t)
        elif layer.kind == "maxpool":
            t, idx = maxpool_forward(t, layer.size, layer.stride)
            cache.append(("maxpool", idx, None, None))
    return t, cache


def dense_predict(params: NetworkParams, x: np.ndarray, weights=None):
    """Reference-path inference: (labels, probs); exact logit ties pick class 0."""
    from .layers import softmax_probs

    logits, _ = network_forward(params, x, weights)
    probs = softmax_probs(logits)
    return probs.argmax(axis=1), probs


def network_backward(cache, grad_logits: np.ndarray):
    """Backprop through a cached forward pass.

    Returns (grad_weights, grad_biases) lists, one entry per parameterized
    layer in forward order. Gradients are w.r.t. the weights actually used in
    the forward pass (master or overridden).
    """
    grads_w = []
    grads_b = []
    g = grad_logits
    for i, (kind, stored, p, cols) in zip(reversed(range(len(cache))), reversed(cache)):
        if kind == "conv":
            # the layer nearest the input never needs grad w.r.t. the images
            g, gw, gb = conv2d_backward(stored, p, g, cols=cols, need_input_grad=i > 0)
            grads_w.append(gw)
            grads_b.append(gb)
        elif kind == "relu":
            g = relu_backward(stored, g)
        elif kind == "maxpool":
            g = maxpool_backward(stored, g)
    grads_w.reverse()
    grads_b.reverse()
    return grads_w, grads_b
