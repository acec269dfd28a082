"""Dense NCHW tensor layers: valid convolution, max pooling, rectifier, softmax.

All arrays are numpy ndarrays in (batch, channel, row, col) order, C-contiguous.
The reference math runs in float64; callers that want a float32 path (the packed
inference route) pass float32 arrays and get float32 back.
"""

from dataclasses import dataclass

import numpy as np


def check_tensor4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate a 4-D (n, c, h, w) array with every dimension >= 1."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: shape {x.shape}")
    return x


@dataclass
class ConvLayerParams:
    """Weights and biases of one convolution (or conv-as-FC) layer.

    weights: (out_features, in_channels, kh, kw)
    biases:  (out_features,)
    """

    weights: np.ndarray
    biases: np.ndarray
    stride: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.biases = np.asarray(self.biases)
        if self.weights.ndim != 4:
            raise ValueError(
                f"weights must be (out, in, kh, kw), got shape {self.weights.shape}"
            )
        if self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"need one bias per output feature: weights {self.weights.shape} "
                f"vs biases {self.biases.shape}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_hw(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def conv_output_hw(in_hw, kernel_hw, stride):
    """Valid-convolution output size: floor((in - k) / stride) + 1 per axis."""
    h, w = in_hw
    kh, kw = kernel_hw
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} does not fit inside input {h}x{w}")
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    """Unfold valid-convolution windows into a matrix.

    Returns (cols, oh, ow) where cols has shape (n*oh*ow, c*kh*kw); each row is
    one window flattened in (channel, row, col) order, rows ordered by
    (sample, out_row, out_col).
    """
    n, c, h, w = x.shape
    oh, ow = conv_output_hw((h, w), (kh, kw), stride)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def col2im(grad_cols, input_shape, kh, kw, stride):
    """Scatter-add window gradients back onto the input grid (im2col adjoint)."""
    n, c, h, w = input_shape
    oh, ow = conv_output_hw((h, w), (kh, kw), stride)
    dwin = grad_cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros(input_shape, dtype=grad_cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                dwin[:, :, i, j]
            )
    return dx


def conv2d_forward_cols(x: np.ndarray, params: ConvLayerParams):
    """conv2d_forward that also hands back the im2col matrix for reuse."""
    x = check_tensor4(x, "conv input")
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ValueError(
            f"channel mismatch: input shape {x.shape} vs weights {params.weights.shape}"
        )
    kh, kw = params.kernel_hw
    cols, oh, ow = im2col(x, kh, kw, params.stride)
    wmat = params.weights.reshape(params.out_features, -1)
    out = cols @ wmat.T + params.biases
    out = out.reshape(n, oh, ow, params.out_features).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d_forward(x: np.ndarray, params: ConvLayerParams) -> np.ndarray:
    """Valid (unpadded) convolution; output element = sum(window * kernel) + bias."""
    out, _ = conv2d_forward_cols(x, params)
    return out


def conv2d_backward(
    x: np.ndarray,
    params: ConvLayerParams,
    grad_out: np.ndarray,
    cols: np.ndarray | None = None,
    need_input_grad: bool = True,
):
    """Gradients of a scalar loss w.r.t. conv input, weights, and biases.

    grad_out must have the shape conv2d_forward would produce for (x, params).
    Returns (grad_input, grad_weights, grad_biases). cols, when supplied, must
    be the im2col matrix of x (saves recomputing it); need_input_grad=False
    skips grad_input (returned as None) for the layer nearest the input.
    """
    x = check_tensor4(x, "conv input")
    grad_out = check_tensor4(grad_out, "grad_out")
    n, c, h, w = x.shape
    kh, kw = params.kernel_hw
    oh, ow = conv_output_hw((h, w), (kh, kw), params.stride)
    expect = (n, params.out_features, oh, ow)
    if grad_out.shape != expect:
        raise ValueError(f"grad_out shape {grad_out.shape} does not match {expect}")
    if cols is None:
        cols, _, _ = im2col(x, kh, kw, params.stride)
    g = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, params.out_features)
    grad_w = (g.T @ cols).reshape(params.weights.shape)
    grad_b = g.sum(axis=0)
    grad_x = None
    if need_input_grad:
        wmat = params.weights.reshape(params.out_features, -1)
        grad_cols = g @ wmat
        grad_x = col2im(grad_cols, x.shape, kh, kw, params.stride)
    return grad_x, grad_w, grad_b


@dataclass
class PoolIndices:
    """Argmax bookkeeping from maxpool_forward, consumed by maxpool_backward."""

    argmax: np.ndarray  # (n, c, oh, ow), flat index into each size*size window
    input_shape: tuple
    size: int
    stride: int


def maxpool_forward(x: np.ndarray, size: int = 2, stride: int = 2):
    """Non-overlapping square max pooling; ties go to the first scan-order index.

    Requires stride == size and spatial dims divisible by size (always true
    along the canonical chain).
    """
    x = check_tensor4(x, "pool input")
    if stride != size:
        raise ValueError(f"only non-overlapping pooling supported: size {size} stride {stride}")
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ValueError(f"spatial dims {h}x{w} not divisible by pool size {size}")
    oh, ow = h // size, w // size
    win = x.reshape(n, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, oh, ow, size * size)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), PoolIndices(argmax, x.shape, size, stride)


def maxpool_backward(indices: PoolIndices, grad_out: np.ndarray) -> np.ndarray:
    """Route each output gradient to its window's argmax position."""
    grad_out = check_tensor4(grad_out, "grad_out")
    n, c, h, w = indices.input_shape
    s = indices.size
    expect = (n, c, h // s, w // s)
    if grad_out.shape != expect or indices.argmax.shape != expect:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match pooled shape {expect}"
        )
    oh, ow = expect[2], expect[3]
    scatter = np.zeros((n, c, oh, ow, s * s), dtype=grad_out.dtype)
    np.put_along_axis(scatter, indices.argmax[..., None], grad_out[..., None], axis=-1)
    dx = scatter.reshape(n, c, oh, ow, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(dx)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # gradient 0 at x == 0 (subgradient convention)
    return grad_out * (x > 0)


def fc_forward(x: np.ndarray, params: ConvLayerParams) -> np.ndarray:
    """Fully connected layer as a convolution whose kernel spans the whole input."""
    x = check_tensor4(x, "fc input")
    if params.kernel_hw != x.shape[2:]:
        raise ValueError(
            f"fc kernel {params.kernel_hw} must equal input spatial size {x.shape[2:]}"
        )
    return conv2d_forward(x, params)


def fc_backward(x: np.ndarray, params: ConvLayerParams, grad_out: np.ndarray):
    if params.kernel_hw != x.shape[2:]:
        raise ValueError(
            f"fc kernel {params.kernel_hw} must equal input spatial size {x.shape[2:]}"
        )
    return conv2d_backward(x, params, grad_out)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of (n, k) or (n, k, 1, 1) logits, max-shifted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z.reshape(z.shape[0], -1)
    if not np.isfinite(z).all():
        raise ValueError("non-finite logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over the batch.

    Returns (loss, grad_logits) where grad_logits is d(mean loss)/d(logits),
    i.e. (p - onehot(label)) / batch for each sample.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n = logits.shape[0]
    k = logits.reshape(n, -1).shape[1]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    p = softmax_probs(logits)
    rows = np.arange(n)
    loss = float(-np.log(p[rows, labels]).mean())
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.reshape(logits.shape)
