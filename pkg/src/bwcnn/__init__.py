"""Binary-weight CNN engine: training on float masters through binarized
effective weights, bit-packed multiplication-free inference, and the
frame-classification evaluation harness around them."""

from .binarization import (
    BinarizedKernel,
    BinarizedNetwork,
    binarize_kernel,
    binarize_network,
    effective_weights,
    effective_weights_array,
    reconstruction_cost,
)
from .dataset import (
    DatasetManifest,
    decode_ppm,
    encode_ppm,
    load_manifest,
    resize_bilinear,
    split_and_shuffle,
    synth_generate,
    write_manifest,
)
from .layers import ConvLayerParams, conv2d_backward, conv2d_forward, softmax_xent
from .metrics import ConfusionCounts, accumulate, compute_metrics
from .model_store import (
    CheckpointMeta,
    ModelFormatError,
    compression_report,
    load_float,
    load_packed,
    save_float,
    save_packed,
)
from .network import (
    NetworkParams,
    NetworkSpec,
    canonical_network,
    dense_predict,
    init_params,
    network_backward,
    network_forward,
)
from .packed import (
    PackedKernel,
    PackedNetwork,
    op_count_report,
    pack,
    pack_network,
    packed_conv2d,
    packed_forward,
    unpack,
)
from .training import TrainConfig, TrainingDiverged, train_loop, train_step

__version__ = "0.1.0"
