"""Training: SGD with momentum on float master weights.

In binarized mode every forward/backward runs through the effective weights
alpha*sign(W) recomputed from the masters each step, and the resulting
gradient is applied straight through to the masters; biases train normally in
both modes. Checkpoints are full master snapshots and are bitwise reproducible
for a fixed seed.
"""

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .binarization import effective_weights_array
from .dataset import DatasetManifest, frame_to_tensor, load_frame
from .layers import softmax_xent
from .model_store import CheckpointMeta, save_float
from .network import NetworkParams, NetworkSpec, init_params, network_backward, network_forward

MODES = ("float", "binarized")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class TrainConfig:
    mode: str = "float"
    iterations: int = 1
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 10000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")


def init_velocity(params: NetworkParams):
    return [
        {"w": np.zeros_like(p.weights), "b": np.zeros_like(p.biases)}
        for p in params.layers
    ]


def train_step(params: NetworkParams, batch, cfg: TrainConfig, velocity):
    """One SGD step on one batch; mutates params and velocity in place.

    batch is (inputs, labels). Returns (params, loss) with loss the batch-mean
    cross-entropy measured at the weights used for the forward pass.
    """
    x, labels = batch
    if cfg.mode == "binarized":
        weights = [effective_weights_array(p.weights) for p in params.layers]
    else:
        weights = None
    logits, cache = network_forward(params, x, weights)
    if not np.isfinite(logits).all():
        raise TrainingDiverged("non-finite logits")
    loss, grad_logits = softmax_xent(logits, labels)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    grads_w, grads_b = network_backward(cache, grad_logits)
    for p, v, gw, gb in zip(params.layers, velocity, grads_w, grads_b):
        v["w"] *= cfg.momentum
        v["w"] += gw
        v["b"] *= cfg.momentum
        v["b"] += gb
        p.weights -= cfg.learning_rate * v["w"]
        p.biases -= cfg.learning_rate * v["b"]
        if not (np.isfinite(p.weights).all() and np.isfinite(p.biases).all()):
            raise TrainingDiverged("non-finite parameters after update")
    return params, loss


@dataclass
class Checkpoint:
    iteration: int
    params: NetworkParams
    cfg: TrainConfig
    path: Path | None = None


class _FrameCache:
    """Lazy per-path cache of decoded uint8 rasters."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self.rasters = {}

    def tensor(self, index: int) -> np.ndarray:
        rel, _ = self.manifest.records[index]
        raster = self.rasters.get(rel)
        if raster is None:
            raster = load_frame(self.manifest.root, rel)
            self.rasters[rel] = raster
        return frame_to_tensor(raster)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack([self.tensor(i) for i in indices])
        ys = np.array([self.manifest.records[i][1] for i in indices], dtype=np.int64)
        return xs, ys


def _checkpoint_path(out_path: Path, iteration: int) -> Path:
    return out_path.with_name(f"{out_path.stem}.iter{iteration:07d}{out_path.suffix}")


def train_loop(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    spec: NetworkSpec | None = None,
    params: NetworkParams | None = None,
    out_path=None,
    progress=None,
):
    """Run cfg.iterations batch steps over seeded epoch permutations.

    Each epoch visits floor(n/batch_size) full batches of a fresh seeded
    permutation (per-epoch reshuffle). Checkpoints are emitted every
    cfg.checkpoint_every iterations and at the end; identical
    seed + data + cfg give bitwise-identical checkpoints. Returns the
    checkpoint list; the final entry is the end-of-training snapshot.
    """
    if len(manifest) == 0:
        raise ValueError("empty manifest")
    labels = manifest.labels()
    if labels.min() == labels.max():
        raise ValueError("training manifest must contain both classes")
    if len(manifest) < cfg.batch_size:
        raise ValueError(
            f"batch size {cfg.batch_size} exceeds dataset size {len(manifest)}"
        )
    if spec is None:
        from .network import canonical_network

        spec = canonical_network()
    if params is None:
        params = init_params(spec, cfg.seed)
    velocity = init_velocity(params)
    cache = _FrameCache(manifest)
    # second word keeps the shuffle stream distinct from init_params(seed)
    shuffle_rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    out_path = Path(out_path) if out_path is not None else None
    checkpoints = []

    def emit(iteration: int, final: bool):
        snap = params.copy()
        path = None
        if out_path is not None:
            path = out_path if final else _checkpoint_path(out_path, iteration)
            meta = CheckpointMeta(iteration, cfg.seed, asdict(cfg))
            save_float(snap, path, meta)
        checkpoints.append(Checkpoint(iteration, snap, cfg, path))

    n = len(manifest)
    per_epoch = n // cfg.batch_size
    order = []
    cursor = per_epoch  # force a shuffle on first use
    t0 = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        if cursor >= per_epoch:
            order = shuffle_rng.permutation(n)
            cursor = 0
        idx = order[cursor * cfg.batch_size : (cursor + 1) * cfg.batch_size]
        cursor += 1
        try:
            _, loss = train_step(params, cache.batch(idx), cfg, velocity)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", iteration=it) from None
        if progress is not None:
            progress(it, loss, time.perf_counter() - t0)
        if it % cfg.checkpoint_every == 0 and it != cfg.iterations:
            emit(it, final=False)
    emit(cfg.iterations, final=True)
    return checkpoints
