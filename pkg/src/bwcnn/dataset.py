"""Data ingestion: manifest files, portable-pixmap decode/encode, bilinear
resize to the network input, deterministic splits, and a seeded synthetic
corpus generator (smooth sinusoid background, class 1 adds one soft-edged
bright ellipse).

Manifest format: UTF-8 CSV, one `relative_path,label` per line, no header.
Images: binary portable pixmaps, P6 (RGB) or P5 (gray, replicated to three
channels), 8-bit maxval 255. Real video frames can be converted with e.g.
`ffmpeg -i video.avi frames/f%05d.ppm`.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import INPUT_HW


@dataclass
class DatasetManifest:
    """Ordered (relative image path, 0/1 label) records under a root directory."""

    records: list = field(default_factory=list)  # (path: str, label: int)
    root: Path = Path(".")

    def __post_init__(self):
        self.root = Path(self.root)
        seen = set()
        for path, label in self.records:
            if label not in (0, 1):
                raise ValueError(f"label must be 0 or 1, got {label!r} for {path}")
            if path in seen:
                raise ValueError(f"duplicate path in manifest: {path}")
            seen.add(path)

    def __len__(self):
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.records], dtype=np.int64)


def load_manifest(path, root=None) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.rsplit(",", 1)
            if len(parts) != 2 or not parts[0]:
                raise ValueError(f"{path}:{lineno}: malformed line {line!r}")
            rel, lab = parts
            if lab not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {lab!r}")
            records.append((rel, int(lab)))
    return DatasetManifest(records, Path(root) if root is not None else path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rel, lab in manifest.records:
            fh.write(f"{rel},{lab}\n")


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary portable pixmap to a (3, h, w) uint8 raster.

    P6 decodes pixel-exact; P5 gray is replicated onto all three channels.
    """
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported magic {magic!r} (need binary P5/P6)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated pixmap header")
        fields.append(data[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise ValueError(f"non-numeric pixmap header fields {fields}") from None
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (need 255)")
    if width < 1 or height < 1:
        raise ValueError(f"bad pixmap dimensions {width}x{height}")
    pos += 1  # exactly one whitespace byte separates header and raster
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise ValueError(f"pixmap raster truncated: need {need} bytes, have {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 3:
        return np.ascontiguousarray(arr.reshape(height, width, 3).transpose(2, 0, 1))
    gray = arr.reshape(height, width)
    return np.ascontiguousarray(np.broadcast_to(gray, (3, height, width)))


def encode_ppm(pixels: np.ndarray) -> bytes:
    """Encode a (3, h, w) uint8 raster as a binary P6 pixmap."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3 or pixels.dtype != np.uint8:
        raise ValueError(f"need (3, h, w) uint8 raster, got {pixels.dtype} {pixels.shape}")
    _, h, w = pixels.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + pixels.transpose(1, 2, 0).tobytes()


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Edge-aligned bilinear resize of a (c, h, w) float array.

    Sample grid maps output corners exactly onto input corners, so resizing to
    the source size is the identity.
    """
    img = np.asarray(img, dtype=np.float64)
    c, h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"source too small to interpolate: {h}x{w}")
    ys = np.linspace(0.0, h - 1, out_h)
    xs = np.linspace(0.0, w - 1, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    tl = img[:, y0][:, :, x0]
    tr = img[:, y0][:, :, x0 + 1]
    bl = img[:, y0 + 1][:, :, x0]
    br = img[:, y0 + 1][:, :, x0 + 1]
    return (
        tl * (1 - fy) * (1 - fx)
        + tr * (1 - fy) * fx
        + bl * fy * (1 - fx)
        + br * fy * fx
    )


def frame_to_tensor(raster: np.ndarray) -> np.ndarray:
    """(3, h, w) uint8 raster -> (3, 118, 118) float64 in [0, 1]."""
    resized = resize_bilinear(raster, *INPUT_HW)
    return resized / 255.0


def load_frame(root, rel_path) -> np.ndarray:
    """Read and decode one image; raises with the offending path on failure."""
    full = Path(root) / rel_path
    try:
        data = full.read_bytes()
    except OSError as exc:
        raise ValueError(f"unreadable sample {full}: {exc}") from exc
    try:
        return decode_ppm(data)
    except ValueError as exc:
        raise ValueError(f"bad image {full}: {exc}") from exc


def load_input_tensor(root, rel_path) -> np.ndarray:
    return frame_to_tensor(load_frame(root, rel_path))


def split_and_shuffle(manifest: DatasetManifest, seed: int, train_fraction: float):
    """Deterministic seeded split; the training side comes out shuffled, the
    test side keeps manifest order."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(manifest)
    n_train = int(round(n * train_fraction))
    if n_train < 1 or n - n_train < 1:
        raise ValueError(f"split {train_fraction} leaves an empty side for {n} records")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    perm = rng.permutation(n)
    train = [manifest.records[i] for i in perm[:n_train]]
    test = [manifest.records[i] for i in sorted(perm[n_train:])]
    return (
        DatasetManifest(train, manifest.root),
        DatasetManifest(test, manifest.root),
    )


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth low-frequency field: a base level plus a few random sinusoids."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.full((h, w), rng.uniform(0.30, 0.42))
    for _ in range(4):
        fy = rng.uniform(0.5, 2.5) / h
        fx = rng.uniform(0.5, 2.5) / w
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.02, 0.07)
        field += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    gains = rng.uniform(0.92, 1.08, size=3)
    return np.clip(gains[:, None, None] * field, 0.0, 1.0)


def _add_ellipse(img: np.ndarray, rng: np.random.Generator) -> None:
    """Plant one soft-edged bright ellipse of random position/size/eccentricity."""
    _, h, w = img.shape
    cy = rng.uniform(0.30, 0.70) * h
    cx = rng.uniform(0.30, 0.70) * w
    a = rng.uniform(9.0, 22.0)
    b = a * rng.uniform(0.5, 1.0)
    theta = rng.uniform(0, np.pi)
    amp = rng.uniform(0.35, 0.55)
    tint = rng.uniform(0.85, 1.0, size=3)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    d = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    soft = 1.0 / (1.0 + np.exp((d - 1.0) / 0.08))
    img += amp * tint[:, None, None] * soft
    np.clip(img, 0.0, 1.0, out=img)


def synth_generate(out_dir, count: int, positive_fraction: float, seed: int) -> DatasetManifest:
    """Write a deterministic synthetic corpus and its manifest.

    Class 0 frames are smooth sinusoid backgrounds; class 1 adds one bright
    ellipse. Same (seed, count, fraction) gives a byte-identical corpus.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive_fraction must be in [0, 1], got {positive_fraction}")
    out_dir = Path(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ValueError(f"cannot write to {out_dir}: {exc}") from exc
    h, w = INPUT_HW
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    n_pos = int(round(count * positive_fraction))
    labels = np.array([1] * n_pos + [0] * (count - n_pos))
    rng.shuffle(labels)
    records = []
    for i, label in enumerate(labels):
        img = _background(rng, h, w)
        if label:
            _add_ellipse(img, rng)
        raster = np.round(img * 255.0).astype(np.uint8)
        name = f"frame_{i:05d}.ppm"
        (out_dir / name).write_bytes(encode_ppm(raster))
        records.append((name, int(label)))
    manifest = DatasetManifest(records, out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
