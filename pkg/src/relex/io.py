"""Dataset generation and file formats.

Synthetic stripe datasets, the IDX image/label loader, and the container
persistence used for models, saliency maps, adversarial sets, and
datasets.  Containers are a text header (sorted key/value lines, a sha256
payload digest, a format version) followed by raw little-endian binary
payloads; round trips are bit-exact.  All randomness flows from explicit
seeds.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Dense, Flatten, MaxPool2x2, Model, Relu, Softmax, Softplus


class DataFormatError(Exception):
    """Base class for malformed persisted data."""


class BadMagicError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class VersionMismatchError(DataFormatError):
    pass


class DigestMismatchError(DataFormatError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, *shape) float64
    labels: np.ndarray  # (n,) int64
    value_range: tuple[float, float]
    provenance: dict[str, str]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        lo, hi = self.value_range
        if len(self.images) and (self.images.min() < lo or self.images.max() > hi):
            raise ValueError(f"image values outside declared range [{lo}, {hi}]")

    def __len__(self):
        return len(self.images)


def generate_synthetic(
    classes: int, per_class: int, side: int, margin: float = 0.5, seed: int = 0
) -> LabeledDataset:
    """Stripe images: class c brightens a fixed horizontal band of rows.

    Background pixels are U[0, 1-margin]; the class band gets +margin, so
    band pixels are U[margin, 1] and `margin` is the per-pixel amplitude
    separation.  Values stay in [0, 1].  Classes are interleaved so every
    class has `per_class` images; deterministic under seed.  The band
    layout makes the relevant pixels of each class explicit, which the
    exhaustive-mask tests rely on.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if side < 3:
        raise ValueError("side must be at least 3")
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    if classes > side:
        raise ValueError(f"stripe layout needs classes <= side, got {classes} > {side}")
    if not 0.0 <= margin <= 1.0:
        raise ValueError(f"infeasible margin {margin}; must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    n = classes * per_class
    labels = np.arange(n, dtype=np.int64) % classes
    images = rng.uniform(0.0, 1.0 - margin, (n, side, side))
    band = side // classes
    for c in range(classes):
        rows = slice(c * band, (c + 1) * band)
        images[labels == c, rows, :] += margin
    return LabeledDataset(
        images=images,
        labels=labels,
        value_range=(0.0, 1.0),
        provenance={
            "kind": "synthetic-stripes",
            "classes": str(classes),
            "per_class": str(per_class),
            "side": str(side),
            "margin": repr(float(margin)),
            "seed": str(seed),
        },
    )


def class_band(classes: int, side: int, c: int) -> slice:
    """Row band brightened for class c by generate_synthetic."""
    band = side // classes
    return slice(c * band, (c + 1) * band)


def generate_composites(
    classes: int, count: int, side: int, margin: float = 0.5, seed: int = 0, per_image: int = 2
):
    """Images carrying evidence for several classes at once (multiple
    brightened bands).  Returns (images, evidence) where evidence[i] is
    the tuple of classes present in image i.  Used by the class-sweep
    experiment, which asks for explanations of each class with evidence.
    """
    if per_image < 1 or per_image > classes:
        raise ValueError(f"per_image must be in [1, {classes}]")
    if not 0.0 <= margin <= 1.0:
        raise ValueError(f"infeasible margin {margin}; must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0 - margin, (count, side, side))
    evidence = []
    for i in range(count):
        present = tuple(sorted(rng.choice(classes, size=per_image, replace=False).tolist()))
        for c in present:
            images[i, class_band(classes, side, c), :] += margin
        evidence.append(present)
    return images, evidence


# ---------------------------------------------------------------------------
# IDX (big-endian) image/label files.
# ---------------------------------------------------------------------------

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise TruncatedPayloadError(f"{path}: header shorter than 16 bytes")
        magic, count, rows, cols = struct.unpack(">iiii", head)
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
        payload = fh.read()
    expected = count * rows * cols
    if len(payload) != expected:
        raise TruncatedPayloadError(f"{path}: {len(payload)} payload bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise TruncatedPayloadError(f"{path}: header shorter than 8 bytes")
        magic, count = struct.unpack(">ii", head)
        if magic != IDX_LABEL_MAGIC:
            raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
        payload = fh.read()
    if len(payload) != count:
        raise TruncatedPayloadError(f"{path}: {len(payload)} payload bytes, expected {count}")
    return np.frombuffer(payload, dtype=np.uint8)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label file pair, rescaling pixels to [0, 1] by
    /255.  Bad magic numbers, truncated payloads and image/label count
    mismatches raise distinct error types."""
    raw = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise CountMismatchError(f"{len(raw)} images but {len(labels)} labels")
    return LabeledDataset(
        images=raw.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        value_range=(0.0, 1.0),
        provenance={
            "kind": "idx",
            "images_digest": hashlib.sha256(raw.tobytes()).hexdigest(),
            "labels_digest": hashlib.sha256(labels.tobytes()).hexdigest(),
        },
    )


# ---------------------------------------------------------------------------
# Container persistence.
# ---------------------------------------------------------------------------

_CONTAINER_VERSION = "relex-container v1"
_HEADER_END = b"---\n"


def _write_container(path, kind: str, meta: dict[str, str], payload: bytes) -> None:
    lines = [_CONTAINER_VERSION, f"kind {kind}"]
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in key or "\n" in value or " " in key:
            raise ValueError(f"invalid header entry {key!r}")
        lines.append(f"{key} {value}")
    lines.append(f"payload-bytes {len(payload)}")
    lines.append(f"payload-digest {hashlib.sha256(payload).hexdigest()}")
    header = ("\n".join(lines) + "\n").encode() + _HEADER_END
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _read_container(path, kind: str) -> tuple[dict[str, str], bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(_HEADER_END)
    if end < 0:
        raise DataFormatError(f"{path}: missing header terminator")
    header_lines = blob[:end].decode(errors="replace").splitlines()
    payload = blob[end + len(_HEADER_END):]
    if not header_lines or header_lines[0] != _CONTAINER_VERSION:
        raise VersionMismatchError(
            f"{path}: format line {header_lines[0] if header_lines else '<empty>'!r}, "
            f"expected {_CONTAINER_VERSION!r}"
        )
    meta: dict[str, str] = {}
    for line in header_lines[1:]:
        key, _, value = line.partition(" ")
        meta[key] = value
    if meta.get("kind") != kind:
        raise DataFormatError(f"{path}: container kind {meta.get('kind')!r}, expected {kind!r}")
    declared = int(meta.pop("payload-bytes", "-1"))
    if len(payload) != declared:
        raise TruncatedPayloadError(f"{path}: {len(payload)} payload bytes, declared {declared}")
    digest = meta.pop("payload-digest", "")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise DigestMismatchError(f"{path}: payload digest mismatch")
    meta.pop("kind")
    return meta, payload


def _shape_str(shape) -> str:
    return ",".join(str(int(s)) for s in shape)


def _parse_shape(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",")) if text else ()


def _layer_spec(layer) -> str:
    if isinstance(layer, Dense):
        return f"dense:{_shape_str(layer.weight.shape)}"
    if isinstance(layer, Conv2d):
        return f"conv2d:{_shape_str(layer.weight.shape)}"
    if isinstance(layer, Softplus):
        return f"softplus:{layer.beta!r}"
    return layer.kind


def _layer_from_spec(spec: str, payload_floats: np.ndarray, offset: int):
    kind, _, arg = spec.partition(":")
    if kind == "dense" or kind == "conv2d":
        wshape = _parse_shape(arg)
        wsize = int(np.prod(wshape))
        bsize = wshape[0]
        w = payload_floats[offset : offset + wsize].reshape(wshape)
        b = payload_floats[offset + wsize : offset + wsize + bsize]
        cls = Dense if kind == "dense" else Conv2d
        return cls(w.copy(), b.copy()), offset + wsize + bsize
    if kind == "softplus":
        return Softplus(float(arg)), offset
    simple = {"relu": Relu, "maxpool2x2": MaxPool2x2, "flatten": Flatten, "softmax": Softmax}
    if kind in simple:
        return simple[kind](), offset
    raise DataFormatError(f"unknown layer spec {spec!r}")


def save_model(model: Model, path) -> None:
    """Text header (layer kinds and shapes, softplus beta, class count,
    format version) followed by all weight arrays as raw little-endian
    float64 in declaration order."""
    chunks = []
    for layer in model.layers:
        for arr in layer.param_arrays():
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    meta = {
        "class_count": str(model.class_count),
        "input_shape": _shape_str(model.input_shape),
        "layers": "|".join(_layer_spec(l) for l in model.layers),
    }
    _write_container(path, "model", meta, payload)


def load_model(path) -> Model:
    meta, payload = _read_container(path, "model")
    floats = np.frombuffer(payload, dtype="<f8")
    layers = []
    offset = 0
    specs = meta["layers"].split("|") if meta["layers"] else []
    for spec in specs:
        layer, offset = _layer_from_spec(spec, floats, offset)
        layers.append(layer)
    if offset != floats.size:
        raise TruncatedPayloadError(f"{path}: {floats.size} floats, layer specs take {offset}")
    return Model(layers, int(meta["class_count"]), _parse_shape(meta["input_shape"]))


def save_saliency(mask, path, method: str = "", config_digest: str = "") -> None:
    mask = np.asarray(mask, dtype=np.float64)
    meta = {
        "shape": _shape_str(mask.shape),
        "method": method or "unknown",
        "config_digest": config_digest or "-",
    }
    _write_container(path, "saliency", meta, np.ascontiguousarray(mask, dtype="<f8").tobytes())


def load_saliency(path) -> tuple[np.ndarray, dict[str, str]]:
    meta, payload = _read_container(path, "saliency")
    shape = _parse_shape(meta["shape"])
    mask = np.frombuffer(payload, dtype="<f8")
    if mask.size != int(np.prod(shape)):
        raise TruncatedPayloadError(f"{path}: payload does not match shape {shape}")
    return mask.reshape(shape).copy(), meta


def write_pgm(mask, path) -> None:
    """8-bit grayscale preview of a 2-D map in [0, 1]: binary PGM with
    values scaled by 255 and rounded half-up."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"PGM preview needs a 2-D map, got shape {mask.shape}")
    grey = np.floor(np.clip(mask, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode())
        fh.write(grey.tobytes())


def save_adv_set(path, adversaries, manifest: dict[str, str]) -> None:
    """Adversarial example set: manifest entries (source dataset ids,
    attack config, seed) in the header, per-sample float64 payloads."""
    adversaries = np.asarray(adversaries, dtype=np.float64)
    meta = {"count": str(adversaries.shape[0]), "shape": _shape_str(adversaries.shape[1:])}
    for key, value in manifest.items():
        meta[f"manifest.{key}"] = str(value)
    _write_container(path, "adv-set", meta, np.ascontiguousarray(adversaries, dtype="<f8").tobytes())


def load_adv_set(path) -> tuple[np.ndarray, dict[str, str]]:
    meta, payload = _read_container(path, "adv-set")
    count = int(meta["count"])
    shape = _parse_shape(meta["shape"])
    arr = np.frombuffer(payload, dtype="<f8")
    if arr.size != count * int(np.prod(shape)):
        raise TruncatedPayloadError(f"{path}: payload does not match {count} x {shape}")
    manifest = {k[len("manifest."):]: v for k, v in meta.items() if k.startswith("manifest.")}
    return arr.reshape((count,) + shape).copy(), manifest


def save_dataset(dataset: LabeledDataset, path) -> None:
    images = np.ascontiguousarray(dataset.images, dtype="<f8").tobytes()
    labels = np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes()
    meta = {
        "count": str(len(dataset)),
        "shape": _shape_str(dataset.images.shape[1:]),
        "value_range": f"{dataset.value_range[0]!r},{dataset.value_range[1]!r}",
    }
    for key, value in dataset.provenance.items():
        meta[f"provenance.{key}"] = str(value)
    _write_container(path, "dataset", meta, images + labels)


def load_dataset(path) -> LabeledDataset:
    meta, payload = _read_container(path, "dataset")
    count = int(meta["count"])
    shape = _parse_shape(meta["shape"])
    img_bytes = count * int(np.prod(shape)) * 8
    if len(payload) != img_bytes + count * 8:
        raise TruncatedPayloadError(f"{path}: payload does not match {count} samples of {shape}")
    images = np.frombuffer(payload[:img_bytes], dtype="<f8").reshape((count,) + shape)
    labels = np.frombuffer(payload[img_bytes:], dtype="<i8")
    lo, hi = meta["value_range"].split(",")
    return LabeledDataset(
        images=images.copy(),
        labels=labels.copy(),
        value_range=(float(lo), float(hi)),
        provenance={k[len("provenance."):]: v for k, v in meta.items() if k.startswith("provenance.")},
    )
