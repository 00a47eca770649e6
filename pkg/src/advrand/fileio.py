"""Binary dataset and weight files.

Both formats start with an 8-byte magic, then a little-endian ``u32``
header length and a UTF-8 JSON header, then a little-endian body::

    RasterFile  "ADVRAST1" | u32 n | header | pixels (f32le or f64le) | labels (u32le)
    WeightFile  "ADVWGT01" | u32 n | manifest | f64le tensors in manifest order

JSON is written with sorted keys and no whitespace so that saving the
same object twice yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .classifier import PARAM_NAMES, ModelArch, ModelWeights
from .data import LabeledDataset
from .errors import FormatError

RASTER_MAGIC = b"ADVRAST1"
WEIGHT_MAGIC = b"ADVWGT01"
RASTER_DTYPES = {"f32le": "<f4", "f64le": "<f8"}


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _pack(magic: bytes, header: dict, body: bytes) -> bytes:
    head = _dumps(header)
    return magic + struct.pack("<I", len(head)) + head + body


def _unpack(blob: bytes, magic: bytes, what: str) -> tuple[dict, memoryview]:
    if len(blob) < 12:
        raise FormatError(f"{what}: file too short ({len(blob)} bytes, need at least 12)")
    if blob[:8] != magic:
        raise FormatError(f"{what}: bad magic {blob[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + n:
        raise FormatError(f"{what}: header truncated (expected {n} bytes, got {len(blob) - 12})")
    try:
        header = json.loads(blob[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{what}: unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{what}: header must be a JSON object")
    return header, memoryview(blob)[12 + n:]


def _read(path) -> bytes:
    return Path(path).read_bytes()


# ---------------------------------------------------------------- rasters


def raster_bytes(dataset: LabeledDataset, dtype: str = "f32le", labels: bool = True,
                 meta: dict | None = None) -> bytes:
    if dtype not in RASTER_DTYPES:
        raise FormatError(f"unsupported raster dtype {dtype!r}; use one of {sorted(RASTER_DTYPES)}")
    n, h, w, c = dataset.images.shape
    header = {
        "count": n, "height": h, "width": w, "channels": c, "dtype": dtype,
        "labels_present": bool(labels), "num_classes": dataset.num_classes, "split": dataset.split,
    }
    if meta:
        header["meta"] = meta
    body = dataset.images.astype(RASTER_DTYPES[dtype]).tobytes()
    if labels:
        body += dataset.labels.astype("<u4").tobytes()
    return _pack(RASTER_MAGIC, header, body)


def save_raster(path, dataset: LabeledDataset, dtype: str = "f32le", labels: bool = True,
                meta: dict | None = None) -> None:
    Path(path).write_bytes(raster_bytes(dataset, dtype, labels, meta))


def parse_raster(blob: bytes, what: str = "raster") -> tuple[LabeledDataset, dict]:
    header, body = _unpack(blob, RASTER_MAGIC, what)
    try:
        n, h, w, c = (int(header[k]) for k in ("count", "height", "width", "channels"))
        dtype = header["dtype"]
        has_labels = bool(header["labels_present"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{what}: incomplete header: {exc}") from exc
    if dtype not in RASTER_DTYPES:
        raise FormatError(f"{what}: unsupported dtype {dtype!r}")
    if min(n, h, w, c) < 0:
        raise FormatError(f"{what}: negative dimension in header")
    width = np.dtype(RASTER_DTYPES[dtype]).itemsize
    n_pix = n * h * w * c
    expected = n_pix * width + (n * 4 if has_labels else 0)
    if len(body) != expected:
        raise FormatError(f"{what}: body has {len(body)} bytes, header implies {expected}")
    images = np.frombuffer(body, dtype=RASTER_DTYPES[dtype], count=n_pix).astype(np.float64)
    images = images.reshape(n, h, w, c)
    if has_labels:
        labels = np.frombuffer(body, dtype="<u4", count=n, offset=n_pix * width).astype(np.int64)
    else:
        labels = np.zeros(n, dtype=np.int64)
    if n_pix and (images.min() < 0.0 or images.max() > 1.0):
        raise FormatError(f"{what}: pixel values outside [0, 1]")
    num_classes = int(header.get("num_classes", max(int(labels.max()) + 1 if n else 1, 1)))
    if n and labels.max() >= num_classes:
        raise FormatError(f"{what}: label {int(labels.max())} >= num_classes {num_classes}")
    ds = LabeledDataset(images, labels, header.get("split", "test"), num_classes,
                        dict(header.get("meta", {})))
    return ds, header


def load_raster(path) -> LabeledDataset:
    return parse_raster(_read(path), str(path))[0]


# ---------------------------------------------------------------- weights


def weight_bytes(weights: ModelWeights) -> bytes:
    arch = weights.arch
    shapes = arch.param_shapes()
    tensors = []
    body = bytearray()
    for name in PARAM_NAMES:
        a = np.asarray(weights.params[name], dtype=np.float64)
        if a.shape != shapes[name]:
            raise FormatError(f"tensor {name} has shape {a.shape}, arch expects {shapes[name]}")
        tensors.append({"name": name, "shape": list(a.shape)})
        body += a.astype("<f8").tobytes()
    manifest = {
        "arch": arch.to_dict(), "fingerprint": arch.fingerprint(), "tensors": tensors,
        "seed": int(weights.seed), "adversarially_trained": bool(weights.adversarially_trained),
        "meta": weights.meta,
    }
    return _pack(WEIGHT_MAGIC, manifest, bytes(body))


def save_weights(path, weights: ModelWeights) -> None:
    Path(path).write_bytes(weight_bytes(weights))


def parse_weights(blob: bytes, what: str = "weights") -> ModelWeights:
    manifest, body = _unpack(blob, WEIGHT_MAGIC, what)
    try:
        arch = ModelArch(**manifest["arch"])
        entries = manifest["tensors"]
        seed = int(manifest["seed"])
        adv = bool(manifest["adversarially_trained"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{what}: incomplete manifest: {exc}") from exc
    if manifest.get("fingerprint") != arch.fingerprint():
        raise FormatError(f"{what}: fingerprint {manifest.get('fingerprint')!r} does not match arch")
    expected = sum(int(np.prod(e["shape"])) for e in entries) * 8
    if len(body) != expected:
        raise FormatError(f"{what}: payload has {len(body)} bytes, manifest implies {expected}")
    shapes = arch.param_shapes()
    params, offset = {}, 0
    for e in entries:
        shape = tuple(e["shape"])
        if e["name"] not in shapes or shapes[e["name"]] != shape:
            raise FormatError(f"{what}: unexpected tensor {e['name']} {shape}")
        size = int(np.prod(shape))
        params[e["name"]] = np.frombuffer(body, "<f8", size, offset).astype(np.float64).reshape(shape)
        offset += size * 8
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise FormatError(f"{what}: missing tensors {sorted(missing)}")
    return ModelWeights(arch, params, seed, adv, dict(manifest.get("meta", {})))


def load_weights(path) -> ModelWeights:
    return parse_weights(_read(path), str(path))


# ---------------------------------------------------------------- hashing


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dataset_hash(dataset: LabeledDataset) -> str:
    return sha256_hex(raster_bytes(dataset, "f64le"))


def weights_hash(weights: ModelWeights) -> str:
    return sha256_hex(weight_bytes(weights))


def config_hash(obj) -> str:
    return sha256_hex(_dumps(obj))
