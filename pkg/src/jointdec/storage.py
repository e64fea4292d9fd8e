"""Binary containers: network checkpoints, cached datasets, sample-weight tables.

Checkpoint / container layout (little-endian)::

    b"JDEC" | u16 version | u32 header length | UTF-8 JSON header | float64 payloads

The header's ``tensors`` list gives name, shape and byte offset (relative
to the first payload byte) for every tensor, in payload order.

Weight table layout::

    b"JDWT" | u16 version | u16 reserved | u64 count | count x float64
"""

from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError

CONTAINER_MAGIC = b"JDEC"
CONTAINER_VERSION = 1
WEIGHTS_MAGIC = b"JDWT"
WEIGHTS_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_WT_HEADER = struct.Struct("<4sHHQ")


def save_container(path, header: dict, tensors: "OrderedDict[str, np.ndarray]") -> None:
    manifest = []
    offset = 0
    payload = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(arr.tobytes())
        offset += arr.nbytes
    head = dict(header)
    head["tensors"] = manifest
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def load_container(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: too short for a container header", 0)
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}", 4)
    start = _PREFIX.size
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})", start) from None
    base = start + hlen
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        nbytes = 8 * math.prod(shape)
        lo = base + entry["offset"]
        if lo + nbytes > len(raw):
            raise FormatError(f"{path}: tensor {entry['name']} runs past end of file", lo)
        tensors[entry["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=math.prod(shape), offset=lo)
            .astype(np.float64)
            .reshape(shape)
        )
    return header, tensors


def save_weight_table(path, weights: np.ndarray) -> None:
    w = np.ascontiguousarray(weights, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_WT_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, 0, len(w)))
        fh.write(w.tobytes())


def load_weight_table(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    if len(raw) < _WT_HEADER.size:
        raise FormatError(f"{path}: too short for a weight-table header", 0)
    magic, version, _, count = _WT_HEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC or version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: not a version-{WEIGHTS_VERSION} weight table", 0)
    if len(raw) != _WT_HEADER.size + 8 * count:
        raise FormatError(f"{path}: expected {count} weights", _WT_HEADER.size)
    return np.frombuffer(raw, dtype="<f8", offset=_WT_HEADER.size).astype(np.float64)


# ---------------------------------------------------------------------------
# typed wrappers


def save_checkpoint(path, net, hw, dataset: dict | None = None, extra: dict | None = None) -> None:
    header = {
        "kind": "network",
        "arch": net.spec.to_dict(),
        "heads": {
            "m": net.m,
            "head_order": net.head_order,
            "alpha1": hw.alpha1,
            "k": hw.k,
            "mu": hw.mu,
        },
        "dataset": dataset or {},
        "extra": extra or {},
    }
    save_container(path, header, net.state_arrays())


def load_checkpoint(path, mu: float | None = None):
    """Return (network, head weights, header). ``mu`` overrides the stored value."""
    from .joint import head_weights
    from .nn import ArchSpec, MultiHeadNetwork

    header, arrays = load_container(path)
    if header.get("kind") != "network":
        raise FormatError(f"{path}: not a network checkpoint")
    try:
        spec = ArchSpec.from_dict(header["arch"])
        heads = header["heads"]
        net = MultiHeadNetwork(spec, heads["m"], heads["head_order"])
        net.load_state_arrays(arrays)
        hw = head_weights(heads["alpha1"], heads["k"], heads["m"], heads["mu"] if mu is None else mu)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: inconsistent checkpoint ({exc})") from None
    return net, hw, header


def save_dataset(path, dataset) -> None:
    header = {"kind": "dataset", "split": dataset.split, "num_classes": dataset.num_classes}
    save_container(
        path,
        header,
        OrderedDict([("images", dataset.images), ("labels", dataset.labels.astype(np.float64))]),
    )


def load_dataset(path):
    from .data import LabeledImageSet

    header, arrays = load_container(path)
    if header.get("kind") != "dataset":
        raise FormatError(f"{path}: not a dataset container")
    return LabeledImageSet(
        arrays["images"], arrays["labels"].astype(np.int64), header["split"], header["num_classes"]
    )
