# checkpoint.py
"""
Checkpoint container:

    8 bytes   little-endian header length H
    H bytes   UTF-8 JSON header: format_version, encoder config, parameter
              index [{name, shape, offset}], content_hash (SHA-256 of the
              payload), heads, provenance
    payload   little-endian float32 arrays in index order

Encoder parameters and batchnorm running statistics are stored; auxiliary
pre-training modules (context encoder, masking heads) are not.
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from data_io.formats import atomic_write
from gnn import Encoder, EncoderConfig, LinearHead
from utils.errors import DataError, HashMismatchError, ShapeMismatchError, VersionMismatchError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


@dataclass
class Checkpoint:
    header: dict
    arrays: dict

    @property
    def config(self) -> EncoderConfig:
        return EncoderConfig(**self.header["config"])

    @property
    def content_hash(self) -> str:
        return self.header["content_hash"]

    def head_arrays(self, prefix: str) -> dict:
        return {k: v for k, v in self.arrays.items() if k.startswith(prefix + ".")}


def save_checkpoint(path: str, encoder: Encoder, heads: Optional[dict] = None,
                    provenance: Optional[dict] = None) -> str:
    """Write encoder (+ optional {name: LinearHead}) to `path`; returns the content hash."""
    arrays = dict(encoder.state_arrays())
    head_index = {}
    for name, head in (heads or {}).items():
        head_index[name] = {"in_dim": head.in_dim, "out_dim": head.out_dim,
                            "params": list(head.store.params)}
        arrays.update({k: t.data for k, t in head.store.items()})

    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    content_hash = hashlib.sha256(payload).hexdigest()
    header = {
        "format_version": FORMAT_VERSION,
        "config": encoder.config.model_dump(),
        "domain": encoder.config.domain,
        "prefix": encoder.prefix,
        "params": index,
        "num_parameters": encoder.num_parameters(),
        "content_hash": content_hash,
        "heads": head_index,
        "provenance": provenance or {},
    }
    head_bytes = json.dumps(header, sort_keys=True).encode()
    atomic_write(path, _LEN.pack(len(head_bytes)) + head_bytes + payload)
    logger.info("[CHECKPOINT] saved %d arrays (%s) to %s", len(index), content_hash[:12], path)
    return content_hash


def read_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if len(raw) < _LEN.size:
        raise HashMismatchError(f"{path}: truncated before the header length")
    (size,) = _LEN.unpack_from(raw)
    if _LEN.size + size > len(raw):
        raise HashMismatchError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_LEN.size:_LEN.size + size])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise HashMismatchError(f"{path}: corrupt header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {header.get('format_version')} != {FORMAT_VERSION}")

    payload = raw[_LEN.size + size:]
    if hashlib.sha256(payload).hexdigest() != header.get("content_hash"):
        raise HashMismatchError(f"{path}: payload does not match its content hash")

    arrays = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    return Checkpoint(header, arrays)


def load_checkpoint(path: str, encoder: Optional[Encoder] = None, rng: Optional[np.random.Generator] = None):
    """Restore into `encoder` (shapes must match) or build one from the stored
    config. Returns (encoder, checkpoint)."""
    ckpt = read_checkpoint(path)
    if encoder is None:
        encoder = Encoder(ckpt.config, rng or np.random.default_rng(0), prefix=ckpt.header.get("prefix", "encoder"))
    stored_prefix = ckpt.header.get("prefix", "encoder")
    encoder_arrays = {k: v for k, v in ckpt.arrays.items() if k.startswith(stored_prefix + ".")}
    encoder.load_state(encoder_arrays, prefix=stored_prefix)
    logger.info("[CHECKPOINT] loaded %s (%s)", path, ckpt.content_hash[:12])
    return encoder, ckpt


def load_head(ckpt: Checkpoint, name: str, rng: Optional[np.random.Generator] = None) -> LinearHead:
    entry = ckpt.header["heads"].get(name)
    if entry is None:
        raise DataError(f"checkpoint has no head {name!r}")
    prefix = entry["params"][0].rsplit(".", 1)[0]
    head = LinearHead(entry["in_dim"], entry["out_dim"], rng or np.random.default_rng(0), prefix=prefix)
    for key in entry["params"]:
        if ckpt.arrays[key].shape != head.store[key].shape:
            raise ShapeMismatchError(f"{key}: stored {ckpt.arrays[key].shape} != {head.store[key].shape}")
        head.store[key].data[...] = ckpt.arrays[key]
    return head
