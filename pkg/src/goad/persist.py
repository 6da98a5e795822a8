"""Binary model file. Layout is documented in docs/model_format.md.

    magic    8 bytes  b"GOADMDL\\x00"
    version  uint32 little-endian
    hlen     uint64 little-endian, length of the header
    header   UTF-8 JSON, sorted keys, compact separators
    payload  little-endian float64 arrays, row-major, in header order

Task matrices are not stored; they are regenerated from the bank spec.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import BankSpec, GoadModel, TrainConfig
from .data import Encoder, NormStats
from .numeric import DenseLayer, FeatureNet
from .tasks import TaskBank

MAGIC = b"GOADMDL\x00"
VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelBundle:
    """A trained model plus the input pipeline needed to score raw files."""

    model: GoadModel
    norm: Optional[NormStats] = None
    encoder: Optional[Encoder] = None
    dataset: str = "custom"

    def prepare(self, X) -> np.ndarray:
        return self.norm.apply(X) if self.norm is not None else np.asarray(X, dtype=np.float64)

    def score(self, X) -> np.ndarray:
        return self.model.score(self.prepare(X))


def _layer_meta(layer: DenseLayer) -> dict:
    return {"shape": list(layer.weight.shape), "activation": layer.activation, "slope": layer.slope}


def to_bytes(bundle: ModelBundle) -> bytes:
    m = bundle.model
    arrays: List[np.ndarray] = []
    for layer in m.net.layers:
        arrays += [layer.weight, layer.bias]
    if m.aux_head is not None:
        arrays += [m.aux_head.weight, m.aux_head.bias]
    arrays.append(m.centers)
    if bundle.norm is not None:
        arrays += [bundle.norm.shift, bundle.norm.scale]
    header = {
        "format": "goad-model",
        "config": m.config.to_dict(),
        "bank": m.bank.spec,
        "layers": [_layer_meta(l) for l in m.net.layers],
        "aux_head": _layer_meta(m.aux_head) if m.aux_head is not None else None,
        "centers_shape": list(m.centers.shape),
        "normalization": ({"mode": bundle.norm.mode, "length": int(bundle.norm.shift.size)}
                          if bundle.norm is not None else None),
        "schema": bundle.encoder.to_dict() if bundle.encoder is not None else None,
        "schema_fingerprint": bundle.encoder.fingerprint() if bundle.encoder is not None else None,
        "dataset": bundle.dataset,
        "payload_floats": int(sum(a.size for a in arrays)),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + payload


def from_bytes(blob: bytes) -> ModelBundle:
    if blob[:8] != MAGIC:
        raise ModelFormatError("not a GOAD model file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(blob[start:start + hlen].decode("utf-8"))
    payload = np.frombuffer(blob, dtype="<f8", offset=start + hlen)
    if payload.size != header["payload_floats"]:
        raise ModelFormatError(f"payload holds {payload.size} floats, header says {header['payload_floats']}")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = payload[pos:pos + n].astype(np.float64).reshape(shape)
        pos += n
        return out

    def layer(meta):
        out_dim, in_dim = meta["shape"]
        return DenseLayer(take((out_dim, in_dim)), take((out_dim,)), meta["activation"], meta["slope"])

    layers = [layer(meta) for meta in header["layers"]]
    head = layer(header["aux_head"]) if header["aux_head"] else None
    centers = take(tuple(header["centers_shape"]))
    norm = None
    if header["normalization"]:
        n = header["normalization"]["length"]
        norm = NormStats(header["normalization"]["mode"], take((n,)), take((n,)))
    bank = TaskBank.from_spec(header["bank"])
    model = GoadModel(bank, FeatureNet(layers), centers, TrainConfig(**header["config"]), head)
    encoder = Encoder.from_dict(header["schema"]) if header["schema"] else None
    if encoder is not None and encoder.fingerprint() != header["schema_fingerprint"]:
        raise ModelFormatError("schema fingerprint mismatch")
    return ModelBundle(model, norm, encoder, header.get("dataset", "custom"))


def save(path: str, bundle: ModelBundle) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(bundle))


def load(path: str) -> ModelBundle:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
