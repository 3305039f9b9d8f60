"""DWFC checkpoint file format.

Layout: magic `DWFC`, format version (u32 LE), length-prefixed UTF-8
architecture descriptor (key-value text block), the flat parameter vector
as little-endian float32, a BN sidecar (per BN layer in forward order:
running mean and running var as little-endian float64, count as u64), and
a metadata block (seed as i64, metric as float64).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .nn_core import ArchitectureSpec, AttentionSpec, WeightCheckpoint, flatten, unflatten

CKPT_MAGIC = b"DWFC"
CKPT_VERSION = 1


def _arch_block(arch: ArchitectureSpec) -> str:
    lines = [
        "layer_dims=" + ",".join(str(d) for d in arch.layer_dims),
        f"activation={arch.activation}",
        "bn_layers=" + ",".join("1" if b else "0" for b in arch.bn_layers),
    ]
    if arch.attention is not None:
        at = arch.attention
        lines.append(f"attention={at.embed_dim},{at.num_heads},{at.head_dim}")
    return "\n".join(lines) + "\n"


def _parse_arch_block(text: str) -> ArchitectureSpec:
    kv = {}
    for line in text.strip().splitlines():
        key, _, val = line.partition("=")
        kv[key] = val
    try:
        dims = tuple(int(v) for v in kv["layer_dims"].split(","))
        bn = tuple(v == "1" for v in kv["bn_layers"].split(",")) if kv.get("bn_layers") else None
        attention = None
        if "attention" in kv:
            e, h, hd = (int(v) for v in kv["attention"].split(","))
            attention = AttentionSpec(e, h, hd)
        return ArchitectureSpec(dims, kv["activation"], bn, attention)
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed architecture descriptor: {exc}") from exc


def save_checkpoint(ckpt: WeightCheckpoint, path) -> None:
    ckpt.validate()
    arch_blob = _arch_block(ckpt.arch).encode("utf-8")
    vec = flatten(ckpt)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(arch_blob)))
        f.write(arch_blob)
        f.write(vec.astype("<f4").tobytes())
        for l in sorted(ckpt.bn):
            st = ckpt.bn[l]
            f.write(st.running_mean.astype("<f8").tobytes())
            f.write(st.running_var.astype("<f8").tobytes())
            f.write(struct.pack("<Q", st.count))
        f.write(struct.pack("<q", ckpt.seed))
        f.write(struct.pack("<d", ckpt.metric))


def _read_exact(f, count, path, what):
    data = f.read(count)
    if len(data) != count:
        raise DataError(f"{path}: truncated while reading {what}")
    return data


def load_checkpoint(path) -> WeightCheckpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4, path, "magic") != CKPT_MAGIC:
            raise DataError(f"{path}: not a DWFC file")
        version, = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != CKPT_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        blob_len, = struct.unpack("<I", _read_exact(f, 4, path, "descriptor length"))
        arch = _parse_arch_block(_read_exact(f, blob_len, path, "descriptor").decode("utf-8"))
        count = arch.param_count()
        vec = np.frombuffer(_read_exact(f, 4 * count, path, "flat vector"), dtype="<f4")
        sidecar = {}
        for l in range(arch.num_hidden):
            if arch.has_bn(l):
                d = arch.layer_dims[l + 1]
                mean = np.frombuffer(_read_exact(f, 8 * d, path, f"bn{l} mean"), dtype="<f8")
                var = np.frombuffer(_read_exact(f, 8 * d, path, f"bn{l} var"), dtype="<f8")
                cnt, = struct.unpack("<Q", _read_exact(f, 8, path, f"bn{l} count"))
                sidecar[l] = (mean, var, cnt)
        seed, = struct.unpack("<q", _read_exact(f, 8, path, "seed"))
        metric, = struct.unpack("<d", _read_exact(f, 8, path, "metric"))
    ckpt = unflatten(vec, arch, sidecar)
    ckpt.seed = seed
    ckpt.metric = metric
    return ckpt
