"""Binary checkpoint files.

Layout (little endian)::

    b"PRAE"  u32 version  u32 header_len  header (UTF-8 JSON)
    for each tensor listed in header["tensors"]: u64 nbytes, raw bytes
    u32 CRC-32 of every preceding byte

The header carries the model spec, the optimizer hyper-parameters and step
counts, the RNG state, the epoch and any training record. Tensors are, in
order: parameters, BatchNorm buffers, then Adam first and second moments.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumError, FormatError
from .model import build_model, spec_from_dict
from .tensor import Adam, AdamState

MAGIC = b"PRAE"
VERSION = 1


@dataclass
class Checkpoint:
    model: object
    optimizer: Adam | None = None
    rng_state: dict | None = None
    epoch: int = 0
    record: dict = field(default_factory=dict)


def _tensor_entries(model, optimizer):
    entries = list(model.state_arrays().items())
    if optimizer is not None:
        for name, _, _, _ in model.named_params():
            st = optimizer.states.get(name)
            if st is not None and st.m is not None:
                entries.append((f"adam.m.{name}", st.m))
                entries.append((f"adam.v.{name}", st.v))
    return entries


def checkpoint_bytes(model, optimizer=None, rng_state=None, epoch=0, record=None):
    entries = _tensor_entries(model, optimizer)
    header = {
        "format_version": VERSION,
        "spec": model.spec_dict(),
        "seed": model.seed,
        "dtype": np.dtype(model.dtype).name,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "record": record or {},
        "optimizer": None,
        "tensors": [
            {"name": n, "dtype": a.dtype.newbyteorder("<").str, "shape": list(a.shape)}
            for n, a in entries
        ],
    }
    if optimizer is not None:
        header["optimizer"] = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "steps": {n: st.step for n, st in optimizer.states.items()},
        }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for _, arr in entries:
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, model, optimizer=None, rng_state=None, epoch=0, record=None):
    """Write atomically (temp file + rename) and return the file's CRC-32."""
    data = checkpoint_bytes(model, optimizer, rng_state, epoch, record)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return struct.unpack("<I", data[-4:])[0]


def parse_checkpoint(data):
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic or truncated)")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ChecksumError("checkpoint CRC-32 mismatch")
    version, hlen = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    off = 12
    try:
        header = json.loads(body[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("checkpoint header is not valid JSON") from exc
    off += hlen
    tensors = {}
    for entry in header["tensors"]:
        if off + 8 > len(body):
            raise FormatError("checkpoint truncated")
        (nbytes,) = struct.unpack_from("<Q", body, off)
        off += 8
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        if nbytes != dt.itemsize * int(np.prod(shape)) or off + nbytes > len(body):
            raise FormatError(f"bad blob length for {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(body, dtype=dt, count=int(np.prod(shape)),
                                               offset=off).reshape(shape)
        off += nbytes
    if off != len(body):
        raise FormatError("trailing bytes after checkpoint tensors")
    return header, tensors


def load_checkpoint(path):
    """Read a checkpoint; nothing is returned unless the whole file verifies."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, tensors = parse_checkpoint(data)
    enc, dec = spec_from_dict(header["spec"])
    model = build_model(enc, dec, seed=header["seed"], dtype=np.dtype(header["dtype"]).type)
    state = model.state_arrays()
    for name, arr in state.items():
        if name not in tensors:
            raise FormatError(f"checkpoint is missing tensor {name}")
        src = tensors[name]
        if src.shape != arr.shape:
            raise FormatError(f"shape mismatch for {name}")
        arr[...] = src
    optimizer = None
    opt = header.get("optimizer")
    if opt is not None:
        optimizer = Adam(lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"],
                         epsilon=opt["epsilon"])
        for name, step in opt["steps"].items():
            st = AdamState(optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.epsilon,
                           step=int(step))
            if f"adam.m.{name}" in tensors:
                st.m = tensors[f"adam.m.{name}"].astype(state[name].dtype)
                st.v = tensors[f"adam.v.{name}"].astype(state[name].dtype)
            optimizer.states[name] = st
    return Checkpoint(model, optimizer, header.get("rng_state"), int(header.get("epoch", 0)),
                      header.get("record") or {})


def load_model(path):
    return load_checkpoint(path).model


def file_crc(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return struct.unpack("<I", data[-4:])[0]
