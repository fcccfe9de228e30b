"""Binary checkpoint format.

Layout (all integers little-endian):

    magic b"MTSE" | u16 version | u32 header length | header JSON (utf-8)
    then one record per array:
    u16 name length | name utf-8 | u8 rank | rank * u32 dims | float32 data

The header carries the network config, the epoch, and the optimizer step.
Records appear in parameter declaration order (see paramtree), optionally
followed by optimizer moments as ``opt.m.<name>`` / ``opt.v.<name>``.
The loader rebuilds the parameter tree from the config and validates every
record name and shape against it.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import value_of
from .config import NetworkConfig, _from_dict
from .errors import DataError
from .model import NetParams, init_params
from .paramtree import map_leaves, named_leaves

MAGIC = b"MTSE"
VERSION = 1


@dataclass
class Checkpoint:
    network: NetworkConfig
    params: NetParams
    epoch: int = 0
    opt: dict | None = None      # {"step": int, "m": {name: arr}, "v": {name: arr}}


def _network_dict(cfg):
    return {f.name: (list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v)
            for f in dataclasses.fields(cfg)}


def _write_record(f, name, arr):
    raw = name.encode("utf-8")
    a = np.ascontiguousarray(value_of(arr), dtype="<f4")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", a.ndim))
    for d in a.shape:
        f.write(struct.pack("<I", d))
    f.write(a.tobytes())


def save_checkpoint(path, cfg: NetworkConfig, params: NetParams, *,
                    epoch=0, opt=None):
    header = {
        "network": _network_dict(cfg),
        "epoch": int(epoch),
        "opt_step": int(opt["step"]) if opt else 0,
        "has_opt": bool(opt),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        leaves = list(named_leaves(params))
        for name, arr in leaves:
            _write_record(f, name, arr)
        if opt:
            for kind in ("m", "v"):
                for name, _ in leaves:
                    _write_record(f, f"opt.{kind}.{name}", opt[kind][name])
    return path


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return data


def _read_record(f):
    head = f.read(2)
    if not head:
        return None
    if len(head) != 2:
        raise DataError("truncated checkpoint at record header")
    (nlen,) = struct.unpack("<H", head)
    name = _read_exact(f, nlen, "record name").decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(f, 1, f"{name} rank"))
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"{name} dims"))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = _read_exact(f, 4 * count, f"{name} data")
    arr = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(dims)
    return name, arr


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataError(f"corrupt checkpoint header: {e}") from e
        cfg = _from_dict(NetworkConfig, header.get("network", {}), "checkpoint network")
        stored = {}
        order = []
        while True:
            rec = _read_record(f)
            if rec is None:
                break
            stored[rec[0]] = rec[1]
            order.append(rec[0])

    template = init_params(cfg, np.random.default_rng(0))
    expected = [(n, value_of(a).shape) for n, a in named_leaves(template)]
    for name, shape in expected:
        if name not in stored:
            raise DataError(f"checkpoint missing parameter {name}")
        if stored[name].shape != shape:
            raise DataError(
                f"checkpoint parameter {name} has shape {stored[name].shape}, "
                f"config implies {shape}")
    params = map_leaves(template, lambda name, _: stored[name])

    opt = None
    if header.get("has_opt"):
        opt = {"step": int(header.get("opt_step", 0)), "m": {}, "v": {}}
        for kind in ("m", "v"):
            for name, shape in expected:
                key = f"opt.{kind}.{name}"
                if key not in stored or stored[key].shape != shape:
                    raise DataError(f"checkpoint optimizer record {key} missing or misshaped")
                opt[kind][name] = stored[key]
    known = {n for n, _ in expected}
    if opt:
        known |= {f"opt.{k}.{n}" for k in ("m", "v") for n, _ in expected}
    extras = [n for n in order if n not in known]
    if extras:
        raise DataError(f"checkpoint holds unexpected records: {extras[:3]}")
    return Checkpoint(network=cfg, params=params, epoch=int(header.get("epoch", 0)), opt=opt)
