"""Checkpoint file: b"CKPT", u32 header length, JSON header, float32 buffers.

The header (sorted keys, compact separators) lists every network with its
architecture config and the name and shape of each tensor, in file order.
Tensors follow as raw little-endian float32 data.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import nn
from .models import (DiscriminatorConfig, FeatureNet, GeneratorConfig, build_discriminator,
                     build_generator)

MAGIC = b"CKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def net_spec(net: nn.Module) -> dict:
    if isinstance(net, FeatureNet):
        return {"type": "feature", "config": {"seed": net.seed}}
    cfg = net.cfg
    if isinstance(cfg, GeneratorConfig):
        return {"type": "generator", "config": cfg.to_dict()}
    if isinstance(cfg, DiscriminatorConfig):
        return {"type": "discriminator", "config": cfg.to_dict()}
    raise TypeError(f"cannot checkpoint {type(net).__name__}")


def build_from_spec(spec: dict) -> nn.Module:
    kind, cfg = spec["type"], spec["config"]
    if kind == "generator":
        return build_generator(GeneratorConfig.from_dict(cfg))
    if kind == "discriminator":
        return build_discriminator(DiscriminatorConfig.from_dict(cfg))
    if kind == "feature":
        return FeatureNet(cfg["seed"])
    raise ValueError(f"unknown network type {kind!r}")


@dataclass
class Checkpoint:
    nets: dict[str, nn.Module]
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> nn.Module:
        return self.nets[key]

    def header_and_arrays(self) -> tuple[dict, list[np.ndarray]]:
        nets, arrays = {}, []
        for key in sorted(self.nets):
            net = self.nets[key]
            tensors = []
            for name, arr in net.state_arrays().items():
                tensors.append({"name": name, "shape": list(arr.shape)})
                arrays.append(np.ascontiguousarray(arr, dtype="<f4"))
            nets[key] = {**net_spec(net), "tensors": tensors}
        header = {"format": FORMAT_VERSION, "config": self.config, "meta": self.meta,
                  "nets": nets, "optimizer_state": False}
        return header, arrays

    def to_bytes(self) -> bytes:
        header, arrays = self.header_and_arrays()
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(a.tobytes() for a in arrays)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:4] != MAGIC:
            raise CheckpointError("not a CKPT file")
        if len(raw) < 8:
            raise CheckpointError("checkpoint truncated")
        (n,) = struct.unpack_from("<I", raw, 4)
        try:
            header = json.loads(raw[8:8 + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError("corrupt checkpoint header") from exc
        if header.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {header.get('format')}")
        off = 8 + n
        nets = {}
        for key in sorted(header["nets"]):
            spec = header["nets"][key]
            net = build_from_spec(spec)
            arrays = {}
            for t in spec["tensors"]:
                count = int(np.prod(t["shape"])) if t["shape"] else 1
                end = off + 4 * count
                if end > len(raw):
                    raise CheckpointError("checkpoint truncated")
                arrays[t["name"]] = np.frombuffer(raw[off:end], "<f4").reshape(t["shape"])
                off = end
            net.load_state_arrays(arrays)
            nets[key] = net
        if off != len(raw):
            raise CheckpointError("trailing bytes after checkpoint tensors")
        return cls(nets, header.get("config", {}), header.get("meta", {}))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
