"""A tiny anchor-free 1-D temporal convolutional detector and its binary format."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

MODEL_MAGIC = b"TADM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ToyModelConfig:
    in_dim: int = 16
    num_classes: int = 4
    layers: int = 5
    channels: int = 32
    kernel_size: int = 3
    offset_scale: float = 8.0
    nms_tiou: float = 0.5
    score_threshold: float = 0.2
    max_detections: int = 100
    seed: int = 0

    @property
    def outputs_per_step(self) -> int:
        return self.num_classes + 1 + 2


class ToyDetector(nn.Module):
    """Dilated conv stack; per timestep emits C+1 class logits (index 0 is
    background) and two non-negative distances to the segment start and end."""

    def __init__(self, cfg: ToyModelConfig):
        super().__init__()
        self.cfg = cfg
        k = cfg.kernel_size
        convs = []
        in_ch = cfg.in_dim
        for i in range(cfg.layers):
            d = 2**i
            convs.append(nn.Conv1d(in_ch, cfg.channels, k, padding=d * (k - 1) // 2, dilation=d))
            in_ch = cfg.channels
        self.convs = nn.ModuleList(convs)
        self.cls_head = nn.Conv1d(cfg.channels, cfg.num_classes + 1, 3, padding=1)
        self.reg_head = nn.Conv1d(cfg.channels, 2, 3, padding=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``x``: (B, T, D). Returns logits (B, T, C+1) and offsets (B, T, 2)."""
        h = x.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            out = F.relu(conv(h))
            h = out if i == 0 else h + out
        logits = self.cls_head(h).transpose(1, 2)
        offsets = F.softplus(self.reg_head(h)).transpose(1, 2) * self.cfg.offset_scale
        return logits, offsets


def build_model(cfg: ToyModelConfig) -> ToyDetector:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        return ToyDetector(cfg)


def save_model(model: ToyDetector, path: str | Path) -> None:
    """Versioned binary: header, config JSON, then named little-endian f32 tensors."""
    cfg_bytes = json.dumps(asdict(model.cfg), sort_keys=True).encode("utf-8")
    state = model.state_dict()
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(cfg_bytes)), cfg_bytes, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> ToyDetector:
    buf = Path(path).read_bytes()
    if buf[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a toy model file")
    version, cfg_len = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    pos = 12
    cfg = ToyModelConfig(**json.loads(buf[pos : pos + cfg_len].decode("utf-8")))
    pos += cfg_len
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    state = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nl].decode("utf-8")
        pos += nl
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        state[name] = torch.from_numpy(arr.astype(np.float32))
    model = ToyDetector(cfg)
    model.load_state_dict(state)
    return model
