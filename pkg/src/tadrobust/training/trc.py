"""Action-centric sampling and the temporal-robust consistency (TRC) loss.

The numpy functions are the reference contract (loss plus closed-form
gradients); :func:`consistency_loss_torch` is the autograd twin used by the
trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..data import ActionInstance, Prediction
from ..metrics import tiou

SAMPLINGS = ("action_center", "full_action", "full_video")
LOSSES = ("trc", "plain_kl", "mse")


class EmptySampleError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class TRCConfig:
    K: int = 16
    sampling: str = "action_center"
    loss: str = "trc"
    epsilon: float = 1e-6
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    @classmethod
    def parse(cls, text: str) -> "TRCConfig":
        """Parse ``"K=16,loss=trc,sampling=center"`` style option strings."""
        kwargs: dict = {}
        aliases = {"center": "action_center", "action": "full_action", "video": "full_video", "kl": "plain_kl"}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, _, val = item.partition("=")
            key = key.strip()
            val = val.strip()
            if key == "K":
                kwargs["K"] = int(val)
            elif key in ("epsilon", "weight"):
                kwargs[key] = float(val)
            elif key in ("sampling", "loss"):
                kwargs[key] = aliases.get(val, val)
            else:
                raise ValueError(f"unknown TRC option {key!r}")
        return cls(**kwargs)


def action_centric_sample(preds: Sequence[Prediction], gt: ActionInstance, K: int) -> tuple[list[Prediction], bool]:
    """The K predictions whose centres are nearest the GT centre.

    Returns ``(selected, complete)``; ``complete`` is False when fewer than
    ``K`` predictions were available.
    """
    if not preds:
        raise EmptySampleError("action-centric sampling needs at least one prediction")
    t_star = gt.center
    order = sorted(range(len(preds)), key=lambda j: (abs(preds[j].center - t_star), preds[j].start_sec, j))
    selected = [preds[j] for j in order[:K]]
    return selected, len(preds) >= K


def tiou_distribution(selected: Sequence[Prediction], gt: ActionInstance, epsilon: float = 1e-6) -> np.ndarray:
    raw = np.array([tiou(p.segment, gt.segment) for p in selected], dtype=np.float64) + epsilon
    return raw / raw.sum()


def _check(p_c: np.ndarray, p_d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p_c = np.asarray(p_c, dtype=np.float64)
    p_d = np.asarray(p_d, dtype=np.float64)
    if p_c.shape != p_d.shape or p_c.ndim != 1:
        raise ContractError(f"distributions must be equal-length vectors, got {p_c.shape} and {p_d.shape}")
    if np.any(p_c <= 0) or np.any(p_d <= 0):
        raise ContractError("distributions must be strictly positive (epsilon-smoothed)")
    return p_c, p_d


def kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def trc_loss(p_c, p_d, target=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and gradients of 1/2 (KL[p_t||p_c] + KL[p_t||p_d]), p_t = mean of the two.

    ``p_t`` is a constant target: the gradients do not flow through it. Pass
    ``target`` to evaluate at a frozen ``p_t`` (used by finite-difference
    checks).
    """
    p_c, p_d = _check(p_c, p_d)
    p_t = 0.5 * (p_c + p_d) if target is None else np.asarray(target, dtype=np.float64)
    loss = 0.5 * (kl(p_t, p_c) + kl(p_t, p_d))
    return loss, -p_t / (2.0 * p_c), -p_t / (2.0 * p_d)


def plain_kl_loss(p_c, p_d) -> tuple[float, np.ndarray, np.ndarray]:
    """KL[p_d || p_c] with gradients w.r.t. both arguments."""
    p_c, p_d = _check(p_c, p_d)
    loss = kl(p_d, p_c)
    return loss, -p_d / p_c, np.log(p_d / p_c) + 1.0


def mse_loss(p_c, p_d) -> tuple[float, np.ndarray, np.ndarray]:
    p_c, p_d = _check(p_c, p_d)
    diff = p_c - p_d
    k = diff.size
    return float(np.mean(diff**2)), 2.0 * diff / k, -2.0 * diff / k


LOSS_FUNCTIONS = {"trc": trc_loss, "plain_kl": plain_kl_loss, "mse": mse_loss}


def project_to_simplex_tangent(grad: np.ndarray) -> np.ndarray:
    return grad - grad.mean()


# ---------------------------------------------------------------- torch twin


def consistency_loss_torch(p_c, p_d, kind: str = "trc"):
    import torch

    if kind == "trc":
        p_t = (0.5 * (p_c + p_d)).detach()
        return 0.5 * (torch.sum(p_t * (torch.log(p_t) - torch.log(p_c))) + torch.sum(p_t * (torch.log(p_t) - torch.log(p_d))))
    if kind == "plain_kl":
        return torch.sum(p_d * (torch.log(p_d) - torch.log(p_c)))
    if kind == "mse":
        return torch.mean((p_c - p_d) ** 2)
    raise ValueError(f"unknown consistency loss {kind!r}")
