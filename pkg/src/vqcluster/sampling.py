"""Inference-time transforms: guidance, temperature, top-k/top-p, draws.

Pipeline order is fixed: cfg_combine -> apply_temperature -> top_k_filter
-> top_p_filter -> sample_categorical. The neutral settings (w=0, T=1, k=0,
p=1.0) are exact identities. All filters break ties toward the lower index
so results are identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_logits, check_prob_vector


@dataclass
class SamplerConfig:
    """Knobs for one sampling stream.

    ``top_k=0`` disables the top-k filter; ``top_p=1.0`` keeps the full
    nucleus. ``cfg_space`` selects what guidance mixes: raw logits
    ("logit", the default) or log-probabilities ("prob").
    """

    cfg_scale: float = 0.0
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    seed: int = 0
    cfg_space: str = "logit"

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ValueError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k < 0:
            raise ValueError(f"top_k must be >= 0, got {self.top_k}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.cfg_space not in ("logit", "prob"):
            raise ValueError(f"cfg_space must be 'logit' or 'prob', got {self.cfg_space!r}")


def cfg_combine(cond, uncond, w: float) -> np.ndarray:
    """Guided scores: (1 + w) * cond - w * uncond, elementwise."""
    c = check_logits(cond)
    u = check_logits(uncond)
    if c.shape != u.shape:
        raise ValueError(f"conditional shape {c.shape} != unconditional shape {u.shape}")
    return (1.0 + w) * c - w * u


def apply_temperature(logits, temperature: float) -> np.ndarray:
    """Stable softmax of logits / T."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    arr = check_logits(logits)
    scaled = arr / temperature
    shifted = scaled - scaled.max()
    e = np.exp(shifted)
    return e / e.sum()


def top_k_filter(probs, k: int) -> np.ndarray:
    """Keep the k most probable tokens and renormalize; k=0 disables.

    Boundary ties keep the lower index. k >= N is the identity.
    """
    if k < 0:
        raise ValueError(f"top_k must be >= 0, got {k}")
    arr = check_prob_vector(probs)
    if k == 0 or k >= arr.size:
        return arr.copy()
    order = np.argsort(-arr, kind="stable")  # descending, ties by lower index
    keep = order[:k]
    out = np.zeros_like(arr)
    out[keep] = arr[keep]
    return out / out.sum()


def top_p_filter(probs, top_p: float) -> np.ndarray:
    """Keep the smallest descending-order prefix with cumulative mass >=
    top_p (the crossing token included) and renormalize; top_p=1.0 is the
    identity."""
    if not 0 < top_p <= 1:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    arr = check_prob_vector(probs)
    if top_p == 1.0:
        return arr.copy()
    order = np.argsort(-arr, kind="stable")
    csum = np.cumsum(arr[order])
    cut = int(np.searchsorted(csum, top_p, side="left"))
    cut = min(cut, arr.size - 1)  # cumulative rounding can fall short of 1
    keep = order[: cut + 1]
    out = np.zeros_like(arr)
    out[keep] = arr[keep]
    return out / out.sum()


def sample_categorical(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over the vector order from an explicit PRNG state."""
    arr = check_prob_vector(probs)
    u = rng.random()
    csum = np.cumsum(arr)
    idx = int(np.searchsorted(csum, u, side="right"))
    return min(idx, arr.size - 1)


def sample_next_token(cond_logits, uncond_logits, config: SamplerConfig, rng: np.random.Generator) -> int:
    """Full pipeline for one draw; pass uncond_logits=None to skip guidance."""
    scores = check_logits(cond_logits)
    if uncond_logits is not None:
        if config.cfg_space == "prob":
            # Guidance over log-probabilities instead of raw scores.
            cond_lp = scores - np.log(np.exp(scores - scores.max()).sum()) - scores.max()
            u = check_logits(uncond_logits)
            uncond_lp = u - np.log(np.exp(u - u.max()).sum()) - u.max()
            scores = cfg_combine(cond_lp, uncond_lp, config.cfg_scale)
        else:
            scores = cfg_combine(scores, uncond_logits, config.cfg_scale)
    p = apply_temperature(scores, config.temperature)
    p = top_k_filter(p, config.top_k)
    p = top_p_filter(p, config.top_p)
    return sample_categorical(p, rng)
