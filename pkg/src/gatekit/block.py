"""Minimal pre-norm decoder block: causal attention + SwiGLU MLP.

One block at desk scale, batch dimension fixed to one sequence.  Weights
act on column vectors (y = W x); a T x d batch X multiplies as X @ W.T.
The block exists to exercise the orthogonal transformation and the cost
model, so there is no KV cache, rotary embedding, or multi-block stack.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from .gating import GateMask
from .linalg import as_matrix, kaiming_init, silu
from .rng import derive_seed

RMS_EPS = 1e-6

GATE_SITES = ("q", "k", "v", "o", "up", "gate", "down")


@dataclass(frozen=True)
class ToyDecoderBlock:
    """Seven GEMV weights plus embedding and head.

    Shapes: w_q/w_k/w_v/w_o are d x d, w_up/w_gate are m x d, w_down is
    d x m, w_emb/w_head are vocab x d.  d must divide evenly into h heads.
    """

    d: int
    m: int
    h: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_up: np.ndarray
    w_gate: np.ndarray
    w_down: np.ndarray
    w_emb: np.ndarray
    w_head: np.ndarray

    def __post_init__(self):
        d, m, h = self.d, self.m, self.h
        if d < 1 or m < 1 or h < 1:
            raise ValueError("d, m, h must be positive")
        if d % h != 0:
            raise ValueError(f"hidden size {d} not divisible by head count {h}")
        expected = {
            "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
            "w_up": (m, d), "w_gate": (m, d), "w_down": (d, m),
        }
        for name, shape in expected.items():
            mat = as_matrix(getattr(self, name))
            if mat.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {mat.shape}")
        vocab = as_matrix(self.w_emb).shape[0]
        for name in ("w_emb", "w_head"):
            mat = as_matrix(getattr(self, name))
            if mat.shape != (vocab, d):
                raise ValueError(f"{name} must have shape ({vocab}, {d}), got {mat.shape}")

    @property
    def vocab(self) -> int:
        return int(self.w_emb.shape[0])

    def matrices(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, f"w_{name}") for name in GATE_SITES}

    def replace_weights(self, **updates) -> "ToyDecoderBlock":
        return replace(self, **updates)


def random_block(d: int, m: int, h: int, vocab: int, seed: int) -> ToyDecoderBlock:
    """Block with independently initialized Gaussian fan-in weights."""
    names = ("q", "k", "v", "o", "up", "gate", "down", "emb", "head")
    shapes = ((d, d), (d, d), (d, d), (d, d), (m, d), (m, d), (d, m),
              (vocab, d), (vocab, d))
    weights = {
        f"w_{name}": kaiming_init(rows, cols, derive_seed(seed, i))
        for i, (name, (rows, cols)) in enumerate(zip(names, shapes))
    }
    return ToyDecoderBlock(d=d, m=m, h=h, **weights)


def rmsnorm(x) -> np.ndarray:
    """x / sqrt(mean(x^2) + 1e-6), unit scale."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError("rmsnorm expects a non-empty 1-d vector")
    return x / np.sqrt(np.mean(x * x) + RMS_EPS)


def _rmsnorm_rows(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + RMS_EPS)


def _gated_rows(x: np.ndarray, gates, site: str) -> np.ndarray:
    if gates is None or site not in gates:
        return x
    mask = gates[site]
    if mask.n != x.shape[1]:
        raise ValueError(
            f"gate '{site}' has length {mask.n}, expected {x.shape[1]}")
    return np.where(mask.keep == 1, x, 0.0)


def _causal_softmax(scores: np.ndarray) -> np.ndarray:
    t = scores.shape[0]
    masked = np.where(np.tril(np.ones((t, t), dtype=bool)), scores, -np.inf)
    masked = masked - masked.max(axis=1, keepdims=True)
    e = np.exp(masked)
    return e / e.sum(axis=1, keepdims=True)


def block_forward(
    block: ToyDecoderBlock,
    x: np.ndarray,
    gates: Optional[Mapping[str, GateMask]] = None,
) -> np.ndarray:
    """Forward pass over a T x d batch of hidden states.

    Pre-norm placement: RMSNorm before attention and before the MLP,
    residual adds after each.  When ``gates`` maps a site name (one of
    ``GATE_SITES``) to a mask, that GEMV consumes its input with the
    dropped coordinates zeroed.
    """
    x = as_matrix(x)
    t = x.shape[0]
    if t < 1 or x.shape[1] != block.d:
        raise ValueError(f"hidden states must be T x {block.d}, got {x.shape}")
    if gates is not None:
        unknown = set(gates) - set(GATE_SITES)
        if unknown:
            raise ValueError(f"unknown gate sites: {sorted(unknown)}")

    d, h = block.d, block.h
    dh = d // h

    normed = _rmsnorm_rows(x)
    q = _gated_rows(normed, gates, "q") @ block.w_q.T
    k = _gated_rows(normed, gates, "k") @ block.w_k.T
    v = _gated_rows(normed, gates, "v") @ block.w_v.T

    heads = np.empty((t, d))
    scale = 1.0 / np.sqrt(dh)
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        attn = _causal_softmax((q[:, sl] @ k[:, sl].T) * scale)
        heads[:, sl] = attn @ v[:, sl]

    o = _gated_rows(heads, gates, "o") @ block.w_o.T
    x1 = x + o

    normed1 = _rmsnorm_rows(x1)
    up = _gated_rows(normed1, gates, "up") @ block.w_up.T
    gate = _gated_rows(normed1, gates, "gate") @ block.w_gate.T
    mlp = silu(gate) * up
    down = _gated_rows(mlp, gates, "down") @ block.w_down.T
    return x1 + down


def embed(block: ToyDecoderBlock, tokens) -> np.ndarray:
    """Token ids -> T x d hidden states (rows of the embedding table)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.shape[0] < 1:
        raise ValueError("tokens must be a non-empty 1-d integer sequence")
    if (tokens < 0).any() or (tokens >= block.vocab).any():
        raise ValueError("token id out of range")
    return block.w_emb[tokens]


def model_forward(
    block: ToyDecoderBlock,
    tokens,
    gates: Optional[Mapping[str, GateMask]] = None,
) -> np.ndarray:
    """End-to-end embedding -> block -> head logits (T x vocab)."""
    y = block_forward(block, embed(block, tokens), gates=gates)
    return y @ block.w_head.T
