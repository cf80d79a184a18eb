"""Column orthogonalization of linear chains and toy decoder blocks.

A matrix is column-orthogonal when W.T @ W is diagonal.  Right-multiplying
W by the V factor of its SVD enforces this exactly ((WV).T (WV) = S^2),
and the change of basis is compensated in adjacent layers so the composed
map is unchanged (computational invariance).

Chain transformation runs top-down (last layer first): each step
right-multiplies the current layer by its SVD V and left-multiplies the
predecessor by V.T.  Left-multiplication by an orthogonal factor cannot
disturb an already-diagonal Gram, so a single pass suffices and the
procedure is idempotent up to roundoff.

Block transformation.  A residual block admits exactly one orthogonal
change of basis for its hidden stream: the stream is one connected
component (residual adds splice every segment together), and the block
carries no slot for an explicit rotation inside a skip connection.  The
transformation therefore uses a single rotation Q = V from the SVD of
the attention key matrix, the target whose Gram becomes diagonal:

* readers of the stream (w_q, w_k, w_v, w_up, w_gate, w_head) are
  right-multiplied by Q;
* writers to the stream (w_o, w_down) are left-multiplied by Q.T;
* the embedding table (rows are stream vectors) is right-multiplied by Q.

Unit-scale RMSNorm commutes with orthogonal rotations, so the end-to-end
token-to-logits map is preserved exactly.  Published pseudocode for this
transformation instead rotates w_gate/w_up by a second factor from the
gate matrix's SVD with w_o/w_down as compensation; that bookkeeping only
preserves the attention-to-MLP path, not the residual bypasses around
it, so it is not function-preserving and is deliberately not done here.
Output invariance is the arbiter: only w_k's Gram is targeted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .block import ToyDecoderBlock
from .gating import apply_gate
from .linalg import as_matrix, as_vector, silu, svd_right_factor
from .rng import derive_seed

ACTIVATIONS = ("linear", "silu")


@dataclass(frozen=True)
class LinearChain:
    """Ordered weight matrices W(1..L) with an optional interleaved activation.

    Layer l maps a vector of length cols(W(l)) to length rows(W(l)); the
    activation, when not "linear", is applied between layers (never after
    the last).
    """

    layers: tuple
    activation: str = "linear"

    def __post_init__(self):
        layers = tuple(as_matrix(w) for w in self.layers)
        if not layers:
            raise ValueError("chain must contain at least one layer")
        for l in range(1, len(layers)):
            if layers[l].shape[1] != layers[l - 1].shape[0]:
                raise ValueError(
                    f"layer {l + 1} expects input of length {layers[l].shape[1]}, "
                    f"but layer {l} outputs {layers[l - 1].shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].shape[0])

    def layer_input_dims(self) -> list[int]:
        return [int(w.shape[1]) for w in self.layers]


def chain_forward(chain: LinearChain, x, gates: Optional[list] = None) -> np.ndarray:
    """Forward pass; when gates are given, layer l consumes its gated input."""
    u = as_vector(x)
    if u.shape[0] != chain.input_dim:
        raise ValueError(f"input length {u.shape[0]} != {chain.input_dim}")
    if gates is not None and len(gates) != chain.depth:
        raise ValueError(f"expected {chain.depth} gates, got {len(gates)}")
    for l, w in enumerate(chain.layers):
        if gates is not None:
            u = apply_gate(u, gates[l])
        u = w @ u
        if chain.activation == "silu" and l < chain.depth - 1:
            u = silu(u)
    return u


def verify_column_orthogonality(w) -> float:
    """Largest |off-diagonal| entry of W.T @ W."""
    w = as_matrix(w)
    gram = w.T @ w
    if gram.shape[0] < 2:
        return 0.0
    off = gram - np.diag(np.diag(gram))
    return float(np.abs(off).max())


@dataclass(frozen=True)
class OrthoResult:
    chain: LinearChain
    input_rotation: Optional[np.ndarray] = None
    per_layer_gram_offdiag: np.ndarray = field(default_factory=lambda: np.zeros(0))


def orthogonalize_chain(chain: LinearChain, rotate_input: bool = False) -> OrthoResult:
    """Make every layer l >= 2 column-orthogonal, preserving the composed map.

    With ``rotate_input`` the first layer is transformed as well and the
    returned ``input_rotation`` Q must be applied to inputs as Q.T @ x to
    reproduce the original outputs.
    """
    if chain.activation != "linear":
        raise ValueError(
            "orthogonalize_chain requires a linear chain: the compensation "
            "identity W(l) V V.T W(l-1) = W(l) W(l-1) does not commute with a "
            "nonlinear activation; use the block-level transformation or none")
    layers = [w.copy() for w in chain.layers]
    for l in range(len(layers) - 1, 0, -1):
        v = svd_right_factor(layers[l])
        layers[l] = layers[l] @ v
        layers[l - 1] = v.T @ layers[l - 1]
    input_rotation = None
    if rotate_input:
        v = svd_right_factor(layers[0])
        layers[0] = layers[0] @ v
        input_rotation = v
    offdiag = np.array([verify_column_orthogonality(w) for w in layers])
    return OrthoResult(
        chain=LinearChain(layers=tuple(layers), activation=chain.activation),
        input_rotation=input_rotation,
        per_layer_gram_offdiag=offdiag,
    )


def orthogonalize_block(block: ToyDecoderBlock) -> ToyDecoderBlock:
    """Apply the single stream rotation described in the module docstring.

    The returned block computes identical token-to-logits outputs; the
    key matrix's Gram becomes diagonal (the targeted matrix).
    """
    q = svd_right_factor(block.w_k)
    return block.replace_weights(
        w_q=block.w_q @ q,
        w_k=block.w_k @ q,
        w_v=block.w_v @ q,
        w_o=q.T @ block.w_o,
        w_up=block.w_up @ q,
        w_gate=block.w_gate @ q,
        w_down=q.T @ block.w_down,
        w_emb=block.w_emb @ q,
        w_head=block.w_head @ q,
    )


def verify_invariance(
    original_forward: Callable,
    transformed_forward: Callable,
    sample_input: Callable[[int], object],
    n_inputs: int,
    seed: int,
) -> float:
    """Max over sampled inputs of ||f(x) - f'(x)||_2 / (1 + ||f(x)||_2).

    ``sample_input(i)`` produces the i-th probe input; callers pick the
    sampler (random vectors for chains, token sequences for blocks).
    """
    worst = 0.0
    for i in range(n_inputs):
        x = sample_input(derive_seed(seed, i))
        ref = np.asarray(original_forward(x), dtype=np.float64).ravel()
        got = np.asarray(transformed_forward(x), dtype=np.float64).ravel()
        if ref.shape != got.shape:
            raise ValueError(
                f"output shape mismatch: {ref.shape} vs {got.shape}")
        dev = float(np.linalg.norm(ref - got) / (1.0 + np.linalg.norm(ref)))
        worst = max(worst, dev)
    return worst
