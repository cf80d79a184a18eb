"""JSON net file format: chains and toy decoder blocks.

Matrices serialize as {"rows": R, "cols": C, "data": [row-major f64]}.
A net file is either

    {"format_version": 1, "kind": "chain", "activation": "linear"|"silu",
     "layers": [matrix, ...]}

or

    {"format_version": 1, "kind": "block", "activation": "silu",
     "d": ..., "m": ..., "h": ...,
     "w_q": matrix, ..., "w_down": matrix, "w_emb": matrix, "w_head": matrix}

Malformed documents raise NetFormatError carrying a JSON-pointer-style
location of the offending field.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .block import ToyDecoderBlock
from .ortho import ACTIVATIONS, LinearChain

FORMAT_VERSION = 1
_BLOCK_SLOTS = ("w_q", "w_k", "w_v", "w_o", "w_up", "w_gate", "w_down",
                "w_emb", "w_head")

Net = Union[LinearChain, ToyDecoderBlock]


class NetFormatError(ValueError):
    """Malformed net document; ``location`` points at the bad field."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location or '/'}: {message}")
        self.location = location or "/"


def matrix_to_json(w: np.ndarray) -> dict:
    w = np.asarray(w, dtype=np.float64)
    return {"rows": int(w.shape[0]), "cols": int(w.shape[1]),
            "data": [float(v) for v in w.ravel()]}


def matrix_from_json(obj, location: str) -> np.ndarray:
    if not isinstance(obj, dict):
        raise NetFormatError("expected a matrix object", location)
    for key in ("rows", "cols", "data"):
        if key not in obj:
            raise NetFormatError(f"missing key '{key}'", location)
    rows, cols = obj["rows"], obj["cols"]
    if not isinstance(rows, int) or not isinstance(cols, int) or rows < 1 or cols < 1:
        raise NetFormatError("rows and cols must be positive integers", location)
    data = obj["data"]
    if not isinstance(data, list) or len(data) != rows * cols:
        raise NetFormatError(
            f"data must hold rows*cols = {rows * cols} numbers", f"{location}/data")
    try:
        w = np.asarray(data, dtype=np.float64).reshape(rows, cols)
    except (TypeError, ValueError) as exc:
        raise NetFormatError(f"non-numeric data: {exc}", f"{location}/data")
    if not np.isfinite(w).all():
        raise NetFormatError("data contains NaN or Inf", f"{location}/data")
    return w


def chain_to_json(chain: LinearChain) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "chain",
        "activation": chain.activation,
        "layers": [matrix_to_json(w) for w in chain.layers],
    }


def block_to_json(block: ToyDecoderBlock) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "block",
        "activation": "silu",
        "d": block.d,
        "m": block.m,
        "h": block.h,
    }
    for slot in _BLOCK_SLOTS:
        doc[slot] = matrix_to_json(getattr(block, slot))
    return doc


def net_from_json(doc) -> Net:
    if not isinstance(doc, dict):
        raise NetFormatError("expected a JSON object", "")
    if doc.get("format_version") != FORMAT_VERSION:
        raise NetFormatError(
            f"unrecognized format_version {doc.get('format_version')!r}",
            "/format_version")
    kind = doc.get("kind")
    if kind == "chain":
        activation = doc.get("activation", "linear")
        if activation not in ACTIVATIONS:
            raise NetFormatError(
                f"activation must be one of {ACTIVATIONS}", "/activation")
        layers = doc.get("layers")
        if not isinstance(layers, list) or not layers:
            raise NetFormatError("layers must be a non-empty list", "/layers")
        mats = [matrix_from_json(m, f"/layers/{i}") for i, m in enumerate(layers)]
        try:
            return LinearChain(layers=tuple(mats), activation=activation)
        except ValueError as exc:
            raise NetFormatError(str(exc), "/layers")
    if kind == "block":
        for key in ("d", "m", "h"):
            if not isinstance(doc.get(key), int):
                raise NetFormatError("must be an integer", f"/{key}")
        slots = {}
        for slot in _BLOCK_SLOTS:
            if slot not in doc:
                raise NetFormatError(f"missing block slot '{slot}'", f"/{slot}")
            slots[slot] = matrix_from_json(doc[slot], f"/{slot}")
        try:
            return ToyDecoderBlock(d=doc["d"], m=doc["m"], h=doc["h"], **slots)
        except ValueError as exc:
            raise NetFormatError(str(exc), "")
    raise NetFormatError("kind must be 'chain' or 'block'", "/kind")


def net_to_json(net: Net) -> dict:
    if isinstance(net, LinearChain):
        return chain_to_json(net)
    return block_to_json(net)


def save_net(net: Net, path) -> None:
    Path(path).write_text(json.dumps(net_to_json(net)))


def load_net(path) -> Net:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetFormatError(f"invalid JSON: {exc}", "")
    return net_from_json(doc)
