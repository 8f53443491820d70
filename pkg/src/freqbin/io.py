"""Versioned output files: every file starts with the schema header line."""

from __future__ import annotations

import json

import numpy as np

from . import HEADER
from .errors import UsageError


def matrix_to_pairs(m) -> list:
    """Row-major nested list of ``[re, im]`` pairs."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def pairs_to_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise UsageError("invalid-json", f"expected rows of [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def write_json(path, payload: dict) -> None:
    """Header comment line, then a deterministic (sorted-key) JSON document."""
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        fh.write(json.dumps(payload, sort_keys=True, indent=1))
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        text = "".join(line for line in fh if not line.startswith("#"))
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError("invalid-json", str(exc)) from exc


def write_text(path, lines) -> None:
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        for line in lines:
            fh.write(line.rstrip("\n") + "\n")
