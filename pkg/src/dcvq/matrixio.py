"""Plain-text matrix format shared by sensing matrices, sources and channels.

Layout: a header line ``rows cols`` followed by ``rows`` lines of
whitespace-separated values in row-major order. Floats are written with
``repr`` so a round trip is bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from dcvq.errors import InvalidArgumentError


def dump_matrix(matrix, path) -> None:
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D matrix, got shape {a.shape}")
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in a)
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path) -> np.ndarray:
    text = Path(path).read_text().split("\n")
    try:
        rows, cols = (int(t) for t in text[0].split())
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: bad header {text[0]!r}") from exc
    body = [ln for ln in text[1:] if ln.strip()]
    if len(body) != rows:
        raise InvalidArgumentError(f"{path}: expected {rows} rows, found {len(body)}")
    out = np.empty((rows, cols))
    for r, ln in enumerate(body):
        vals = ln.split()
        if len(vals) != cols:
            raise InvalidArgumentError(
                f"{path}: row {r} has {len(vals)} values, expected {cols}"
            )
        out[r] = [float(v) for v in vals]
    return out
