"""Persistence of trained systems as versioned JSON lines.

Line 1 is a header (format name, version, parameters, rates, flags); every
following line is one record keyed by ``kind``. Floats go through ``json``,
which writes the shortest round-tripping repr, so reloading is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from dcvq.channel import DmcModel
from dcvq.errors import InvalidArgumentError
from dcvq.model import ModelParams
from dcvq.quantizer.core import Codebook, HistoryEntry, QuantizerSystem
from dcvq.quantizer.prequant import PreQuantizer
from dcvq.quantizer.tables import SideTables

FORMAT = "dcvq-system"
VERSION = 1


def _num(v: float):
    # json has no inf; rho may be infinite
    return "inf" if math.isinf(v) else float(v)


def _unnum(v) -> float:
    return math.inf if v == "inf" else float(v)


def _records(system: QuantizerSystem):
    p = system.params
    yield {
        "format": FORMAT,
        "version": VERSION,
        "params": {"N": p.N, "K": p.K, "M": p.M, "rho": _num(p.rho),
                   "sigma_w_sq": [float(s) for s in p.sigma_w_sq]},
        "rates": list(system.rates),
        "fallback": system.fallback,
        "decoder_update": system.decoder_update,
        "converged": system.converged,
        "iterations": system.iterations,
    }
    for l, phi in enumerate((system.phi1, system.phi2), start=1):
        yield {"kind": "sensing", "terminal": l, "rows": np.asarray(phi).tolist()}
    for l, pq in enumerate(system.prequantizers, start=1):
        yield {"kind": "prequantizer", "terminal": l, "bits": pq.bits,
               "variance": pq.variance, "codepoints": pq.codepoints.tolist()}
    for l, ch in enumerate(system.channels, start=1):
        yield {"kind": "channel", "terminal": l, "transition": ch.transition.tolist()}
    J1, J2 = system.codebook.shape
    for j1 in range(J1):
        for j2 in range(J2):
            yield {"kind": "codevector", "j1": j1, "j2": j2,
                   "x": system.codebook.vectors[j1, j2].tolist()}
    for tab in system.tables:
        for r, key in enumerate(tab.cell_keys):
            yield {"kind": "cell", "terminal": tab.terminal, "key": int(key),
                   "point": tab.cell_points[r].tolist(), "occupancy": int(tab.occupancy[r])}
        for q in range(len(tab.pair_cell)):
            yield {"kind": "pair", "terminal": tab.terminal,
                   "key": int(tab.cell_keys[tab.pair_cell[q]]),
                   "partner": int(tab.pair_partner[q]), "count": int(tab.pair_count[q]),
                   "sum": tab.pair_sum[q].tolist()}
    for h in system.history:
        yield {"kind": "history", "iteration": h.iteration, "step": h.step,
               "mse": h.mse, "stderr": h.stderr}


def save_system(system: QuantizerSystem, path) -> None:
    with open(path, "w") as fh:
        for rec in _records(system):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: line 1 is not a JSON header") from exc
    if header.get("format") != FORMAT:
        raise InvalidArgumentError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise InvalidArgumentError(f"{path}: unsupported version {header.get('version')}")
    return header


def load_system(path) -> QuantizerSystem:
    header = read_header(path)
    hp = header["params"]
    params = ModelParams(hp["N"], hp["K"], hp["M"], rho=_unnum(hp["rho"]),
                         sigma_w_sq=tuple(hp["sigma_w_sq"]))
    R1, R2 = header["rates"]
    phi, pqs, chans = {}, {}, {}
    vectors = np.zeros((2 ** R1, 2 ** R2, 2 * params.N))
    cells = {1: [], 2: []}
    pairs = {1: [], 2: []}
    history = []
    with open(path) as fh:
        next(fh)
        for lineno, line in enumerate(fh, start=2):
            try:
                rec = json.loads(line)
                kind = rec["kind"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise InvalidArgumentError(f"{path}: line {lineno}: malformed record") from exc
            if kind == "sensing":
                phi[rec["terminal"]] = np.array(rec["rows"])
            elif kind == "prequantizer":
                pqs[rec["terminal"]] = PreQuantizer(rec["bits"], np.array(rec["codepoints"]),
                                                    rec["variance"])
            elif kind == "channel":
                t = np.array(rec["transition"])
                chans[rec["terminal"]] = DmcModel(int(round(math.log2(len(t)))), t)
            elif kind == "codevector":
                vectors[rec["j1"], rec["j2"]] = rec["x"]
            elif kind == "cell":
                cells[rec["terminal"]].append(rec)
            elif kind == "pair":
                pairs[rec["terminal"]].append(rec)
            elif kind == "history":
                history.append(HistoryEntry(rec["iteration"], rec["step"], rec["mse"], rec["stderr"]))
            else:
                raise InvalidArgumentError(f"{path}: line {lineno}: unknown record kind {kind!r}")
    missing = [k for k, d in (("sensing", phi), ("prequantizer", pqs), ("channel", chans))
               if set(d) != {1, 2}]
    if missing:
        raise InvalidArgumentError(f"{path}: missing records: {', '.join(missing)}")
    sizes = (2 ** R1, 2 ** R2)
    tables = tuple(_tables(l, cells[l], pairs[l], sizes[2 - l], 2 * params.N) for l in (1, 2))
    return QuantizerSystem(
        params=params, phi1=phi[1], phi2=phi[2], prequantizers=(pqs[1], pqs[2]),
        tables=tables, codebook=Codebook(vectors), channels=(chans[1], chans[2]),
        rates=(R1, R2), history=history, converged=header["converged"],
        iterations=header["iterations"], fallback=header["fallback"],
        decoder_update=header["decoder_update"],
    )


def _tables(terminal, cells, pairs, partner_size, dim) -> SideTables:
    keys = np.array([c["key"] for c in cells], dtype=np.int64)
    row = {k: r for r, k in enumerate(keys.tolist())}
    return SideTables(
        terminal=terminal,
        partner_size=partner_size,
        cell_keys=keys,
        cell_points=np.array([c["point"] for c in cells], dtype=float),
        occupancy=np.array([c["occupancy"] for c in cells], dtype=np.int64),
        pair_cell=np.array([row[p["key"]] for p in pairs], dtype=np.int64),
        pair_partner=np.array([p["partner"] for p in pairs], dtype=np.int64),
        pair_count=np.array([p["count"] for p in pairs], dtype=np.int64),
        pair_sum=np.array([p["sum"] for p in pairs], dtype=float).reshape(len(pairs), dim),
    )


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "step", "mse"])
        for h in history:
            w.writerow([h.iteration, h.step, repr(h.mse)])


def summarize(system: QuantizerSystem) -> dict:
    """Short description used by the ``inspect`` command."""
    p = system.params
    return {
        "N": p.N, "K": p.K, "M": p.M, "rho": p.rho,
        "sigma_w_sq": list(p.sigma_w_sq),
        "rates": list(system.rates),
        "prequantizer_bits": [pq.bits for pq in system.prequantizers],
        "occupied_cells": [int(t.n_cells) for t in system.tables],
        "training_draws": int(system.tables[0].total),
        "iterations": system.iterations,
        "converged": system.converged,
        "final_mse": system.history[-1].mse if system.history else None,
        "max_codevector_norm": float(np.linalg.norm(system.codebook.vectors, axis=2).max()),
    }
