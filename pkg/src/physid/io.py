"""Dataset CSV ingestion and report emission."""
import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    """Malformed dataset file; the message names the line or column."""


@dataclass
class CsvRecord:
    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    f_e: np.ndarray
    header: tuple

    @property
    def T_s(self):
        if self.t.size < 2:
            raise CsvFormatError("at least two samples are needed to infer the sampling time")
        dt = np.diff(self.t)
        T_s = float(np.median(dt))
        if T_s <= 0 or np.max(np.abs(dt - T_s)) > 1e-6 * T_s:
            raise CsvFormatError("time column is not uniformly increasing")
        return T_s


_COL = re.compile(r"^(u|y|fe)_(\d+)$")


def _group(header, prefix):
    idx = sorted(((int(m.group(2)), k) for k, h in enumerate(header)
                  if (m := _COL.match(h)) and m.group(1) == prefix))
    numbers = [i for i, _ in idx]
    if numbers != list(range(1, len(numbers) + 1)):
        missing = sorted(set(range(1, max(numbers, default=0) + 1)) - set(numbers))
        raise CsvFormatError(f"missing column {prefix}_{missing[0]}")
    return [k for _, k in idx]


def ingest_csv(path):
    """Read a dataset written by :func:`physid.mechanics.export_csv`.

    The header is ``t,u_1..u_r,y_1..y_m,fe_1..fe_n``; ``u`` and ``fe``
    groups may be empty, ``t`` and at least ``y_1`` are required.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if "t" not in header:
            raise CsvFormatError(f"{path}: missing column t")
        unknown = [h for h in header if h != "t" and not _COL.match(h)]
        if unknown:
            raise CsvFormatError(f"{path}: line 1: unexpected column {unknown[0]!r}")
        if len(set(header)) != len(header):
            raise CsvFormatError(f"{path}: line 1: duplicate column names")
        groups = {p: _group(header, p) for p in ("u", "y", "fe")}
        if not groups["y"]:
            raise CsvFormatError(f"{path}: missing column y_1")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header)).T
    t = data[header.index("t")]
    pick = {p: data[k] if k else np.empty((0, t.size)) for p, k in groups.items()}
    return CsvRecord(t, pick["u"], pick["y"], pick["fe"], tuple(header))


def _write_csv(path, header, table):
    np.savetxt(path, np.atleast_2d(table), delimiter=",", header=header, comments="", fmt="%.17g")


def emit_report(report, out_dir, stem="report"):
    """Write ``<stem>.json`` plus one companion CSV per plot series.

    Returns the path of the JSON document. The document is deterministic
    for a deterministic report: keys keep their insertion order and floats
    use the shortest round-tripping representation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fe_path = None
    for name, (header, table) in sorted(report.series.items()):
        fname = f"{stem}_{name}.csv"
        _write_csv(out / fname, header, table)
        if name == "fe":
            fe_path = fname
    doc = report.to_document(fe_series_path=fe_path)
    path = out / f"{stem}.json"
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    return path
