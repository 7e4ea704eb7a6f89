"""CSV files with a small comment preamble.

Every output file carries '# key=value' lines (config hash, seeds, and so
on) before the header row, and read_csv() hands them back, so any CSV can
be traced to the exact configuration that produced it.
"""

from __future__ import annotations

import csv


def format_value(v):
    if isinstance(v, float):
        return repr(v)  # shortest round-trip form
    if isinstance(v, bool):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, meta: dict | None = None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key in sorted(meta or {}):
            fh.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path):
    """Returns (header, rows, meta); rows keep their string form."""
    meta = {}
    header = None
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, val = body.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            if not line.strip():
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                rows.append(cells)
    return header, rows, meta


def columns(path, fields=None):
    """Read numeric columns as lists of floats, keyed by header name."""
    header, rows, meta = read_csv(path)
    if header is None:
        raise ValueError(f"{path} has no header row")
    wanted = fields if fields is not None else header
    missing = [f for f in wanted if f not in header]
    if missing:
        raise ValueError(f"column {missing[0]!r} missing in {path}")
    idx = {f: header.index(f) for f in wanted}
    out = {f: [float(r[i]) for r in rows] for f, i in idx.items()}
    return out, meta
