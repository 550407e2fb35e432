"""CSV tables exchanged between commands: features, labels, predictions.

Every table may start with ``#`` comment lines; the writers put a provenance line
there (``# key=value key=value``) and the readers return it as a dict.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .ingest import DataError

ID_COLUMNS = ("video_id", "participant_id", "hand")


def format_float(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def provenance_line(prov: dict) -> str:
    return "# " + " ".join(f"{k}={prov[k]}" for k in sorted(prov)) + "\n"


def _split(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    prov = {}
    body = []
    for ln in lines:
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, _, v = tok.partition("=")
                    prov[k] = v
        else:
            body.append(ln)
    return prov, body


def write_table(path, columns, rows, prov=None):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if prov:
            fh.write(provenance_line(prov))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_feature_table(path, vectors, names, prov=None):
    rows = [[fv.video_id, fv.participant_id, fv.hand] + [float(fv.values[n]) for n in names]
            for fv in vectors]
    write_table(path, list(ID_COLUMNS) + list(names), rows, prov)


class FeatureTable:
    def __init__(self, ids, names, X, provenance):
        self.ids = ids                # list of (video_id, participant_id, hand)
        self.names = list(names)
        self.X = X
        self.provenance = provenance

    @property
    def video_ids(self):
        return [i[0] for i in self.ids]

    @property
    def participant_ids(self):
        return [i[1] for i in self.ids]


def read_feature_table(path) -> FeatureTable:
    prov, body = _split(path)
    reader = csv.reader(body)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty feature table") from None
    if tuple(header[:3]) != ID_COLUMNS:
        raise DataError(f"{path}: first columns must be {', '.join(ID_COLUMNS)}")
    names = header[3:]
    ids, rows, seen = [], [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        if row[0] in seen:
            raise DataError(f"{path}: duplicate video_id {row[0]!r}")
        seen.add(row[0])
        try:
            rows.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise DataError(f"{path}: row {lineno}: {exc}") from None
        ids.append((row[0], row[1], row[2]))
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return FeatureTable(ids, names, X, prov)


def read_labels(path):
    """video_id -> (participant_id, hand, ground_truth)."""
    _, body = _split(path)
    reader = csv.DictReader(body)
    out = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            vid = row["video_id"].strip()
            gt = float(row["ground_truth"])
            out[vid] = (row.get("participant_id", "").strip(), row.get("hand", "").strip(), gt)
        except (KeyError, ValueError, AttributeError) as exc:
            raise DataError(f"{path}: line {lineno}: malformed label row ({exc})") from None
        if not 0 <= gt <= 4:
            raise DataError(f"{path}: line {lineno}: label {gt} outside 0-4")
    return out


def join_labels(table: FeatureTable, labels):
    missing = [v for v in table.video_ids if v not in labels]
    if missing:
        raise DataError(f"no label for {len(missing)} video(s), e.g. {missing[0]!r}")
    return np.array([labels[v][2] for v in table.video_ids], dtype=float)
