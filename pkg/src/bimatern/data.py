"""Observation containers and CSV input/output.

The on-disk schema is a header row ``replicate,field,x,y,t,value`` with
zero-based integer replicate indices, field in {1, 2}, and an optional
integer day-of-year column t (empty when absent).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .noise import NuggetLayout, layout_from_locations

CSV_HEADER = ["replicate", "field", "x", "y", "t", "value"]


class DataError(Exception):
    pass


@dataclass
class FieldObs:
    """Observations of a single field: (N, 2) locations and N values."""

    loc: np.ndarray
    value: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        self.loc = np.atleast_2d(np.asarray(self.loc, dtype=np.float64))
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.t is not None:
            self.t = np.asarray(self.t)
        if len(self.loc) != len(self.value):
            raise DataError("locations and values must have equal length")

    def __len__(self):
        return len(self.value)


@dataclass
class Replicate:
    """One independent replicate of bivariate observations."""

    f1: FieldObs
    f2: FieldObs

    @property
    def y(self):
        """Stacked observation vector (field 1 then field 2)."""
        return np.concatenate([self.f1.value, self.f2.value])

    @property
    def n1(self):
        return len(self.f1)

    @property
    def n2(self):
        return len(self.f2)

    def layout(self):
        return layout_from_locations(self.f1.loc, self.f2.loc)


@dataclass
class ObservationSet:
    """Per-replicate bivariate observations sharing one spatial domain."""

    replicates: list

    def __post_init__(self):
        if not self.replicates:
            raise DataError("no observations")

    def __len__(self):
        return len(self.replicates)

    def counts(self):
        n1 = sum(r.n1 for r in self.replicates)
        n2 = sum(r.n2 for r in self.replicates)
        return n1, n2

    def all_locations(self):
        locs = [r.f1.loc for r in self.replicates] + [r.f2.loc for r in self.replicates]
        return np.vstack(locs)


def write_csv(obs, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r_idx, rep in enumerate(obs.replicates):
        for f_idx, fo in ((1, rep.f1), (2, rep.f2)):
            for i in range(len(fo)):
                t = "" if fo.t is None else int(fo.t[i])
                w.writerow(
                    [r_idx, f_idx, repr(float(fo.loc[i, 0])), repr(float(fo.loc[i, 1])),
                     t, repr(float(fo.value[i]))]
                )


def read_csv(fh):
    rd = csv.reader(fh)
    try:
        header = next(rd)
    except StopIteration:
        raise DataError("no observations: empty file")
    if [c.strip().lower() for c in header[:6]] != CSV_HEADER:
        raise DataError(f"bad header {header!r}, expected {CSV_HEADER}")
    rows = {}
    for lineno, row in enumerate(rd, start=2):
        if not row:
            continue
        try:
            rep = int(row[0])
            fld = int(row[1])
            x, y = float(row[2]), float(row[3])
            t = int(row[4]) if row[4] != "" else None
            val = float(row[5])
        except (ValueError, IndexError) as exc:
            raise DataError(f"line {lineno}: malformed row {row!r}") from exc
        if fld not in (1, 2):
            raise DataError(f"line {lineno}: field must be 1 or 2")
        rows.setdefault(rep, {1: [], 2: []})[fld].append((x, y, t, val))
    if not rows:
        raise DataError("no observations")
    replicates = []
    for rep in sorted(rows):
        fos = {}
        for fld in (1, 2):
            recs = rows[rep][fld]
            loc = np.array([(r[0], r[1]) for r in recs], dtype=np.float64).reshape(-1, 2)
            val = np.array([r[3] for r in recs], dtype=np.float64)
            ts = [r[2] for r in recs]
            t = None if any(v is None for v in ts) or not ts else np.array(ts)
            fos[fld] = FieldObs(loc=loc, value=val, t=t)
        replicates.append(Replicate(f1=fos[1], f2=fos[2]))
    return ObservationSet(replicates=replicates)


def to_csv_string(obs):
    buf = io.StringIO()
    write_csv(obs, buf)
    return buf.getvalue()


def from_csv_string(text):
    return read_csv(io.StringIO(text))
