"""Functional observations and their long-CSV representation.

The on-disk format has one row per sampled point::

    curve_id,t,y[,label]

Curves may be sampled on different grids. Rows of a curve need not be
contiguous or sorted in the input; on output each curve forms one
contiguous, time-sorted block and curves keep their dataset order.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

__all__ = ["Curve", "Dataset", "GroundTruth", "read_dataset", "write_dataset", "rescale_to_unit"]

PathOrStream = Union[str, os.PathLike, TextIO]


@dataclass(frozen=True)
class Curve:
    """One sampled function: strictly increasing ``timepoints`` and matching ``values``."""

    id: str
    timepoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timepoints, dtype=float).ravel().copy()
        y = np.asarray(self.values, dtype=float).ravel().copy()
        if t.size == 0:
            raise ValueError(f"curve {self.id!r} has no observations")
        if t.shape != y.shape:
            raise ValueError(f"curve {self.id!r}: {t.size} timepoints but {y.size} values")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError(f"curve {self.id!r} contains non-finite entries")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"curve {self.id!r}: timepoints must be strictly increasing")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "timepoints", t)
        object.__setattr__(self, "values", y)

    def __len__(self):
        return self.timepoints.size

    def __eq__(self, other):
        if not isinstance(other, Curve):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.timepoints, other.timepoints)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    """A sample of curves on a common domain, optionally with true cluster labels (1-based)."""

    domain: Tuple[float, float]
    curves: Tuple[Curve, ...]
    true_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise ValueError(f"invalid domain {self.domain}")
        curves = tuple(self.curves)
        if not curves:
            raise ValueError("a dataset needs at least one curve")
        ids = [c.id for c in curves]
        if len(set(ids)) != len(ids):
            raise ValueError("curve ids must be unique")
        for c in curves:
            if c.timepoints[0] < lo or c.timepoints[-1] > hi:
                raise ValueError(f"curve {c.id!r} has timepoints outside [{lo}, {hi}]")
        labels = self.true_labels
        if labels is not None:
            labels = np.asarray(labels, dtype=int).ravel().copy()
            if labels.size != len(curves):
                raise ValueError("true_labels must have one entry per curve")
            if labels.min() < 1:
                raise ValueError("labels are 1-based cluster indices")
            labels.setflags(write=False)
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "true_labels", labels)

    @property
    def n_curves(self) -> int:
        return len(self.curves)

    def __len__(self):
        return len(self.curves)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.true_labels is None) != (other.true_labels is None):
            return False
        return (
            self.domain == other.domain
            and self.curves == other.curves
            and (self.true_labels is None or np.array_equal(self.true_labels, other.true_labels))
        )

    __hash__ = None

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        labels = None if self.true_labels is None else self.true_labels[idx]
        return Dataset(self.domain, tuple(self.curves[i] for i in idx), labels)


@dataclass
class GroundTruth:
    """Simulation truth: mean coefficients, labels and per-pair noninformative intervals.

    ``noninformative_intervals`` maps a 0-based cluster pair ``(g, h)``, ``g < h``,
    to a sorted list of disjoint ``(lo, hi)`` intervals where the two true means coincide.
    """

    true_mean_coefficients: np.ndarray
    true_labels: np.ndarray
    noninformative_intervals: Dict[Tuple[int, int], List[Tuple[float, float]]]
    curve_coefficients: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_clusters(self) -> int:
        return int(self.true_mean_coefficients.shape[0])

    def to_dict(self) -> dict:
        return {
            "true_mean_coefficients": np.asarray(self.true_mean_coefficients).tolist(),
            "true_labels": np.asarray(self.true_labels).tolist(),
            "noninformative_intervals": [
                [g, h, [list(iv) for iv in ivs]] for (g, h), ivs in sorted(self.noninformative_intervals.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        intervals = {(int(g), int(h)): [tuple(map(float, iv)) for iv in ivs] for g, h, ivs in d["noninformative_intervals"]}
        return cls(
            true_mean_coefficients=np.asarray(d["true_mean_coefficients"], dtype=float),
            true_labels=np.asarray(d["true_labels"], dtype=int),
            noninformative_intervals=intervals,
        )


def _open_text(src: PathOrStream, mode: str):
    if hasattr(src, "read") or hasattr(src, "write"):
        return src, False
    return open(src, mode, encoding="utf-8", newline=""), True


def read_dataset(src: PathOrStream, domain: Optional[Tuple[float, float]] = None) -> Dataset:
    """Parse a long CSV into a :class:`Dataset`.

    Curves appear in order of first occurrence. The domain is ``[min t, max t]``
    unless given explicitly.
    """
    fh, close = _open_text(src, "r")
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError("empty dataset file") from None
        required = ["curve_id", "t", "y"]
        if header[:3] != required or len(header) > 4 or (len(header) == 4 and header[3] != "label"):
            raise ValueError(f"expected header curve_id,t,y[,label], got {','.join(header)}")
        has_label = len(header) == 4

        points: Dict[str, List[Tuple[float, float]]] = {}
        labels: Dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            cid = row[0].strip()
            try:
                t, y = float(row[1]), float(row[2])
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric t or y") from None
            points.setdefault(cid, []).append((t, y))
            if has_label:
                try:
                    lab = int(row[3])
                except ValueError:
                    raise ValueError(f"line {lineno}: non-integer label {row[3]!r}") from None
                if labels.setdefault(cid, lab) != lab:
                    raise ValueError(f"line {lineno}: curve {cid!r} has conflicting labels")
    finally:
        if close:
            fh.close()

    if not points:
        raise ValueError("dataset file has no data rows")
    curves = []
    for cid, pts in points.items():
        arr = np.array(sorted(pts))
        if np.any(np.diff(arr[:, 0]) == 0):
            raise ValueError(f"curve {cid!r} has duplicate timepoints")
        curves.append(Curve(cid, arr[:, 0], arr[:, 1]))
    if domain is None:
        domain = (min(c.timepoints[0] for c in curves), max(c.timepoints[-1] for c in curves))
        if domain[0] == domain[1]:
            raise ValueError("cannot infer a domain from a single distinct timepoint")
    true_labels = np.array([labels[c.id] for c in curves]) if has_label else None
    return Dataset(tuple(domain), tuple(curves), true_labels)


def write_dataset(dataset: Dataset, dst: PathOrStream) -> None:
    """Write a dataset as long CSV; floats use shortest round-trip text."""
    fh, close = _open_text(dst, "w")
    try:
        has_label = dataset.true_labels is not None
        lines = ["curve_id,t,y,label" if has_label else "curve_id,t,y"]
        for i, c in enumerate(dataset.curves):
            suffix = f",{int(dataset.true_labels[i])}" if has_label else ""
            for t, y in zip(c.timepoints, c.values):
                lines.append(f"{c.id},{float(t)!r},{float(y)!r}{suffix}")
        fh.write("\n".join(lines) + "\n")
    finally:
        if close:
            fh.close()


def dataset_to_csv_string(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(dataset, buf)
    return buf.getvalue()


def rescale_to_unit(dataset: Dataset) -> Dataset:
    """Map the dataset's domain affinely onto ``[0, 1]``."""
    lo, hi = dataset.domain
    span = hi - lo
    curves = tuple(Curve(c.id, np.clip((c.timepoints - lo) / span, 0.0, 1.0), c.values) for c in dataset.curves)
    return Dataset((0.0, 1.0), curves, dataset.true_labels)


def group_by_grid(curves: Iterable[Curve]) -> Dict[bytes, List[int]]:
    """Indices of curves sharing an identical sampling grid, keyed by the grid's bytes."""
    groups: Dict[bytes, List[int]] = {}
    for i, c in enumerate(curves):
        groups.setdefault(c.timepoints.tobytes(), []).append(i)
    return groups
