"""Non-collocated multivariate spatial observations and target location sets.

Observations are grouped per variable: each variable q in 1..p has its own
ordered set of locations and values, with no requirement that different
variables share locations. Coordinates are planar (2-d).
"""

import csv
import sys
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError
from .validation import as_coords_array, as_float_array

CSV_HEADER = ("variable", "x", "y", "value")


@dataclass(frozen=True)
class Location:
    """A planar location. Coordinates must be finite."""

    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise DataError(f"Location: non-finite coordinate ({self.x}, {self.y})")


class LocationSet:
    """An ordered, nonempty set of planar locations.

    Wraps an (n, 2) read-only float array. Positional duplicates are allowed
    here; duplicate policy is enforced where it matters (per-variable series).
    """

    def __init__(self, coords):
        arr = as_coords_array(coords, "LocationSet")
        arr = arr.copy()
        arr.setflags(write=False)
        self._coords = arr

    @property
    def coords(self):
        return self._coords

    def __len__(self):
        return self._coords.shape[0]

    def __getitem__(self, i):
        x, y = self._coords[i]
        return Location(float(x), float(y))

    def __eq__(self, other):
        if not isinstance(other, LocationSet):
            return NotImplemented
        return self._coords.shape == other._coords.shape and bool(
            np.all(self._coords == other._coords)
        )

    def __repr__(self):
        return f"LocationSet(n={len(self)})"

    @staticmethod
    def from_locations(locations):
        return LocationSet([(loc.x, loc.y) for loc in locations])


def _duplicate_rows(coords):
    """Indices (i, j), i < j, of bitwise-equal coordinate rows."""
    seen = {}
    dups = []
    for i, row in enumerate(coords):
        key = (row[0].tobytes(), row[1].tobytes())
        if key in seen:
            dups.append((seen[key], i))
        else:
            seen[key] = i
    return dups


@dataclass(frozen=True)
class VariableSeries:
    """Observations of one variable: equal-length locations and values."""

    variable_id: int
    locations: LocationSet
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = as_float_array(self.values, f"values of variable {self.variable_id}", ndim=1)
        object.__setattr__(self, "values", vals)
        if len(self.locations) != vals.shape[0]:
            raise DataError(
                f"variable {self.variable_id}: {len(self.locations)} locations "
                f"but {vals.shape[0]} values"
            )
        if vals.shape[0] < 1:
            raise DataError(f"variable {self.variable_id}: needs at least one observation")
        dups = _duplicate_rows(self.locations.coords)
        if dups:
            i, j = dups[0]
            raise DataError(
                f"variable {self.variable_id}: duplicate location at rows {i} and {j}"
            )

    @property
    def n(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class MultivariateDataset:
    """Per-variable observation series with contiguous variable ids 1..p."""

    series: tuple

    def __post_init__(self):
        series = tuple(self.series)
        object.__setattr__(self, "series", series)
        if not series:
            raise DataError("dataset: needs at least one variable series")
        ids = [s.variable_id for s in series]
        if ids != list(range(1, len(series) + 1)):
            raise DataError(f"dataset: variable ids must be contiguous 1..p, got {ids}")

    @property
    def p(self):
        return len(self.series)

    @property
    def n_total(self):
        return sum(s.n for s in self.series)

    def get(self, variable_id):
        return self.series[variable_id - 1]

    def location_sets(self):
        return [s.locations for s in self.series]

    def stacked_values(self):
        """All values stacked variable-major (variable 1 first)."""
        return np.concatenate([s.values for s in self.series])

    def subset(self, keep_indices):
        """New dataset keeping, per variable, the given observation indices.

        `keep_indices` is a list of index arrays, one per variable, in 1..p
        order. Every variable must keep at least one observation.
        """
        out = []
        for s, idx in zip(self.series, keep_indices):
            idx = np.asarray(idx, dtype=int)
            if idx.size == 0:
                raise DataError(f"subset: variable {s.variable_id} left empty")
            out.append(
                VariableSeries(
                    s.variable_id,
                    LocationSet(s.locations.coords[idx]),
                    s.values[idx],
                )
            )
        return MultivariateDataset(tuple(out))


def load_dataset(path, schema=None, mapping_stream=None):
    """Load a CSV of (variable, x, y, value) rows into a MultivariateDataset.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row. Default column names are
        ``variable,x,y,value``; `schema` may remap them.
    schema : dict, optional
        Mapping from role (``variable``/``x``/``y``/``value``) to the
        column name used in the file.
    mapping_stream : file-like, optional
        Where the ``original_id -> new_id`` re-index lines go
        (default: standard error).

    Returns
    -------
    MultivariateDataset
        Variable ids re-indexed to contiguous 1..p (ascending original id);
        row order within a variable preserved.
    """
    schema = dict(schema or {})
    colnames = {role: schema.get(role, role) for role in CSV_HEADER}
    stream = mapping_stream if mapping_stream is not None else sys.stderr

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open dataset file {path!r}: {exc}") from exc

    rows = {}
    order = []
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        try:
            cols = {role: header.index(colnames[role]) for role in CSV_HEADER}
        except ValueError:
            raise DataError(
                f"{path}: header {header} is missing required columns "
                f"{sorted(colnames.values())}"
            ) from None

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = int(row[cols["variable"]])
                x = float(row[cols["x"]])
                y = float(row[cols["y"]])
                value = float(row[cols["value"]])
            except (ValueError, IndexError):
                raise DataError(f"{path}: malformed row at line {lineno}: {row!r}") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise DataError(f"{path}: non-finite coordinate at line {lineno}")
            if not np.isfinite(value):
                raise DataError(f"{path}: non-finite value at line {lineno}")
            if vid not in rows:
                rows[vid] = []
                order.append(vid)
            rows[vid].append((x, y, value, lineno))

    if not rows:
        raise DataError(f"{path}: no observation rows")

    mapping = {orig: new for new, orig in enumerate(sorted(rows), start=1)}
    for orig in sorted(mapping):
        print(f"{orig} -> {mapping[orig]}", file=stream)

    series = []
    for orig in sorted(mapping):
        recs = rows[orig]
        coords = np.array([(r[0], r[1]) for r in recs], dtype=float)
        dups = _duplicate_rows(coords)
        if dups:
            i, j = dups[0]
            raise DataError(
                f"{path}: duplicate (variable, location) pair for variable {orig} "
                f"at lines {recs[i][3]} and {recs[j][3]}"
            )
        series.append(
            VariableSeries(
                mapping[orig],
                LocationSet(coords),
                np.array([r[2] for r in recs], dtype=float),
            )
        )
    return MultivariateDataset(tuple(series))


def save_dataset(d, path):
    """Write a dataset to CSV using the canonical header. Inverse of load."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in d.series:
            for (x, y), v in zip(s.locations.coords, s.values):
                writer.writerow([s.variable_id, repr(float(x)), repr(float(y)), repr(float(v))])


def collocation_report(d, tol):
    """Count, per variable pair, cross-variable location pairs within `tol`.

    Returns a p x p integer matrix with zeros on the diagonal; entry (q, r)
    counts pairs (i, j) with ||s_qi - s_rj|| <= tol, so the matrix is
    symmetric.
    """
    if tol < 0:
        raise DataError(f"collocation_report: tol must be >= 0, got {tol}")
    p = d.p
    counts = np.zeros((p, p), dtype=int)
    for q in range(1, p + 1):
        for r in range(q + 1, p + 1):
            a = d.get(q).locations.coords
            b = d.get(r).locations.coords
            d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
            c = int(np.count_nonzero(d2 <= tol * tol))
            counts[q - 1, r - 1] = c
            counts[r - 1, q - 1] = c
    return counts


def make_grid(xmin, xmax, ymin, ymax, nx, ny):
    """Regular nx-by-ny grid, endpoints inclusive, row-major (x fastest).

    A degenerate axis (min == max) is allowed only when its count is 1.
    """
    nx = int(nx)
    ny = int(ny)
    if nx < 1 or ny < 1:
        raise DataError(f"make_grid: counts must be positive, got nx={nx}, ny={ny}")
    for name, lo, hi, n in (("x", xmin, xmax, nx), ("y", ymin, ymax, ny)):
        if hi < lo or (hi == lo and n != 1):
            raise DataError(
                f"make_grid: invalid {name} bounds [{lo}, {hi}] for n{name}={n}"
            )
    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)
    xx, yy = np.meshgrid(xs, ys)  # rows are y levels, x varies fastest
    return LocationSet(np.column_stack([xx.ravel(), yy.ravel()]))


def coincidence_mask(A, B):
    """Boolean (|A|, |B|) mask of bitwise-equal coordinate pairs."""
    a = A.coords
    b = B.coords
    return (a[:, None, 0] == b[None, :, 0]) & (a[:, None, 1] == b[None, :, 1])
