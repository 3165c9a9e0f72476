"""Dataset contract for non-nested two-sample transport analyses.

One flat table holds both samples. Trial rows (``s == 1``) carry an arm
label, an adherence indicator, and a bounded outcome; target rows
(``s == 0``) carry covariates only. Columns are stored as numpy arrays so
the estimation pipeline never loops over records.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DataError

KINDS = ("continuous", "binary", "categorical")


@dataclass(frozen=True)
class Covariate:
    """A named baseline covariate with its measurement kind.

    ``levels`` is required for categorical covariates (at least two, in the
    order indicator columns should be generated; the first level is the
    reference) and must be empty otherwise.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise DataError("covariate name must be non-empty")
        if self.kind not in KINDS:
            raise DataError(f"unknown covariate kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise DataError(f"categorical covariate {self.name!r} needs >= 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise DataError(f"categorical covariate {self.name!r} has duplicate levels")
        elif self.levels:
            raise DataError(f"levels are only allowed for categorical covariates ({self.name!r})")


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate declarations; order fixes design-matrix columns."""

    covariates: tuple[Covariate, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        reserved = {"s", "a", "z", "y"}
        clash = reserved.intersection(names)
        if clash:
            raise DataError(f"covariate names clash with reserved columns: {sorted(clash)}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def __getitem__(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    def __iter__(self):
        return iter(self.covariates)

    def __len__(self) -> int:
        return len(self.covariates)


@dataclass(frozen=True)
class StudyRecord:
    """One row of the flat table, mostly useful for tests and row predicates.

    ``a``, ``z``, ``y`` are None on target rows.
    """

    s: int
    w: tuple
    a: str | None = None
    z: int | None = None
    y: float | None = None


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr)
    out = out.copy() if not out.flags.owndata else out
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class StudyDataset:
    """Immutable array-backed container for one combined trial/target table.

    Construction validates the dataset contract:

    * ``s`` is 0/1 with at least one row of each;
    * trial rows have an arm label, ``z`` in {0, 1} and ``y`` in [0, 1];
    * target rows have no arm, adherence, or outcome;
    * covariate columns match the schema kinds (binary in {0, 1},
      categorical values among the declared levels, continuous finite).

    Arrays are stored read-only. ``a`` holds the empty string on target rows
    and ``z``/``y`` hold NaN there.
    """

    schema: CovariateSchema
    s: np.ndarray
    a: np.ndarray
    z: np.ndarray
    y: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=np.int8)
        a = np.asarray(self.a, dtype=object)
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float)
        n = s.shape[0]
        for name, arr in (("a", a), ("z", z), ("y", y)):
            if arr.shape != (n,):
                raise DataError(f"column {name!r} has shape {arr.shape}, expected ({n},)")
        if n == 0:
            raise DataError("dataset is empty")
        if not np.isin(s, (0, 1)).all():
            raise DataError("s must be 0 or 1")
        trial = s == 1
        n1 = int(trial.sum())
        if n1 == 0 or n1 == n:
            raise DataError("need at least one trial row (s=1) and one target row (s=0)")

        a_str = np.array(["" if v is None else str(v) for v in a], dtype=object)
        if (a_str[trial] == "").any():
            raise DataError("trial rows must carry an arm label")
        if (a_str[~trial] != "").any():
            raise DataError("target rows must not carry an arm label")

        z_trial = z[trial]
        if np.isnan(z_trial).any() or not np.isin(z_trial, (0.0, 1.0)).all():
            raise DataError("trial rows need adherence z in {0, 1}")
        if not np.isnan(z[~trial]).all():
            raise DataError("target rows must not carry adherence")
        y_trial = y[trial]
        if np.isnan(y_trial).any() or (y_trial < 0).any() or (y_trial > 1).any():
            raise DataError("trial rows need outcome y in [0, 1]")
        if not np.isnan(y[~trial]).all():
            raise DataError("target rows must not carry an outcome")

        cov = {}
        for c in self.schema:
            if c.name not in self.covariates:
                raise DataError(f"missing covariate column {c.name!r}")
            col = np.asarray(self.covariates[c.name])
            if col.shape != (n,):
                raise DataError(f"covariate {c.name!r} has shape {col.shape}, expected ({n},)")
            if c.kind == "categorical":
                col = np.array([str(v) for v in col], dtype=object)
                bad = ~np.isin(col, c.levels)
                if bad.any():
                    i = int(np.flatnonzero(bad)[0])
                    raise DataError(
                        f"covariate {c.name!r} row {i} has value {col[i]!r} outside levels {list(c.levels)}"
                    )
            else:
                col = np.asarray(col, dtype=float)
                if not np.isfinite(col).all():
                    raise DataError(f"covariate {c.name!r} has non-finite values")
                if c.kind == "binary" and not np.isin(col, (0.0, 1.0)).all():
                    raise DataError(f"binary covariate {c.name!r} must be 0/1")
            cov[c.name] = _as_readonly(col)
        extra = set(self.covariates) - set(self.schema.names)
        if extra:
            raise DataError(f"unknown covariate columns: {sorted(extra)}")

        object.__setattr__(self, "s", _as_readonly(s))
        object.__setattr__(self, "a", _as_readonly(a_str))
        object.__setattr__(self, "z", _as_readonly(z))
        object.__setattr__(self, "y", _as_readonly(y))
        object.__setattr__(self, "covariates", cov)

    # -- basic shape --------------------------------------------------------

    @property
    def n(self) -> int:
        return int(self.s.shape[0])

    @property
    def n1(self) -> int:
        return int((self.s == 1).sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def arms(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.a[self.s == 1])))

    @property
    def records(self) -> tuple[StudyRecord, ...]:
        cols = [self.covariates[name] for name in self.schema.names]
        out = []
        for i in range(self.n):
            w = tuple(col[i] for col in cols)
            if self.s[i] == 1:
                out.append(StudyRecord(1, w, str(self.a[i]), int(self.z[i]), float(self.y[i])))
            else:
                out.append(StudyRecord(0, w))
        return tuple(out)

    def degenerate_arm_strata(self) -> list[str]:
        """Arm/adherence strata too thin to support an outcome fit.

        Returns messages for every (arm, z) cell with no trial rows.
        """
        msgs = []
        trial = self.s == 1
        for arm in self.arms:
            in_arm = trial & (self.a == arm)
            for zval in (1, 0):
                if not (in_arm & (self.z == zval)).any():
                    msgs.append(f"arm {arm!r} has no trial rows with z={zval}")
        return msgs

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StudyDataset):
            return NotImplemented
        if self.schema != other.schema:
            return False
        same = (
            np.array_equal(self.s, other.s)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.z, other.z, equal_nan=True)
            and np.array_equal(self.y, other.y, equal_nan=True)
        )
        if not same:
            return False
        for c in self.schema:
            mine, theirs = self.covariates[c.name], other.covariates[c.name]
            if c.kind == "categorical":
                if not np.array_equal(mine, theirs):
                    return False
            elif not np.array_equal(mine, theirs):
                return False
        return True

    @classmethod
    def from_records(cls, schema: CovariateSchema, records: Iterable[StudyRecord]) -> "StudyDataset":
        recs = list(records)
        n = len(recs)
        s = np.array([r.s for r in recs], dtype=np.int8)
        a = np.array(["" if r.a is None else r.a for r in recs], dtype=object)
        z = np.array([np.nan if r.z is None else float(r.z) for r in recs])
        y = np.array([np.nan if r.y is None else float(r.y) for r in recs])
        cov = {}
        for j, c in enumerate(schema):
            vals = [r.w[j] for r in recs]
            cov[c.name] = np.array(vals, dtype=object if c.kind == "categorical" else float)
        del n
        return cls(schema, s, a, z, y, cov)


# -- I/O ---------------------------------------------------------------------


def _parse_row(schema: CovariateSchema, row: Mapping[str, str], lineno: int):
    def bail(msg: str):
        raise DataError(f"row {lineno}: {msg}")

    s_raw = row["s"].strip()
    if s_raw not in ("0", "1"):
        bail(f"s must be 0 or 1, got {s_raw!r}")
    s = int(s_raw)
    a_raw, z_raw, y_raw = row["a"].strip(), row["z"].strip(), row["y"].strip()
    if s == 1:
        if not a_raw:
            bail("trial row without arm label")
        if z_raw not in ("0", "1"):
            bail(f"trial row needs z in {{0, 1}}, got {z_raw!r}")
        try:
            y = float(y_raw)
        except ValueError:
            bail(f"trial row outcome {y_raw!r} is not a number")
        if not 0.0 <= y <= 1.0:
            bail(f"outcome {y} outside [0, 1]")
        a, z = a_raw, float(z_raw)
    else:
        if a_raw or z_raw or y_raw:
            bail("target row must leave a, z, y empty")
        a, z, y = "", np.nan, np.nan

    w = []
    for c in schema:
        raw = row[c.name].strip()
        if raw == "":
            bail(f"missing value for covariate {c.name!r}")
        if c.kind == "categorical":
            if raw not in c.levels:
                bail(f"covariate {c.name!r} value {raw!r} outside levels {list(c.levels)}")
            w.append(raw)
        else:
            try:
                val = float(raw)
            except ValueError:
                bail(f"covariate {c.name!r} value {raw!r} is not a number")
            if c.kind == "binary" and val not in (0.0, 1.0):
                bail(f"binary covariate {c.name!r} must be 0/1, got {raw!r}")
            w.append(val)
    return s, a, z, y, w


def load_dataset(path, schema: CovariateSchema, delimiter: str = ",") -> StudyDataset:
    """Read one delimited text file into a validated :class:`StudyDataset`.

    The header must contain exactly ``s, a, z, y`` plus the schema's
    covariate names (any order). Emits a warning when some (arm, z) stratum
    is empty, since outcome fits on that stratum will fail downstream.
    """
    expected = {"s", "a", "z", "y", *schema.names}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames
        if header is None:
            raise DataError(f"dataset {path} is empty")
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header")
        if set(header) != expected:
            missing = sorted(expected - set(header))
            extra = sorted(set(header) - expected)
            raise DataError(f"header mismatch: missing {missing}, unexpected {extra}")
        s_l, a_l, z_l, y_l = [], [], [], []
        w_l: list[list] = [[] for _ in schema]
        for lineno, row in enumerate(reader, start=2):
            if any(v is None for v in row.values()) or None in row:
                raise DataError(f"row {lineno}: wrong number of fields")
            s, a, z, y, w = _parse_row(schema, row, lineno)
            s_l.append(s)
            a_l.append(a)
            z_l.append(z)
            y_l.append(y)
            for j, v in enumerate(w):
                w_l[j].append(v)
    if not s_l:
        raise DataError(f"dataset {path} has a header but no rows")
    cov = {
        c.name: np.array(w_l[j], dtype=object if c.kind == "categorical" else float)
        for j, c in enumerate(schema)
    }
    ds = StudyDataset(
        schema,
        np.array(s_l, dtype=np.int8),
        np.array(a_l, dtype=object),
        np.array(z_l, dtype=float),
        np.array(y_l, dtype=float),
        cov,
    )
    for msg in ds.degenerate_arm_strata():
        warnings.warn(f"{path}: {msg}; downstream outcome fits will fail", stacklevel=2)
    return ds


def _fmt_num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def save_dataset(ds: StudyDataset, path, delimiter: str = ",") -> None:
    """Write a dataset back to delimited text; inverse of :func:`load_dataset`.

    Continuous values are written with full repr precision so that a
    load/save/load cycle reproduces the dataset exactly.
    """
    names = ["s", "a", "z", "y", *ds.schema.names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(names)
        cols = [ds.covariates[n] for n in ds.schema.names]
        kinds = [c.kind for c in ds.schema]
        for i in range(ds.n):
            if ds.s[i] == 1:
                row = ["1", str(ds.a[i]), str(int(ds.z[i])), _fmt_num(ds.y[i])]
            else:
                row = ["0", "", "", ""]
            for col, kind in zip(cols, kinds):
                row.append(str(col[i]) if kind == "categorical" else _fmt_num(col[i]))
            writer.writerow(row)


# -- design matrices ----------------------------------------------------------


def design_columns(schema: CovariateSchema, covariates: Sequence[str] | None = None) -> list[str]:
    """Column labels of the design matrix built by :func:`design_matrix`."""
    use = schema.names if covariates is None else tuple(covariates)
    cols = ["(intercept)"]
    for name in use:
        c = schema[name]
        if c.kind == "categorical":
            cols.extend(f"{name}={lvl}" for lvl in c.levels[1:])
        else:
            cols.append(name)
    return cols


def design_matrix(
    ds: StudyDataset,
    subset: np.ndarray | Callable[[StudyRecord], bool] | None = None,
    covariates: Sequence[str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Build an intercept-plus-main-effects design matrix for a row subset.

    Parameters
    ----------
    ds : StudyDataset
    subset : boolean mask over rows, predicate over :class:`StudyRecord`,
        or None for all rows.
    covariates : names to include (schema order is kept); None means all
        schema covariates, an empty sequence gives an intercept-only design.

    Returns
    -------
    (X, idx) : the matrix and the original row index of each matrix row.

    Categorical covariates expand to one indicator per non-reference level.
    """
    if subset is None:
        mask = np.ones(ds.n, dtype=bool)
    elif callable(subset):
        mask = np.fromiter((bool(subset(r)) for r in ds.records), dtype=bool, count=ds.n)
    else:
        mask = np.asarray(subset, dtype=bool)
        if mask.shape != (ds.n,):
            raise ValueError(f"subset mask has shape {mask.shape}, expected ({ds.n},)")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("design_matrix subset matches no rows")

    if covariates is None:
        use = ds.schema.names
    else:
        use = tuple(covariates)
        unknown = set(use) - set(ds.schema.names)
        if unknown:
            raise ValueError(f"unknown covariates requested: {sorted(unknown)}")
        # keep schema order regardless of the order given
        use = tuple(n for n in ds.schema.names if n in use)

    cols = [np.ones(idx.size)]
    for name in use:
        c = ds.schema[name]
        col = ds.covariates[name][idx]
        if c.kind == "categorical":
            for lvl in c.levels[1:]:
                cols.append((col == lvl).astype(float))
        else:
            cols.append(col.astype(float))
    X = np.column_stack(cols)
    return X, idx
