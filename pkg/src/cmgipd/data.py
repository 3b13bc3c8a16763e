"""Participant-level dataset representation for one-stage IPD meta-analysis.

A dataset is an ordered collection of trials.  Each trial carries a
continuous outcome ``y``, a 0/1 treatment indicator ``t`` and an
``n_i x p`` covariate matrix ``X``.  A subset of the covariates is marked as
candidate effect moderators; their treatment interactions ``t * x_k`` enter
the model with coefficients ``gamma_k``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Base class for problems with input data."""


class SchemaError(DataError):
    pass


class IngestionError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class TrialBlock:
    trial_id: str
    y: np.ndarray
    t: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(len(y), 0)
        n = len(y)
        if len(t) != n or X.shape[0] != n:
            raise ValidationError(
                f"trial {self.trial_id!r}: y, t and X must have equal row counts "
                f"(got {n}, {len(t)}, {X.shape[0]})")
        if n < 2:
            raise ValidationError(f"trial {self.trial_id!r}: needs at least 2 participants")
        if not np.all((t == 0) | (t == 1)):
            raise ValidationError(f"trial {self.trial_id!r}: treatment must be coded 0/1")
        if t.min() == t.max():
            raise ValidationError(
                f"trial {self.trial_id!r}: both treatment arms must be present")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValidationError(f"trial {self.trial_id!r}: missing or non-finite values")
        for name, arr in (("y", y), ("t", t), ("X", X)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True, eq=False)
class IpdDataset:
    """Immutable multi-trial dataset.

    ``moderators`` holds 0-based column indices into ``covariates``.
    ``offsets`` is the ``I x p`` matrix of means subtracted by
    :func:`center_covariates` (``None`` while the data are uncentered).
    """

    trials: tuple[TrialBlock, ...]
    covariates: tuple[str, ...]
    moderators: tuple[int, ...]
    offsets: np.ndarray | None = None
    centering: str | None = None
    rejected_rows: tuple[int, ...] = field(default=())

    def __post_init__(self):
        trials = tuple(self.trials)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "moderators", tuple(int(k) for k in self.moderators))
        if not trials:
            raise ValidationError("dataset has no trials")
        p = len(self.covariates)
        for tr in trials:
            if tr.X.shape[1] != p:
                raise ValidationError(
                    f"trial {tr.trial_id!r} has {tr.X.shape[1]} covariates, expected {p}")
        ids = [tr.trial_id for tr in trials]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate trial ids")
        mods = self.moderators
        if len(set(mods)) != len(mods):
            raise ValidationError("moderator indices must be distinct")
        if any(k < 0 or k >= p for k in mods):
            raise ValidationError(f"moderator index out of range 0..{p - 1}")

    # sizes ---------------------------------------------------------------
    @property
    def I(self) -> int:  # noqa: E743
        return len(self.trials)

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def d(self) -> int:
        return len(self.moderators)

    @property
    def n(self) -> np.ndarray:
        return np.array([tr.n for tr in self.trials])

    @property
    def N(self) -> int:
        return int(sum(tr.n for tr in self.trials))

    @property
    def trial_ids(self) -> tuple[str, ...]:
        return tuple(tr.trial_id for tr in self.trials)

    @property
    def moderator_names(self) -> tuple[str, ...]:
        return tuple(self.covariates[k] for k in self.moderators)

    # stacked views ---------------------------------------------------------
    @property
    def y(self) -> np.ndarray:
        return np.concatenate([tr.y for tr in self.trials])

    @property
    def t(self) -> np.ndarray:
        return np.concatenate([tr.t for tr in self.trials])

    @property
    def X(self) -> np.ndarray:
        return np.vstack([tr.X for tr in self.trials])

    @property
    def trial_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.I), self.n)

    @property
    def Xem(self) -> np.ndarray:
        """Stacked ``N x d`` matrix of treatment-by-moderator products."""
        return self.t[:, None] * self.X[:, list(self.moderators)]

    def moderator_column(self, k: int) -> np.ndarray:
        """Hadamard product ``t * x_k`` for moderator position ``k`` (0-based, < d)."""
        return moderator_column(self, k)

    def with_moderators(self, moderators: Sequence[int | str]) -> "IpdDataset":
        return replace(self, moderators=tuple(_resolve(self.covariates, m) for m in moderators))

    def uncentered_X(self) -> np.ndarray:
        if self.offsets is None:
            return self.X
        return self.X + self.offsets[self.trial_index]


def _resolve(covariates: Sequence[str], m: int | str) -> int:
    if isinstance(m, str):
        try:
            return list(covariates).index(m)
        except ValueError:
            raise ValidationError(f"unknown moderator {m!r}") from None
    return int(m)


def moderator_column(data: IpdDataset, k: int) -> np.ndarray:
    if not 0 <= k < data.d:
        raise IndexError(f"moderator position {k} out of range for d={data.d}")
    col = data.moderators[k]
    return np.concatenate([tr.t * tr.X[:, col] for tr in data.trials])


def center_covariates(data: IpdDataset, how: str = "pooled") -> IpdDataset:
    """Subtract covariate means, pooled across trials (default) or within trial.

    The subtracted means accumulate in ``offsets`` so that repeated centering
    still records the full shift from the original scale.
    """
    if how == "pooled":
        means = data.X.mean(axis=0)
        shift = np.tile(means, (data.I, 1))
    elif how == "within":
        shift = np.array([tr.X.mean(axis=0) for tr in data.trials]).reshape(data.I, data.p)
    else:
        raise ValueError(f"unknown centering {how!r}; use 'pooled' or 'within'")
    trials = tuple(replace(tr, X=tr.X - shift[i]) for i, tr in enumerate(data.trials))
    offsets = shift if data.offsets is None else data.offsets + shift
    return replace(data, trials=trials, offsets=offsets, centering=how)


def from_arrays(y, t, X, trial, covariates: Sequence[str] | None = None,
                moderators: Sequence[int | str] | None = None) -> IpdDataset:
    """Build a dataset from stacked arrays; trial order follows first appearance."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    trial = np.asarray(trial)
    if covariates is None:
        covariates = [f"x{j + 1}" for j in range(X.shape[1])]
    order = list(dict.fromkeys(trial.tolist()))
    blocks = []
    for tid in order:
        m = trial == tid
        blocks.append(TrialBlock(str(tid), y[m], t[m], X[m]))
    mods = range(len(covariates)) if moderators is None else moderators
    return IpdDataset(tuple(blocks), tuple(covariates),
                      tuple(_resolve(covariates, m) for m in mods))


def ingest_csv(path: str | Path, columns: Mapping[str, object] | None = None,
               moderators: Sequence[int | str] | None = None,
               drop_incomplete: bool = False) -> IpdDataset:
    """Read a participant-level CSV into an uncentered :class:`IpdDataset`.

    ``columns`` maps the roles ``trial_id``, ``y`` and ``t`` to header names and
    may list ``covariates`` explicitly; by default every ``x<j>`` column is a
    covariate.  Rows with an empty cell raise :class:`IngestionError` unless
    ``drop_incomplete`` is set, in which case they are skipped and their line
    numbers kept in ``rejected_rows``.
    """
    columns = dict(columns or {})
    c_trial = columns.get("trial_id", "trial_id")
    c_y = columns.get("y", "y")
    c_t = columns.get("t", "t")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        covs = columns.get("covariates")
        if covs is None:
            covs = sorted((h for h in header if h[:1] == "x" and h[1:].isdigit()),
                          key=lambda h: int(h[1:]))
        covs = list(covs)
        missing = [c for c in [c_trial, c_y, c_t, *covs] if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {h: j for j, h in enumerate(header)}
        num_cols = [c_y, c_t, *covs]
        trial_ids, rows, rejected = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < len(header):
                rec = rec + [""] * (len(header) - len(rec))
            cells = [rec[pos[c]].strip() for c in num_cols]
            tid = rec[pos[c_trial]].strip()
            empty = [c for c, v in zip([c_trial, *num_cols], [tid, *cells]) if v == ""]
            if empty:
                if drop_incomplete:
                    rejected.append(lineno)
                    continue
                raise IngestionError(f"missing value in {', '.join(empty)}", row=lineno)
            vals = []
            for c, v in zip(num_cols, cells):
                try:
                    x = float(v)
                except ValueError:
                    raise IngestionError(f"non-numeric value {v!r} in column {c}",
                                         row=lineno) from None
                if not math.isfinite(x):
                    raise IngestionError(f"non-finite value {v!r} in column {c}", row=lineno)
                vals.append(x)
            trial_ids.append(tid)
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no complete data rows")
    arr = np.array(rows, dtype=float)
    data = from_arrays(arr[:, 0], arr[:, 1], arr[:, 2:].reshape(len(arr), len(covs)),
                       np.array(trial_ids, dtype=object), covs, moderators)
    return replace(data, rejected_rows=tuple(rejected))
