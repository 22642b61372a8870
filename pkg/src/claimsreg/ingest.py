"""Claims and registry ingestion, prevalence filtering, code hierarchies and
comorbidity-index reduction.

File formats
------------
claims CSV
    header ``subject_id,code``; one claim per row.
registry CSV
    required ``subject_id`` and ``treatment`` columns, outcome columns prefixed
    with ``y_``; every other column is a numeric baseline covariate.
comorbidity map CSV
    ``prefix,category[,weight]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

OUTCOME_PREFIX = "y_"


@dataclass(frozen=True, order=True)
class Icd9Code:
    """A diagnosis code kept as text; leading zeros and V/E prefixes matter."""

    raw: str

    def __post_init__(self):
        norm = str(self.raw).strip().upper()
        if not (3 <= len(norm) <= 5) or not norm.isalnum():
            raise ValidationError(f"malformed diagnosis code {self.raw!r}")
        object.__setattr__(self, "raw", norm)

    @property
    def prefix3(self) -> str:
        return self.raw[:3]

    @property
    def suffix(self) -> str:
        return self.raw[3:]

    def __str__(self):
        return self.raw


@dataclass(frozen=True)
class AnalysisDataset:
    """Treatment, outcomes, baseline covariates and a binary claims matrix.

    Parameters
    ----------
    subject_ids : list of str
    X : (n,) int array
        1 for the new treatment, 0 for the comparator.
    Y : dict of str -> (n,) int array
        Outcome vectors keyed by name (without the ``y_`` prefix).
    B : (n, q) float array
        Baseline covariates on their original scale.
    C : (n, p) array
        Claims indicators; after comorbidity reduction in continuous mode this
        holds a single real-valued score column.
    B_names, C_names : list of str
    meta : dict
        Bookkeeping from reductions (e.g. unmapped codes, dropped categories).
    """

    subject_ids: list
    X: np.ndarray
    Y: dict
    B: np.ndarray
    C: np.ndarray
    B_names: list
    C_names: list
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.subject_ids)
        if self.X.shape != (n,):
            raise ValidationError("treatment vector length does not match subjects")
        for name, y in self.Y.items():
            if y.shape != (n,):
                raise ValidationError(f"outcome {name!r} length does not match subjects")
        if self.B.shape != (n, len(self.B_names)):
            raise ValidationError("baseline matrix shape does not match names")
        if self.C.shape != (n, len(self.C_names)):
            raise ValidationError("claims matrix shape does not match names")
        for names, what in ((self.B_names, "baseline"), (self.C_names, "claims")):
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate {what} column names")

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @property
    def outcome_names(self) -> list:
        return list(self.Y)

    def subset_subjects(self, rows) -> "AnalysisDataset":
        """Keep the subjects selected by a boolean mask or index array."""
        rows = np.arange(self.n)[np.asarray(rows)]
        return replace(self, subject_ids=[self.subject_ids[i] for i in rows], X=self.X[rows],
                       Y={k: v[rows] for k, v in self.Y.items()}, B=self.B[rows],
                       C=self.C[rows])

    def with_claims(self, C, names, **meta) -> "AnalysisDataset":
        return replace(self, C=np.asarray(C), C_names=list(names),
                       meta={**self.meta, **meta})


def _read_rows(path, required):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required if c not in header]
            if missing:
                raise ValidationError(f"{path}: missing column(s) {missing}")
            return header, list(reader)
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: not valid UTF-8") from exc


def _binary(value, column, rownum):
    v = value.strip()
    if v not in ("0", "1"):
        raise ValidationError(
            f"row {rownum}: column {column!r} must be 0 or 1, got {value!r}")
    return int(v)


def parse_claims(claims_file, registry_file) -> AnalysisDataset:
    """Build an (unfiltered) analysis dataset from claims and registry CSVs.

    Claims columns are the distinct codes in lexicographic order; a subject
    carries a 1 if it has at least one claim of that code. Registry row numbers
    in error messages count the header as row 1.
    """
    header, reg_rows = _read_rows(registry_file, ["subject_id", "treatment"])
    outcome_cols = [c for c in header if c.startswith(OUTCOME_PREFIX)]
    base_cols = [c for c in header
                 if c not in ("subject_id", "treatment") and c not in outcome_cols]

    ids = []
    index = {}
    X = np.empty(len(reg_rows), dtype=np.int64)
    Y = {c[len(OUTCOME_PREFIX):]: np.empty(len(reg_rows), dtype=np.int64)
         for c in outcome_cols}
    B = np.empty((len(reg_rows), len(base_cols)))
    for i, row in enumerate(reg_rows):
        rownum = i + 2
        sid = row["subject_id"].strip()
        if sid in index:
            raise ValidationError(f"row {rownum}: duplicate subject_id {sid!r}")
        index[sid] = i
        ids.append(sid)
        X[i] = _binary(row["treatment"], "treatment", rownum)
        for c in outcome_cols:
            Y[c[len(OUTCOME_PREFIX):]][i] = _binary(row[c], c, rownum)
        for j, c in enumerate(base_cols):
            try:
                B[i, j] = float(row[c])
            except (TypeError, ValueError):
                raise ValidationError(
                    f"row {rownum}: covariate {c!r} is not numeric: {row[c]!r}") from None
            if not math.isfinite(B[i, j]):
                raise ValidationError(f"row {rownum}: covariate {c!r} is not finite")

    _, claim_rows = _read_rows(claims_file, ["subject_id", "code"])
    pairs = set()
    for row in claim_rows:
        sid = row["subject_id"].strip()
        if sid not in index:
            raise ValidationError(f"claims reference unknown subject_id {sid!r}")
        pairs.add((index[sid], Icd9Code(row["code"]).raw))

    codes = sorted({code for _, code in pairs})
    col = {code: j for j, code in enumerate(codes)}
    C = np.zeros((len(ids), len(codes)), dtype=np.int8)
    for i, code in pairs:
        C[i, col[code]] = 1

    return AnalysisDataset(ids, X, Y, B, C, base_cols, codes)


def _fmt(x) -> str:
    return repr(float(x))


def write_dataset(dataset: AnalysisDataset, claims_file, registry_file):
    """Serialize a binary-claims dataset in the formats read by `parse_claims`."""
    Path(claims_file).parent.mkdir(parents=True, exist_ok=True)
    Path(registry_file).parent.mkdir(parents=True, exist_ok=True)
    with open(registry_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "treatment",
                    *[OUTCOME_PREFIX + k for k in dataset.Y], *dataset.B_names])
        for i, sid in enumerate(dataset.subject_ids):
            w.writerow([sid, int(dataset.X[i]), *[int(y[i]) for y in dataset.Y.values()],
                        *[_fmt(b) for b in dataset.B[i]]])
    with open(claims_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "code"])
        for i, sid in enumerate(dataset.subject_ids):
            for j in np.flatnonzero(dataset.C[i]):
                w.writerow([sid, dataset.C_names[j]])


def filter_by_prevalence(dataset: AnalysisDataset, threshold: int = 10) -> AnalysisDataset:
    """Keep claims columns carried by at least `threshold` distinct subjects."""
    if threshold < 1:
        raise ValidationError("prevalence threshold must be >= 1")
    keep = np.flatnonzero(np.asarray(dataset.C).sum(axis=0) >= threshold)
    return dataset.with_claims(dataset.C[:, keep], [dataset.C_names[j] for j in keep])


@dataclass(frozen=True)
class CodeGroup:
    prefix3: str
    members: tuple
    index: int

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class CodeHierarchy:
    """Three-character groupings of the retained codes.

    ``groups`` holds only prefixes with two or more retained members, in
    lexicographic prefix order; lone codes go to ``singletons``.
    """

    groups: tuple
    singletons: tuple

    @property
    def L(self) -> int:
        return len(self.groups)

    @property
    def group_sizes(self) -> list:
        return [g.size for g in self.groups]

    @property
    def n_codes(self) -> int:
        return sum(self.group_sizes) + len(self.singletons)

    def report(self) -> dict:
        sizes = self.group_sizes
        return {
            "n_codes": self.n_codes,
            "n_groups": self.L,
            "n_singletons": len(self.singletons),
            "max_group_size": max(sizes, default=0),
            "n_groups_size_2": sum(s == 2 for s in sizes),
        }


def build_hierarchy(codes) -> CodeHierarchy:
    """Group codes by their first three characters.

    `codes` may be an `AnalysisDataset` (its claims column names are used) or
    any iterable of code strings.
    """
    if isinstance(codes, AnalysisDataset):
        codes = codes.C_names
    by_prefix: dict = {}
    for c in codes:
        c = Icd9Code(c).raw
        by_prefix.setdefault(c[:3], []).append(c)
    groups, singletons = [], []
    for prefix in sorted(by_prefix):
        members = by_prefix[prefix]
        if len(members) >= 2:
            groups.append(CodeGroup(prefix, tuple(members), len(groups)))
        else:
            singletons.append(members[0])
    return CodeHierarchy(tuple(groups), tuple(singletons))


def collapse_to_prefix3(dataset: AnalysisDataset) -> AnalysisDataset:
    """Replace 4-digit indicators by 3-digit ones (any member code present)."""
    prefixes = sorted({Icd9Code(c).prefix3 for c in dataset.C_names})
    pos = {p: j for j, p in enumerate(prefixes)}
    C = np.zeros((dataset.n, len(prefixes)), dtype=np.int8)
    for j, c in enumerate(dataset.C_names):
        k = pos[c[:3]]
        C[:, k] |= dataset.C[:, j].astype(np.int8)
    return dataset.with_claims(C, prefixes)


@dataclass(frozen=True)
class ComorbidityMap:
    """Prefix-to-category mapping with optional integer severity weights."""

    entries: tuple
    category_weights: Mapping | None = None

    def __post_init__(self):
        if self.category_weights is not None:
            missing = set(self.categories) - set(self.category_weights)
            if missing:
                raise ValidationError(f"categories without weight: {sorted(missing)}")

    @property
    def categories(self) -> list:
        seen = {}
        for _, cat in self.entries:
            seen.setdefault(cat, None)
        return list(seen)

    def lookup(self, code: str):
        """Category of `code` by longest-prefix match, or None."""
        best, best_len = None, -1
        for prefix, cat in self.entries:
            if code.startswith(prefix) and len(prefix) > best_len:
                best, best_len = cat, len(prefix)
        return best

    @classmethod
    def from_csv(cls, path) -> "ComorbidityMap":
        header, rows = _read_rows(path, ["prefix", "category"])
        entries, weights = [], {}
        has_weight = "weight" in header
        for i, row in enumerate(rows):
            prefix = row["prefix"].strip().upper()
            cat = row["category"].strip()
            if not prefix or not cat:
                raise ValidationError(f"{path}: row {i + 2} has an empty field")
            entries.append((prefix, cat))
            if has_weight and (row.get("weight") or "").strip():
                try:
                    w = int(row["weight"])
                except ValueError:
                    raise ValidationError(
                        f"{path}: row {i + 2} weight is not an integer") from None
                if weights.setdefault(cat, w) != w:
                    raise ValidationError(f"{path}: conflicting weights for {cat!r}")
        return cls(tuple(entries), weights if has_weight else None)


def apply_comorbidity_index(dataset: AnalysisDataset, cmap: ComorbidityMap,
                            mode: str = "indicator", threshold: int = 10) -> AnalysisDataset:
    """Reduce claims codes to comorbidity categories.

    In ``indicator`` mode the claims matrix becomes one binary column per
    category (categories carried by fewer than `threshold` subjects are
    dropped). In ``continuous`` mode it becomes a single column holding the
    weighted sum of all category indicators. Codes matching no prefix are
    ignored and listed in ``meta["unmapped_codes"]``.
    """
    if mode not in ("indicator", "continuous"):
        raise ValidationError(f"unknown comorbidity mode {mode!r}")
    if mode == "continuous" and cmap.category_weights is None:
        raise ValidationError("continuous comorbidity score requires category weights")

    cats = cmap.categories
    pos = {c: k for k, c in enumerate(cats)}
    ind = np.zeros((dataset.n, len(cats)), dtype=np.int8)
    unmapped = []
    for j, code in enumerate(dataset.C_names):
        cat = cmap.lookup(code)
        if cat is None:
            unmapped.append(code)
            continue
        ind[:, pos[cat]] |= dataset.C[:, j].astype(np.int8)

    if mode == "continuous":
        w = np.array([cmap.category_weights[c] for c in cats], dtype=float)
        score = ind @ w
        return dataset.with_claims(score[:, None], ["comorbidity_score"],
                                   unmapped_codes=unmapped, dropped_categories=[])
    keep = ind.sum(axis=0) >= threshold
    return dataset.with_claims(
        ind[:, keep], [c for c, k in zip(cats, keep) if k],
        unmapped_codes=unmapped,
        dropped_categories=[c for c, k in zip(cats, keep) if not k])


def subset_codes(dataset: AnalysisDataset, names: Sequence[str]) -> AnalysisDataset:
    """Restrict the claims matrix to the named columns (in the given order)."""
    pos = {c: j for j, c in enumerate(dataset.C_names)}
    try:
        idx = [pos[c] for c in names]
    except KeyError as exc:
        raise ValidationError(f"unknown claims column {exc.args[0]!r}") from None
    return dataset.with_claims(dataset.C[:, idx], list(names))
