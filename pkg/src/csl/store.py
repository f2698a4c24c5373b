"""Embedding datasets: validation, binary/text formats, splits and views.

Binary layout (little-endian)::

    b"CSL1" | u32 flags | u64 N | u64 D | u32 C | u32 M
    | N*D float32 features (row-major)
    | [N u32 labels]   if flags & 1
    | [N u32 domains]  if flags & 2

Text layout: a header ``dim=<D> classes=<C> domains=<M>`` followed by one
comma-separated row per example: D floats, then the label and the domain id
when present.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

MAGIC = b"CSL1"
_HEADER = struct.Struct("<4sIQQII")
FLAG_LABELS = 1
FLAG_DOMAINS = 2


class DatasetError(ValueError):
    """Base class for dataset validation and parsing failures."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class MalformedHeaderError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class NonFiniteValueError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


def _first_bad_row(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    domains: Optional[np.ndarray] = None
    class_count: int = 2
    domain_count: int = 1
    name: str = ""

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float32)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DimensionMismatchError(f"features must be a non-empty N x D matrix, got shape {f.shape}")
        finite = np.isfinite(f)
        if not finite.all():
            raise NonFiniteValueError("non-finite feature value", row=_first_bad_row(~finite.all(axis=1)))
        if self.class_count < 2:
            raise DatasetError(f"class_count must be >= 2, got {self.class_count}")
        if self.domain_count < 1:
            raise DatasetError(f"domain_count must be >= 1, got {self.domain_count}")
        object.__setattr__(self, "features", f)
        f.flags.writeable = False
        for field, bound in (("labels", self.class_count), ("domains", self.domain_count)):
            v = getattr(self, field)
            if v is None:
                continue
            v = np.asarray(v)
            if v.shape != (f.shape[0],):
                raise DimensionMismatchError(f"{field} has shape {v.shape}, expected ({f.shape[0]},)")
            if v.size and (v.dtype.kind not in "iu" and not np.all(v == np.round(v))):
                raise DatasetError(f"{field} must be integral")
            v = v.astype(np.int64)
            bad = (v < 0) | (v >= bound)
            if bad.any():
                row = _first_bad_row(bad)
                raise LabelRangeError(f"{field[:-1]} {v[row]} outside [0, {bound})", row=row)
            v.flags.writeable = False
            object.__setattr__(self, field, v)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def base(self) -> "EmbeddingDataset":
        return self

    def view(self, indices) -> "DatasetView":
        return DatasetView(self, np.asarray(indices, dtype=np.int64))

    def equals(self, other: "EmbeddingDataset") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.class_count == other.class_count
            and self.domain_count == other.domain_count
            and same(self.features, other.features)
            and same(self.labels, other.labels)
            and same(self.domains, other.domains)
        )


class DatasetView:
    """Index-based view of an :class:`EmbeddingDataset`.

    ``indices`` map view rows to base rows; arrays are gathered on access.
    """

    def __init__(self, base: EmbeddingDataset, indices: np.ndarray):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1:
            raise ValueError("view indices must be one-dimensional")
        if indices.size and (indices.min() < 0 or indices.max() >= base.n):
            raise IndexError("view index out of range")
        indices.flags.writeable = False
        self.base = base
        self.indices = indices

    @property
    def n(self) -> int:
        return len(self.indices)

    def __len__(self):
        return self.n

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def class_count(self) -> int:
        return self.base.class_count

    @property
    def domain_count(self) -> int:
        return self.base.domain_count

    @property
    def name(self) -> str:
        return self.base.name

    @property
    def features(self) -> np.ndarray:
        return self.base.features[self.indices]

    @property
    def labels(self) -> Optional[np.ndarray]:
        return None if self.base.labels is None else self.base.labels[self.indices]

    @property
    def domains(self) -> Optional[np.ndarray]:
        return None if self.base.domains is None else self.base.domains[self.indices]

    def view(self, positions) -> "DatasetView":
        return DatasetView(self.base, self.indices[np.asarray(positions, dtype=np.int64)])

    def materialize(self) -> EmbeddingDataset:
        return EmbeddingDataset(self.features, self.labels, self.domains,
                                self.class_count, self.domain_count, self.name)


@dataclass(frozen=True)
class DatasetSplit:
    train_indices: np.ndarray
    eval_indices: np.ndarray


def split_dataset(dataset, train_fraction: float, seed: int) -> DatasetSplit:
    """Seeded random partition into train and eval positions of ``dataset``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return DatasetSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:]))


def restrict(dataset, classes=None, domains=None,
             predicate: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> DatasetView:
    """View of the rows whose label is in ``classes`` and domain in ``domains``.

    ``predicate`` receives the (label, domain) arrays and returns a mask; it is
    combined with the set filters by logical and. Relative order is kept.
    """
    mask = np.ones(len(dataset), dtype=bool)
    labels, doms = dataset.labels, dataset.domains
    if classes is not None:
        if labels is None:
            raise DatasetError("restrict by class requires labels")
        mask &= np.isin(labels, np.fromiter(classes, dtype=np.int64))
    if domains is not None:
        if doms is None:
            raise DatasetError("restrict by domain requires domain tags")
        mask &= np.isin(doms, np.fromiter(domains, dtype=np.int64))
    if predicate is not None:
        if labels is None and doms is None:
            raise DatasetError("predicate needs labels or domain tags")
        mask &= np.asarray(predicate(labels, doms), dtype=bool)
    return dataset.view(np.flatnonzero(mask))


# -- binary format ---------------------------------------------------------

def save_binary(dataset: EmbeddingDataset, path) -> None:
    flags = (FLAG_LABELS if dataset.labels is not None else 0) | (
        FLAG_DOMAINS if dataset.domains is not None else 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, flags, dataset.n, dataset.dim,
                              dataset.class_count, dataset.domain_count))
        fh.write(dataset.features.astype("<f4").tobytes())
        if dataset.labels is not None:
            fh.write(dataset.labels.astype("<u4").tobytes())
        if dataset.domains is not None:
            fh.write(dataset.domains.astype("<u4").tobytes())


def load_binary(path, name: str = "") -> EmbeddingDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than header")
    magic, flags, n, d, c, m = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if flags & ~(FLAG_LABELS | FLAG_DOMAINS):
        raise MalformedHeaderError(f"{path}: unknown flag bits {flags:#x}")
    if n < 1 or d < 1:
        raise MalformedHeaderError(f"{path}: empty shape N={n} D={d}")
    expected = _HEADER.size + 4 * n * d
    expected += 4 * n * (bool(flags & FLAG_LABELS) + bool(flags & FLAG_DOMAINS))
    if len(raw) != expected:
        raise DimensionMismatchError(f"{path}: expected {expected} bytes for N={n} D={d}, got {len(raw)}")
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    labels = domains = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off)
        off += 4 * n
    if flags & FLAG_DOMAINS:
        domains = np.frombuffer(raw, dtype="<u4", count=n, offset=off)
    return EmbeddingDataset(feats.astype(np.float32), labels, domains, c, m, name or Path(path).stem)


# -- text format -----------------------------------------------------------

def save_text(dataset: EmbeddingDataset, path) -> None:
    if dataset.domains is not None and dataset.labels is None:
        raise DatasetError("text format cannot hold domain tags without labels")
    lines = [f"dim={dataset.dim} classes={dataset.class_count} domains={dataset.domain_count}"]
    for i, row in enumerate(dataset.features.astype(np.float64)):
        cells = [format(v, ".17g") for v in row]
        if dataset.labels is not None:
            cells.append(str(int(dataset.labels[i])))
        if dataset.domains is not None:
            cells.append(str(int(dataset.domains[i])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str) -> tuple[int, int, int]:
    fields = {}
    for tok in line.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise MalformedHeaderError(f"header token {tok!r} is not key=value")
        try:
            fields[key] = int(val)
        except ValueError:
            raise MalformedHeaderError(f"header value {tok!r} is not an integer") from None
    if set(fields) != {"dim", "classes", "domains"}:
        raise MalformedHeaderError(f"header must define dim, classes, domains; got {sorted(fields)}")
    return fields["dim"], fields["classes"], fields["domains"]


def load_text(path, name: str = "") -> EmbeddingDataset:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise MalformedHeaderError(f"{path}: empty file")
    d, c, m = _parse_header(lines[0])
    rows, extras = [], []
    width = None
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if width is None:
            width = len(cells)
            if width not in (d, d + 1, d + 2):
                raise DimensionMismatchError(f"expected {d} to {d + 2} columns, got {width}", row=i)
        elif len(cells) != width:
            raise DimensionMismatchError(f"expected {width} columns, got {len(cells)}", row=i)
        try:
            vals = [float(x) for x in cells[:d]]
            tags = [int(x) for x in cells[d:]]
        except ValueError as exc:
            raise DatasetError(f"unparseable value ({exc})", row=i) from None
        if not all(np.isfinite(vals)):
            raise NonFiniteValueError("non-finite feature value", row=i)
        rows.append(vals)
        extras.append(tags)
    if not rows:
        raise DimensionMismatchError(f"{path}: no data rows")
    extras = np.array(extras, dtype=np.int64).reshape(len(rows), -1)
    labels = extras[:, 0] if extras.shape[1] >= 1 else None
    domains = extras[:, 1] if extras.shape[1] == 2 else None
    return EmbeddingDataset(np.array(rows, dtype=np.float64).astype(np.float32), labels, domains,
                            c, m, name or Path(path).stem)


def save_dataset(dataset, path, format: str = "binary") -> None:
    if isinstance(dataset, DatasetView):
        dataset = dataset.materialize()
    if format == "binary":
        save_binary(dataset, path)
    elif format == "text":
        save_text(dataset, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def load_dataset(path, format: str = "binary") -> EmbeddingDataset:
    if format == "binary":
        return load_binary(path)
    if format == "text":
        return load_text(path)
    raise ValueError(f"unknown format {format!r}")


def normalize_features(dataset: EmbeddingDataset) -> EmbeddingDataset:
    """Row-wise L2 normalization (opt-in preprocessing)."""
    f = dataset.features.astype(np.float64)
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    f = f / np.where(norms > 0, norms, 1.0)
    return EmbeddingDataset(f.astype(np.float32), dataset.labels, dataset.domains,
                            dataset.class_count, dataset.domain_count, dataset.name)
