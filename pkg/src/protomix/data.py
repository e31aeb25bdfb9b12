"""Word-embedding ingestion, labelled feature datasets, synthetic task generation.

The on-disk dataset format is a root directory holding a ``manifest`` whose
first line declares the feature dimension (``#dim <n>``) and whose remaining
lines are ``category_id<TAB>annotation1|annotation2|...<TAB>feature_file``,
plus one plain-text feature file per category (one sample per line,
comma-separated decimals). Embedding files follow the usual one-entry-per-line
``token v1 v2 ... vn`` text convention.
"""

from __future__ import annotations

import os
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, DataError, ParseError

__all__ = [
    "EmbeddingTable",
    "CategoryLabel",
    "Category",
    "LabeledDataset",
    "SyntheticTaskSpec",
    "parse_embedding_file",
    "load_embedding_file",
    "write_embedding_file",
    "resolve_label_embedding",
    "LabelEmbeddings",
    "load_dataset",
    "write_dataset",
    "generate_synthetic_crossmodal",
    "split_categories",
]


@dataclass
class EmbeddingTable:
    """Token -> fixed-dimension vector map; dimension is None while empty."""

    dimension: int | None = None
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, token: str) -> np.ndarray | None:
        return self.entries.get(token)


def parse_embedding_file(lines: Iterable[str]) -> EmbeddingTable:
    """Parse embedding text lines; dimension is inferred from the first entry."""
    table = EmbeddingTable()
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts:
            continue
        token, fields = parts[0], parts[1:]
        if not fields:
            raise ParseError(f"token {token!r} has no vector values", line=lineno)
        try:
            vector = np.array([float(v) for v in fields], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"non-numeric field in entry {token!r}: {exc}", line=lineno) from None
        if table.dimension is None:
            table.dimension = vector.size
        elif vector.size != table.dimension:
            raise ParseError(
                f"entry {token!r} has dimension {vector.size}, expected {table.dimension}",
                line=lineno,
            )
        if token in table.entries:
            warnings.warn(f"duplicate token {token!r} at line {lineno}; keeping the last value")
        vector.setflags(write=False)
        table.entries[token] = vector
    return table


def load_embedding_file(path: str | os.PathLike) -> EmbeddingTable:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_embedding_file(fh)


def write_embedding_file(table: EmbeddingTable, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token in table.entries:
            values = " ".join(repr(float(v)) for v in table.entries[token])
            fh.write(f"{token} {values}\n")


@dataclass(frozen=True)
class CategoryLabel:
    """Ordered synonym annotations for one category; each may be multi-word."""

    annotations: tuple[str, ...]

    def __post_init__(self):
        if not self.annotations:
            raise ConfigurationError("a category label needs at least one annotation")
        for a in self.annotations:
            if not a.strip():
                raise ConfigurationError("annotations must be non-empty")


@dataclass
class Category:
    label: CategoryLabel
    features: np.ndarray  # [n_samples, feature_dimension]


@dataclass
class LabeledDataset:
    feature_dimension: int
    categories: dict[int, Category]

    def category_ids(self) -> list[int]:
        return sorted(self.categories)

    def features(self, category_id: int) -> np.ndarray:
        return self.categories[category_id].features

    def label(self, category_id: int) -> CategoryLabel:
        return self.categories[category_id].label


def _fallback_rng(label: CategoryLabel, seed: int) -> np.random.Generator:
    key = zlib.crc32("|".join(label.annotations).encode("utf-8"))
    return np.random.default_rng([seed, key])


def resolve_label_embedding(
    label: CategoryLabel,
    table: EmbeddingTable,
    seed: int = 0,
    fallback_dimension: int | None = None,
) -> np.ndarray:
    """Vector for a category label, walking its annotations in order.

    The first annotation whose words are all in the table wins; a multi-word
    annotation resolves to the mean of its word vectors. If none resolves, the
    fallback is a uniform(-1, 1) vector that is a pure function of (label,
    seed), so repeated calls agree exactly.
    """
    for annotation in label.annotations:
        words = annotation.split()
        if words and all(w in table for w in words):
            return np.mean([table.entries[w] for w in words], axis=0)
    dim = table.dimension if table.dimension is not None else fallback_dimension
    if dim is None:
        raise DataError(
            f"label {label.annotations[0]!r} is out of vocabulary and no fallback "
            "dimension is configured"
        )
    u = _fallback_rng(label, seed).uniform(-1.0, 1.0, size=dim)
    # uniform() includes its lower bound; the fallback must stay strictly inside.
    return np.clip(u, np.nextafter(-1.0, 0.0), np.nextafter(1.0, 0.0))


class LabelEmbeddings:
    """Resolved, cached label vectors for every category of a dataset."""

    def __init__(
        self,
        dataset: LabeledDataset,
        table: EmbeddingTable,
        seed: int = 0,
        fallback_dimension: int | None = None,
    ):
        self._dataset = dataset
        self._table = table
        self._seed = seed
        self._fallback_dimension = fallback_dimension
        self._cache: dict[int, np.ndarray] = {}
        dim = table.dimension if table.dimension is not None else fallback_dimension
        if dim is None:
            raise DataError("embedding table is empty and no fallback dimension is configured")
        self.dimension = int(dim)

    def vector(self, category_id: int) -> np.ndarray:
        cached = self._cache.get(category_id)
        if cached is None:
            cached = resolve_label_embedding(
                self._dataset.label(category_id),
                self._table,
                seed=self._seed,
                fallback_dimension=self._fallback_dimension,
            )
            cached.setflags(write=False)
            self._cache[category_id] = cached
        return cached

    def matrix(self, category_ids: Iterable[int]) -> np.ndarray:
        return np.stack([self.vector(c) for c in category_ids])


# ---------------------------------------------------------------------------
# on-disk dataset format


def write_dataset(dataset: LabeledDataset, root: str | os.PathLike) -> None:
    root = os.fspath(root)
    os.makedirs(os.path.join(root, "features"), exist_ok=True)
    lines = [f"#dim {dataset.feature_dimension}\n"]
    for cid in dataset.category_ids():
        cat = dataset.categories[cid]
        for a in cat.label.annotations:
            if "|" in a or "\t" in a:
                raise DataError(f"annotation {a!r} contains a reserved separator")
        rel = f"features/cat_{cid}.csv"
        lines.append(f"{cid}\t{'|'.join(cat.label.annotations)}\t{rel}\n")
        with open(os.path.join(root, rel), "w", encoding="utf-8", newline="\n") as fh:
            for sample in cat.features:
                fh.write(",".join(repr(float(v)) for v in sample) + "\n")
    with open(os.path.join(root, "manifest"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def load_dataset(root: str | os.PathLike) -> LabeledDataset:
    root = os.fspath(root)
    manifest = os.path.join(root, "manifest")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest under {root!r}")
    with open(manifest, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#dim "):
        raise ParseError("manifest must declare '#dim <n>' on its first line", line=1)
    try:
        dim = int(lines[0][len("#dim ") :])
    except ValueError:
        raise ParseError(f"bad dimension declaration {lines[0]!r}", line=1) from None
    if dim <= 0:
        raise ParseError(f"feature dimension must be positive, got {dim}", line=1)

    categories: dict[int, Category] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 'id<TAB>annotations<TAB>file', got {line!r}", line=lineno)
        try:
            cid = int(parts[0])
        except ValueError:
            raise ParseError(f"bad category id {parts[0]!r}", line=lineno) from None
        if cid in categories:
            raise ParseError(f"duplicate category id {cid}", line=lineno)
        label = CategoryLabel(tuple(parts[1].split("|")))
        feature_path = os.path.join(root, parts[2])
        if not os.path.exists(feature_path):
            raise DataError(f"category {cid}: feature file {parts[2]!r} is missing")
        rows = []
        with open(feature_path, "r", encoding="utf-8") as fh:
            for rowno, row in enumerate(fh, start=1):
                if not row.strip():
                    continue
                try:
                    values = [float(v) for v in row.split(",")]
                except ValueError:
                    raise DataError(
                        f"category {cid}: non-numeric value at row {rowno} of {parts[2]!r}"
                    ) from None
                if len(values) != dim:
                    raise DataError(
                        f"category {cid}: row {rowno} has {len(values)} values, expected {dim}"
                    )
                rows.append(values)
        features = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
        features.setflags(write=False)
        categories[cid] = Category(label, features)
    return LabeledDataset(feature_dimension=dim, categories=categories)


# ---------------------------------------------------------------------------
# synthetic cross-modal tasks


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Desk-scale generator knobs for a cross-modal classification task."""

    n_categories: int
    visual_dim: int
    semantic_dim: int
    visual_spread: float
    visual_separation: float
    semantic_separation: float
    samples_per_category: int
    seed: int = 0

    def __post_init__(self):
        for name in ("n_categories", "visual_dim", "semantic_dim", "samples_per_category"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("visual_spread", "visual_separation", "semantic_separation"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {getattr(self, name)}")


def _equidistant_points(rng: np.random.Generator, count: int, dim: int, separation: float) -> np.ndarray:
    """Points pairwise ~separation apart: exact (rotated orthogonal frame) when
    dim >= count, otherwise random directions of the matching radius."""
    radius = separation / np.sqrt(2.0)
    if dim >= count:
        g = rng.standard_normal((dim, dim))
        q, _ = np.linalg.qr(g)
        return q[:count] * radius
    directions = rng.standard_normal((count, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return directions / norms * radius


def generate_synthetic_crossmodal(spec: SyntheticTaskSpec) -> tuple[LabeledDataset, EmbeddingTable]:
    """Build a dataset whose semantic vectors are a fixed linear image of the
    visual centroids, so the cross-modal relation is learnable and transfers
    to held-out categories. Fully deterministic given the spec seed."""
    rng = np.random.default_rng(spec.seed)
    centroids = _equidistant_points(rng, spec.n_categories, spec.visual_dim, spec.visual_separation)

    if spec.visual_separation > 0:
        if spec.semantic_dim >= spec.visual_dim:
            q, _ = np.linalg.qr(rng.standard_normal((spec.semantic_dim, spec.visual_dim)))
            mapping = q.T  # isometry from visual to semantic coordinates
            compensation = 1.0
        else:
            q, _ = np.linalg.qr(rng.standard_normal((spec.visual_dim, spec.semantic_dim)))
            mapping = q.T  # projection; compensate the expected shrink
            compensation = np.sqrt(spec.visual_dim / spec.semantic_dim)
        semantic = (
            centroids @ mapping.T * (compensation * spec.semantic_separation / spec.visual_separation)
        )
    else:
        semantic = _equidistant_points(
            rng, spec.n_categories, spec.semantic_dim, spec.semantic_separation
        )

    categories: dict[int, Category] = {}
    table = EmbeddingTable(dimension=spec.semantic_dim)
    for c in range(spec.n_categories):
        token = f"cat{c:03d}"
        vec = semantic[c].copy()
        vec.setflags(write=False)
        table.entries[token] = vec
        noise = rng.standard_normal((spec.samples_per_category, spec.visual_dim))
        features = centroids[c] + spec.visual_spread * noise
        features.setflags(write=False)
        categories[c] = Category(CategoryLabel((token,)), features)
    return LabeledDataset(feature_dimension=spec.visual_dim, categories=categories), table


def split_categories(
    dataset: LabeledDataset,
    fractions: tuple[float, float, float],
    seed: int = 0,
) -> tuple[frozenset[int], frozenset[int], frozenset[int]]:
    """Disjoint, exhaustive train/val/test category-id sets."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigurationError(f"fractions must be three positive values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got sum {sum(fractions)}")
    ids = np.array(dataset.category_ids())
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = ids[order]

    counts = [int(np.floor(f * len(ids))) for f in fractions]
    remainders = [f * len(ids) - c for f, c in zip(fractions, counts)]
    for _ in range(len(ids) - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    if any(c == 0 for c in counts):
        raise ConfigurationError(
            f"too few categories ({len(ids)}) for fractions {fractions}: a split is empty"
        )
    train = frozenset(int(i) for i in shuffled[: counts[0]])
    val = frozenset(int(i) for i in shuffled[counts[0] : counts[0] + counts[1]])
    test = frozenset(int(i) for i in shuffled[counts[0] + counts[1] :])
    return train, val, test
