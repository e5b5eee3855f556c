"""Map raw flow features onto a shared alphabet of symbols ``1..q``.

Continuous features are cut into equal-frequency bins (nearest-rank
quantiles, right-inclusive edges). Categorical features keep their ``q - 1``
most frequent values. Symbol ``q`` is reserved for anything the training data
did not cover: unseen categories, NaN, and continuous values outside the
training range. Because ``q`` is also the gauge symbol of the model, such
values contribute no coupling or field terms to a flow's energy.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np

from efc.errors import SchemaMismatch

Kind = Literal["continuous", "categorical"]
KINDS = ("continuous", "categorical")

# CIDDS-001 writes large byte counts as e.g. "1.2 M".
_SUFFIXES = {"K": 1e3, "M": 1e6, "G": 1e9, "T": 1e12}


def to_float(value: Any) -> float:
    """Parse a raw continuous value; raises ``ValueError`` when impossible.

    Accepts numbers, numeric strings, and strings with a trailing magnitude
    suffix (``"1.2 M"``). ``"nan"``/``"inf"`` parse to their float values.
    """
    if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
        return float(value)
    text = str(value).strip()
    if not text:
        raise ValueError("empty value")
    try:
        return float(text)
    except ValueError:
        pass
    head, _, unit = text.rpartition(" ")
    if unit.upper() in _SUFFIXES and head:
        return float(head) * _SUFFIXES[unit.upper()]
    if text[-1].upper() in _SUFFIXES:
        return float(text[:-1]) * _SUFFIXES[text[-1].upper()]
    raise ValueError(f"not a number: {value!r}")


def category_key(value: Any) -> str:
    """Canonical string form of a categorical value."""
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return str(value).strip()


@dataclass(frozen=True)
class FeatureRule:
    """Discretization rule for one feature.

    ``bin_edges`` is used for continuous features: a value ``v`` inside
    ``[low, high]`` gets symbol ``1 + #(edges < v)``. ``category_map`` is used
    for categorical features. Everything else maps to ``fallback_symbol``.
    """

    name: str
    kind: Kind
    fallback_symbol: int
    bin_edges: tuple[float, ...] = ()
    low: float | None = None
    high: float | None = None
    category_map: tuple[tuple[str, int], ...] = ()
    _lookup: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if any(b <= a for a, b in zip(self.bin_edges, self.bin_edges[1:])):
            raise ValueError(f"bin edges of {self.name!r} are not strictly ascending")
        symbols = [s for _, s in self.category_map]
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"category symbols of {self.name!r} are not distinct")
        if any(not 1 <= s <= self.fallback_symbol for s in symbols):
            raise ValueError(f"category symbol out of range in {self.name!r}")
        object.__setattr__(self, "_lookup", dict(self.category_map))

    @property
    def n_symbols(self) -> int:
        """Number of symbols the rule can emit besides the fallback."""
        if self.kind == "categorical":
            return len(self.category_map)
        if self.low is None:
            return 0
        return len(self.bin_edges) + 1

    def encode(self, value: Any) -> int:
        if self.kind == "categorical":
            return self._lookup.get(category_key(value), self.fallback_symbol)
        try:
            v = to_float(value)
        except (TypeError, ValueError):
            return self.fallback_symbol
        if self.low is None or not (self.low <= v <= self.high):
            return self.fallback_symbol
        # right-inclusive: a value equal to an edge stays in the lower bin
        return 1 + int(np.searchsorted(self.bin_edges, v, side="left"))

    def encode_column(self, values: Sequence[Any]) -> np.ndarray:
        if self.kind == "categorical":
            get, fb = self._lookup.get, self.fallback_symbol
            return np.fromiter((get(category_key(v), fb) for v in values), dtype=np.int64, count=len(values))
        x = np.empty(len(values), dtype=np.float64)
        for k, v in enumerate(values):
            try:
                x[k] = to_float(v)
            except (TypeError, ValueError):
                x[k] = np.nan
        out = np.full(len(values), self.fallback_symbol, dtype=np.int64)
        if self.low is not None:
            inside = (x >= self.low) & (x <= self.high)
            edges = np.asarray(self.bin_edges, dtype=np.float64)
            out[inside] = 1 + np.searchsorted(edges, x[inside], side="left")
        return out


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature rules sharing one alphabet size ``q``."""

    features: tuple[FeatureRule, ...]
    q: int

    def __post_init__(self) -> None:
        if self.q < 2:
            raise ValueError("alphabet size q must be at least 2")
        for rule in self.features:
            if rule.fallback_symbol != self.q:
                raise ValueError(f"fallback of {rule.name!r} must be q={self.q}")
            if rule.n_symbols > self.q - 1:
                raise ValueError(f"feature {rule.name!r} uses more than q-1 symbols")

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.features]

    def __len__(self) -> int:
        return len(self.features)


def _quantile_edges(values: np.ndarray, n_bins: int) -> tuple[float, ...]:
    """Nearest-rank cut points splitting ``values`` into ``n_bins`` bins."""
    xs = np.sort(values)
    n = len(xs)
    edges = []
    for k in range(1, n_bins):
        rank = -(-k * n // n_bins)  # ceil(k * n / n_bins), exact in integers
        edges.append(float(xs[rank - 1]))
    top = float(xs[-1])
    # duplicates and edges at the maximum would leave empty bins
    return tuple(sorted({e for e in edges if e < top}))


def _fit_rule(name: str, kind: str, column: Sequence[Any], q: int) -> FeatureRule:
    if kind == "categorical":
        counts = Counter(category_key(v) for v in column)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: q - 1]
        cmap = tuple((value, s) for s, (value, _) in enumerate(ranked, start=1))
        return FeatureRule(name=name, kind="categorical", fallback_symbol=q, category_map=cmap)

    x = []
    for v in column:
        try:
            x.append(to_float(v))
        except (TypeError, ValueError):
            continue
    arr = np.asarray(x, dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return FeatureRule(name=name, kind="continuous", fallback_symbol=q)
    return FeatureRule(
        name=name,
        kind="continuous",
        fallback_symbol=q,
        bin_edges=_quantile_edges(arr, q - 1),
        low=float(arr.min()),
        high=float(arr.max()),
    )


def fit_schema(
    raw_table: Sequence[Sequence[Any]],
    kinds: Sequence[str],
    q: int,
    names: Sequence[str] | None = None,
) -> FeatureSchema:
    """Fit per-feature discretization rules on a table of training rows.

    Parameters
    ----------
    raw_table : sequence of rows
        Raw feature values, one row per flow.
    kinds : sequence of {"continuous", "categorical"}
        Kind of each column.
    q : int
        Alphabet size. Symbols ``1..q-1`` are data symbols, ``q`` is the
        fallback.
    names : sequence of str, optional
        Column names; defaults to ``f0, f1, ...``.
    """
    if q < 2:
        raise ValueError("alphabet size q must be at least 2")
    if len(raw_table) == 0:
        raise ValueError("cannot fit a schema on an empty table")
    n_cols = len(raw_table[0])
    if len(kinds) != n_cols:
        raise ValueError(f"{len(kinds)} kinds given for {n_cols} columns")
    if names is None:
        names = [f"f{i}" for i in range(n_cols)]
    elif len(names) != n_cols:
        raise ValueError(f"{len(names)} names given for {n_cols} columns")
    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown feature kind {kind!r}")
    for k, row in enumerate(raw_table):
        if len(row) != n_cols:
            raise ValueError(f"row {k} has {len(row)} values, expected {n_cols}")

    columns = list(zip(*raw_table))
    rules = tuple(_fit_rule(str(nm), kd, col, q) for nm, kd, col in zip(names, kinds, columns))
    return FeatureSchema(features=rules, q=q)


def encode_flow(schema: FeatureSchema, raw_flow: Sequence[Any]) -> np.ndarray:
    """Encode one raw flow as a vector of symbols in ``1..q``."""
    if len(raw_flow) != len(schema.features):
        raise SchemaMismatch(f"flow has {len(raw_flow)} values, schema expects {len(schema.features)}")
    return np.array([r.encode(v) for r, v in zip(schema.features, raw_flow)], dtype=np.int64)


def encode_dataset(schema: FeatureSchema, raw_table: Sequence[Sequence[Any]]) -> np.ndarray:
    """Encode rows of a raw table; returns an int array of shape ``(K, N)``."""
    n = len(schema.features)
    if len(raw_table) == 0:
        return np.empty((0, n), dtype=np.int64)
    for k, row in enumerate(raw_table):
        if len(row) != n:
            raise SchemaMismatch(f"row {k} has {len(row)} values, schema expects {n}")
    columns = list(zip(*raw_table))
    return np.column_stack([r.encode_column(col) for r, col in zip(schema.features, columns)])


def schema_to_dict(schema: FeatureSchema) -> dict:
    """JSON-ready form; floats are hex strings so they round-trip exactly."""

    def hexf(x: float | None) -> str | None:
        return None if x is None else float(x).hex()

    return {
        "q": schema.q,
        "features": [
            {
                "name": r.name,
                "kind": r.kind,
                "fallback_symbol": r.fallback_symbol,
                "bin_edges": [hexf(e) for e in r.bin_edges],
                "low": hexf(r.low),
                "high": hexf(r.high),
                "category_map": [[v, s] for v, s in r.category_map],
            }
            for r in schema.features
        ],
    }


def schema_from_dict(data: dict) -> FeatureSchema:
    def unhex(x: str | None) -> float | None:
        return None if x is None else float.fromhex(x)

    rules = tuple(
        FeatureRule(
            name=f["name"],
            kind=f["kind"],
            fallback_symbol=int(f["fallback_symbol"]),
            bin_edges=tuple(float.fromhex(e) for e in f["bin_edges"]),
            low=unhex(f["low"]),
            high=unhex(f["high"]),
            category_map=tuple((str(v), int(s)) for v, s in f["category_map"]),
        )
        for f in data["features"]
    )
    return FeatureSchema(features=rules, q=int(data["q"]))

