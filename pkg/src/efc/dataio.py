"""Flow CSV ingestion, dataset presets, and model files."""

from __future__ import annotations

import base64
import csv
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from efc.discretizer import KINDS, schema_from_dict, schema_to_dict, to_float
from efc.errors import ChecksumMismatch, DataError, ModelFormatError, SchemaMismatch, VersionMismatch
from efc.model import EfcModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ANY_OTHER = "*"


@dataclass(frozen=True)
class DatasetConfig:
    """How to read one flow dataset.

    ``malicious_labels`` may contain ``"*"`` to mean every label that is not
    benign. Label matching ignores case and surrounding whitespace. Columns not
    named in ``feature_kinds`` get ``default_kind``.
    """

    label_column: str
    benign_labels: frozenset[str]
    malicious_labels: frozenset[str]
    drop_columns: tuple[str, ...] = ()
    feature_kinds: dict[str, str] = field(default_factory=dict)
    default_kind: str = "continuous"

    def __post_init__(self) -> None:
        object.__setattr__(self, "benign_labels", frozenset(_norm(v) for v in self.benign_labels))
        object.__setattr__(self, "malicious_labels", frozenset(_norm(v) for v in self.malicious_labels))
        if self.label_column in self.drop_columns:
            raise ValueError("label column cannot also be dropped")
        if self.benign_labels & self.malicious_labels:
            raise ValueError("benign and malicious label sets overlap")
        for kind in [*self.feature_kinds.values(), self.default_kind]:
            if kind not in KINDS:
                raise ValueError(f"unknown feature kind {kind!r}")

    def truth_of(self, label: str) -> int | None:
        """1 for malicious, 0 for benign, None for labels outside both sets."""
        key = _norm(label)
        if key in self.benign_labels:
            return 0
        if key in self.malicious_labels or (ANY_OTHER in self.malicious_labels and key):
            return 1
        return None

    def kind_of(self, column: str) -> str:
        return self.feature_kinds.get(column, self.default_kind)

    def to_dict(self) -> dict:
        return {
            "label_column": self.label_column,
            "benign_labels": sorted(self.benign_labels),
            "malicious_labels": sorted(self.malicious_labels),
            "drop_columns": list(self.drop_columns),
            "feature_kinds": dict(sorted(self.feature_kinds.items())),
            "default_kind": self.default_kind,
        }

    @classmethod
    def from_dict(cls, data: dict) -> DatasetConfig:
        try:
            return cls(
                label_column=data["label_column"],
                benign_labels=frozenset(data["benign_labels"]),
                malicious_labels=frozenset(data["malicious_labels"]),
                drop_columns=tuple(data.get("drop_columns", ())),
                feature_kinds=dict(data.get("feature_kinds", {})),
                default_kind=data.get("default_kind", "continuous"),
            )
        except KeyError as exc:
            raise ValueError(f"dataset config lacks field {exc}") from exc


def _norm(label: Any) -> str:
    return str(label).strip().casefold()


_CIC_DROP = ("Flow ID", "Source IP", "Destination IP", "Timestamp", "Src IP", "Dst IP", "Flow Id")
_CIC_KINDS = {
    "Protocol": "categorical",
    "Source Port": "categorical",
    "Destination Port": "categorical",
    "Src Port": "categorical",
    "Dst Port": "categorical",
}
_CIDDS_DROP = ("Date first seen", "Src IP Addr", "Dst IP Addr", "Flows", "Tos", "attackID", "attackDescription")
_CIDDS_KINDS = {"Proto": "categorical", "Src Pt": "categorical", "Dst Pt": "categorical", "Flags": "categorical"}

PRESETS: dict[str, DatasetConfig] = {
    # OpenStack (simulated) traffic: the attack type column carries the classes
    "cidds001": DatasetConfig(
        label_column="attackType",
        benign_labels=frozenset({"---", "normal"}),
        malicious_labels=frozenset({"dos", "portScan", "pingScan", "bruteForce"}),
        drop_columns=(*_CIDDS_DROP, "class"),
        feature_kinds=_CIDDS_KINDS,
    ),
    # external server traffic: 'unknown' (ports 80/443) vs 'suspicious'
    "cidds001-external": DatasetConfig(
        label_column="class",
        benign_labels=frozenset({"normal", "unknown"}),
        malicious_labels=frozenset({"suspicious", "attacker", "victim"}),
        drop_columns=(*_CIDDS_DROP, "attackType"),
        feature_kinds=_CIDDS_KINDS,
    ),
    "cicids17": DatasetConfig(
        label_column="Label",
        benign_labels=frozenset({"BENIGN"}),
        malicious_labels=frozenset({ANY_OTHER}),
        drop_columns=_CIC_DROP,
        feature_kinds=_CIC_KINDS,
    ),
    "cicddos19": DatasetConfig(
        label_column="Label",
        benign_labels=frozenset({"BENIGN"}),
        malicious_labels=frozenset({ANY_OTHER}),
        drop_columns=(*_CIC_DROP, "Unnamed: 0"),
        feature_kinds={**_CIC_KINDS, "SimillarHTTP": "categorical"},
    ),
}


def load_config(name_or_path: str | os.PathLike) -> DatasetConfig:
    """A preset by name, or a JSON config file."""
    key = str(name_or_path)
    if key in PRESETS:
        return PRESETS[key]
    path = Path(key)
    if not path.is_file():
        raise FileNotFoundError(f"no preset or config file named {key!r} (presets: {', '.join(PRESETS)})")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {key} is not valid JSON: {exc}") from exc
    return DatasetConfig.from_dict(data)


@dataclass
class LabeledTable:
    """Retained rows of a flow CSV with binary ground truth.

    ``rows`` hold raw feature values in ``columns`` order: floats for
    continuous features, stripped strings for categorical ones.
    """

    columns: list[str]
    kinds: list[str]
    rows: list[list[Any]]
    truth: np.ndarray
    labels: list[str] = field(default_factory=list)
    line_numbers: list[int] = field(default_factory=list)
    excluded_unlabeled: int = 0
    skipped_lines: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def subset(self, index: Iterable[int]) -> LabeledTable:
        idx = list(index)
        return LabeledTable(
            self.columns,
            self.kinds,
            [self.rows[k] for k in idx],
            self.truth[idx],
            [self.labels[k] for k in idx] if self.labels else [],
            [self.line_numbers[k] for k in idx] if self.line_numbers else [],
        )

    def select_columns(self, names: Sequence[str]) -> list[list[Any]]:
        """Rows restricted to ``names`` in that order; raises on absent columns."""
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise SchemaMismatch(f"columns missing from input: {', '.join(missing)}")
        pos = [self.columns.index(c) for c in names]
        return [[row[p] for p in pos] for row in self.rows]


def _dedupe_header(header: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for name in header:
        name = name.strip()
        if name in seen:
            seen[name] += 1
            name = f"{name}.{seen[name]}"
        else:
            seen[name] = 0
        out.append(name)
    return out


def read_csv(path: str | os.PathLike, delimiter: str = ",") -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header plus ``(line_number, fields)`` records of an RFC-4180 CSV.

    A file with no bytes at all reads as an empty header and no records.
    Duplicate header names get ``.1``, ``.2`` suffixes.
    """
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            return [], []
        records = []
        for fields in reader:
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            records.append((reader.line_num, fields))
    return _dedupe_header(header), records


def load_csv(path: str | os.PathLike, config: DatasetConfig, delimiter: str = ",") -> LabeledTable:
    """Read a labeled flow CSV, dropping configured columns and unknown labels.

    Rows with the wrong number of fields or an unparseable continuous value
    are skipped; their line numbers are kept in ``skipped_lines``. Rows whose
    label is in neither label set are counted in ``excluded_unlabeled``.

    Raises
    ------
    FileNotFoundError
        ``path`` does not exist.
    SchemaMismatch
        The label column is absent.
    DataError
        No rows survive filtering.
    """
    header, records = read_csv(path, delimiter)
    if config.label_column not in header:
        raise SchemaMismatch(f"{path}: label column {config.label_column!r} not found")
    drop = set(config.drop_columns) | {config.label_column}
    keep = [k for k, name in enumerate(header) if name not in drop]
    columns = [header[k] for k in keep]
    kinds = [config.kind_of(c) for c in columns]
    label_pos = header.index(config.label_column)
    continuous = [kd == "continuous" for kd in kinds]

    rows, truth, labels, lines, skipped = [], [], [], [], []
    excluded = 0
    for line, fields in records:
        if len(fields) != len(header):
            logger.warning("%s:%d: expected %d fields, got %d; row skipped", path, line, len(header), len(fields))
            skipped.append(line)
            continue
        t = config.truth_of(fields[label_pos])
        if t is None:
            excluded += 1
            continue
        try:
            row = [to_float(fields[k]) if cont else fields[k].strip() for k, cont in zip(keep, continuous)]
        except ValueError as exc:
            logger.warning("%s:%d: %s; row skipped", path, line, exc)
            skipped.append(line)
            continue
        rows.append(row)
        truth.append(t)
        labels.append(fields[label_pos].strip())
        lines.append(line)

    if excluded:
        logger.warning("%s: %d rows with labels outside the configured sets excluded", path, excluded)
    if skipped:
        logger.warning("%s: %d malformed rows skipped", path, len(skipped))
    if not rows:
        raise DataError(f"{path}: no usable rows after filtering")
    return LabeledTable(columns, kinds, rows, np.asarray(truth, dtype=np.int8), labels, lines, excluded, skipped)


def read_feature_rows(path: str | os.PathLike, names: Sequence[str], delimiter: str = ",") -> list[list[str]]:
    """Raw string values of ``names`` for every data row, in file order.

    Rows are never dropped: short rows yield empty strings, which encode to
    the fallback symbol. Raises :class:`SchemaMismatch` if a column is absent.
    """
    header, records = read_csv(path, delimiter)
    if not header and not records:
        return []
    missing = [c for c in names if c not in header]
    if missing:
        raise SchemaMismatch(f"{path}: columns missing from input: {', '.join(missing)}")
    pos = [header.index(c) for c in names]
    return [[fields[p] if p < len(fields) else "" for p in pos] for _, fields in records]


def undersample(n_rows: int, size: int | None, seed: int) -> np.ndarray:
    """Sorted indices of a seeded uniform sample without replacement."""
    if size is None or size >= n_rows:
        return np.arange(n_rows)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_rows, size=size, replace=False))


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# model files ------------------------------------------------------------


def _pack(arr: np.ndarray) -> dict:
    le = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(le.shape), "dtype": "<f8", "data": base64.b64encode(le.tobytes()).decode("ascii")}


def _unpack(obj: dict) -> np.ndarray:
    if obj.get("dtype") != "<f8":
        raise ModelFormatError(f"unsupported array dtype {obj.get('dtype')!r}")
    raw = base64.b64decode(obj["data"], validate=True)
    shape = tuple(int(s) for s in obj["shape"])
    if len(raw) != 8 * int(np.prod(shape)):
        raise ModelFormatError("array payload has the wrong length")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=True)


def model_to_text(model: EfcModel) -> str:
    """Canonical model document.

    Couplings are stored as the ``(N(q-1), N(q-1))`` non-gauge block matrix
    and fields as ``(N, q-1)``; gauge entries are zero by construction and are
    rebuilt on load. Scalars are hex floats, arrays base64 little-endian
    float64, so every number round-trips bit for bit.
    """
    n, q = model.n_features, model.q
    m = q - 1
    restricted = model.couplings[:, :, :m, :m].transpose(0, 2, 1, 3).reshape(n * m, n * m)
    payload = {
        "format_version": FORMAT_VERSION,
        "n_features": n,
        "q": q,
        "alpha": float(model.alpha).hex(),
        "cutoff": float(model.cutoff).hex(),
        "schema": None if model.schema is None else schema_to_dict(model.schema),
        "couplings": _pack(restricted),
        "fields": _pack(model.fields[:, :m]),
        "training_energy_summary": {k: float(v).hex() for k, v in model.training_energy_summary.items()},
    }
    body = _canonical(payload)
    payload["checksum"] = "sha256:" + hashlib.sha256(body.encode("ascii")).hexdigest()
    return _canonical(payload) + "\n"


def model_from_text(text: str) -> EfcModel:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is truncated or not JSON: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ModelFormatError("not an efc model file")
    if payload["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {payload['format_version']!r}, expected {FORMAT_VERSION}")
    checksum = payload.pop("checksum", None)
    expected = "sha256:" + hashlib.sha256(_canonical(payload).encode("ascii")).hexdigest()
    if checksum != expected:
        raise ChecksumMismatch("model file checksum does not match its contents")
    try:
        n, q = int(payload["n_features"]), int(payload["q"])
        m = q - 1
        restricted = _unpack(payload["couplings"])
        fields_r = _unpack(payload["fields"])
        if restricted.shape != (n * m, n * m) or fields_r.shape != (n, m):
            raise ModelFormatError("array shapes disagree with n_features and q")
        couplings = np.zeros((n, n, q, q))
        couplings[:, :, :m, :m] = restricted.reshape(n, m, n, m).transpose(0, 2, 1, 3)
        fields = np.zeros((n, q))
        fields[:, :m] = fields_r
        schema = None if payload["schema"] is None else schema_from_dict(payload["schema"])
        summary = {k: float.fromhex(v) for k, v in payload.get("training_energy_summary", {}).items()}
        return EfcModel(
            schema=schema,
            couplings=couplings,
            fields=fields,
            q=q,
            alpha=float.fromhex(payload["alpha"]),
            cutoff=float.fromhex(payload["cutoff"]),
            training_energy_summary=summary,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc


def save_model(model: EfcModel, path: str | os.PathLike) -> None:
    atomic_write(path, model_to_text(model))


def load_model(path: str | os.PathLike) -> EfcModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))
