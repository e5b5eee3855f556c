"""Flow energies and benign/malicious verdicts under a trained model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from efc.errors import SchemaMismatch
from efc.model import EfcModel

BENIGN = "benign"
MALICIOUS = "malicious"

_CHUNK = 2048


@dataclass(frozen=True)
class Verdict:
    energy: float
    label: Literal["benign", "malicious"]

    @property
    def is_malicious(self) -> bool:
        return self.label == MALICIOUS


def _validate(model: EfcModel, flows: np.ndarray) -> np.ndarray:
    x = np.asarray(flows)
    if x.ndim != 2:
        raise ValueError("flows must be a 2-D array")
    n = model.n_features
    if x.shape[1] != n:
        raise SchemaMismatch(f"flows have {x.shape[1]} features, model expects {n}")
    if x.size:
        bad = np.flatnonzero(((x < 1) | (x > model.q)).any(axis=1))
        if bad.size:
            raise ValueError(f"row {bad[0]}: symbols must lie in 1..{model.q}")
    return x.astype(np.int64, copy=False)


def energies(model: EfcModel, flows) -> np.ndarray:
    """Energy of every flow in a ``(K, N)`` array of symbols ``1..q``.

    Terms are accumulated one at a time in a fixed order (feature ``i``
    ascending; for each ``i`` its couplings to ``j > i`` and then its own
    field), so a flow's energy does not depend on the batch it came in.
    Gauge-symbol terms are exactly zero and leave the sum unchanged.
    """
    x = _validate(model, flows) - 1
    k, n = x.shape
    out = np.empty(k, dtype=np.float64)
    e, h = model.couplings, model.fields
    for start in range(0, k, _CHUNK):
        block = x[start : start + _CHUNK]
        acc = np.zeros(block.shape[0], dtype=np.float64)
        for i in range(n):
            ai = block[:, i]
            for j in range(i + 1, n):
                acc -= e[i, j, ai, block[:, j]]
            acc -= h[i, ai]
        out[start : start + block.shape[0]] = acc
    return out


def energy(model: EfcModel, flow: Sequence[int]) -> float:
    """Hamiltonian of a single encoded flow; low means benign-looking."""
    x = np.asarray(flow)
    if x.ndim != 1:
        raise ValueError("flow must be a 1-D sequence of symbols")
    return float(energies(model, x[None, :])[0])


def _label(e: float, cutoff: float) -> str:
    return MALICIOUS if e >= cutoff else BENIGN


def classify(model: EfcModel, flow: Sequence[int]) -> Verdict:
    """Malicious iff the flow's energy is at least the model cutoff."""
    e = energy(model, flow)
    return Verdict(e, _label(e, model.cutoff))


def classify_batch(model: EfcModel, flows) -> list[Verdict]:
    x = np.asarray(flows)
    if x.size == 0:
        return []
    return [Verdict(float(e), _label(e, model.cutoff)) for e in energies(model, x)]


def predict(model: EfcModel, flows) -> np.ndarray:
    """Binary predictions (1 = malicious) and nothing else; fast path for metrics."""
    return (energies(model, flows) >= model.cutoff).astype(np.int8)
