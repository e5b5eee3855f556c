"""Inverse Potts model inference from benign encoded flows.

Pipeline: pseudocounted single-site and pair frequencies, their covariance
restricted to symbols ``1..q-1``, couplings as the negated inverse covariance,
then local fields from the mean-field self-consistency relation. Symbol ``q``
is the gauge: every coupling and field indexed by it is exactly zero.

Flows are integer arrays of shape ``(K, N)`` holding symbols ``1..q``.
Internally everything is 0-based, so the gauge symbol sits at index ``q - 1``.
Rows and columns of the covariance matrix are ordered feature-major, then
symbol: index ``i * (q - 1) + (a - 1)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from efc.discretizer import FeatureSchema
from efc.errors import NonpositiveFrequency, SingularCovariance, TooFewFlows

logger = logging.getLogger(__name__)

DEFAULT_Q = 32
DEFAULT_ALPHA = 0.5
DEFAULT_PERCENTILE = 95.0
MAX_CONDITION = 1e12
SUMMARY_PERCENTILES = (1, 5, 25, 50, 75, 95, 99)

_CHUNK = 4096


def _as_flows(flows, q: int) -> np.ndarray:
    x = np.asarray(flows)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a nonempty 2-D array of encoded flows")
    if not np.issubdtype(x.dtype, np.integer):
        if not np.all(np.equal(np.mod(x, 1), 0)):
            raise ValueError("encoded flows must hold integer symbols")
        x = x.astype(np.int64)
    if x.min() < 1 or x.max() > q:
        raise ValueError(f"symbols must lie in 1..{q}")
    return x


@dataclass
class Counts:
    """Raw symbol counts over a set of flows.

    Counts from disjoint partitions of the data add up (``a + b``) to the
    counts of their union, so counting can be split across workers and merged
    in any order before pseudocounts are applied.
    """

    n_flows: int
    single: np.ndarray  # (N, q)
    pair: np.ndarray  # (N, N, q, q), diagonal blocks unused

    def __add__(self, other: Counts) -> Counts:
        if self.single.shape != other.single.shape:
            raise ValueError("cannot merge counts of different shapes")
        return Counts(self.n_flows + other.n_flows, self.single + other.single, self.pair + other.pair)


def count_symbols(flows, q: int) -> Counts:
    """Count single and pairwise symbol occurrences in encoded flows."""
    x = _as_flows(flows, q) - 1
    k, n = x.shape
    single = np.zeros((n, q), dtype=np.int64)
    for i in range(n):
        single[i] = np.bincount(x[:, i], minlength=q)
    pair = np.zeros((n * q, n * q), dtype=np.float64)
    offsets = np.arange(n) * q
    for start in range(0, k, _CHUNK):
        block = x[start : start + _CHUNK]
        onehot = np.zeros((block.shape[0], n * q), dtype=np.float64)
        onehot[np.arange(block.shape[0])[:, None], block + offsets] = 1.0
        # integer-valued float products stay exact below 2**53
        pair += onehot.T @ onehot
    pair = np.rint(pair).astype(np.int64).reshape(n, q, n, q).transpose(0, 2, 1, 3)
    return Counts(k, single, np.ascontiguousarray(pair))


def _site_from_counts(counts: Counts, q: int, alpha: float) -> np.ndarray:
    return (1.0 - alpha) * counts.single / counts.n_flows + alpha / q


def _pair_from_counts(counts: Counts, site: np.ndarray, q: int, alpha: float) -> np.ndarray:
    f2 = (1.0 - alpha) * counts.pair / counts.n_flows + alpha / q**2
    n = site.shape[0]
    for i in range(n):
        f2[i, i] = np.diag(site[i])
    return f2


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"pseudocount weight alpha must be in [0, 1], got {alpha}")


def site_freq(flows, q: int, alpha: float) -> np.ndarray:
    """Pseudocounted single-site frequencies, shape ``(N, q)``.

    ``f[i, a] = (1 - alpha) * count(a at i) / K + alpha / q``
    """
    _check_alpha(alpha)
    x = _as_flows(flows, q) - 1
    counts = np.stack([np.bincount(col, minlength=q) for col in x.T])
    return (1.0 - alpha) * counts / x.shape[0] + alpha / q


def pair_freq(flows, site: np.ndarray, q: int, alpha: float) -> np.ndarray:
    """Pseudocounted pair frequencies, shape ``(N, N, q, q)``.

    Off-diagonal blocks blend joint counts with ``alpha / q**2``; diagonal
    blocks are ``diag(site[i])`` so that every block marginalizes to the
    single-site frequencies.
    """
    _check_alpha(alpha)
    return _pair_from_counts(count_symbols(flows, q), np.asarray(site, dtype=np.float64), q, alpha)


def covariance(site: np.ndarray, pair: np.ndarray, q: int) -> np.ndarray:
    """Connected correlation matrix over symbols ``1..q-1``.

    Returns the ``(N(q-1), N(q-1))`` matrix with entries
    ``pair[i, j, a, b] - site[i, a] * site[j, b]``.
    """
    n = site.shape[0]
    if site.shape != (n, q) or pair.shape != (n, n, q, q):
        raise ValueError("site/pair frequency shapes disagree with q")
    m = q - 1
    fr = site[:, :m].reshape(n * m)
    c = pair[:, :, :m, :m].transpose(0, 2, 1, 3).reshape(n * m, n * m)
    return c - np.outer(fr, fr)


def _invert_covariance(c: np.ndarray) -> np.ndarray:
    if c.size == 0:
        return c.copy()
    hint = "raise the pseudocount weight alpha"
    try:
        factor, lower = linalg.cho_factor(c, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularCovariance(f"covariance matrix is not positive definite ({exc}); {hint}") from exc
    anorm = np.abs(c).sum(axis=0).max()
    rcond, info = lapack.dpocon(factor, anorm, uplo="L")
    if info != 0 or rcond == 0 or 1.0 / rcond > MAX_CONDITION:
        cond = math.inf if rcond == 0 else 1.0 / rcond
        raise SingularCovariance(f"covariance matrix is ill-conditioned (condition ~ {cond:.3g}); {hint}")
    inv = linalg.cho_solve((factor, lower), np.eye(c.shape[0]))
    return 0.5 * (inv + inv.T)


def compute_couplings(site: np.ndarray, pair: np.ndarray, q: int) -> np.ndarray:
    """Couplings ``e[i, j, a, b]``, shape ``(N, N, q, q)``.

    Non-gauge entries are ``-(C^-1)[(i, a), (j, b)]``; entries with ``a`` or
    ``b`` equal to the gauge symbol are zero. Raises
    :class:`SingularCovariance` when ``C`` cannot be inverted reliably.
    """
    n = site.shape[0]
    m = q - 1
    inv = _invert_covariance(covariance(site, pair, q))
    e = np.zeros((n, n, q, q), dtype=np.float64)
    e[:, :, :m, :m] = -inv.reshape(n, m, n, m).transpose(0, 2, 1, 3)
    return e


def compute_fields(couplings: np.ndarray, site: np.ndarray, q: int) -> np.ndarray:
    """Mean-field local fields ``h[i, a]``, shape ``(N, q)``.

    ``h[i, a] = ln(f[i, a] / f[i, q]) - sum_{j != i, b} e[i, j, a, b] f[j, b]``
    for non-gauge ``a``; ``h[i, q] = 0``.
    """
    if np.any(site <= 0):
        raise NonpositiveFrequency("single-site frequencies must be positive; use alpha > 0")
    n = site.shape[0]
    m = q - 1
    e = couplings[:, :, :m, :m].copy()
    e[np.arange(n), np.arange(n)] = 0.0  # self-couplings are not part of the sum
    mean_field = np.einsum("ijab,jb->ia", e, site[:, :m])
    h = np.zeros((n, q), dtype=np.float64)
    h[:, :m] = np.log(site[:, :m] / site[:, m:]) - mean_field
    return h


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """The ``ceil(p/100 * n)``-th smallest value (nearest-rank percentile)."""
    xs = np.sort(np.asarray(values, dtype=np.float64))
    if xs.size == 0:
        raise ValueError("percentile of an empty list")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    rank = math.ceil(Fraction(str(percentile)) * xs.size / 100)
    return float(xs[max(rank, 1) - 1])


@dataclass(frozen=True)
class EfcModel:
    """A trained energy-based flow classifier.

    ``couplings`` has shape ``(N, N, q, q)`` and ``fields`` shape ``(N, q)``;
    both are read-only arrays indexed by 0-based symbol.
    """

    schema: FeatureSchema | None
    couplings: np.ndarray
    fields: np.ndarray
    q: int
    alpha: float
    cutoff: float
    training_energy_summary: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.fields.shape[0]
        if self.couplings.shape != (n, n, self.q, self.q) or self.fields.shape != (n, self.q):
            raise ValueError("coupling/field shapes disagree")
        if self.schema is not None and len(self.schema) != n:
            raise ValueError("schema feature count disagrees with the model")
        if not math.isfinite(self.cutoff):
            raise ValueError("cutoff must be finite")
        for arr in (self.couplings, self.fields):
            arr.flags.writeable = False

    @property
    def n_features(self) -> int:
        return self.fields.shape[0]

    def with_cutoff(self, cutoff: float) -> EfcModel:
        return EfcModel(
            self.schema, self.couplings, self.fields, self.q, self.alpha, float(cutoff), self.training_energy_summary
        )


def energy_summary(train_energies: np.ndarray) -> dict[str, float]:
    summary = {"min": float(train_energies.min()), "max": float(train_energies.max())}
    for p in SUMMARY_PERCENTILES:
        summary[f"p{p}"] = nearest_rank(train_energies, p)
    return summary


def fit(
    benign_flows,
    schema: FeatureSchema | None = None,
    q: int = DEFAULT_Q,
    alpha: float = DEFAULT_ALPHA,
    percentile: float = DEFAULT_PERCENTILE,
) -> EfcModel:
    """Infer couplings and fields from benign flows and set the energy cutoff.

    The cutoff is the nearest-rank ``percentile`` of the training energies,
    so a flow is flagged when its energy is at least that high.

    Raises
    ------
    TooFewFlows
        Fewer than ``q`` training flows.
    SingularCovariance
        The covariance matrix cannot be inverted (typically ``alpha == 0``).
    """
    from efc.classifier import energies

    _check_alpha(alpha)
    if not 0 < percentile < 100:
        raise ValueError(f"percentile must be in (0, 100), got {percentile}")
    if schema is not None and schema.q != q:
        raise ValueError(f"schema alphabet size {schema.q} differs from q={q}")
    x = _as_flows(benign_flows, q)
    if schema is not None and x.shape[1] != len(schema):
        raise ValueError(f"flows have {x.shape[1]} features, schema has {len(schema)}")
    if x.shape[0] < q:
        raise TooFewFlows(f"{x.shape[0]} training flows is fewer than q={q}")

    counts = count_symbols(x, q)
    site = _site_from_counts(counts, q, alpha)
    pair = _pair_from_counts(counts, site, q, alpha)
    couplings = compute_couplings(site, pair, q)
    fields = compute_fields(couplings, site, q)
    logger.info("inferred model: N=%d q=%d alpha=%g from %d flows", x.shape[1], q, alpha, x.shape[0])

    draft = EfcModel(schema, couplings, fields, q, float(alpha), 0.0)
    train_energies = energies(draft, x)
    cutoff = nearest_rank(train_energies, percentile)
    return EfcModel(schema, couplings, fields, q, float(alpha), cutoff, energy_summary(train_energies))
