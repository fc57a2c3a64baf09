"""
Core domain types shared by every estimator module.

Validated semi-supervised samples, cross-fitting fold plans and the seeded
random-stream contract. Everything here is immutable after construction.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyLabeledSet,
    InvalidFoldCount,
    InvalidIndicator,
    MissingLabeledOutcome,
    NonFiniteCovariate,
    ParseError,
)

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def stream_id_for(parent: int, purpose: str, index: int = 0) -> int:
    """Deterministic 64-bit stream id for (parent stream, purpose tag, index)."""
    token = f"{parent & MASK64}:{purpose}:{int(index)}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(token, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RandomStream:
    """A (seed, stream_id) pair naming one reproducible random sequence.

    Sequences come from numpy's PCG64 seeded through a SeedSequence whose
    spawn key is the stream id, so distinct ids give independent streams and
    equal pairs give identical draws on every platform.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(
            entropy=int(self.seed) & MASK64, spawn_key=(int(self.stream_id) & MASK64,)
        )
        return np.random.Generator(np.random.PCG64(sequence))

    def derive(self, purpose: str, index: int = 0) -> "RandomStream":
        return RandomStream(self.seed, stream_id_for(self.stream_id, purpose, index))

    def integer_seed(self) -> int:
        """A 31-bit integer seed for libraries that take ``random_state=int``."""
        return int(self.generator().integers(0, 2**31 - 1))


class SampleMode(str, Enum):
    MISSING_DATA = "missing-data"
    CAUSAL = "causal"


@dataclass(frozen=True, eq=False)
class SemiSupervisedSample:
    """Covariates X (N x p), indicators R, outcomes Y and optional strata delta.

    In missing-data mode Y is NaN wherever R = 0; estimators only ever read
    Y through ``observed_outcome``. In causal mode Y is observed everywhere
    and R is the treatment indicator.
    """

    X: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    delta: Optional[np.ndarray] = None
    mode: SampleMode = SampleMode.MISSING_DATA
    feature_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "X", _frozen(np.asarray(self.X, dtype=float)))
        object.__setattr__(self, "R", _frozen(np.asarray(self.R, dtype=np.int8)))
        object.__setattr__(self, "Y", _frozen(np.asarray(self.Y, dtype=float)))
        if self.delta is not None:
            object.__setattr__(self, "delta", _frozen(np.asarray(self.delta, dtype=np.int8)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        return self.R == 1

    @property
    def n_labeled(self) -> int:
        return int(self.R.sum())

    @property
    def pi_bar(self) -> float:
        return self.n_labeled / self.n

    def observed_outcome(self) -> np.ndarray:
        """R_i * Y_i with exact zeros on unlabeled rows (absent Y never read)."""
        return np.where(self.labeled, np.nan_to_num(self.Y, nan=0.0), 0.0)

    def arm_view(self, arm: int) -> "SemiSupervisedSample":
        """Missing-data view labelling the rows of one treatment arm."""
        indicator = self.R if arm == 1 else 1 - self.R
        Y = np.where(indicator == 1, self.Y, np.nan)
        return SemiSupervisedSample(
            self.X, indicator, Y, self.delta, SampleMode.MISSING_DATA, self.feature_names
        )

    def subset(self, rows: np.ndarray) -> "SemiSupervisedSample":
        """Rows of this sample; no re-validation (a fold may lack labels)."""
        delta = None if self.delta is None else self.delta[rows]
        return SemiSupervisedSample(
            self.X[rows], self.R[rows], self.Y[rows], delta, self.mode, self.feature_names
        )


def validate_sample(
    X,
    R,
    Y,
    delta=None,
    mode="missing-data",
    feature_names: Optional[Sequence[str]] = None,
) -> SemiSupervisedSample:
    """Validate raw arrays into a SemiSupervisedSample. Never repairs data."""
    mode = SampleMode(mode)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be a 2-d matrix, got {X.ndim} dimension(s)")
    n = X.shape[0]

    R = np.asarray(R)
    if R.ndim != 1 or R.shape[0] != n:
        raise DimensionMismatch(f"R has shape {R.shape}, expected ({n},)")
    if not np.isin(R, (0, 1)).all():
        raise InvalidIndicator("R must contain only 0/1 values")
    R = R.astype(np.int8)

    try:
        Y = np.asarray(Y, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"Y is not numeric: {exc}") from exc
    if Y.ndim != 1 or Y.shape[0] != n:
        raise DimensionMismatch(f"Y has shape {Y.shape}, expected ({n},)")

    if delta is not None:
        delta = np.asarray(delta)
        if delta.ndim != 1 or delta.shape[0] != n:
            raise DimensionMismatch(f"delta has shape {delta.shape}, expected ({n},)")
        if not np.isin(delta, (0, 1)).all():
            raise InvalidIndicator("delta must contain only 0/1 values")

    if feature_names is not None and len(feature_names) != X.shape[1]:
        raise DimensionMismatch(
            f"{len(feature_names)} feature names for {X.shape[1]} covariate columns"
        )

    bad_rows = np.flatnonzero(~np.isfinite(X).all(axis=1))
    if bad_rows.size:
        raise NonFiniteCovariate("non-finite covariate value", row=int(bad_rows[0]))

    if R.sum() < 1:
        raise EmptyLabeledSet("no labeled observations (sum of R is 0)")

    required = np.ones(n, dtype=bool) if mode is SampleMode.CAUSAL else R == 1
    missing = np.flatnonzero(required & ~np.isfinite(Y))
    if missing.size:
        raise MissingLabeledOutcome("outcome absent or non-finite", row=int(missing[0]))

    if mode is SampleMode.MISSING_DATA:
        Y = np.where(R == 1, Y, np.nan)

    names = None if feature_names is None else tuple(str(name) for name in feature_names)
    return SemiSupervisedSample(X, R, Y, delta, mode, names)


@dataclass(frozen=True, eq=False)
class CrossFitPlan:
    """K-fold random partition of 0..N-1; fold labels are 0..K-1."""

    K: int
    assignment: np.ndarray
    seed: int
    _sizes: Tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "assignment", _frozen(np.asarray(self.assignment, dtype=np.int64)))
        sizes = np.bincount(self.assignment, minlength=self.K)
        object.__setattr__(self, "_sizes", tuple(int(s) for s in sizes))

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def sizes(self) -> Tuple[int, ...]:
        return self._sizes

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def folds(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        for k in range(self.K):
            yield k, self.train(k), self.fold(k)


def make_folds(N: int, K: int, seed: int) -> CrossFitPlan:
    """Shuffle 0..N-1 with the seed's fold stream, then deal round-robin."""
    if K < 2 or K > N:
        raise InvalidFoldCount(f"need 2 <= K <= N, got K={K}, N={N}")
    order = RandomStream(seed).derive("folds").generator().permutation(N)
    assignment = np.empty(N, dtype=np.int64)
    assignment[order] = np.arange(N) % K
    return CrossFitPlan(K, assignment, int(seed))
