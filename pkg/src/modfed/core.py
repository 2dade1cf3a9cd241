"""Domain types, dataset preprocessing and seeded randomness."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

ORTHO_TOL = 1e-10
_REDRAW_NORM = 1e-8


class ProtocolError(ValueError):
    """Raised when protocol inputs violate their preconditions."""


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

KeyPart = Union[int, str]


def _key_int(part: KeyPart) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream key components must be non-negative")
    return part


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    Draws depend only on ``(seed, key)``, never on the order in which
    streams are created or consumed, so per-round and per-client work can
    be scheduled freely.
    """

    seed: int
    key: Tuple[KeyPart, ...] = ()

    def child(self, *parts: KeyPart) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(parts))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1),
            spawn_key=tuple(_key_int(p) for p in self.key),
        )
        return np.random.Generator(np.random.PCG64(ss))


def as_stream(rng: Union[RngStream, int]) -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(int(rng))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scaling:
    """Affine per-column transform ``z = (x - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray
    constant: np.ndarray  # bool mask of columns left unscaled

    def apply(self, a: np.ndarray) -> np.ndarray:
        return (a - self.center) / self.scale

    def invert(self, a: np.ndarray) -> np.ndarray:
        return a * self.scale + self.center


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    feature_scale: Optional[Scaling] = None
    target_scale: Optional[Scaling] = None
    # global factor applied by norm control: X_stored = X_std / row_scale
    row_scale: float = 1.0
    feature_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise ProtocolError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ProtocolError("dataset needs K >= 1 rows and d >= 1 columns")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ProtocolError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def K(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return replace(self, X=self.X[idx], Y=self.Y[idx])


@dataclass(frozen=True)
class StepRule:
    """``fixed`` uses ``value`` as eta; ``adaptive`` uses ``value / ||Sigma_x||_op``;
    ``lipschitz`` uses ``value / lambda_max(Sigma_x)`` with the true covariance
    (analysis only, not private)."""

    kind: str = "adaptive"
    value: float = 0.8

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive", "lipschitz"):
            raise ProtocolError(f"unknown step rule {self.kind!r}")
        if not self.value > 0:
            raise ProtocolError("step value must be positive")


@dataclass(frozen=True)
class ProtocolParams:
    alpha: float = 0.5
    lam: float = 0.2
    omega: float = 1.0
    m: int = 1
    clip_radius: float = 100.0
    step: StepRule = field(default_factory=StepRule)
    rounds: int = 10

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ProtocolError("alpha must lie in (0, 1)")
        if not self.lam >= 0:
            raise ProtocolError("lambda must be non-negative")
        if not self.omega > 0:
            raise ProtocolError("omega must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ProtocolError("m must be an integer >= 1")
        if not self.clip_radius > 0:
            raise ProtocolError("clip radius must be positive")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ProtocolError("rounds must be an integer >= 1")

    def check_dim(self, d: int, orthogonal: bool = True) -> None:
        limit = d - 1 if orthogonal and d > 1 else d
        if self.m > limit:
            raise ProtocolError(f"m={self.m} exceeds the admissible rank {limit} for d={d}")


@dataclass(frozen=True)
class ModelState:
    beta: np.ndarray
    round_index: int = 0


@dataclass(frozen=True)
class ClientPayload:
    g_tilde: np.ndarray
    y: float


@dataclass(frozen=True)
class OrthonormalSet:
    V: np.ndarray

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[1]

    @property
    def projector(self) -> np.ndarray:
        P = self.__dict__.get("_P")
        if P is None:
            P = self.V @ self.V.T
            object.__setattr__(self, "_P", P)
        return P

    def column(self, j: int) -> np.ndarray:
        return np.ascontiguousarray(self.V[:, j])


def as_orthonormal(V) -> OrthonormalSet:
    """Wrap a (d, m) matrix or a single (d,) vector."""
    if isinstance(V, OrthonormalSet):
        return V
    V = np.asarray(V, dtype=float)
    return OrthonormalSet(V[:, None] if V.ndim == 1 else V)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _fit_scaling(a: np.ndarray) -> Scaling:
    center = a.mean(axis=0)
    scale = a.std(axis=0, ddof=1)
    constant = ~(scale > 1e-12 * np.maximum(1.0, np.abs(center)))
    scale = np.where(constant, 1.0, scale)
    return Scaling(center=center, scale=scale, constant=constant)


def standardize(data: Dataset, like: Optional[Dataset] = None) -> Dataset:
    """Center and scale features and response to unit sample standard deviation.

    With ``like`` (an already standardized training split) its statistics are
    reused, so validation and test rows see the training transform. Constant
    columns are centered only and flagged in ``feature_scale.constant``.
    Already standardized data is returned unchanged.
    """
    if data.feature_scale is not None:
        return data
    if like is not None:
        if like.feature_scale is None or like.target_scale is None:
            raise ProtocolError("reference split carries no standardization metadata")
        fs, ts = like.feature_scale, like.target_scale
    else:
        if data.K < 2:
            raise ProtocolError("standardization needs at least two rows")
        fs = _fit_scaling(data.X)
        t = _fit_scaling(data.Y[:, None])
        ts = Scaling(t.center[0], t.scale[0], t.constant[0])
    return replace(data, X=fs.apply(data.X), Y=ts.apply(data.Y),
                   feature_scale=fs, target_scale=ts)


def inverse_standardize(data: Dataset) -> Dataset:
    X = data.X * data.row_scale
    if data.feature_scale is not None:
        X = data.feature_scale.invert(X)
    Y = data.Y if data.target_scale is None else data.target_scale.invert(data.Y)
    return replace(data, X=X, Y=Y, feature_scale=None, target_scale=None, row_scale=1.0)


def split(data: Dataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle rows once and cut them into train/validation/test parts."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ProtocolError("fractions must be three positive numbers summing to 1")
    K = data.K
    n_train = int(np.floor(fr[0] * K + 1e-9))
    n_val = int(np.floor(fr[1] * K + 1e-9))
    n_test = K - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ProtocolError(f"K={K} too small for fractions {tuple(fr)}")
    perm = RngStream(seed, ("split",)).generator().permutation(K)
    cuts = np.split(perm, [n_train, n_train + n_val])
    return tuple(data.subset(np.sort(c)) for c in cuts)


def make_orthonormal_set(d: int, m: int, orthogonal_to=None, rng=0) -> OrthonormalSet:
    """Draw ``m`` orthonormal directions, optionally orthogonal to a vector.

    Gaussian columns are projected off ``orthogonal_to`` and the previous
    columns (modified Gram-Schmidt, two passes); a column whose residual norm
    falls below 1e-8 is redrawn.
    """
    gen = as_stream(rng).generator()
    basis = []
    if orthogonal_to is not None:
        b = np.asarray(orthogonal_to, dtype=float).reshape(-1)
        if b.shape[0] != d:
            raise ProtocolError("orthogonal_to has the wrong dimension")
        nb = np.linalg.norm(b)
        if nb > 0:
            basis.append(b / nb)
    if m < 1 or m + len(basis) > d:
        raise ProtocolError(f"cannot build {m} orthonormal vectors in dimension {d} "
                            f"with {len(basis)} constraint(s)")
    cols = []
    while len(cols) < m:
        w = gen.standard_normal(d)
        for _ in range(2):
            for u in basis + cols:
                w = w - (u @ w) * u
        n = np.linalg.norm(w)
        if n < _REDRAW_NORM:
            continue
        cols.append(w / n)
    return OrthonormalSet(np.column_stack(cols))
