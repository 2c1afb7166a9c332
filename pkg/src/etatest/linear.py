"""Closed-form criteria for plants known to be linear.

With enough linearly independent samples the stacked data matrix Z = [X; U]
has a right inverse, the unknown (A, B) can be replaced by data, and the
decrease of a quadratic Lyapunov function reduces to the sign of a single
symmetric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dataset import Dataset, TimeKind

_RANK_RTOL = 1e-10
_DEFINITE_TOL = 1e-10
# Above this representation residual the data is not exactly linear and the
# verdict is reported but should not be asserted.
RESIDUAL_TRUST_TOL = 1e-6


class RankDeficientError(ValueError):
    """Stacked data matrix has no right inverse (data not informative)."""


class Definiteness(str, Enum):
    NEGATIVE_DEFINITE = "negative-definite"
    NEGATIVE_SEMIDEFINITE = "negative-semidefinite"
    INDEFINITE = "indefinite"
    POSITIVE_SEMIDEFINITE = "positive-semidefinite"
    POSITIVE_DEFINITE = "positive-definite"


@dataclass
class LinearData:
    """Column-stacked dataset view: X is n x N, U is m x N, Y is n x N."""

    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    time_kind: TimeKind

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "LinearData":
        return cls(dataset.xs.T.copy(), dataset.us.T.copy(),
                   dataset.ys.T.copy(), dataset.time_kind)

    @property
    def Z(self) -> np.ndarray:
        return np.vstack([self.X, self.U])


@dataclass
class DissipationReport:
    Q: np.ndarray
    eigenvalues: np.ndarray           # of the symmetric part, ascending
    verdict: Definiteness
    representation_residual: float    # ||Y - [A B] Z||_F

    @property
    def trustworthy(self) -> bool:
        return self.representation_residual <= RESIDUAL_TRUST_TOL


def right_inverse(Z: np.ndarray) -> np.ndarray:
    """Right inverse Z+ = Z'(ZZ')^-1 with ||Z Z+ - I||_F <= 1e-8, or
    RankDeficientError when Z loses full row rank."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    rows, cols = Z.shape
    if cols < rows:
        raise RankDeficientError(
            f"need at least {rows} samples, got {cols}")
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[-1] <= _RANK_RTOL * sv[0]:
        raise RankDeficientError(
            f"stacked data matrix is rank deficient "
            f"(sigma_min/sigma_max = {sv[-1] / sv[0]:.3e})")
    gram = Z @ Z.T
    chol = np.linalg.cholesky(gram)
    zp = np.linalg.solve(chol.T, np.linalg.solve(chol, Z)).T
    return zp


def _definiteness(eigs: np.ndarray) -> Definiteness:
    if np.all(eigs < -_DEFINITE_TOL):
        return Definiteness.NEGATIVE_DEFINITE
    if np.all(eigs <= _DEFINITE_TOL):
        return Definiteness.NEGATIVE_SEMIDEFINITE
    if np.all(eigs > _DEFINITE_TOL):
        return Definiteness.POSITIVE_DEFINITE
    if np.all(eigs >= -_DEFINITE_TOL):
        return Definiteness.POSITIVE_SEMIDEFINITE
    return Definiteness.INDEFINITE


def _report(Q: np.ndarray, residual: float) -> DissipationReport:
    sym = 0.5 * (Q + Q.T)
    eigs = np.linalg.eigvalsh(sym)
    return DissipationReport(Q, eigs, _definiteness(eigs), float(residual))


def _represent(data: LinearData, K: np.ndarray):
    Z = data.Z
    zp = right_inverse(Z)
    AB = data.Y @ zp
    residual = float(np.linalg.norm(data.Y - AB @ Z, "fro"))
    n = data.X.shape[0]
    closed = AB @ np.vstack([np.eye(n), K])
    return closed, residual


def continuous_dissipation(data: LinearData, K, P) -> DissipationReport:
    """Q = P(A + BK) + (A + BK)'P with [A B] replaced by Y Z+.
    Negative definite Q certifies decrease of V = x'Px."""
    if data.time_kind is not TimeKind.CONTINUOUS:
        raise ValueError("continuous_dissipation needs continuous-time data")
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    P = np.asarray(P, dtype=np.float64)
    closed, residual = _represent(data, K)
    Q = P @ closed + closed.T @ P
    return _report(Q, residual)


def discrete_dissipation(data: LinearData, K, P) -> DissipationReport:
    """Q = (A + BK)'P(A + BK) - P with [A B] replaced by Y Z+."""
    if data.time_kind is not TimeKind.DISCRETE:
        raise ValueError("discrete_dissipation needs discrete-time data")
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    P = np.asarray(P, dtype=np.float64)
    closed, residual = _represent(data, K)
    Q = closed.T @ P @ closed - P
    return _report(Q, residual)


def autonomous_spectral(X, Xp):
    """Recover A = X' X+ for an autonomous discrete map and test whether the
    spectral radius sits strictly below one."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xp = np.atleast_2d(np.asarray(Xp, dtype=np.float64))
    xp_inv = right_inverse(X)
    A = Xp @ xp_inv
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    return A, rho, rho < 1.0 - 1e-12
