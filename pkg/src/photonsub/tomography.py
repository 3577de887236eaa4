"""Maximum-likelihood two-mode state reconstruction from quadrature samples.

Implements the fixed-point iteration rho <- R rho R / Tr[R rho R] with
R = sum_i Pi_i / p_i over the recorded samples, starting from the maximally
mixed state, with the standard max-eigenvalue stopping bound on the
remaining log-likelihood improvement (labelled as such; the bound statistic
is lambda_max(R) - N, stopped below epsilon * N).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fock_core import TwoModeState
from .homodyne_model import hermite_functions

__all__ = [
    "TomographyDataset",
    "ReconstructionReport",
    "RegularizationError",
    "r_operator",
    "rrhor_step",
    "reconstruct",
    "rolling_variance",
    "combined_quadrature",
]

PROBABILITY_FLOOR = 1e-12
MAX_FLOORED_FRACTION = 0.01


class RegularizationError(RuntimeError):
    """Too many records needed the probability floor to keep R finite."""


@dataclass
class TomographyDataset:
    """Homodyne records (x1, x2, theta1, theta2), one count each.

    Records are kept in canonical lexicographic order so that accumulation
    is bit-identical under any permutation of the input.
    """

    x1: np.ndarray
    x2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    n_c: int

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float)
        self.x2 = np.asarray(self.x2, dtype=float)
        self.theta1 = np.asarray(self.theta1, dtype=float)
        self.theta2 = np.asarray(self.theta2, dtype=float)
        sizes = {a.size for a in (self.x1, self.x2, self.theta1, self.theta2)}
        if len(sizes) != 1:
            raise ValueError("record columns must have equal length")
        for name in ("x1", "x2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite quadrature values in {name}")
        for name in ("theta1", "theta2"):
            th = getattr(self, name)
            if np.any(th < 0) or np.any(th >= 2 * np.pi):
                raise ValueError(f"{name} must lie in [0, 2 pi)")
        order = np.lexsort((self.theta2, self.theta1, self.x2, self.x1))
        self.x1 = self.x1[order]
        self.x2 = self.x2[order]
        self.theta1 = self.theta1[order]
        self.theta2 = self.theta2[order]
        d2 = (self.n_c + 1) ** 4
        if self.size < d2:
            warnings.warn(
                f"dataset of {self.size} records is below D^2 = {d2}; "
                "the reconstruction will be strongly rank-deficient",
                stacklevel=2)

    @property
    def size(self) -> int:
        return self.x1.size

    def measurement_vectors(self) -> np.ndarray:
        """Row i is the rank-1 POVM factor of record i, shape (N, D)."""
        d = self.n_c + 1
        ns = np.arange(d)
        v1 = (hermite_functions(self.n_c, self.x1)
              * np.exp(-1j * ns[:, None] * self.theta1[None, :]))
        v2 = (hermite_functions(self.n_c, self.x2)
              * np.exp(-1j * ns[:, None] * self.theta2[None, :]))
        return (v1[:, None, :] * v2[None, :, :]).reshape(d * d, self.size).T.copy()


@dataclass
class ReconstructionReport:
    rho: TwoModeState
    iterations: int
    final_bound: float
    converged: bool
    log_likelihood_trace: np.ndarray = field(repr=False)
    floored_records_total: int = 0
    psd_repairs: int = 0


def _predicted_probabilities(rho_mat: np.ndarray, v: np.ndarray):
    """p_i = <v_i| rho |v_i> with flooring; returns (p, floored_count)."""
    p = np.einsum("ij,ij->i", v.conj() @ rho_mat, v).real
    floored = int(np.count_nonzero(p < PROBABILITY_FLOOR))
    np.clip(p, PROBABILITY_FLOOR, None, out=p)
    return p, floored


def _r_matrix(v: np.ndarray, p: np.ndarray) -> np.ndarray:
    # Pi_i[m, n] = v_im conj(v_in), so the weighted sum contracts v against
    # its conjugate on the right
    r = (v.T * (1.0 / p)) @ v.conj()
    return 0.5 * (r + r.conj().T)


def _check_floored(floored: int, total: int):
    if floored > MAX_FLOORED_FRACTION * total:
        raise RegularizationError(
            f"{floored} of {total} records hit the probability floor; "
            "the state model cannot explain the data")


def r_operator(rho: TwoModeState, data: TomographyDataset):
    """R = sum_i Pi_i / p_i as a Hermitian matrix.

    Returns (R, floored_count); raises RegularizationError when more than
    1% of records needed the floor.
    """
    if rho.n_c != data.n_c:
        raise ValueError("state and dataset cutoffs differ")
    v = data.measurement_vectors()
    p, floored = _predicted_probabilities(rho.matrix, v)
    _check_floored(floored, data.size)
    return _r_matrix(v, p), floored


def _repair_psd(mat: np.ndarray):
    w, u = np.linalg.eigh(mat)
    if w[0] >= -1e-10:
        return mat, 0
    w = np.clip(w, 0.0, None)
    fixed = (u * w) @ u.conj().T
    return fixed / np.trace(fixed).real, 1


def rrhor_step(rho: TwoModeState, data: TomographyDataset):
    """One fixed-point update rho' = R rho R / Tr[R rho R].

    Returns (state, repair_count); repairs clamp negative eigenvalues that
    exceed the -1e-10 tolerance and renormalize.
    """
    r, _ = r_operator(rho, data)
    nxt = r @ rho.matrix @ r
    nxt /= np.trace(nxt).real
    nxt = 0.5 * (nxt + nxt.conj().T)
    nxt, repairs = _repair_psd(nxt)
    return TwoModeState(rho.n_c, nxt), repairs


def reconstruct(data: TomographyDataset, max_iterations: int = 2000,
                epsilon: float = 1e-6) -> ReconstructionReport:
    """Iterate R rho R from the maximally mixed state until the stopping
    bound lambda_max(R) - N falls below epsilon * N, or the iteration cap.

    Non-convergence is reported, not raised.
    """
    if data.size == 0:
        raise ValueError("empty dataset")
    d = (data.n_c + 1) ** 2
    n = data.size
    v = data.measurement_vectors()
    rho = np.eye(d, dtype=complex) / d
    loglik = []
    floored_total = 0
    repairs = 0
    bound = np.inf
    it = 0
    for it in range(1, max_iterations + 1):
        p, floored = _predicted_probabilities(rho, v)
        _check_floored(floored, n)
        floored_total += floored
        loglik.append(float(np.log(p).sum()))
        r = _r_matrix(v, p)
        bound = float(np.linalg.eigvalsh(r)[-1] - n)
        if bound < epsilon * n:
            break
        nxt = r @ rho @ r
        nxt /= np.trace(nxt).real
        nxt = 0.5 * (nxt + nxt.conj().T)
        nxt, rep = _repair_psd(nxt)
        repairs += rep
        rho = nxt
    converged = bound < epsilon * n
    if not converged:
        warnings.warn(
            f"stopping bound {bound:.3e} after {it} iterations "
            f"(threshold {epsilon * n:.3e})", stacklevel=2)
    return ReconstructionReport(
        rho=TwoModeState(data.n_c, rho),
        iterations=it,
        final_bound=bound,
        converged=converged,
        log_likelihood_trace=np.asarray(loglik),
        floored_records_total=floored_total,
        psd_repairs=repairs,
    )


def combined_quadrature(x1, x2, sign: int = +1) -> np.ndarray:
    """(x1 +/- x2)/sqrt(2), the joint quadrature whose variance tracks the
    two-mode squeezing."""
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    return (np.asarray(x1) + sign * np.asarray(x2)) / np.sqrt(2.0)


def rolling_variance(data: TomographyDataset, window: int = 500,
                     sign: int = +1):
    """Sliding-window variance of the combined quadrature sorted by the
    joint phase (theta1 + sign*theta2) mod 2 pi.

    Returns (phase_centers, variances), each of length N - window + 1.
    """
    n = data.size
    if window < 2:
        raise ValueError("window must be at least 2")
    if window > n:
        raise ValueError(f"window {window} exceeds dataset size {n}")
    key = (data.theta1 + sign * data.theta2) % (2 * np.pi)
    order = np.argsort(key, kind="stable")
    q = combined_quadrature(data.x1, data.x2, sign)[order]
    key = key[order]
    c1 = np.cumsum(np.concatenate(([0.0], q)))
    c2 = np.cumsum(np.concatenate(([0.0], q * q)))
    s1 = c1[window:] - c1[:-window]
    s2 = c2[window:] - c2[:-window]
    var = (s2 - s1 * s1 / window) / (window - 1)
    centers = key[window // 2: window // 2 + var.size]
    return centers, var
