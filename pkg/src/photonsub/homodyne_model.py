"""Homodyne measurement model in the truncated Fock basis.

Quadrature convention: x_theta = (a e^{-i theta} + a+ e^{i theta})/sqrt(2),
hbar = 1, vacuum variance 1/2.  Provides the oscillator wavefunctions via
the stable normalized recurrence, the rank-1 POVM elements, the joint
two-mode quadrature density, a grid-based inverse-CDF sampler, and the
sawtooth phase-drive model used by the acquisition plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fock_core import TwoModeState

__all__ = [
    "PovmElement",
    "PhaseDrive",
    "GridMassError",
    "oscillator_wavefunction",
    "hermite_functions",
    "povm_element",
    "joint_probability",
    "QuadratureSampler",
    "sample_quadratures",
    "phase_at",
    "quadrature_operator",
    "ADC_CODE_MIN",
    "ADC_CODE_MAX",
]

ADC_CODE_MIN = -8192
ADC_CODE_MAX = 8191
_ADC_SPAN = ADC_CODE_MAX - ADC_CODE_MIN  # 16383


class GridMassError(ValueError):
    """The sampling grid misses too much probability mass; widen it."""


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Normalized oscillator wavefunctions psi_0..psi_n_max at points x.

    Three-term recurrence on the normalized functions themselves, which
    stays overflow-free far beyond n=60 at |x| <= 10 (unlike raw Hermite
    polynomials).  Returns shape (n_max+1,) + x.shape.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = (np.sqrt(2.0 / (n + 1)) * x * out[n]
                      - np.sqrt(n / (n + 1.0)) * out[n - 1])
    return out


def oscillator_wavefunction(n: int, x):
    """psi_n(x) = H_n(x) e^{-x^2/2} / (pi^{1/4} sqrt(2^n n!))."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return hermite_functions(n, x)[n]


def quadrature_eigenvector(x: float, theta: float, n_c: int) -> np.ndarray:
    """<n|x_theta> = e^{-i n theta} psi_n(x) for n = 0..n_c."""
    psi = hermite_functions(n_c, np.float64(x))
    return psi * np.exp(-1j * theta * np.arange(n_c + 1))


@dataclass
class PovmElement:
    """Rank-1 homodyne projector |x_theta><x_theta| on one truncated mode."""

    x: float
    theta: float
    matrix: np.ndarray = field(repr=False)


def povm_element(x: float, theta: float, n_c: int) -> PovmElement:
    """Homodyne POVM element; entry (m, n) carries the phase e^{-i(m-n)theta}."""
    v = quadrature_eigenvector(x, theta, n_c)
    return PovmElement(x=x, theta=theta, matrix=np.outer(v, v.conj()))


def quadrature_operator(theta: float, n_c: int) -> np.ndarray:
    """Single-mode x_theta operator matrix on the truncated basis."""
    a = np.diag(np.sqrt(np.arange(1, n_c + 1)), k=1)
    return (a * np.exp(-1j * theta) + a.conj().T * np.exp(1j * theta)) / np.sqrt(2)


def joint_probability(state: TwoModeState, x1: float, x2: float,
                      theta1: float, theta2: float) -> float:
    """p(x1, x2 | theta1, theta2) = Tr[rho Pi1 x Pi2], clamped at zero.

    Rank-1 structure makes this <v1 v2| rho |v1 v2>.
    """
    v = np.kron(quadrature_eigenvector(x1, theta1, state.n_c),
                quadrature_eigenvector(x2, theta2, state.n_c))
    p = float(np.real(v.conj() @ state.matrix @ v))
    return 0.0 if -1e-14 < p < 0.0 else p


# ---------------------------------------------------------------------------
# Grid sampler
# ---------------------------------------------------------------------------

class QuadratureSampler:
    """Inverse-CDF sampler for joint homodyne outcomes of a two-mode state.

    Cell probabilities come from the joint density evaluated on a square
    grid (default [-6, 6], step 0.02); a draw picks the x1 cell from the
    grid marginal, the x2 cell from that row, and jitters uniformly within
    the cell.  Phase dependence enters by rotating the state with the
    diagonal phase unitary, so the real Hermite-product tables are built
    once per state.
    """

    def __init__(self, state: TwoModeState, grid_min: float = -6.0,
                 grid_max: float = 6.0, step: float = 0.02,
                 mass_tol: float = 1e-4):
        self.state = state
        self.step = float(step)
        self.grid = np.arange(grid_min, grid_max + step / 2, step)
        d = state.n_c + 1
        self._d = d
        psi = hermite_functions(state.n_c, self.grid)          # (d, G)
        # G1b[g, n*d+n'] = psi_n(x_g) psi_n'(x_g)
        self._gb = np.einsum("ng,mg->gnm", psi, psi).reshape(self.grid.size, d * d)
        self._gb_sum = self._gb.sum(axis=0)
        self._phases = np.arange(d)
        self._check_mass(mass_tol)

    def _rotated(self, theta1: float, theta2: float) -> np.ndarray:
        """State conjugated by e^{i(n theta1 + m theta2)}, reshaped so the
        grid tables contract over (n, n') and (m, m') pairs."""
        d = self._d
        ph = np.kron(np.exp(1j * theta1 * self._phases),
                     np.exp(1j * theta2 * self._phases))
        rot = (ph[:, None] * self.state.matrix) * ph.conj()[None, :]
        return rot.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)

    def _check_mass(self, tol: float):
        for th1, th2 in ((0.0, 0.0), (np.pi / 3, 1.1), (1.9, 0.4)):
            q = self._rotated(th1, th2)
            total = float(np.real(self._gb_sum @ q @ self._gb_sum)) * self.step ** 2
            if total < 1.0 - tol:
                raise GridMassError(
                    f"grid holds {total:.6f} of unit mass at phases "
                    f"({th1:.2f}, {th2:.2f}); widen the grid")

    def sample(self, theta1: float, theta2: float, rng: np.random.Generator):
        """One (x1, x2) draw at the given local-oscillator phases."""
        x1, x2 = self.sample_batch(np.atleast_1d(theta1), np.atleast_1d(theta2), rng)
        return float(x1[0]), float(x2[0])

    def sample_batch(self, theta1, theta2, rng: np.random.Generator,
                     chunk: int = 2048):
        """Vectorized draws, one per phase pair.  Deterministic given the
        generator state and fixed chunk size."""
        theta1 = np.asarray(theta1, dtype=float)
        theta2 = np.asarray(theta2, dtype=float)
        if theta1.shape != theta2.shape:
            raise ValueError("phase arrays must have matching shapes")
        n = theta1.size
        x1 = np.empty(n)
        x2 = np.empty(n)
        d = self._d
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            m = hi - lo
            ph1 = np.exp(1j * np.outer(theta1[lo:hi], self._phases))
            ph2 = np.exp(1j * np.outer(theta2[lo:hi], self._phases))
            ph = (ph1[:, :, None] * ph2[:, None, :]).reshape(m, d * d)
            rot = ph[:, :, None] * self.state.matrix[None, :, :] * ph.conj()[:, None, :]
            q = np.ascontiguousarray(
                rot.reshape(m, d, d, d, d).transpose(0, 1, 3, 2, 4)
            ).reshape(m, d * d, d * d)
            # marginal over x2: row masses of the grid joint
            marg = np.real((q @ self._gb_sum) @ self._gb.T)
            np.clip(marg, 0.0, None, out=marg)
            cdf1 = np.cumsum(marg, axis=1)
            u1 = rng.random(m) * cdf1[:, -1]
            i1 = np.array([np.searchsorted(cdf1[c], u1[c]) for c in range(m)])
            i1 = np.minimum(i1, self.grid.size - 1)
            # conditional row for the chosen x1 cell
            left = (self._gb[i1][:, None, :] @ q)[:, 0, :]
            rows = np.real(left @ self._gb.T)
            np.clip(rows, 0.0, None, out=rows)
            cdf2 = np.cumsum(rows, axis=1)
            u2 = rng.random(m) * cdf2[:, -1]
            i2 = np.array([np.searchsorted(cdf2[c], u2[c]) for c in range(m)])
            i2 = np.minimum(i2, self.grid.size - 1)
            x1[lo:hi] = self.grid[i1] + (rng.random(m) - 0.5) * self.step
            x2[lo:hi] = self.grid[i2] + (rng.random(m) - 0.5) * self.step
        return x1, x2


def sample_quadratures(state: TwoModeState, theta1: float, theta2: float,
                       rng_seed) -> tuple:
    """Single joint draw; build a QuadratureSampler directly for batches."""
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    return QuadratureSampler(state).sample(theta1, theta2, rng)


# ---------------------------------------------------------------------------
# Sawtooth phase drive
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseDrive:
    """Sawtooth LO phase ramp spanning 2 pi, with a short linear flyback.

    The drive is mirrored on a 14-bit ADC channel: the code sweeps the full
    range over the ramp and retraces during the flyback at roughly
    -(1/reset_fraction) times the ramp slope.
    """

    ramp_frequency_hz: float
    sample_rate_hz: float = 100e6
    reset_fraction: float = 0.001
    phase_offset: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.reset_fraction <= 0.01:
            raise ValueError("reset_fraction must lie in (0, 0.01]")
        if self.ramp_frequency_hz <= 0:
            raise ValueError("ramp frequency must be positive")

    @property
    def period_samples(self) -> int:
        return int(round(self.sample_rate_hz / self.ramp_frequency_hz))

    @property
    def ramp_samples(self) -> int:
        return self.period_samples - self.flyback_samples

    @property
    def flyback_samples(self) -> int:
        return max(1, int(round(self.period_samples * self.reset_fraction)))

    def evaluate(self, timetags):
        """(theta, adc_code, in_ramp) arrays for integer timetags."""
        t = np.asarray(timetags, dtype=np.int64)
        u = t % self.period_samples
        L = self.ramp_samples
        in_ramp = u < L
        frac_up = u / L
        theta = (2 * np.pi * frac_up + self.phase_offset) % (2 * np.pi)
        # 16384 code steps over the ramp so no code aliases across the wrap
        code_up = np.floor(ADC_CODE_MIN + (_ADC_SPAN + 1) * frac_up)
        v = u - L + 1
        code_down = ADC_CODE_MAX - np.floor(
            (_ADC_SPAN + 1) * v / self.flyback_samples)
        code = np.where(in_ramp, code_up, code_down).astype(np.int64)
        np.clip(code, ADC_CODE_MIN, ADC_CODE_MAX, out=code)
        return np.where(in_ramp, theta, 0.0), code, in_ramp

    def theta_from_code(self, code):
        """Inverse of the ramp mapping: code -> theta in [0, 2 pi)."""
        code = np.asarray(code, dtype=float)
        return ((code - ADC_CODE_MIN) / (_ADC_SPAN + 1) * 2 * np.pi
                + self.phase_offset) % (2 * np.pi)


def phase_at(drive: PhaseDrive, timetag: int):
    """(theta, adc_code, in_ramp) of the drive at one timetag."""
    theta, code, in_ramp = drive.evaluate(np.atleast_1d(timetag))
    return float(theta[0]), int(code[0]), bool(in_ramp[0])
