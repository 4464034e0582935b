"""Truncated Green-function series for point scatterers in a rectangle.

Three series matter.  The bare diagonal series sum phi_n(x)^2/(omega - e_n)
diverges logarithmically with the cutoff; the renormalised diagonal adds the
counterterm e_n/(e_n^2 + lam^2) per mode, which makes the sum converge and
encodes the self-adjoint (coupling-strength) renormalisation.  Off-diagonal
entries between distinct scatterers need no counterterm but converge only
conditionally, so they are evaluated as block-averaged partial sums.

Truncation handling:

* diagonal, tail_mode="integral": the discarded high modes are replaced by a
  mean-field integral with density rho_av and mean intensity 1/area.  The
  antiderivative of 1/(omega-E) + E/(E^2+lam^2) is log(sqrt(E^2+lam^2)) -
  log|omega-E| (up to sign), giving the closed tail
  (mass/2pi) * log((E_c - omega)/sqrt(E_c^2 + lam^2)), negative for
  0 < omega < E_c.  The complex-log form of the same expression serves
  evaluations off the real axis.

* off-diagonal: the running partial sum is averaged over the last three
  energy windows of one mean spacing each.  That average is algebraically a
  fixed per-mode weight profile (1 deep in the table, tapering to 0 at the
  cutoff), so evaluation stays a single dot product and the weights are
  shared by every omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BilliardSpec, ModeTable, basis_column, mode_table_with_count
from .errors import PoleProximityError, ValidationError

TAIL_MODES = ("none", "integral")

# Default half-width of the exclusion band around each unperturbed level,
# in units of the mean spacing.
POLE_EXCLUSION_FACTOR = 1e-9


@dataclass(frozen=True)
class ScattererSet:
    """Positions and inverse couplings of the point scatterers.

    The renormalised coupling enters every formula through its inverse, and
    inv_coupling = 0 (boundary angle pi) is a legitimate scatterer, so the
    inverse is the stored quantity.  A zero bare coupling (empty billiard)
    is not representable here by design.
    """

    positions: tuple
    inv_couplings: tuple
    lambda_scale: float = 1.0

    def __post_init__(self):
        positions = tuple((float(x), float(y)) for x, y in self.positions)
        inv = tuple(float(v) for v in self.inv_couplings)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "inv_couplings", inv)
        if len(positions) != len(inv):
            raise ValidationError(
                f"{len(positions)} positions but {len(inv)} inverse couplings")
        if not (math.isfinite(self.lambda_scale) and self.lambda_scale > 0.0):
            raise ValidationError(
                f"lambda_scale must be finite and positive, got {self.lambda_scale!r}")
        for p in positions:
            if not all(math.isfinite(c) for c in p):
                raise ValidationError(f"position {p!r} is not finite")
        for v in inv:
            if not math.isfinite(v):
                raise ValidationError(f"inverse coupling {v!r} is not finite")
        for a in range(len(positions)):
            for b in range(a + 1, len(positions)):
                if positions[a] == positions[b]:
                    raise ValidationError(
                        f"scatterers {a} and {b} share the position {positions[a]!r}")

    @classmethod
    def from_couplings(cls, positions, couplings, lambda_scale: float = 1.0):
        couplings = tuple(float(v) for v in couplings)
        for v in couplings:
            if v == 0.0 or not math.isfinite(v):
                raise ValidationError(f"coupling {v!r} must be finite and nonzero")
        return cls(positions, tuple(1.0 / v for v in couplings), lambda_scale)

    @property
    def n(self) -> int:
        return len(self.positions)

    def couplings(self) -> tuple:
        return tuple(math.inf if v == 0.0 else 1.0 / v for v in self.inv_couplings)

    def with_inv_coupling(self, index: int, value: float) -> "ScattererSet":
        inv = list(self.inv_couplings)
        inv[index] = float(value)
        return ScattererSet(self.positions, tuple(inv), self.lambda_scale)


@dataclass(frozen=True)
class GreensAccuracy:
    """Series truncation and tail policy shared by all evaluations."""

    n_max: int = 100_000
    tail_mode: str = "integral"
    target_abs_err: float = 1e-6
    offdiag_block_average: bool = True

    def __post_init__(self):
        if self.n_max < 1:
            raise ValidationError(f"n_max must be >= 1, got {self.n_max}")
        if self.tail_mode not in TAIL_MODES:
            raise ValidationError(
                f"tail_mode must be one of {TAIL_MODES}, got {self.tail_mode!r}")
        if not (math.isfinite(self.target_abs_err) and self.target_abs_err > 0.0):
            raise ValidationError(
                f"target_abs_err must be positive, got {self.target_abs_err!r}")


def _is_complex(omega) -> bool:
    return isinstance(omega, complex) or np.iscomplexobj(omega)


class GreensEvaluator:
    """Caches per-scatterer basis values and serves all series evaluations.

    Construction validates the scatterer geometry against the billiard,
    builds (or truncates) the mode table, and precomputes the counterterm
    sums and block-average weights.  Instances are immutable in practice and
    safe to share across threads.
    """

    def __init__(self, billiard: BilliardSpec, scatterers: ScattererSet,
                 accuracy: GreensAccuracy | None = None,
                 table: ModeTable | None = None,
                 pole_exclusion_factor: float = POLE_EXCLUSION_FACTOR):
        self.billiard = billiard
        self.scatterers = scatterers
        self.accuracy = accuracy if accuracy is not None else GreensAccuracy()
        for k, (x, y) in enumerate(scatterers.positions):
            if not billiard.contains(x, y, strict=True):
                raise ValidationError(
                    f"scatterer {k} at {(x, y)!r} is not strictly inside the rectangle")
        if table is None:
            table = mode_table_with_count(billiard, self.accuracy.n_max)
        elif table.spec != billiard:
            raise ValidationError("mode table was built for a different billiard")
        elif len(table) < self.accuracy.n_max:
            table = mode_table_with_count(billiard, self.accuracy.n_max)
        self.table = table.truncated(self.accuracy.n_max)
        self.energies = self.table.energies
        self.cutoff_energy = float(self.energies[-1])
        self.mean_spacing = billiard.mean_spacing
        self.pole_exclusion = pole_exclusion_factor * self.mean_spacing
        self.lam = scatterers.lambda_scale

        # phi[n, i] = eigenfunction n at scatterer i; shared by every series.
        self._phi = np.column_stack(
            [basis_column(self.table, p) for p in scatterers.positions])
        lam2 = self.lam ** 2
        denom = self.energies ** 2 + lam2
        self._counterterm = (self._phi ** 2 * (self.energies / denom)[:, None]).sum(axis=0)
        self._deficiency = (self._phi ** 2 / denom[:, None]).sum(axis=0)
        self._block_weights = self._build_block_weights()
        self._products: dict = {}

    # -- bookkeeping -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.scatterers.n

    @property
    def n_eff(self) -> int:
        return len(self.table)

    @property
    def phi_values(self) -> np.ndarray:
        """Eigenfunction values at the scatterers, shape (n_eff, N)."""
        return self._phi

    def _build_block_weights(self):
        """Per-mode weights realising the 3-block partial-sum average."""
        if not self.accuracy.offdiag_block_average:
            return None
        width = self.mean_spacing
        if self.energies[0] > self.cutoff_energy - 3.0 * width:
            return None  # table too short to average; plain sums instead
        weights = np.zeros(self.n_eff)
        for m in range(3):
            hi = self.cutoff_energy - m * width
            lo = hi - width
            cover = np.clip(hi - np.maximum(lo, self.energies), 0.0, width) / width
            weights += cover
        return weights / 3.0

    def _block_weight_single(self, m: int):
        width = self.mean_spacing
        hi = self.cutoff_energy - m * width
        lo = hi - width
        return np.clip(hi - np.maximum(lo, self.energies), 0.0, width) / width

    def products(self, i: int, j: int) -> np.ndarray:
        """phi_n(x_i) * phi_n(x_j) for every table mode, cached."""
        key = (min(i, j), max(i, j))
        got = self._products.get(key)
        if got is None:
            got = self._phi[:, key[0]] * self._phi[:, key[1]]
            self._products[key] = got
        return got

    def nearest_level(self, omega: float):
        """(distance, 0-based index) of the closest unperturbed level."""
        pos = int(np.searchsorted(self.energies, omega))
        best = None
        for k in (pos - 1, pos):
            if 0 <= k < self.n_eff:
                d = abs(omega - self.energies[k])
                if best is None or d < best[0]:
                    best = (d, k)
        return best

    def check_pole_distance(self, omega, width: float | None = None):
        """Reject real evaluation points inside the pole exclusion band."""
        if _is_complex(omega):
            if abs(omega.imag) > 0.0:
                return
            omega = omega.real
        width = self.pole_exclusion if width is None else width
        hit = self.nearest_level(float(omega))
        if hit is not None and hit[0] < width:
            raise PoleProximityError(omega, float(self.energies[hit[1]]), hit[1] + 1, width)

    def _kernel(self, omega):
        return 1.0 / (omega - self.energies)

    # -- diagonal (renormalised) series ----------------------------------

    def _tail_diag(self, omega):
        """Mean-field integral over the discarded high modes."""
        ec = self.cutoff_energy
        scale = self.billiard.mass / (2.0 * math.pi)
        half_log = 0.5 * math.log(ec * ec + self.lam * self.lam)
        if _is_complex(omega):
            return scale * (np.log(ec - omega) - half_log)
        if omega >= ec:
            raise ValidationError(
                f"omega={omega!r} is not below the series cutoff {ec:g}")
        return scale * (math.log(ec - omega) - half_log)

    def diag(self, i: int, omega, check_pole: bool = True):
        """Renormalised diagonal Green function at scatterer i."""
        if check_pole:
            self.check_pole_distance(omega)
        value = self.products(i, i) @ self._kernel(omega) + self._counterterm[i]
        if self.accuracy.tail_mode == "integral":
            value = value + self._tail_diag(omega)
        return value

    def tail_correction(self, omega):
        """Integral tail added to the diagonal series (0 when disabled)."""
        if self.accuracy.tail_mode != "integral":
            return 0.0
        return self._tail_diag(omega)

    def counterterm(self, i: int) -> float:
        """The subtraction constant sum phi^2 * eps/(eps^2+lam^2) at scatterer i."""
        return float(self._counterterm[i])

    def offdiag_weights(self) -> np.ndarray:
        """Per-mode weights of the block-averaged off-diagonal sums (all 1 when off)."""
        if self._block_weights is None:
            return np.ones(self.n_eff)
        return self._block_weights

    def diag_error(self, i: int, omega) -> float:
        """Estimated absolute truncation error of diag().

        With the integral tail the residual is set by the discreteness of
        the modes near the cutoff; a few times the largest discarded term
        covers it.  Without the tail the dropped integral itself dominates.
        """
        ec = self.cutoff_energy
        w = abs(omega)
        if w >= 0.9 * ec:
            return math.inf
        lam2 = self.lam ** 2
        top_term = (4.0 / self.billiard.area) * (w * ec + lam2) / ((ec - w) * (ec * ec + lam2))
        err = 8.0 * top_term
        if self.accuracy.tail_mode == "none":
            scale = self.billiard.mass / (2.0 * math.pi)
            err += abs(scale * (math.log(ec - w if w < ec else ec) -
                                0.5 * math.log(ec * ec + lam2)))
        return err

    def diag_derivative(self, i: int, omega, check_pole: bool = True):
        """d/domega of the renormalised diagonal series (always negative)."""
        if check_pole:
            self.check_pole_distance(omega)
        kern = self._kernel(omega)
        value = -(self.products(i, i) @ (kern * kern))
        if self.accuracy.tail_mode == "integral":
            # the ln(e_cut - omega) tail keeps falling with omega too
            scale = self.billiard.mass / (2.0 * math.pi)
            value = value - scale / (self.cutoff_energy - omega)
        return value

    def derivative_error(self, omega) -> float:
        """Remainder bound for diag_derivative (series decays like 1/n^2)."""
        gap = self.cutoff_energy - abs(omega)
        if gap <= 0.0:
            return math.inf
        return self.billiard.mass / (2.0 * math.pi) / gap

    def deficiency_norm_sq(self, i: int) -> float:
        """sum phi_n(x_i)^2/(e_n^2 + lam^2), tail-corrected when enabled.

        This is the squared norm of the deficiency vector attached to
        scatterer i and the series behind the angle <-> coupling map.
        """
        value = float(self._deficiency[i])
        if self.accuracy.tail_mode == "integral":
            scale = self.billiard.mass / (2.0 * math.pi)
            value += scale * math.atan2(self.lam, self.cutoff_energy) / self.lam
        return value

    # -- off-diagonal series ----------------------------------------------

    def offdiag(self, i: int, j: int, omega, check_pole: bool = True):
        """Free Green function between scatterers i and j (i != j)."""
        if i == j:
            raise ValidationError(
                "off-diagonal series requires distinct scatterer indices; "
                "the i == j case is the renormalised diagonal diag()")
        if check_pole:
            self.check_pole_distance(omega)
        p = self.products(i, j)
        kern = self._kernel(omega)
        if self._block_weights is None:
            return p @ kern
        return (p * self._block_weights) @ kern

    def offdiag_with_spread(self, i: int, j: int, omega):
        """(value, spread of the last three block averages)."""
        value = self.offdiag(i, j, omega)
        if self._block_weights is None:
            p = self.products(i, j)
            tail_term = abs(p[-1] * self._kernel(omega)[-1])
            return value, 3.0 * tail_term
        p = self.products(i, j)
        kern = self._kernel(omega)
        blocks = [(p * self._block_weight_single(m)) @ kern for m in range(3)]
        spread = max(abs(a - b) for a in blocks for b in blocks)
        return value, spread

    # -- secular matrix ----------------------------------------------------

    def secular_matrix(self, omega, check_pole: bool = True) -> np.ndarray:
        """Inverse T-matrix: diagonal diag_i - inv_coupling_i, off-diagonal
        the free Green function between scatterers."""
        if check_pole:
            self.check_pole_distance(omega)
        n = self.n
        dtype = complex if _is_complex(omega) else float
        out = np.zeros((n, n), dtype=dtype)
        for i in range(n):
            out[i, i] = self.diag(i, omega, check_pole=False) - self.scatterers.inv_couplings[i]
            for j in range(i + 1, n):
                val = self.offdiag(i, j, omega, check_pole=False)
                out[i, j] = val
                out[j, i] = val
        return out

    def secular_matrix_batch(self, omegas, check_pole: bool = True) -> np.ndarray:
        """Stacked secular matrices for a vector of real omegas."""
        omegas = np.asarray(omegas, dtype=float)
        flat = omegas.ravel()
        if check_pole:
            for w in flat:
                self.check_pole_distance(float(w))
        n = self.n
        out = np.empty((flat.size, n, n))
        weights = self._block_weights
        tail = 0.0
        if self.accuracy.tail_mode == "integral":
            scale = self.billiard.mass / (2.0 * math.pi)
            tail = scale * (np.log(self.cutoff_energy - flat) -
                            0.5 * math.log(self.cutoff_energy ** 2 + self.lam ** 2))
        chunk = max(1, int(8_000_000 // max(1, self.n_eff)))
        for lo in range(0, flat.size, chunk):
            hi = min(flat.size, lo + chunk)
            kern = 1.0 / (flat[lo:hi, None] - self.energies[None, :])  # (b, n_eff)
            for i in range(n):
                p = self.products(i, i)
                out[lo:hi, i, i] = (kern @ p + self._counterterm[i]
                                    - self.scatterers.inv_couplings[i])
                for j in range(i + 1, n):
                    p = self.products(i, j)
                    if weights is not None:
                        p = p * weights
                    vals = kern @ p
                    out[lo:hi, i, j] = vals
                    out[lo:hi, j, i] = vals
        if np.ndim(tail) or tail != 0.0:
            out[:, np.arange(n), np.arange(n)] += np.atleast_1d(tail)[:, None]
        return out.reshape(omegas.shape + (n, n))

    def diag_batch(self, i: int, omegas, check_pole: bool = True) -> np.ndarray:
        """diag(i, omega) for a vector of real omegas."""
        omegas = np.asarray(omegas, dtype=float)
        flat = omegas.ravel()
        if check_pole:
            for w in flat:
                self.check_pole_distance(float(w))
        out = np.empty(flat.size)
        p = self.products(i, i)
        chunk = max(1, int(8_000_000 // max(1, self.n_eff)))
        for lo in range(0, flat.size, chunk):
            hi = min(flat.size, lo + chunk)
            kern = 1.0 / (flat[lo:hi, None] - self.energies[None, :])
            out[lo:hi] = kern @ p + self._counterterm[i]
        if self.accuracy.tail_mode == "integral":
            scale = self.billiard.mass / (2.0 * math.pi)
            out += scale * (np.log(self.cutoff_energy - flat) -
                            0.5 * math.log(self.cutoff_energy ** 2 + self.lam ** 2))
        return out.reshape(omegas.shape)

    # -- divergence witnesses ----------------------------------------------

    def unregularized_partial_sums(self, i: int, omega, truncations):
        """Bare diagonal partial sums at the given truncation counts.

        For omega below the ground state these decrease without bound; the
        decrement between cutoffs K1 < K2 tracks the mean-field logarithm
        -(mass/2pi) * log((E_K2 - omega)/(E_K1 - omega)).
        """
        self.check_pole_distance(omega)
        counts = [int(k) for k in truncations]
        for k in counts:
            if not 1 <= k <= self.n_eff:
                raise ValidationError(
                    f"truncation {k} outside the table (1..{self.n_eff})")
        terms = self.products(i, i) * self._kernel(omega)
        csum = np.cumsum(terms)
        return [float(csum[k - 1]) for k in counts]

    def regularized_partial_sums(self, i: int, omega, truncations):
        """Counterterm-included partial sums at the given truncation counts."""
        self.check_pole_distance(omega)
        counts = [int(k) for k in truncations]
        for k in counts:
            if not 1 <= k <= self.n_eff:
                raise ValidationError(
                    f"truncation {k} outside the table (1..{self.n_eff})")
        lam2 = self.lam ** 2
        p = self.products(i, i)
        terms = p * self._kernel(omega) + p * (self.energies / (self.energies ** 2 + lam2))
        csum = np.cumsum(terms)
        return [float(csum[k - 1]) for k in counts]
