"""Spectral statistics for billiard level sequences.

Covers the bookkeeping around the physics questions the rest of the
package answers: unfolding a raw spectrum to unit mean spacing, binning
nearest-neighbour spacings, measuring Kolmogorov-Smirnov distances to the
Poisson and GOE references, predicting the logarithmically drifting
coupling window where a point scatterer mixes levels strongly, and
surveying the inflection point of the regularised diagonal resolvent
inside each unperturbed gap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import BilliardSpec
from .errors import ValidationError
from .greens import GreensEvaluator, ScattererSet
from .solver import EnergyWindow

__all__ = [
    "REFERENCE_KINDS",
    "UnfoldedSpectrum",
    "SpacingHistogram",
    "CouplingPrediction",
    "InflectionRow",
    "InflectionSurvey",
    "unfold",
    "spacing_distribution",
    "reference_cdf",
    "ks_distance",
    "ks_two_sample",
    "predict_strong_coupling",
    "coupling_band_range",
    "gbar_inflection_survey",
]

REFERENCE_KINDS = ("poisson", "goe")

# Minimum spacing count before KS distances stop being noise-dominated.
SMALL_SAMPLE = 100


@dataclass(frozen=True)
class UnfoldedSpectrum:
    """A level sequence mapped to unit mean spacing.

    ``unfolded`` is the raw sequence scaled by the smoothed density and
    then rescaled once more so the mean spacing is exactly one; the
    second factor absorbs the finite-window deviation from the
    asymptotic density.
    """

    raw: np.ndarray
    unfolded: np.ndarray
    window: EnergyWindow

    @property
    def n(self) -> int:
        return int(self.raw.size)

    def spacings(self) -> np.ndarray:
        return np.diff(self.unfolded)


@dataclass(frozen=True)
class SpacingHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    densities: np.ndarray
    sample_size: int


@dataclass(frozen=True)
class CouplingPrediction:
    """Strong-coupling band test at a single energy.

    ``vbar_inv_star`` is the band centre in inverse-coupling units and
    ``half_width`` its half-width; a scatterer is flagged in-band when
    its inverse coupling lies within the closed interval.
    """

    omega: float
    vbar_inv_star: float
    half_width: float
    in_strong_band: tuple


@dataclass(frozen=True)
class InflectionRow:
    """One gap of an inflection survey.

    ``gbar`` is the regularised diagonal resolvent at the inflection
    energy ``omega``, ``log_reference`` the logarithmic law it is
    expected to straddle, ``abs_slope`` the magnitude of its derivative
    there, and ``gap_lo``/``gap_hi`` the bracketing unperturbed levels.
    """

    omega: float
    gbar: float
    log_reference: float
    abs_slope: float
    gap_lo: float
    gap_hi: float


@dataclass(frozen=True)
class InflectionSurvey:
    rows: tuple
    skipped: tuple
    mean_spacing: float

    def __len__(self) -> int:
        return len(self.rows)

    def log_offsets(self) -> np.ndarray:
        """Resolvent value minus the logarithmic reference, per gap."""
        return np.array([r.gbar - r.log_reference for r in self.rows])

    def slope_spacings(self) -> np.ndarray:
        """Dimensionless slope |dGbar/dw| per mean level spacing."""
        return np.array([r.abs_slope * self.mean_spacing for r in self.rows])

    def midpoint_offsets(self) -> np.ndarray:
        """|inflection - gap midpoint| as a fraction of the gap width."""
        return np.array([
            abs(r.omega - 0.5 * (r.gap_lo + r.gap_hi)) / (r.gap_hi - r.gap_lo)
            for r in self.rows
        ])


def unfold(levels, billiard: BilliardSpec) -> UnfoldedSpectrum:
    """Map a sorted level sequence to unit mean spacing.

    The smoothed counting function of the rectangle is linear to leading
    order, so unfolding is multiplication by the average density followed
    by an exact rescale to mean spacing one.  Spacing ratios are
    therefore invariant under affine transformations of the raw levels.
    """
    raw = np.asarray(levels, dtype=float).ravel()
    if raw.size < 2:
        raise ValidationError(f"need at least 2 levels to unfold, got {raw.size}")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("levels must be finite")
    if np.any(np.diff(raw) < 0.0):
        raise ValidationError("levels must be sorted in nondecreasing order")
    if raw[-1] == raw[0]:
        raise ValidationError("all levels coincide; nothing to unfold")
    scaled = billiard.weyl_density * raw
    mean_gap = (scaled[-1] - scaled[0]) / (raw.size - 1)
    unfolded = scaled / mean_gap
    return UnfoldedSpectrum(raw=raw, unfolded=unfolded,
                            window=EnergyWindow(float(raw[0]), float(raw[-1])))


def spacing_distribution(spectrum: UnfoldedSpectrum, bins: int = 24) -> SpacingHistogram:
    """Histogram of nearest-neighbour spacings of an unfolded spectrum.

    Densities are normalised so the histogram integrates to one over its
    own support.  Small samples are allowed but warned about.
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    spacings = spectrum.spacings()
    total = spacings.size
    if total < SMALL_SAMPLE:
        warnings.warn(
            f"only {total} spacings; histogram and KS distances will be noisy",
            UserWarning, stacklevel=2)
    hi = float(spacings.max())
    if hi <= 0.0:
        hi = 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(spacings, edges)
    width = edges[1] - edges[0]
    densities = counts / (total * width)
    return SpacingHistogram(bin_edges=edges, counts=counts,
                            densities=densities, sample_size=int(total))


def reference_cdf(kind: str, s):
    """Cumulative spacing distribution of a reference ensemble.

    ``poisson`` is the uncorrelated sequence, ``goe`` the Wigner surmise
    for the Gaussian orthogonal ensemble.  Spacings are nonnegative by
    construction, so negative arguments are rejected rather than clipped.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0):
        raise ValidationError("spacings are nonnegative; got a negative argument")
    if kind == "poisson":
        out = 1.0 - np.exp(-arr)
    elif kind == "goe":
        out = 1.0 - np.exp(-0.25 * math.pi * arr * arr)
    else:
        raise ValidationError(
            f"unknown reference {kind!r}; expected one of {REFERENCE_KINDS}")
    return float(out) if np.isscalar(s) else out


def ks_distance(spacings, reference) -> float:
    """One-sample Kolmogorov-Smirnov distance.

    ``reference`` is either a kind accepted by :func:`reference_cdf` or a
    vectorised CDF callable.  Uses the exact two-sided statistic over the
    empirical step function, not a grid approximation.
    """
    sample = np.sort(np.asarray(spacings, dtype=float).ravel())
    n = sample.size
    if n == 0:
        raise ValidationError("cannot compute a KS distance from an empty sample")
    if callable(reference):
        cdf = np.asarray(reference(sample), dtype=float)
    else:
        cdf = np.asarray(reference_cdf(reference, sample), dtype=float)
    steps = np.arange(1, n + 1) / n
    d_plus = float(np.max(steps - cdf))
    d_minus = float(np.max(cdf - (steps - 1.0 / n)))
    return max(d_plus, d_minus)


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValidationError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def predict_strong_coupling(scatterers: ScattererSet, billiard: BilliardSpec,
                            omega: float) -> CouplingPrediction:
    """Locate each scatterer relative to the strong-coupling band at ``omega``.

    The band centre drifts logarithmically with energy, so a fixed
    coupling can only satisfy the strong-mixing condition over a finite
    energy range; the in-band test uses the closed interval.
    """
    omega = float(omega)
    if not (math.isfinite(omega) and omega > 0.0):
        raise ValidationError(
            f"band prediction needs a positive energy, got {omega!r}")
    m = billiard.mass
    star = m / (2.0 * math.pi) * math.log(omega / scatterers.lambda_scale)
    half = 0.25 * math.pi * m
    in_band = tuple(bool(abs(v - star) <= half) for v in scatterers.inv_couplings)
    return CouplingPrediction(omega=omega, vbar_inv_star=star,
                              half_width=half, in_strong_band=in_band)


def coupling_band_range(inv_coupling: float, billiard: BilliardSpec,
                        lambda_scale: float = 1.0) -> tuple:
    """Energy range over which a fixed inverse coupling stays in-band.

    Returns ``(lo, centre, hi)``.  Inverting the logarithmic band centre
    gives a geometric interval: the edges sit a factor exp(pi^2 / 2) on
    either side of the centre energy, independent of the coupling.
    """
    if not math.isfinite(inv_coupling):
        raise ValidationError(f"inverse coupling must be finite, got {inv_coupling!r}")
    if not (math.isfinite(lambda_scale) and lambda_scale > 0.0):
        raise ValidationError(f"lambda_scale must be positive, got {lambda_scale!r}")
    centre = lambda_scale * math.exp(2.0 * math.pi * inv_coupling / billiard.mass)
    stretch = math.exp(0.5 * math.pi * math.pi)
    return (centre / stretch, centre, centre * stretch)


def gbar_inflection_survey(evaluator: GreensEvaluator, window: EnergyWindow,
                           min_gaps: int = 30,
                           step_factor: float = 1e-3) -> InflectionSurvey:
    """Locate the inflection of the diagonal resolvent in each gap.

    For a single scatterer the regularised diagonal resolvent rises from
    -inf to +inf across every gap between consecutive unperturbed levels
    it couples to, with one inflection point in between.  The survey
    finds that point by bisecting the sign change of the second
    derivative, estimated by central differences of the analytic first
    derivative with step ``step_factor`` times the mean level spacing,
    and records the resolvent value and slope there next to the
    logarithmic law they are predicted to follow.

    Gaps too narrow for the finite-difference stencil are skipped and
    reported in ``skipped`` rather than silently dropped.
    """
    if evaluator.scatterers.n != 1:
        raise ValidationError(
            f"inflection survey is defined for a single scatterer, got "
            f"{evaluator.scatterers.n}")
    if window.lo <= 0.0:
        raise ValidationError(
            "survey window must be positive so the logarithmic reference exists")
    energies = evaluator.energies
    first = int(np.searchsorted(energies, window.lo, side="left"))
    last = int(np.searchsorted(energies, window.hi, side="right"))
    inside = energies[first:last]
    n_gaps = max(0, inside.size - 1)
    if n_gaps < min_gaps:
        raise ValidationError(
            f"window holds {n_gaps} gaps; need at least {min_gaps}")

    lam = evaluator.scatterers.lambda_scale
    m = evaluator.billiard.mass
    h = step_factor * evaluator.mean_spacing

    def curvature(w: float) -> float:
        return (evaluator.diag_derivative(0, w + h)
                - evaluator.diag_derivative(0, w - h))

    rows = []
    skipped = []
    for k in range(n_gaps):
        a = float(inside[k])
        b = float(inside[k + 1])
        gap = b - a
        if gap <= 8.0 * h:
            skipped.append(
                f"gap [{a:.9g}, {b:.9g}] narrower than the difference stencil")
            continue
        lo = a + 3.0 * h
        hi = b - 3.0 * h
        f_lo = curvature(lo)
        f_hi = curvature(hi)
        if not (f_lo > 0.0 > f_hi):
            # zero-weight mode on one side: no pole, no curvature flip
            skipped.append(
                f"gap [{a:.9g}, {b:.9g}] shows no curvature sign change")
            continue
        while hi - lo > h:
            mid = 0.5 * (lo + hi)
            if curvature(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        omega = 0.5 * (lo + hi)
        gbar = float(evaluator.diag(0, omega))
        slope = abs(float(evaluator.diag_derivative(0, omega)))
        log_ref = m / (2.0 * math.pi) * math.log(omega / lam)
        rows.append(InflectionRow(omega=omega, gbar=gbar,
                                  log_reference=log_ref, abs_slope=slope,
                                  gap_lo=a, gap_hi=b))
    return InflectionSurvey(rows=tuple(rows), skipped=tuple(skipped),
                            mean_spacing=evaluator.mean_spacing)
