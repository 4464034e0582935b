"""Self-adjoint extension bookkeeping for point scatterers.

A family of point interactions is parameterized either by an angle theta per
scatterer (the boundary-condition label) or by an inverse coupling strength.
The two are related through the deficiency norm at the regularization scale,
and the whole family is encoded in a unitary matrix built from two samples of
the secular matrix at conjugate imaginary energies.

Spectra never need the unitary matrix; it is a diagnostic surface. Solvers
work with the secular matrix on the real axis (see `solver`).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import IllConditionedExtensionError, ValidationError
from .greens import GreensEvaluator


@dataclasses.dataclass(frozen=True)
class ExtensionAngle:
    """Boundary-condition angle for one scatterer, in [0, 2*pi).

    theta = pi is the zero-inverse-coupling point; theta -> 0 (or 2*pi) is
    the decoupled limit where the scatterer drops out.
    """

    theta: float

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValidationError("extension angle must be finite")
        if not 0.0 <= self.theta < 2.0 * math.pi:
            raise ValidationError(
                f"extension angle must lie in [0, 2*pi), got {self.theta!r}"
            )


@dataclasses.dataclass(frozen=True)
class SecularSample:
    """The N x N secular matrix evaluated at one (possibly complex) energy."""

    omega: complex
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"secular sample must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("secular sample contains non-finite entries")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def secular_sample(evaluator: GreensEvaluator, omega) -> SecularSample:
    return SecularSample(complex(omega), evaluator.secular_matrix(omega))


def conjugate_samples(evaluator: GreensEvaluator) -> tuple[SecularSample, SecularSample]:
    """Secular samples at +i*Lambda and -i*Lambda for this configuration."""
    lam = evaluator.scatterers.lambda_scale
    return (
        secular_sample(evaluator, 1j * lam),
        secular_sample(evaluator, -1j * lam),
    )


def _check_conjugate_pair(sample_plus: SecularSample, sample_minus: SecularSample) -> float:
    if sample_plus.n != sample_minus.n:
        raise ValidationError("samples have mismatched dimensions")
    wp, wm = sample_plus.omega, sample_minus.omega
    if wp.real != 0.0 or wm.real != 0.0 or wp.imag <= 0.0 or wm.imag >= 0.0:
        raise ValidationError(
            "samples must sit at +i*Lambda and -i*Lambda on the imaginary axis"
        )
    if not math.isclose(wp.imag, -wm.imag, rel_tol=1e-12):
        raise ValidationError("sample energies are not complex conjugates")
    return wp.imag


def u_matrix(sample_plus: SecularSample, sample_minus: SecularSample) -> np.ndarray:
    """Unitary extension parameter from the two imaginary-axis samples.

    U = -transpose(inverse(m_minus) @ m_plus) where m_plus/m_minus are the
    secular matrices at +i*Lambda / -i*Lambda. For a single scatterer this
    is exactly the phase -exp(i*theta) at any consistent truncation; for
    several scatterers truncation leaves an intrinsic non-unitary part (the
    exact invariant is the Gram-weighted one, see gram_invariant_defect).
    """
    _check_conjugate_pair(sample_plus, sample_minus)
    m_plus = sample_plus.matrix.astype(complex)
    m_minus = sample_minus.matrix.astype(complex)
    try:
        u = -np.linalg.solve(m_minus, m_plus).T
    except np.linalg.LinAlgError as exc:
        raise IllConditionedExtensionError(
            f"secular matrix at -i*Lambda is singular: {exc}"
        ) from exc
    if not np.all(np.isfinite(u)):
        raise IllConditionedExtensionError(
            "extension matrix has non-finite entries; configuration is degenerate"
        )
    return u


def u_phase(sample_plus: SecularSample, sample_minus: SecularSample) -> complex:
    """Single-scatterer extension phase (the 1x1 u_matrix entry)."""
    if sample_plus.n != 1:
        raise ValidationError("u_phase is defined for a single scatterer only")
    return complex(u_matrix(sample_plus, sample_minus)[0, 0])


def unitarity_defect(sample_plus: SecularSample, sample_minus: SecularSample) -> float:
    """Max-norm of U^dagger U - 1 for the extension matrix."""
    u = u_matrix(sample_plus, sample_minus)
    gram = u.conj().T @ u
    return float(np.max(np.abs(gram - np.eye(u.shape[0]))))


def deficiency_gram(sample_plus: SecularSample, sample_minus: SecularSample) -> np.ndarray:
    """Deficiency-vector Gram matrix extracted from the imaginary-axis samples.

    The secular matrix satisfies m(-i*L) - m(+i*L) = 2i*L*C with C real
    symmetric positive definite; C is the Gram matrix of the deficiency
    vectors under the evaluator's truncation and tail policy.
    """
    lam = _check_conjugate_pair(sample_plus, sample_minus)
    c = (sample_minus.matrix - sample_plus.matrix) / (2j * lam)
    c = c.real if np.max(np.abs(c.imag)) < 1e-12 * np.max(np.abs(c.real)) else c
    return np.asarray(c)


def gram_invariant_defect(sample_plus: SecularSample, sample_minus: SecularSample) -> float:
    """Max-norm of conj(U) C U^T - C, the truncation-stable unitarity relation.

    Unlike the plain unitarity defect this vanishes to rounding at any
    truncation, because it only uses the algebraic structure of the two
    samples (m(+-i*L) = -(A +- i*L*C) with A, C symmetric).
    """
    u = u_matrix(sample_plus, sample_minus)
    c = deficiency_gram(sample_plus, sample_minus)
    return float(np.max(np.abs(u.conj() @ c @ u.T - c)))


def hermitian_conjugation_defect(evaluator: GreensEvaluator, omega) -> float:
    """Max-norm of m(omega)^dagger - m(conj(omega)) for the secular matrix.

    Vanishes to rounding: every series term conjugates exactly. Real omega
    must give a real symmetric matrix, so the defect is 0 there.
    """
    w = complex(omega)
    m = evaluator.secular_matrix(w)
    m_conj = evaluator.secular_matrix(w.conjugate())
    return float(np.max(np.abs(np.asarray(m).conj().T - m_conj)))


def inv_coupling_from_angle(
    evaluator: GreensEvaluator, angle: ExtensionAngle | float, i: int
) -> float:
    """Map a boundary angle to the inverse coupling of scatterer i.

    inv = Lambda * cot(theta/2) * C_i with C_i the tail-corrected deficiency
    norm at scatterer i. theta = pi maps to 0; theta = 0 is the decoupled
    limit (inverse coupling -> +inf) and is rejected.
    """
    theta = angle.theta if isinstance(angle, ExtensionAngle) else float(angle)
    ExtensionAngle(theta)  # range check
    if theta == 0.0:
        raise ValidationError(
            "theta = 0 is the decoupled limit (infinite inverse coupling)"
        )
    lam = evaluator.scatterers.lambda_scale
    c_i = evaluator.deficiency_norm_sq(i)
    half = 0.5 * theta
    return lam * (math.cos(half) / math.sin(half)) * c_i


def angle_from_inv_coupling(
    evaluator: GreensEvaluator, inv_coupling: float, i: int
) -> ExtensionAngle:
    """Inverse of inv_coupling_from_angle; always lands in (0, 2*pi)."""
    if not math.isfinite(inv_coupling):
        raise ValidationError("inverse coupling must be finite")
    lam = evaluator.scatterers.lambda_scale
    c_i = evaluator.deficiency_norm_sq(i)
    return ExtensionAngle(2.0 * math.atan2(lam * c_i, inv_coupling))
