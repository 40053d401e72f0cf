"""Closed-form spectra and normalizations.

Nothing here touches meshes or FEM operators, so these values can serve as
independent references for the numerical paths.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, OutOfRegimeError, SpectrumTruncationError


class Shape(str, Enum):
    DISK = "disk"
    BALL3 = "ball3"
    CIRCLE = "circle"
    SPHERE2 = "sphere2"


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise InvalidInputError(f"{name} must be positive, got {value}")
    return value


def closed_form_spectrum(shape, size: float, k: int) -> List[float]:
    """First k eigenvalues (with multiplicity) of a reference shape.

    disk and ball3 give Steklov spectra of radius ``size``; circle gives the
    Laplace spectrum of a circle of length ``size``; sphere2 the Laplace
    spectrum of a round 2-sphere of radius ``size``.
    """
    shape = Shape(shape)
    size = _check_positive("size", size)
    if k < 1:
        raise InvalidInputError("k must be at least 1")

    def degree(j: int) -> Tuple[float, int]:
        if shape is Shape.DISK:
            return j / size, 1 if j == 0 else 2
        if shape is Shape.BALL3:
            return j / size, 2 * j + 1
        if shape is Shape.CIRCLE:
            return (2.0 * math.pi * j / size) ** 2, 1 if j == 0 else 2
        return j * (j + 1) / size**2, 2 * j + 1

    values: List[float] = []
    j = 0
    while len(values) < k:
        value, multiplicity = degree(j)
        values.extend([value] * multiplicity)
        j += 1
    return values[:k]


@dataclass(frozen=True)
class CylinderSpec:
    """Product [-L, L] x Sigma with a closed cross-section Sigma.

    ``exhaustive`` declares ``cross_spectrum`` to be the complete spectrum of
    the cross-section, which switches off the certification cut-off.
    """

    cross_spectrum: Tuple[float, ...]
    half_length: float
    cross_boundary_measure: float = 1.0
    n_bdim: int = 1
    exhaustive: bool = False

    def __post_init__(self):
        spectrum = tuple(float(v) for v in self.cross_spectrum)
        object.__setattr__(self, "cross_spectrum", spectrum)
        if not spectrum or spectrum[0] != 0.0:
            raise InvalidInputError("cross_spectrum must start with the eigenvalue 0")
        if any(b < a for a, b in zip(spectrum, spectrum[1:])) or any(v < 0 for v in spectrum):
            raise InvalidInputError("cross_spectrum must be non-negative and nondecreasing")
        _check_positive("half_length", self.half_length)
        _check_positive("cross_boundary_measure", self.cross_boundary_measure)
        if self.n_bdim < 1:
            raise InvalidInputError("n_bdim must be at least 1")


def cylinder_branches(spec: CylinderSpec) -> List[Tuple[float, float]]:
    """(tanh value, coth value) for every nonzero cross-section eigenvalue."""
    L = spec.half_length
    branches = []
    for lam in spec.cross_spectrum[1:]:
        if lam == 0.0:
            continue
        s = math.sqrt(lam)
        branches.append((s * math.tanh(s * L), s / math.tanh(s * L)))
    return branches


def cylinder_steklov(spec: CylinderSpec, k: int) -> List[float]:
    """Sorted Steklov spectrum {0, 1/L} plus sqrt(lam) tanh / coth branches."""
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    values = [0.0, 1.0 / spec.half_length]
    for low, high in cylinder_branches(spec):
        values.extend([low, high])
    # extra zero cross eigenvalues are further components, each adds 0 and 1/L
    extra_zeros = sum(1 for lam in spec.cross_spectrum[1:] if lam == 0.0)
    values.extend([0.0, 1.0 / spec.half_length] * extra_zeros)
    values.sort()
    if k > len(values):
        raise SpectrumTruncationError(f"cross spectrum yields only {len(values)} values, {k} requested")
    if not spec.exhaustive:
        s = math.sqrt(spec.cross_spectrum[-1])
        threshold = s * math.tanh(s * spec.half_length)
        if values[k - 1] > threshold:
            raise SpectrumTruncationError(
                f"value {k} ({values[k - 1]:.6g}) exceeds the certified range {threshold:.6g}; "
                "supply more cross-section eigenvalues"
            )
    return values[:k]


def cylinder_geometry(spec: CylinderSpec) -> Dict[str, float]:
    """|Sigma| and |Omega| of the product cylinder."""
    return {
        "sigma_area": 2.0 * spec.cross_boundary_measure,
        "omega_volume": 2.0 * spec.half_length * spec.cross_boundary_measure,
    }


def isoperimetric_ratio(sigma_area: float, omega_volume: float, n_bdim: int) -> float:
    return _check_positive("sigma_area", sigma_area) / _check_positive("omega_volume", omega_volume) ** (
        n_bdim / (n_bdim + 1.0)
    )


class NormalizedQuantities(NamedTuple):
    normalized: List[float]
    iso_ratio: float
    mean_density: float


def normalized_quantities(
    raw: Sequence[float],
    sigma_area: float,
    omega_volume: float,
    n_bdim: int,
    mean_density: float = 1.0,
) -> NormalizedQuantities:
    """sigma_k * m * |Sigma|^(1/n) for each raw value, plus I(Omega)."""
    sigma_area = _check_positive("sigma_area", sigma_area)
    mean_density = _check_positive("mean_density", mean_density)
    if n_bdim < 1:
        raise InvalidInputError("n_bdim must be at least 1")
    factor = mean_density * sigma_area ** (1.0 / n_bdim)
    return NormalizedQuantities(
        normalized=[float(v) * factor for v in raw],
        iso_ratio=isoperimetric_ratio(sigma_area, omega_volume, n_bdim),
        mean_density=mean_density,
    )


def normalized_laplace(raw: Sequence[float], sigma_area: float, n_bdim: int) -> List[float]:
    """lambda_k * |Sigma|^(2/n)."""
    factor = _check_positive("sigma_area", sigma_area) ** (2.0 / n_bdim)
    return [float(v) * factor for v in raw]


class LargeSigmaEntry(NamedTuple):
    lambda2: float
    half_length: float
    sigma2: float
    normalized_sigma2: float
    omega_volume: float
    iso_ratio: float


def large_sigma_sequence(
    lambda2_values: Sequence[float],
    cross_measure: float = 1.0,
    n_bdim: int = 3,
) -> List[LargeSigmaEntry]:
    """Cylinders of half-length 1/sqrt(lambda2) over cross-sections with the given lambda2.

    sigma_2 = sqrt(lambda2) * tanh(1) on each of them, so the normalized value
    grows without bound together with the isoperimetric ratio.
    """
    cross_measure = _check_positive("cross_measure", cross_measure)
    entries = []
    for lam in lambda2_values:
        lam = float(lam)
        if not lam > 1.0:
            raise OutOfRegimeError(f"construction needs lambda2 > 1, got {lam}")
        root = math.sqrt(lam)
        half_length = 1.0 / root
        sigma2 = root * math.tanh(1.0)
        sigma_area = 2.0 * cross_measure
        omega_volume = 2.0 * half_length * cross_measure
        entries.append(
            LargeSigmaEntry(
                lambda2=lam,
                half_length=half_length,
                sigma2=sigma2,
                normalized_sigma2=sigma2 * sigma_area ** (1.0 / n_bdim),
                omega_volume=omega_volume,
                iso_ratio=isoperimetric_ratio(sigma_area, omega_volume, n_bdim),
            )
        )
    return entries


def wang_xia_bound(lambda2: float, n_bdim: int, curvature: float) -> float:
    """Upper bound for sigma_2 on domains with Ric >= 0 and boundary curvatures >= c."""
    c = _check_positive("curvature", curvature)
    lam = float(lambda2)
    if lam < n_bdim * c * c:
        raise OutOfRegimeError(f"lambda2 = {lam} is below n c^2 = {n_bdim * c * c}")
    root = math.sqrt(lam)
    return root / (n_bdim * c) * (root + math.sqrt(lam - n_bdim * c * c))


def fit_power_law(ks: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Least-squares (exponent a, prefactor C) with values ~ C k^a."""
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(ks) != len(values) or len(ks) < 2:
        raise InvalidInputError("need at least two (k, value) pairs")
    if np.any(ks <= 0) or np.any(values <= 0):
        raise InvalidInputError("power-law fit needs positive k and values")
    slope, intercept = np.polyfit(np.log(ks), np.log(values), 1)
    return float(slope), float(math.exp(intercept))
