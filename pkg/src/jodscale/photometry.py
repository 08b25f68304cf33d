"""Display models and the perceptually uniform luminance encoding.

The display model converts normalized gamma-encoded pixel values into
absolute luminance using a gain-gamma-offset parameterization. The PU
encoding maps absolute luminance (cd/m^2) to approximately perceptually
uniform values by accumulating reciprocal detection thresholds, anchored
so that the luminance range of a typical office display, 0.8 to 80 cd/m^2,
spans code values 0 to 255.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import IntegrityError, ParseError

# Anchors: SDR display luminance range mapped onto the 8-bit code range.
PU_ANCHOR_LOW = 0.8
PU_ANCHOR_HIGH = 80.0
PU_CODE_LOW = 0.0
PU_CODE_HIGH = 255.0

DEFAULT_L_MIN = 1e-3
DEFAULT_L_MAX = 1e6
DEFAULT_KNOTS = 4096

SDR_GAMMA = 2.2


@dataclass(frozen=True)
class DisplayModel:
    """Gain-gamma-offset display model.

    l_peak and l_black are the peak and black luminance of the display in
    cd/m^2; gamma is the decoding exponent applied per color channel.
    """

    l_peak: float
    l_black: float
    gamma: float = SDR_GAMMA

    def __post_init__(self):
        if not (self.l_peak > self.l_black >= 0.0):
            raise IntegrityError(
                f"display requires L_peak > L_black >= 0, "
                f"got L_peak={self.l_peak}, L_black={self.l_black}"
            )
        if not self.gamma > 0.0:
            raise IntegrityError(f"display gamma must be positive, got {self.gamma}")


def display_forward(c_srgb, display: DisplayModel, strict: bool = False) -> np.ndarray:
    """Map normalized gamma-encoded values in [0, 1] to absolute luminance.

    Out-of-range inputs are clamped with a warning, or rejected when
    ``strict`` is set.
    """
    values = np.asarray(c_srgb, dtype=float)
    if values.size and (np.nanmin(values) < 0.0 or np.nanmax(values) > 1.0):
        if strict:
            raise IntegrityError("encoded values outside [0, 1] in strict mode")
        warnings.warn("encoded values outside [0, 1] were clamped", stacklevel=2)
        values = np.clip(values, 0.0, 1.0)
    return (display.l_peak - display.l_black) * values**display.gamma + display.l_black


def sdr_encode(relative) -> np.ndarray:
    """Encode linear values in [0, 1] (relative to peak) as 8-bit SDR codes.

    Applies the inverse display gamma and rounds to the nearest integer;
    inputs are clamped to [0, 1].
    """
    values = np.clip(np.asarray(relative, dtype=float), 0.0, 1.0)
    codes = np.rint(PU_CODE_HIGH * values ** (1.0 / SDR_GAMMA))
    return codes.astype(np.int64)


# Parameters of the smooth luminance-sensitivity curve used as the default
# detection-threshold model: peak sensitivity, sensitivity-drop luminance,
# transition slope and low-luminance slope. The curve is an approximation;
# pass a tabulated threshold to build_pu_lut to use measured data instead.
_SENSITIVITY_PARAMS = (30.162, 4.0627, 1.6596, 0.2712)


def _default_threshold(luminance):
    peak, drop, trans, low = _SENSITIVITY_PARAMS
    lum = np.asarray(luminance, dtype=float)
    sensitivity = peak * ((drop / lum) ** trans + 1.0) ** (-low)
    return lum / sensitivity


@dataclass(frozen=True)
class ThresholdFunction:
    """Detection threshold T(l) in cd/m^2 as a function of luminance.

    The evaluator must be positive over the luminance range handed to
    ``build_pu_lut``; that is validated at build time.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, luminance):
        return np.asarray(self.evaluator(luminance), dtype=float)


def default_threshold() -> ThresholdFunction:
    """Smooth parametric threshold model, flat in the Weber region."""
    return ThresholdFunction(_default_threshold, name="default")


def tabulated_threshold(path) -> ThresholdFunction:
    """Threshold interpolated from a two-column CSV (luminance, threshold).

    Interpolation is linear in log-log space, clamped at the table ends.
    """
    lums, thrs = [], []
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open threshold table {path}: {exc}") from exc
    with handle:
        for row in csv.reader(handle):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                lum, thr = float(row[0]), float(row[1])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad threshold row {row!r} in {path}") from exc
            lums.append(lum)
            thrs.append(thr)
    if len(lums) < 2:
        raise ParseError(f"threshold table {path} needs at least two rows")
    order = np.argsort(lums)
    log_l = np.log(np.asarray(lums, dtype=float)[order])
    log_t = np.log(np.asarray(thrs, dtype=float)[order])
    if np.any(~np.isfinite(log_l)) or np.any(~np.isfinite(log_t)):
        raise ParseError(f"threshold table {path} must be positive and finite")

    def evaluate(luminance):
        return np.exp(np.interp(np.log(np.asarray(luminance, dtype=float)), log_l, log_t))

    return ThresholdFunction(evaluate, name=str(path))


@dataclass(frozen=True)
class PuLut:
    """Tabulated PU encoding: strictly increasing values over luminance knots."""

    luminance_knots: np.ndarray
    pu_values: np.ndarray
    l_min: float
    l_max: float

    def __post_init__(self):
        knots = np.asarray(self.luminance_knots, dtype=float)
        values = np.asarray(self.pu_values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1 or knots.size < 2:
            raise IntegrityError("LUT needs matching 1-D knot and value arrays")
        if np.any(np.diff(knots) <= 0.0):
            raise IntegrityError("LUT luminance knots must be strictly ascending")
        if np.any(np.diff(values) <= 0.0):
            raise IntegrityError("LUT values must be strictly increasing")
        object.__setattr__(self, "luminance_knots", knots)
        object.__setattr__(self, "pu_values", values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            handle.write("luminance,pu\n")
            for lum, value in zip(self.luminance_knots, self.pu_values):
                handle.write(f"{float(lum)!r},{float(value)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "PuLut":
        lums, values = [], []
        try:
            handle = open(path, newline="")
        except OSError as exc:
            raise ParseError(f"cannot open LUT {path}: {exc}") from exc
        with handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["luminance", "pu"]:
                raise ParseError(f"LUT {path} must start with header 'luminance,pu'")
            for row in reader:
                if not row:
                    continue
                try:
                    lums.append(float(row[0]))
                    values.append(float(row[1]))
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"bad LUT row {row!r} in {path}") from exc
        knots = np.asarray(lums, dtype=float)
        return cls(knots, np.asarray(values, dtype=float), float(knots[0]), float(knots[-1]))


def build_pu_lut(
    threshold: ThresholdFunction | Callable | None = None,
    l_min: float = DEFAULT_L_MIN,
    l_max: float = DEFAULT_L_MAX,
    n_knots: int = DEFAULT_KNOTS,
) -> PuLut:
    """Build the PU look-up table by integrating 1/T(l).

    Knots are log-spaced over [l_min, l_max] with the two anchor luminances
    inserted exactly, the reciprocal threshold is accumulated with the
    trapezoid rule, and the result is affinely normalized so the anchors map
    to code values 0 and 255 exactly.
    """
    if threshold is None:
        threshold = default_threshold()
    if not (0.0 < l_min < PU_ANCHOR_LOW and PU_ANCHOR_HIGH < l_max):
        raise IntegrityError(
            f"luminance range must satisfy 0 < l_min < {PU_ANCHOR_LOW} and "
            f"{PU_ANCHOR_HIGH} < l_max, got [{l_min}, {l_max}]"
        )
    if n_knots < 64:
        raise IntegrityError(f"n_knots must be at least 64, got {n_knots}")

    knots = np.logspace(math.log10(l_min), math.log10(l_max), int(n_knots))
    knots = np.union1d(knots, np.array([PU_ANCHOR_LOW, PU_ANCHOR_HIGH]))
    thresholds = threshold(knots)
    if np.any(~np.isfinite(thresholds)) or np.any(thresholds <= 0.0):
        raise IntegrityError("detection threshold must be positive and finite on the range")
    integrand = 1.0 / thresholds

    steps = np.diff(knots) * 0.5 * (integrand[:-1] + integrand[1:])
    raw = np.concatenate([[0.0], np.cumsum(steps)])

    low = raw[np.searchsorted(knots, PU_ANCHOR_LOW)]
    high = raw[np.searchsorted(knots, PU_ANCHOR_HIGH)]
    values = (raw - low) * ((PU_CODE_HIGH - PU_CODE_LOW) / (high - low)) + PU_CODE_LOW
    return PuLut(knots, values, float(l_min), float(l_max))


def pu_encode(values, lut: PuLut, strict: bool = False) -> np.ndarray:
    """Encode absolute luminance to PU units via the LUT.

    Monotone piecewise-linear interpolation; values outside the LUT range
    are clamped with a warning (error in strict mode).
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return arr.copy()
    if np.nanmin(arr) < lut.l_min or np.nanmax(arr) > lut.l_max:
        if strict:
            raise IntegrityError("luminance outside the LUT range in strict mode")
        warnings.warn("luminance outside the LUT range was clamped", stacklevel=2)
        arr = np.clip(arr, lut.l_min, lut.l_max)
    return np.interp(arr, lut.luminance_knots, lut.pu_values)


def pu_decode(values, lut: PuLut) -> np.ndarray:
    """Invert the PU encoding (monotone inverse interpolation)."""
    arr = np.asarray(values, dtype=float)
    return np.interp(arr, lut.pu_values, lut.luminance_knots)


def log_encode(values, l_min: float = PU_ANCHOR_LOW, l_max: float = PU_ANCHOR_HIGH) -> np.ndarray:
    """Logarithmic alternative to the PU encoding, same anchor convention.

    Provided for comparison experiments only; it tracks thresholds worse
    than the PU encoding.
    """
    arr = np.clip(np.asarray(values, dtype=float), l_min, None)
    scale = (PU_CODE_HIGH - PU_CODE_LOW) / (math.log10(l_max) - math.log10(l_min))
    return (np.log10(arr) - math.log10(l_min)) * scale + PU_CODE_LOW
