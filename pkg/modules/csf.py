"""
Contrast sensitivity models
Default analytic spatio-temporal CSF and a lookup-table CSF loaded from CSV
"""

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from config import CsfConfig
from modules.errors import ConfigurationError, FormatError, HvpfWarning, InputError

ArrayLike = Union[float, np.ndarray]

AXIS_COLUMNS = CsfConfig.TABLE_COLUMNS[:4]
VALUE_COLUMN = CsfConfig.TABLE_COLUMNS[4]


@dataclass(frozen=True)
class CsfQuery:
    """One sensitivity query point"""

    f_spatial: float  # cpd
    f_temporal: float = 0.0  # Hz
    luminance: float = 100.0  # cd/m^2
    eccentricity: float = 0.0  # degrees

    def __post_init__(self):
        values = (self.f_spatial, self.f_temporal, self.luminance, self.eccentricity)
        if not all(math.isfinite(v) for v in values):
            raise InputError(f"CSF query must be finite: {values}")
        if self.f_spatial < 0 or self.f_temporal < 0 or self.eccentricity < 0:
            raise InputError(f"CSF query frequencies and eccentricity must be >= 0: {values}")
        if not self.luminance > 0:
            raise InputError(f"CSF query luminance must be > 0, got {self.luminance}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.f_spatial, self.f_temporal, self.luminance, self.eccentricity)


def _check_finite(*arrays: np.ndarray):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise InputError("CSF query contains non-finite values")


@dataclass(frozen=True)
class AnalyticCsf:
    """
    Band-pass spatial term, exponential temporal decay above omega_0, saturating luminance term.

    Eccentricity magnifies spatial frequency by m = 1 + e / e2 and divides the foveal
    response by the same factor, so sensitivity never grows away from the gaze point.
    """

    s_max: float = CsfConfig.S_MAX
    f_peak: float = CsfConfig.F_PEAK
    s_zero: float = CsfConfig.S_ZERO
    e2: float = CsfConfig.E2
    omega_0: float = CsfConfig.OMEGA_0
    omega_c: float = CsfConfig.OMEGA_C
    l_half: float = CsfConfig.L_HALF
    p: float = CsfConfig.P
    kind: str = field(default='default_analytic', init=False)

    def __post_init__(self):
        for name in ('s_max', 'f_peak', 's_zero', 'e2', 'omega_c', 'l_half', 'p'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"CSF parameter {name} must be finite and positive, got {value}")
        if not (math.isfinite(self.omega_0) and self.omega_0 >= 0):
            raise ConfigurationError(f"CSF parameter omega_0 must be >= 0, got {self.omega_0}")

    @classmethod
    def with_overrides(cls, overrides: Optional[Dict[str, float]] = None) -> "AnalyticCsf":
        overrides = overrides or {}
        unknown = set(overrides) - {f for f in cls.__dataclass_fields__ if f != 'kind'}
        if unknown:
            raise ConfigurationError(f"Unknown CSF parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in overrides.items()})

    def spatial(self, f: np.ndarray) -> np.ndarray:
        ratio = f / self.f_peak
        with np.errstate(over='ignore', under='ignore'):
            band = ratio * np.exp(1.0 - ratio)
        return np.where(f > 0, band, self.s_zero)

    def temporal(self, omega: np.ndarray) -> np.ndarray:
        return np.where(omega <= self.omega_0, 1.0, np.exp(-(omega - self.omega_0) / self.omega_c))

    def luminance_gain(self, luminance: np.ndarray) -> np.ndarray:
        return np.power(luminance / (luminance + self.l_half), self.p)

    def evaluate(
        self,
        f_spatial: ArrayLike,
        f_temporal: ArrayLike = 0.0,
        luminance: ArrayLike = 100.0,
        eccentricity: ArrayLike = 0.0
    ) -> ArrayLike:
        """Vectorized sensitivity; arguments broadcast against each other"""
        f, omega, lum, ecc = (np.asarray(x, dtype=np.float64) for x in (f_spatial, f_temporal, luminance, eccentricity))
        _check_finite(f, omega, lum, ecc)
        if np.any(f < 0) or np.any(omega < 0) or np.any(ecc < 0) or np.any(lum <= 0):
            raise InputError("CSF arguments out of range")

        magnification = 1.0 + ecc / self.e2
        s = self.s_max * self.spatial(f * magnification) / magnification
        s = s * self.temporal(omega) * self.luminance_gain(lum)
        s = np.maximum(s, CsfConfig.S_FLOOR)
        return float(s) if s.ndim == 0 else s

    def sensitivity(self, q: CsfQuery) -> float:
        return self.evaluate(*q.as_tuple())


class TableCsf:
    """
    Rectilinear lookup table over (f_spatial, f_temporal, luminance, eccentricity),
    multilinear interpolation, queries clamped to the grid hull.
    """

    kind = 'lookup_table'

    def __init__(self, axes: Sequence[Sequence[float]], values: np.ndarray, source: Optional[str] = None):
        if len(axes) != 4:
            raise ConfigurationError(f"CSF table needs 4 axes, got {len(axes)}")
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in axes)
        self.values = np.asarray(values, dtype=np.float64)
        self.source = source

        expected = tuple(len(a) for a in self.axes)
        if self.values.shape != expected:
            raise ConfigurationError(f"CSF table shape {self.values.shape} does not match axes {expected}")
        for name, axis in zip(AXIS_COLUMNS, self.axes):
            if axis.size == 0 or not np.all(np.isfinite(axis)):
                raise ConfigurationError(f"CSF table axis {name} must be nonempty and finite")
            if np.any(np.diff(axis) <= 0):
                raise ConfigurationError(f"CSF table axis {name} is not strictly increasing: {axis.tolist()}")
        if not np.all(self.values > 0):
            raise ConfigurationError("CSF table sensitivities must be positive")

        # Singleton axes carry no interpolation information
        self._live = [i for i, a in enumerate(self.axes) if a.size > 1]
        if self._live:
            self._interp = RegularGridInterpolator(
                [self.axes[i] for i in self._live],
                np.squeeze(self.values, axis=tuple(i for i in range(4) if i not in self._live)),
                method='linear',
            )
        else:
            self._interp = None

    def _clamp(self, points: Sequence[np.ndarray]) -> Tuple[list, bool]:
        clamped = False
        out = []
        for axis, values in zip(self.axes, points):
            low, high = axis[0], axis[-1]
            if np.any(values < low) or np.any(values > high):
                clamped = True
            out.append(np.clip(values, low, high))
        return out, clamped

    def lookup(self, q: CsfQuery) -> Tuple[float, bool]:
        """Interpolated sensitivity and whether the query was clamped to the hull"""
        points, clamped = self._clamp([np.asarray(v, dtype=np.float64) for v in q.as_tuple()])
        if self._interp is None:
            return float(self.values.ravel()[0]), clamped
        value = self._interp(np.array([[points[i] for i in self._live]]))[0]
        return float(value), clamped

    def sensitivity(self, q: CsfQuery) -> float:
        value, clamped = self.lookup(q)
        if clamped:
            warnings.warn(f"CSF query {q.as_tuple()} outside table hull; clamped", HvpfWarning)
        return value

    def evaluate(
        self,
        f_spatial: ArrayLike,
        f_temporal: ArrayLike = 0.0,
        luminance: ArrayLike = 100.0,
        eccentricity: ArrayLike = 0.0
    ) -> ArrayLike:
        arrays = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64)
                                       for x in (f_spatial, f_temporal, luminance, eccentricity)))
        _check_finite(*arrays)
        shape = arrays[0].shape
        points, clamped = self._clamp([a.ravel() for a in arrays])
        if clamped:
            warnings.warn("CSF queries outside table hull; clamped", HvpfWarning)

        if self._interp is None:
            result = np.full(shape, self.values.ravel()[0])
        else:
            result = self._interp(np.column_stack([points[i] for i in self._live])).reshape(shape)
        return float(result) if result.ndim == 0 else result


CsfModel = Union[AnalyticCsf, TableCsf]


def sensitivity(model: CsfModel, q: CsfQuery) -> float:
    """
    Contrast sensitivity of the model at one query point.

    Args:
        model: AnalyticCsf or TableCsf
        q: Validated query

    Returns:
        Positive, unitless sensitivity
    """
    return model.sensitivity(q)


def _parser_line(error: Exception) -> Optional[int]:
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else None


def _first_off_grid_row(df: pd.DataFrame, axes: List[np.ndarray], expected: int) -> int:
    """Index of the first row holding an axis value that lacks some of its grid nodes"""
    short = np.zeros(len(df), dtype=bool)
    for axis, column in zip(axes, AXIS_COLUMNS):
        counts = df[column].map(df[column].value_counts())
        short |= (counts < expected // len(axis)).to_numpy()
    return int(np.flatnonzero(short)[0]) if short.any() else 0


def load_table(path: str) -> TableCsf:
    """
    Load a CSF lookup table from CSV.

    Expected columns: f_spatial_cpd, f_temporal_hz, luminance_nits,
    eccentricity_deg, sensitivity. Row order is free; the grid must be full.

    Args:
        path: CSV file path

    Returns:
        TableCsf
    """
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise FormatError("CSF table is empty", line=1) from e
    except pd.errors.ParserError as e:
        raise FormatError(f"Malformed CSF table: {e}", line=_parser_line(e)) from e

    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in CsfConfig.TABLE_COLUMNS if c not in df.columns]
    if missing:
        raise FormatError(f"CSF table missing columns {missing}", line=1)
    if df.empty:
        raise FormatError("CSF table has no rows", line=2)

    df = df[CsfConfig.TABLE_COLUMNS].apply(pd.to_numeric, errors='coerce')
    bad_rows = df.index[~np.isfinite(df.to_numpy()).all(axis=1)]
    if len(bad_rows):
        raise FormatError("Non-numeric or non-finite value in CSF table", line=int(bad_rows[0]) + 2)

    nonpositive = df.index[df[VALUE_COLUMN] <= 0]
    if len(nonpositive):
        raise FormatError("CSF table sensitivities must be positive", line=int(nonpositive[0]) + 2)

    duplicated = df.index[df.duplicated(subset=AXIS_COLUMNS)]
    if len(duplicated):
        raise FormatError("Duplicate grid node in CSF table", line=int(duplicated[0]) + 2)

    axes = [np.sort(df[c].unique()) for c in AXIS_COLUMNS]
    expected = int(np.prod([len(a) for a in axes]))
    if len(df) != expected:
        raise FormatError(f"Ragged CSF grid: {len(df)} rows, full grid needs {expected}",
                          line=_first_off_grid_row(df, axes, expected) + 2)

    values = np.empty(tuple(len(a) for a in axes))
    index = tuple(np.searchsorted(axis, df[c].to_numpy()) for axis, c in zip(axes, AXIS_COLUMNS))
    values[index] = df[VALUE_COLUMN].to_numpy()

    return TableCsf(axes, values, source=str(path))


def build_csf(kind: str = 'default_analytic', table: Optional[str] = None,
              overrides: Optional[Dict[str, float]] = None) -> CsfModel:
    """Construct the model named in a run configuration"""
    if kind == 'default_analytic':
        return AnalyticCsf.with_overrides(overrides)
    if kind == 'lookup_table':
        if not table:
            raise ConfigurationError("CSF kind 'lookup_table' needs a table path")
        return load_table(table)
    raise ConfigurationError(f"Unknown CSF kind '{kind}'")
