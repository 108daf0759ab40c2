"""Diagnostic time series, their CSV form, and log-log decay fits."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import MissingColumn, NonPositiveData

logger = logging.getLogger(__name__)

COLUMNS = (
    "time", "alive_mass", "E", "D", "D_G", "gravity_work",
    "M_0", "M_1", "M_2",
    "rho_sup", "rho_L1", "rho_L2", "rho_L3", "rho_Linf", "j_L1",
    "brinkman_L2", "brinkman_L3", "holder_rhs_L2", "holder_rhs_L3",
    "u_L2", "u_Linf", "grad_u_L2", "grad_u_Linf",
    "budget_u", "budget_grad", "strong_time_lhs",
    "max_pointwise", "div_max",
)


@dataclass
class DiagnosticsSeries:
    """Column store, one row per diagnostic time."""

    columns: Dict[str, List[float]] = field(default_factory=dict)
    meta: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def empty(cls, names: Sequence[str] = COLUMNS) -> "DiagnosticsSeries":
        return cls(columns={name: [] for name in names})

    def append(self, row: Dict[str, float]) -> None:
        for name in row:
            if name not in self.columns:
                self.columns[name] = [math.nan] * len(self)
        for name, values in self.columns.items():
            values.append(float(row.get(name, math.nan)))

    def __len__(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise MissingColumn(f"Column '{name}' not in series (have: {', '.join(self.columns)})")
        return np.asarray(self.columns[name], dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def times(self) -> np.ndarray:
        return self["time"]

    def last(self) -> Dict[str, float]:
        return {name: values[-1] for name, values in self.columns.items() if values}

    def to_csv(self, path: Union[str, Path]) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        names = list(self.columns)
        with p.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            writer.writerow(names)
            for i in range(len(self)):
                writer.writerow([repr(self.columns[name][i]) for name in names])
        return p

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DiagnosticsSeries":
        p = Path(path)
        with p.open("r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            try:
                names = next(reader)
            except StopIteration:
                return cls()
            columns: Dict[str, List[float]] = {name: [] for name in names}
            for row in reader:
                if not row:
                    continue
                for name, raw in zip(names, row):
                    columns[name].append(float(raw))
        return cls(columns=columns)


@dataclass(frozen=True)
class DecayFit:
    window: Tuple[float, float]
    exponent: float
    envelope_constant: float
    residual: float
    super_polynomial: bool = False

    CSV_HEADER = ("t_lo", "t_hi", "exponent", "envelope_constant", "residual", "super_polynomial")

    def csv_row(self) -> Tuple:
        return (repr(self.window[0]), repr(self.window[1]), repr(self.exponent),
                repr(self.envelope_constant), repr(self.residual), int(self.super_polynomial))


def _window_values(series, quantity: str, window: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(series, DiagnosticsSeries):
        t, q = series.times, series[quantity]
    else:
        t, q = (np.asarray(a, dtype=np.float64) for a in series)
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise ValueError(f"window needs t_lo < t_hi, got {window}")
    keep = (t >= t_lo) & (t <= t_hi)
    return t[keep], q[keep]


def _slope(t: np.ndarray, q: np.ndarray) -> Tuple[float, float]:
    slope, intercept = np.polyfit(np.log1p(t), np.log(q), 1)
    return float(slope), float(intercept)


def fit_decay(series, quantity: str, window: Tuple[float, float]) -> DecayFit:
    """Least-squares slope of log q against log(1+t) over the window.

    ``series`` is a DiagnosticsSeries or a (times, values) pair. The fit is
    flagged super-polynomial when the late half of the window decays
    markedly faster than the early half.
    """
    t, q = _window_values(series, quantity, window)
    if t.size < 2:
        raise NonPositiveData(f"Need at least two samples of '{quantity}' in {window}, got {t.size}")
    if not np.all(q > 0):
        raise NonPositiveData(f"'{quantity}' is not strictly positive on {window}")
    slope, intercept = _slope(t, q)
    fitted = intercept + slope * np.log1p(t)
    residual = float(np.sqrt(np.mean((np.log(q) - fitted) ** 2)))
    envelope = float(np.max(q * (1.0 + t) ** (-slope)))

    super_poly = False
    if t.size >= 6:
        half = t.size // 2
        early, _ = _slope(t[:half], q[:half])
        late, _ = _slope(t[half:], q[half:])
        super_poly = late < early - (0.1 * abs(early) + 0.05)
    return DecayFit(window=(float(window[0]), float(window[1])), exponent=slope,
                    envelope_constant=envelope, residual=residual, super_polynomial=super_poly)


@dataclass(frozen=True)
class EnvelopeCheck:
    holds: bool
    envelope: float
    violations: int
    first_violation: Optional[float] = None


def decay_envelope_check(times: Iterable[float], values: Iterable[float], t_fit: float,
                         rate: float, rel_tol: float = 1e-9) -> EnvelopeCheck:
    """values(t) ≤ Env·(1+t)^{−rate} for t ≥ t_fit, with Env = values(t_fit)·(1+t_fit)^{rate}."""
    t = np.asarray(list(times), dtype=np.float64)
    v = np.asarray(list(values), dtype=np.float64)
    anchor = float(np.interp(t_fit, t, v))
    env = anchor * (1.0 + t_fit) ** rate
    later = t >= t_fit
    bound = env * (1.0 + t[later]) ** (-rate)
    bad = v[later] > bound * (1.0 + rel_tol) + 1e-300
    first = float(t[later][bad][0]) if np.any(bad) else None
    return EnvelopeCheck(holds=not np.any(bad), envelope=env, violations=int(np.count_nonzero(bad)),
                         first_violation=first)
