"""From counts to rates, fitted couplings, calibration lines and predictions."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .engine import DEFAULT_SEED, DEFAULT_SHOTS, circuit_trace
from .errors import (
    BoundaryWarning,
    DegenerateFitWarning,
    ExtrapolationWarning,
    FitError,
    LeakageError,
    RankError,
)
from .exciton import EnergyScale, ExcitonSystem
from .heom import BathSpec, HierarchySpec, heom_propagate
from .noisegen import NoiseModel
from .qsim import Counts
from .traces import PopulationTrace, rms_difference

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Renormalized(NamedTuple):
    P1: float
    P2: float
    leak_frac: float


def renormalize_counts(c: Counts) -> Renormalized:
    """Populations inside the one-exciton manifold.

    ``P1 = N01 / (N01 + N10)``; label ``"01"`` is qubit 0 (site 1) excited.
    ``N00`` and ``N11`` only enter the leakage fraction.
    """
    n01, n10 = c["01"], c["10"]
    inside = n01 + n10
    if inside == 0:
        raise LeakageError("every shot fell outside the one-exciton manifold", counts=c)
    return Renormalized(n01 / inside, n10 / inside, 1.0 - inside / c.shots)


# ---------------------------------------------------------------------------
# exponential-cosine rate fit
# ---------------------------------------------------------------------------

@dataclass
class RateFit:
    """``P1(t) = 0.5 + A exp(-k t) cos(omega t + phi)`` with ``t`` in ps."""

    k: float
    omega: float
    A: float
    phi: float
    rms: float
    degenerate: bool = False

    def model(self, t_ps) -> np.ndarray:
        t = np.asarray(t_ps, dtype=float)
        return 0.5 + self.A * np.exp(-self.k * t) * np.cos(self.omega * t + self.phi)


def _canonical(A, k, omega, phi):
    if A < 0:
        A, phi = -A, phi + math.pi
    phi = (phi + math.pi) % (2 * math.pi) - math.pi
    return A, k, omega, phi


def fit_exp_cos(trace: PopulationTrace, omega_starts=None, k_starts=(0.1, 1.0, 10.0),
                degenerate_tol: float = 1e-6) -> RateFit:
    """Multi-start least-squares fit of the damped cosine; keeps the lowest residual."""
    t = trace.times_ps
    y = trace.P1
    if t.size < 20:
        raise FitError(f"need at least 20 samples, got {t.size}")
    if np.max(np.abs(y - 0.5)) < degenerate_tol:
        warnings.warn("trace sits at 0.5; rate is unidentifiable", DegenerateFitWarning, stacklevel=2)
        return RateFit(0.0, 0.0, 0.0, 0.0, float(np.sqrt(np.mean((y - 0.5) ** 2))), degenerate=True)
    if omega_starts is None:
        # 0, the coherent dimer frequency 2 * (2 pi c J0), and a grid of 5
        coherent = 2.0 * EnergyScale().delta_theta / EnergyScale().dt_fs * 1e3
        omega_starts = [0.0, coherent, *np.linspace(10.0, 90.0, 5)]

    def resid(x):
        return 0.5 + x[0] * np.exp(-x[1] * t) * np.cos(x[2] * t + x[3]) - y

    lo = [-1.0, 0.0, 0.0, -math.pi]
    hi = [1.0, 1e4, 1e3, math.pi]
    a0 = float(np.clip(y[0] - 0.5, -0.99, 0.99)) or 0.1
    best = None
    failures = []
    for w0 in omega_starts:
        for k0 in k_starts:
            x0 = [a0, k0, w0, 0.0]
            try:
                r = least_squares(resid, x0, bounds=(lo, hi), x_scale=[0.5, 1.0, 10.0, 1.0])
            except (ValueError, np.linalg.LinAlgError) as exc:
                failures.append(str(exc))
                continue
            if not (r.success and np.isfinite(r.cost)):
                failures.append(r.message)
                continue
            if best is None or r.cost < best.cost:
                best = r
    if best is None:
        raise FitError("exp-cos fit did not converge from any start", {"failures": failures})
    A, k, omega, phi = _canonical(*best.x)
    rms = float(np.sqrt(np.mean(best.fun ** 2)))
    return RateFit(float(k), float(omega), float(A), float(phi), rms)


# ---------------------------------------------------------------------------
# lambda fit against HEOM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeomFitSettings:
    """Bath and hierarchy parameters held fixed while fitting the coupling."""

    gamma_ps: float = 100.0
    temperature: float = 300.0
    L: int = 8
    K: int = 1


@dataclass
class LambdaFit:
    lam: float
    rms: float
    evaluations: int
    at_bound: bool = False


@lru_cache(maxsize=512)
def _heom_p1(system: ExcitonSystem, lam: float, settings: HeomFitSettings, p0: int,
             dt_fs: float, n_steps: int) -> np.ndarray:
    bath = BathSpec(lam, settings.gamma_ps, settings.temperature)
    tr = heom_propagate(system, bath, HierarchySpec(settings.L, settings.K), p0, dt_fs, n_steps)
    out = tr.P1.copy()
    out.setflags(write=False)
    return out


def heom_on_grid(trace: PopulationTrace, system: ExcitonSystem, lam: float,
                 settings: HeomFitSettings | None = None) -> np.ndarray:
    """HEOM site-1 population on the time grid of ``trace``."""
    settings = settings or HeomFitSettings()
    if abs(trace.times_fs[0]) > 1e-9:
        raise ValueError("trace must start at t = 0")
    p0 = int(trace.provenance.get("initial_site", 0))
    return _heom_p1(system, float(lam), settings, p0, trace.dt_fs(), len(trace) - 1)


def golden_section(f, a: float, b: float, tol: float):
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x), n_evals)``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        n += 1
    x = 0.5 * (a + b)
    return x, f(x), n + 1


def fit_lambda(trace: PopulationTrace, system: ExcitonSystem | None = None,
               settings: HeomFitSettings | None = None, bounds=(0.0, 400.0), tol: float = 0.5,
               scan_points: int = 9) -> LambdaFit:
    """Reorganization energy whose HEOM trace best matches ``trace`` in RMS.

    A coarse scan picks the bracket around the best grid point, so a residual
    that is unimodal only near its minimum is still handled; golden-section
    search then refines to ``tol``.
    """
    system = system or ExcitonSystem.symmetric_dimer()
    lo, hi = map(float, bounds)
    if not hi > lo:
        raise ValueError("empty lambda bounds")

    def rms(lam):
        return float(np.sqrt(np.mean((heom_on_grid(trace, system, lam, settings) - trace.P1) ** 2)))

    grid = np.linspace(lo, hi, scan_points)
    vals = [rms(x) for x in grid]
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, scan_points - 1)]
    lam, best, n = golden_section(rms, a, b, tol)
    at_bound = bool(lam - lo < tol or hi - lam < tol)
    if at_bound:
        warnings.warn(f"lambda fit stopped at the bound ({lam:.2f} in [{lo}, {hi}])", BoundaryWarning, stacklevel=2)
    return LambdaFit(float(lam), best, n + scan_points, at_bound)


# ---------------------------------------------------------------------------
# calibration line
# ---------------------------------------------------------------------------

@dataclass
class CalibrationCurve:
    slope: float
    intercept: float
    r_squared: float
    points: list = field(default_factory=list)

    def lambda_at(self, d: float) -> float:
        return self.slope * d + self.intercept

    def d_for(self, lam: float) -> float:
        if self.slope == 0:
            raise RankError("flat calibration line cannot be inverted")
        return (lam - self.intercept) / self.slope

    @property
    def lambda_span(self) -> tuple:
        lams = [p["lambda"] for p in self.points]
        return min(lams), max(lams)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "points": self.points}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationCurve":
        return cls(float(data["slope"]), float(data["intercept"]), float(data["r_squared"]),
                   [dict(p) for p in data.get("points", [])])


def build_calibration(points: Sequence) -> CalibrationCurve:
    """Ordinary least-squares line through ``(d, lambda[, rms])`` points."""
    rows = []
    for p in points:
        if isinstance(p, dict):
            rows.append({"d": float(p["d"]), "lambda": float(p["lambda"]), "rms": p.get("rms")})
        else:
            rows.append({"d": float(p[0]), "lambda": float(p[1]), "rms": float(p[2]) if len(p) > 2 else None})
    if len({r["d"] for r in rows}) < 2:
        raise RankError("calibration needs at least two distinct d values")
    d = np.array([r["d"] for r in rows])
    lam = np.array([r["lambda"] for r in rows])
    slope, intercept = np.polyfit(d, lam, 1)
    resid = lam - (slope * d + intercept)
    ss_tot = float(np.sum((lam - lam.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    if len(rows) == 2:
        # exact two-point line, free of polyfit round-off
        (d1, l1), (d2, l2) = (d[0], lam[0]), (d[1], lam[1])
        slope = (l2 - l1) / (d2 - d1)
        intercept = l1 - slope * d1
        r2 = 1.0
    return CalibrationCurve(float(slope), float(intercept), float(r2), rows)


def calibration_points(ds, noise: NoiseModel, seq="SWAP2", n_steps=150, shots=DEFAULT_SHOTS,
                       seed=DEFAULT_SEED, settings=None, system=None, bounds=(0.0, 400.0)) -> list:
    """Run the circuit engine at each ``d`` and fit lambda; failed fits are logged and skipped."""
    pts = []
    for d in ds:
        tr = circuit_trace(seq, d, noise, n_steps, shots=shots, seed=seed)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BoundaryWarning)
                fit = fit_lambda(tr, system, settings, bounds)
        except FitError as exc:
            log.warning("lambda fit failed at d=%g: %s", d, exc)
            continue
        pts.append((float(d), fit.lam, fit.rms))
    return pts


@dataclass
class NoiseCalibration:
    noise: NoiseModel
    scale: float
    fitted: list
    objective: float


def calibrate_noise(base: NoiseModel | None = None, anchors=((2.0, 15.0), (18.0, 227.0)), seq="SWAP2",
                    n_steps=150, shots=None, seed=DEFAULT_SEED, scale_bounds=(0.1, 1.5),
                    xatol=2e-3) -> NoiseCalibration:
    """Tune the single two-qubit noise scale so the anchor runs fit the anchor couplings.

    Objective: sum of squared differences between fitted and target lambda.
    Runs without shot noise by default so the objective is smooth.
    """
    base = base or NoiseModel()

    def fitted(s):
        nm = base.scaled_two_qubit(s)
        return [fit_lambda(circuit_trace(seq, d, nm, n_steps, shots=shots, seed=seed)).lam for d, _ in anchors]

    def objective(s):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryWarning)
            lams = fitted(s)
        val = sum((lam - target) ** 2 for lam, (_, target) in zip(lams, anchors))
        log.info("noise scale %.4f -> lambdas %s (objective %.2f)", s, np.round(lams, 1), val)
        return val

    res = minimize_scalar(objective, bounds=scale_bounds, method="bounded", options={"xatol": xatol})
    s = float(res.x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        lams = fitted(s)
    return NoiseCalibration(base.scaled_two_qubit(s), s, [(d, lam) for (d, _), lam in zip(anchors, lams)],
                            float(res.fun))


# ---------------------------------------------------------------------------
# prediction and rate curves
# ---------------------------------------------------------------------------

@dataclass
class Prediction:
    lam_target: float
    d_exact: float
    d: float
    circuit: PopulationTrace
    heom: PopulationTrace
    rms: float


def predict_dynamics(curve: CalibrationCurve, lam_target: float, noise: NoiseModel, seq="SWAP2",
                     n_steps: int = 150, shots=DEFAULT_SHOTS, seed=DEFAULT_SEED,
                     settings: HeomFitSettings | None = None, system: ExcitonSystem | None = None,
                     granularity: float = 1.0) -> Prediction:
    """Invert the calibration line, run both engines, and compare them.

    Nothing is fitted here: the noise model and the line are used as given.
    """
    settings = settings or HeomFitSettings()
    system = system or ExcitonSystem.symmetric_dimer()
    lo, hi = curve.lambda_span
    if not lo <= lam_target <= hi:
        warnings.warn(f"lambda {lam_target} outside calibrated span [{lo}, {hi}]", ExtrapolationWarning,
                      stacklevel=2)
    d_exact = curve.d_for(lam_target)
    d = max(0.0, round(d_exact / granularity) * granularity)
    circ = circuit_trace(seq, d, noise, n_steps, shots=shots, seed=seed)
    scale = EnergyScale()
    heom = heom_propagate(system, BathSpec(lam_target, settings.gamma_ps, settings.temperature),
                          HierarchySpec(settings.L, settings.K), 0, scale.dt_fs, n_steps)
    return Prediction(float(lam_target), float(d_exact), float(d), circ, heom, rms_difference(circ, heom))


@dataclass
class RateCurve:
    ds: list
    rates: list
    fits: list
    argmax_d: float
    turnover: bool

    def table(self) -> list:
        return list(zip(self.ds, self.rates))


def has_interior_maximum(values: Sequence[float]) -> bool:
    """True when the maximum is strictly inside and strictly above both ends."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return False
    i = int(np.argmax(v))
    return 0 < i < v.size - 1 and v[i] > v[0] and v[i] > v[-1]


def rate_curve(ds: Sequence[float], traces: Sequence[PopulationTrace]) -> RateCurve:
    if len(ds) != len(traces):
        raise ValueError("ds and traces differ in length")
    keep_d, rates, fits = [], [], []
    for d, tr in zip(ds, traces):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateFitWarning)
            fit = fit_exp_cos(tr)
        if fit.degenerate or any(issubclass(w.category, DegenerateFitWarning) for w in caught):
            warnings.warn(f"degenerate rate fit at d={d}; point excluded", DegenerateFitWarning, stacklevel=2)
            continue
        keep_d.append(float(d))
        rates.append(fit.k)
        fits.append(fit)
    if not rates:
        raise FitError("no usable rate fits")
    i = int(np.argmax(rates))
    return RateCurve(keep_d, rates, fits, keep_d[i], has_interior_maximum(rates))
