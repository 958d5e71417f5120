"""Least-squares fitting shared by the calibration behaviors."""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from ..errors import FitDiverged, InsufficientData

MIN_POINTS = 5
MAX_ITERATIONS = 200
#: Bad-data threshold in units of binomial shot noise.
NOISE_MULTIPLE = 5.0


@dataclass(frozen=True)
class FitResult:
    params: dict[str, float]
    stderr: dict[str, float] = field(default_factory=dict)
    residual_rms: float = 0.0
    r_squared: float = 0.0

    def __getitem__(self, name: str) -> float:
        return self.params[name]


def shot_noise(values: np.ndarray, shots: int) -> float:
    """Binomial standard error at the mean measured probability."""
    pbar = float(np.clip(np.mean(values), 1.0 / shots, 1.0 - 1.0 / shots))
    return float(np.sqrt(pbar * (1.0 - pbar) / shots))


def noise_threshold(values: np.ndarray, shots: int) -> float:
    return NOISE_MULTIPLE * shot_noise(values, shots)


def _r_squared(y: np.ndarray, resid: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    return 1.0 - float(np.sum(resid**2)) / ss_tot


def _stderr(jac: np.ndarray, resid: np.ndarray, predicted: np.ndarray, shots: int | None) -> np.ndarray:
    """Parameter standard errors.

    With ``shots`` the point variances are binomial, p(1-p)/shots, evaluated on
    the fitted curve; otherwise they come from the residual variance.
    """
    n, k = jac.shape
    if shots is not None:
        p = np.clip(predicted, 0.5 / shots, 1 - 0.5 / shots)
        w = shots / (p * (1 - p))
        info = jac.T @ (jac * w[:, None])
    else:
        dof = max(n - k, 1)
        info = jac.T @ jac / max(float(np.sum(resid**2)) / dof, 1e-300)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full(k, np.inf)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def fit_model(
    model: Callable[..., np.ndarray],
    x: Sequence[float],
    y: Sequence[float],
    guess: Mapping[str, float],
    *,
    bounds: Mapping[str, tuple[float, float]] | None = None,
    shots: int | None = None,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Fit ``model(x, **params)`` to ``y``; parameter names come from ``guess``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < MIN_POINTS:
        raise InsufficientData(f"need at least {MIN_POINTS} points, got {len(x)}")
    names = list(guess)
    p0 = np.array([guess[n] for n in names], dtype=float)
    bounds = bounds or {}
    lo = np.array([bounds.get(n, (-np.inf, np.inf))[0] for n in names])
    hi = np.array([bounds.get(n, (-np.inf, np.inf))[1] for n in names])
    p0 = np.clip(p0, lo, hi)

    def resid(p):
        return model(x, **dict(zip(names, p))) - y

    sol = least_squares(resid, p0, bounds=(lo, hi), max_nfev=max_iterations, x_scale="jac")
    if sol.status == 0 or not np.all(np.isfinite(sol.x)):
        raise FitDiverged(f"no convergence after {max_iterations} evaluations")
    predicted = sol.fun + y
    err = _stderr(sol.jac, sol.fun, predicted, shots)
    return FitResult(
        params={n: float(v) for n, v in zip(names, sol.x)},
        stderr={n: float(e) for n, e in zip(names, err)},
        residual_rms=float(np.sqrt(np.mean(sol.fun**2))),
        r_squared=_r_squared(y, sol.fun),
    )


def cosine(t, frequency, amplitude, offset, phase):
    return offset + amplitude * np.cos(2 * np.pi * frequency * t + phase)


def fit_cosine(
    x: Sequence[float],
    y: Sequence[float],
    guess: Mapping[str, float],
    *,
    shots: int | None = None,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Fit ``offset + amplitude * cos(2 pi frequency t + phase)``.

    ``guess`` must supply frequency, amplitude, offset and phase.
    """
    guess = {k: guess[k] for k in ("frequency", "amplitude", "offset", "phase")}
    return fit_model(cosine, x, y, guess, shots=shots, max_iterations=max_iterations)


def cosine_guess(x: Sequence[float], y: Sequence[float], n_grid: int = 400) -> dict[str, float]:
    """Initial guess for :func:`fit_cosine` from a frequency grid search.

    Each trial frequency is solved linearly for offset and quadratures; the
    grid spans one period over the scan up to the Nyquist limit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    span = x.max() - x.min()
    step = np.min(np.diff(np.sort(x)))
    freqs = np.linspace(0.5 / span, 0.5 / step, n_grid)
    best = None
    for f in freqs:
        a = np.column_stack([np.ones_like(x), np.cos(2 * np.pi * f * x), np.sin(2 * np.pi * f * x)])
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        sse = float(np.sum((a @ coef - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, f, coef)
    _, f, (c, ca, sa) = best
    # ca cos + sa sin == R cos(wt + phase) with R = hypot, phase = atan2(-sa, ca)
    return {
        "frequency": float(f),
        "amplitude": float(np.hypot(ca, sa)),
        "offset": float(c),
        "phase": float(np.arctan2(-sa, ca)),
    }


def fit_scalar(
    curve: Callable[[np.ndarray, float], np.ndarray],
    x: Sequence[float],
    y: Sequence[float],
    lower: float,
    upper: float,
    n_grid: int = 401,
) -> FitResult:
    """One-parameter bounded least squares: grid search, then bracketed refinement.

    The grid makes the result global within [lower, upper] (no dependence on a
    starting point) and deterministic.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def sse(v):
        return float(np.sum((curve(x, v) - y) ** 2))

    grid = np.linspace(lower, upper, n_grid)
    costs = [sse(v) for v in grid]
    i = int(np.argmin(costs))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    tol = 1e-12 * max(abs(lower), abs(upper), 1e-12)
    sol = minimize_scalar(sse, bounds=(a, b), method="bounded",
                          options={"xatol": tol, "maxiter": MAX_ITERATIONS})
    best, cost = (float(sol.x), float(sol.fun)) if sol.fun <= costs[i] else (float(grid[i]), costs[i])
    resid = curve(x, best) - y
    return FitResult(
        params={"value": best},
        residual_rms=float(np.sqrt(cost / len(x))),
        r_squared=_r_squared(y, resid),
    )
