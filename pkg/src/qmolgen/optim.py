"""Derivative-free optimizers for the circuit parameters.

Gaussian-process surrogate (Matern-5/2, isotropic) with hyperparameters
picked by marginal likelihood over a fixed log-grid, expected improvement
for maximization, and a candidate-search acquisition step: a scrambled
Sobol batch plus a short coordinate-wise polish. COBYLA is the classic
trust-region linear-approximation method; the box is handed to it as
linear inequality constraints.

Conventions: objective values are maximized; parameter boxes are given as
(low, high) per coordinate and inputs are scaled to the unit cube before
fitting; targets are standardized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sp_optimize
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm as sp_norm
from scipy.stats import qmc

from .errors import NumericalError

NOISE_FLOOR = 1e-6
LENGTHSCALE_GRID = tuple(float(v) for v in np.geomspace(0.05, 20.0, 14))
NOISE_GRID = tuple(float(v) for v in np.geomspace(NOISE_FLOOR, 0.1, 6))


@dataclass
class ObjectiveSample:
    x: np.ndarray
    y: float
    shots: int = 0
    seed: int = 0


@dataclass
class GPModel:
    x_unit: np.ndarray        # training inputs scaled to the unit cube
    y_raw: np.ndarray
    y_mean: float
    y_scale: float
    lengthscale: float
    signal_var: float
    noise_var: float
    bounds: np.ndarray        # (dim, 2)
    chol: tuple
    alpha: np.ndarray

    @property
    def y_standardized(self) -> np.ndarray:
        return (self.y_raw - self.y_mean) / self.y_scale


def _to_unit(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    span = bounds[:, 1] - bounds[:, 0]
    return (x - bounds[:, 0]) / span


def _from_unit(u: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


def _matern52(dist: np.ndarray, lengthscale: float) -> np.ndarray:
    r = math.sqrt(5.0) * dist / lengthscale
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


def _cdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(d2, 0.0))


def gp_fit(x: np.ndarray, y: np.ndarray, bounds: np.ndarray,
           lengthscale_grid=LENGTHSCALE_GRID, noise_grid=NOISE_GRID) -> GPModel:
    """Fit by grid search over (lengthscale, noise) marginal likelihood."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if x.shape[0] < 1:
        raise ValueError("gp_fit needs at least one sample")
    xu = _to_unit(x, bounds)
    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if y_scale < 1e-12:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale
    n = x.shape[0]
    dist = _cdist(xu, xu)

    best = None
    for ell in lengthscale_grid:
        k_base = _matern52(dist, ell)
        for noise in noise_grid:
            kmat = k_base + noise * np.eye(n)
            try:
                chol = cho_factor(kmat, lower=True)
            except np.linalg.LinAlgError:
                kmat = kmat + 1e-6 * np.eye(n)
                try:
                    chol = cho_factor(kmat, lower=True)
                except np.linalg.LinAlgError:
                    continue
            alpha = cho_solve(chol, ys)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
            lml = -0.5 * float(ys @ alpha) - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
            if best is None or lml > best[0]:
                best = (lml, ell, noise, chol, alpha)
    if best is None:
        raise NumericalError("GP covariance factorization failed on the whole grid")
    _, ell, noise, chol, alpha = best
    return GPModel(xu, y, y_mean, y_scale, ell, 1.0, noise, bounds, chol, alpha)


def gp_posterior(model: GPModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance in original target units (variance >= 0)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xu = _to_unit(x, model.bounds)
    mu, var = _posterior_unit(model, xu)
    return mu, var * model.y_scale ** 2


def expected_improvement(mu, sigma, f_best: float, xi: float = 0.01):
    """EI for maximization; zero wherever sigma is zero."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    improve = mu - f_best - xi
    out = np.zeros(np.broadcast(mu, sigma).shape)
    pos = sigma > 0
    z = np.divide(improve, sigma, out=np.zeros_like(out), where=pos)
    out = np.where(pos, improve * sp_norm.cdf(z) + sigma * sp_norm.pdf(z), 0.0)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def bo_step(history: list[ObjectiveSample], bounds: np.ndarray,
            rng: np.random.Generator, *, n_candidates: int = 4096,
            polish_steps: int = 16, xi: float = 0.01) -> np.ndarray:
    """Propose the next point by maximizing EI over a candidate set."""
    bounds = np.asarray(bounds, dtype=float)
    dim = bounds.shape[0]
    sobol = qmc.Sobol(dim, scramble=True, seed=rng)
    if not history:
        return _from_unit(sobol.random(1)[0], bounds)

    x = np.stack([s.x for s in history])
    y = np.array([s.y for s in history])
    model = gp_fit(x, y, bounds)
    f_best = float(np.max(y))

    cand = sobol.random(n_candidates)
    mu, var = _posterior_unit(model, cand)
    sigma = np.sqrt(var) * model.y_scale
    ei = expected_improvement(mu, sigma, f_best, xi)
    best_idx = int(np.argmax(ei))
    best_u = cand[best_idx].copy()
    best_ei = float(ei[best_idx])

    delta = 0.1
    for step in range(polish_steps):
        coord = step % dim
        for sign in (1.0, -1.0):
            trial = best_u.copy()
            trial[coord] = min(1.0, max(0.0, trial[coord] + sign * delta))
            mu_t, var_t = _posterior_unit(model, trial[None, :])
            ei_t = float(expected_improvement(
                mu_t, np.sqrt(var_t) * model.y_scale, f_best, xi)[0])
            if ei_t > best_ei:
                best_ei = ei_t
                best_u = trial
        delta *= 0.8
    return _from_unit(best_u, bounds)


def _posterior_unit(model: GPModel, xu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean in original units, variance on the standardized scale."""
    k_star = _matern52(_cdist(xu, model.x_unit), model.lengthscale)
    mu = k_star @ model.alpha
    v = cho_solve(model.chol, k_star.T)
    var = np.maximum(model.signal_var - np.sum(k_star * v.T, axis=1), 0.0)
    return model.y_mean + model.y_scale * mu, var


# ---------------------------------------------------------------------------
# COBYLA-style trust-region search with linear interpolation models
# ---------------------------------------------------------------------------

@dataclass
class CobylaResult:
    x: np.ndarray
    fun: float
    nfev: int


@dataclass
class CobylaState:
    """Simplex of m+1 interpolation points with their objective values."""

    points: np.ndarray   # (m+1, m); row 0 is the incumbent best
    values: np.ndarray   # (m+1,)
    rho: float
    nfev: int


class _Budget(Exception):
    pass


def cobyla_minimize(f, x0, rhobeg: float, rhoend: float, maxfun: int,
                    bounds: np.ndarray | None = None) -> CobylaResult:
    """Derivative-free minimization with linear interpolation models.

    Maintains a simplex of m+1 points, fits a linear model by interpolation,
    steps within the trust radius (box bounds respected by projection), and
    shrinks the radius only once steps at the current resolution stop paying
    off with sound simplex geometry. Stops at rho <= rhoend or maxfun.
    """
    if not rhobeg > rhoend > 0:
        raise ValueError("need rhobeg > rhoend > 0")
    x0 = np.asarray(x0, dtype=float).copy()
    m = x0.shape[0]
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        x0 = np.clip(x0, bounds[:, 0], bounds[:, 1])

    nfev = [0]
    best_seen = [None, math.inf]

    def evaluate(x: np.ndarray) -> float:
        if nfev[0] >= maxfun:
            raise _Budget()
        nfev[0] += 1
        val = float(f(x))
        if not math.isfinite(val):
            raise NumericalError(f"objective returned non-finite value {val!r}")
        if val < best_seen[1]:
            best_seen[0], best_seen[1] = x.copy(), val
        return val

    def clip(x: np.ndarray) -> np.ndarray:
        return x if bounds is None else np.clip(x, bounds[:, 0], bounds[:, 1])

    rho = rhobeg
    try:
        points = np.tile(x0, (m + 1, 1))
        for i in range(m):
            step = rho
            if bounds is not None and x0[i] + step > bounds[i, 1]:
                step = -rho
            points[i + 1, i] = x0[i] + step
            points[i + 1] = clip(points[i + 1])
        values = np.array([evaluate(p) for p in points])

        last_was_geometry = False
        while True:
            order = np.argsort(values, kind="stable")
            points, values = points[order], values[order]
            spread = points[1:] - points[0]
            rhs = values[1:] - values[0]
            try:
                g = np.linalg.solve(spread, rhs)
                degenerate = False
            except np.linalg.LinAlgError:
                g = np.zeros(m)
                degenerate = True

            far = np.linalg.norm(spread, axis=1)
            bad_geometry = degenerate or far.max() > 2.1 * rho or far.min() < 0.1 * rho or \
                abs(np.linalg.det(spread / rho)) < 1e-8 if m > 0 else False

            if bad_geometry and last_was_geometry is False:
                points, values = _geometry_step(points, values, rho, clip, evaluate)
                last_was_geometry = True
                continue

            gnorm = np.linalg.norm(g)
            if gnorm < 1e-15:
                if rho <= rhoend:
                    break
                rho = max(rho * 0.5, rhoend)
                last_was_geometry = False
                continue

            x_new = clip(points[0] - rho * g / gnorm)
            predicted = float(g @ (points[0] - x_new))
            if predicted <= 0 or np.linalg.norm(x_new - points[0]) < 1e-14:
                if rho <= rhoend:
                    break
                rho = max(rho * 0.5, rhoend)
                last_was_geometry = False
                continue
            f_new = evaluate(x_new)

            if f_new < values[0]:
                j = _replacement_index(points, x_new, values)
                points[j], values[j] = x_new, f_new
                last_was_geometry = False
            else:
                if f_new < values[-1]:
                    points[-1], values[-1] = x_new, f_new
                if last_was_geometry or not bad_geometry:
                    if rho <= rhoend:
                        break
                    rho = max(rho * 0.5, rhoend)
                    last_was_geometry = False
                else:
                    points, values = _geometry_step(points, values, rho, clip, evaluate)
                    last_was_geometry = True
    except _Budget:
        pass

    if best_seen[0] is None:
        raise NumericalError("objective was never evaluated within the budget")
    return CobylaResult(best_seen[0], best_seen[1], nfev[0])


def _replacement_index(points: np.ndarray, x_new: np.ndarray, values: np.ndarray) -> int:
    """Pick the vertex to drop: worst value among those keeping volume sound."""
    m = points.shape[1]
    spread = points[1:] - points[0]
    try:
        lam = np.linalg.solve(spread.T, x_new - points[0])
    except np.linalg.LinAlgError:
        return int(np.argmax(values))
    lam = np.abs(lam)
    cap = 0.1 * max(lam.max(), 1e-12)
    candidates = [i + 1 for i in range(m) if lam[i] >= cap]
    if not candidates:
        return int(np.argmax(lam) + 1)
    return max(candidates, key=lambda i: values[i])


def _geometry_step(points, values, rho, clip, evaluate):
    """Rebuild the most defective vertex at distance rho from the best point."""
    m = points.shape[1]
    spread = points[1:] - points[0]
    far = np.linalg.norm(spread, axis=1)
    j = int(np.argmax(np.where(far > 2.1 * rho, far, 0.0)))
    if far[j] <= 2.1 * rho:
        j = int(np.argmin(far))
    # Direction orthogonal to the opposite face, via QR of the other edges.
    others = np.delete(spread, j, axis=0)
    if others.size:
        q, _ = np.linalg.qr(others.T, mode="complete")
        direction = q[:, -1]
    else:
        direction = np.zeros(m)
        direction[0] = 1.0
    new_a = clip(points[0] + rho * direction)
    new_b = clip(points[0] - rho * direction)
    # Prefer the side the current model likes; fall back to the farther one.
    pick = new_a if np.linalg.norm(new_a - points[0]) >= np.linalg.norm(new_b - points[0]) else new_b
    val = evaluate(pick)
    points[j + 1], values[j + 1] = pick, val
    return points, values
