"""Ordinary Kriging with anisotropic Matern-5/2 correlation.

The surrogate maps uncertain-input realizations to stability margins.  Inputs
and outputs are standardized internally; length-scales are estimated by
minimizing the leave-one-out squared prediction error with a small genetic
search followed by a Nelder-Mead polish, and the process variance comes from
the normalized leave-one-out residuals.  The fitted model interpolates its
training data and exposes closed-form predictive mean and variance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

__all__ = ["FitError", "FitConfig", "KrigingModel", "matern52", "fit", "loo_prediction"]

_SQRT5 = math.sqrt(5.0)


class FitError(RuntimeError):
    """Kriging model could not be built."""


def matern52(x, x_other, theta) -> float:
    """Matern-5/2 correlation between two points with length-scales ``theta``."""
    x = np.asarray(x, dtype=float)
    x_other = np.asarray(x_other, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0):
        raise ValueError("length-scales must be positive")
    d = math.sqrt(float(np.sum(((x - x_other) / theta) ** 2)))
    return (1.0 + _SQRT5 * d + 5.0 * d * d / 3.0) * math.exp(-_SQRT5 * d)


def _kernel(a: np.ndarray, b: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Correlation matrix between row sets ``a`` (n1, M) and ``b`` (n2, M)."""
    u = a / theta
    v = b / theta
    d2 = np.sum(u * u, axis=1)[:, None] + np.sum(v * v, axis=1)[None, :] - 2.0 * (u @ v.T)
    d = np.sqrt(np.maximum(d2, 0.0))
    return (1.0 + _SQRT5 * d + (5.0 / 3.0) * d * d) * np.exp(-_SQRT5 * d)


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameter-search settings (all numeric values are our defaults)."""

    theta_bounds: tuple[float, float] = (1e-2, 1e2)  # standardized units
    population: int = 30
    generations: int = 50
    polish_iters: int = 100
    nugget: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.theta_bounds
        if not (0.0 < lo < hi):
            raise FitError(f"need 0 < lo < hi for theta bounds, got ({lo}, {hi})")
        if self.population < 4:
            raise FitError(f"population must be >= 4, got {self.population}")
        if self.generations < 1 or self.polish_iters < 0:
            raise FitError("generations must be >= 1 and polish_iters >= 0")
        if self.nugget < 0.0:
            raise FitError(f"nugget must be >= 0, got {self.nugget}")

    def to_dict(self) -> dict:
        return {
            "theta_bounds": list(self.theta_bounds),
            "population": self.population,
            "generations": self.generations,
            "polish_iters": self.polish_iters,
            "nugget": self.nugget,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "FitConfig":
        return FitConfig(
            theta_bounds=tuple(d.get("theta_bounds", (1e-2, 1e2))),
            population=int(d.get("population", 30)),
            generations=int(d.get("generations", 50)),
            polish_iters=int(d.get("polish_iters", 100)),
            nugget=float(d.get("nugget", 1e-8)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class _Factorization:
    """Cholesky factor of the (nugget-regularized) correlation matrix plus
    the derived quantities every prediction needs."""

    chol: np.ndarray       # lower-triangular L with R = L L^T
    w: np.ndarray          # R^-1 1
    q: float               # 1^T R^-1 1
    beta: float            # generalized least-squares trend
    alpha: np.ndarray      # R^-1 (T - 1 beta)
    diag_rinv: np.ndarray  # diag(R^-1)
    nugget: float


def _factorize(xs: np.ndarray, ts: np.ndarray, theta: np.ndarray, nugget: float,
               max_nugget: float = 1e-4) -> _Factorization:
    n = xs.shape[0]
    r = _kernel(xs, xs, theta)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    nu = nugget
    while True:
        try:
            L = cholesky(r + nu * np.eye(n), lower=True, check_finite=False)
            break
        except np.linalg.LinAlgError:
            nu = 1e-8 if nu == 0.0 else nu * 10.0
            if nu > max_nugget:
                raise FitError(
                    "correlation matrix not positive definite even with "
                    f"nugget escalation up to {max_nugget}"
                ) from None
    linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    diag_rinv = np.einsum("ki,ki->i", linv, linv)
    ones = np.ones(n)
    w = cho_solve((L, True), ones, check_finite=False)
    q = float(ones @ w)
    rinv_t = cho_solve((L, True), ts, check_finite=False)
    beta = float(ones @ rinv_t) / q
    alpha = rinv_t - beta * w
    return _Factorization(chol=L, w=w, q=q, beta=beta, alpha=alpha,
                          diag_rinv=diag_rinv, nugget=nu)


def _loo_stats(f: _Factorization) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out residuals and normalized variances, all points at once.

    Closed form from the bordered-system inverse: with
    ``b = diag(R^-1) - (R^-1 1)^2 / q`` (the ordinary-Kriging analogue of the
    classic LOO identity), residual_n = -alpha_n / b_n and the normalized LOO
    variance is 1 / b_n.  Matches a literal remove-and-refit to round-off.
    """
    b = f.diag_rinv - f.w**2 / f.q
    if np.any(b <= 0.0):
        raise FitError("degenerate leave-one-out system (duplicate points?)")
    return -f.alpha / b, 1.0 / b


@dataclass
class KrigingModel:
    """Fitted ordinary-Kriging surrogate (immutable once built)."""

    x_train: np.ndarray      # raw inputs (N, M)
    t_train: np.ndarray      # raw outputs (N,)
    x_shift: np.ndarray
    x_scale: np.ndarray
    t_shift: float
    t_scale: float
    theta: np.ndarray        # length-scales, standardized units
    sigma_z2: float          # process variance, standardized units
    nugget: float
    fact: _Factorization = field(repr=False)
    fit_info: dict = field(default_factory=dict, repr=False)

    # -- construction ------------------------------------------------------
    @staticmethod
    def build(x, t, theta, nugget: float = 1e-8, sigma_z2: float | None = None,
              standardize: bool = True, fit_info: dict | None = None) -> "KrigingModel":
        """Assemble the Kriging algebra at fixed length-scales ``theta``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float).ravel()
        if x.shape[0] != t.size:
            raise FitError(f"got {x.shape[0]} inputs but {t.size} outputs")
        if x.shape[0] < 2:
            raise FitError("need at least two training points")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(t)):
            raise FitError("training data contains non-finite values")
        uniq = np.unique(x, axis=0)
        if uniq.shape[0] != x.shape[0]:
            raise FitError("duplicate training inputs")
        if standardize:
            x_shift = x.mean(axis=0)
            x_scale = x.std(axis=0)
            x_scale[x_scale == 0.0] = 1.0
            t_shift = float(t.mean())
            t_scale = float(t.std())
            if t_scale == 0.0:
                t_scale = 1.0
        else:
            x_shift = np.zeros(x.shape[1])
            x_scale = np.ones(x.shape[1])
            t_shift, t_scale = 0.0, 1.0
        xs = (x - x_shift) / x_scale
        ts = (t - t_shift) / t_scale
        theta = np.broadcast_to(np.asarray(theta, dtype=float), (x.shape[1],)).copy()
        if np.any(theta <= 0.0):
            raise FitError("length-scales must be positive")
        fact = _factorize(xs, ts, theta, nugget)
        if sigma_z2 is None:
            e, c = _loo_stats(fact)
            sigma_z2 = float(np.mean(e * e / c))
        return KrigingModel(
            x_train=x, t_train=t, x_shift=x_shift, x_scale=x_scale,
            t_shift=t_shift, t_scale=t_scale, theta=theta,
            sigma_z2=float(sigma_z2), nugget=fact.nugget, fact=fact,
            fit_info=dict(fit_info or {}),
        )

    # -- prediction --------------------------------------------------------
    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def beta(self) -> float:
        """Trend in output units."""
        return self.t_shift + self.t_scale * self.fact.beta

    def _xs(self, x0) -> np.ndarray:
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        if x0.shape[1] != self.x_train.shape[1]:
            raise ValueError(f"expected {self.x_train.shape[1]} input dimensions")
        return (x0 - self.x_shift) / self.x_scale

    def predict(self, x0, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance (output units) at rows of ``x0``."""
        xs_train = (self.x_train - self.x_shift) / self.x_scale
        xq = self._xs(x0)
        n = xq.shape[0]
        mean = np.empty(n)
        var = np.empty(n)
        f = self.fact
        for start in range(0, n, chunk):
            sl = slice(start, min(start + chunk, n))
            r = _kernel(xq[sl], xs_train, self.theta)
            mean[sl] = f.beta + r @ f.alpha
            v = solve_triangular(f.chol, r.T, lower=True, check_finite=False)
            u = 1.0 - r @ f.w
            c = 1.0 - np.einsum("ij,ij->j", v, v) + u * u / f.q
            var[sl] = self.sigma_z2 * np.maximum(c, 0.0)
        return self.t_shift + self.t_scale * mean, self.t_scale**2 * var

    def predict_mean(self, x0) -> np.ndarray | float:
        mean, _ = self.predict(x0)
        return float(mean[0]) if np.asarray(x0).ndim == 1 else mean

    def predict_variance(self, x0) -> np.ndarray | float:
        _, var = self.predict(x0)
        return float(var[0]) if np.asarray(x0).ndim == 1 else var

    def loo_objective(self) -> float:
        """Sum of squared leave-one-out residuals (standardized units)."""
        e, _ = _loo_stats(self.fact)
        return float(np.sum(e * e))

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": "alkrig-kriging-1",
            "x_train": self.x_train.tolist(),
            "t_train": self.t_train.tolist(),
            "x_shift": self.x_shift.tolist(),
            "x_scale": self.x_scale.tolist(),
            "t_shift": self.t_shift,
            "t_scale": self.t_scale,
            "theta": self.theta.tolist(),
            "sigma_z2": self.sigma_z2,
            "nugget": self.nugget,
        }

    @staticmethod
    def from_dict(d: dict) -> "KrigingModel":
        model = KrigingModel.build(
            np.asarray(d["x_train"], dtype=float),
            np.asarray(d["t_train"], dtype=float),
            np.asarray(d["theta"], dtype=float),
            nugget=float(d["nugget"]),
            sigma_z2=float(d["sigma_z2"]),
            standardize=False,
        )
        model.x_shift = np.asarray(d["x_shift"], dtype=float)
        model.x_scale = np.asarray(d["x_scale"], dtype=float)
        model.t_shift = float(d["t_shift"])
        model.t_scale = float(d["t_scale"])
        # re-factorize in the stored standardized frame
        xs = (model.x_train - model.x_shift) / model.x_scale
        ts = (model.t_train - model.t_shift) / model.t_scale
        model.fact = _factorize(xs, ts, model.theta, float(d["nugget"]))
        return model

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path) -> "KrigingModel":
        with open(path, encoding="utf-8") as fh:
            return KrigingModel.from_dict(json.load(fh))


def loo_prediction(x, t, theta, leave_out: int, nugget: float = 1e-8,
                   standardize: bool = True) -> tuple[float, float]:
    """Ordinary-Kriging LOO mean and normalized variance at ``x[leave_out]``.

    Fast closed form from the full factorization; equal to literally removing
    the point and refitting at the same ``theta``.  Values are in the
    (possibly standardized) fitting frame, matching the LOO objective.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 3:
        raise FitError("leave-one-out needs at least 3 points")
    model = KrigingModel.build(x, t, theta, nugget=nugget, standardize=standardize)
    e, c = _loo_stats(model.fact)
    ts = (np.asarray(t, dtype=float) - model.t_shift) / model.t_scale
    return float(ts[leave_out] + e[leave_out]), float(c[leave_out])


def _ga_minimize(objective, lo: np.ndarray, hi: np.ndarray, cfg: FitConfig,
                 warm: np.ndarray | None, rng: np.random.Generator):
    """Small real-coded GA in log10(theta) space, then Nelder-Mead polish."""
    m = lo.size
    pop = rng.uniform(lo, hi, size=(cfg.population, m))
    if warm is not None:
        pop[0] = np.clip(warm, lo, hi)
    fitness = np.array([objective(z) for z in pop])
    history = list(fitness)
    n_elite = max(1, cfg.population // 10)
    scale = 0.15 * (hi - lo)

    for _ in range(cfg.generations):
        order = np.argsort(fitness)
        pop, fitness = pop[order], fitness[order]
        children = [pop[:n_elite].copy()]
        while sum(c.shape[0] for c in children) < cfg.population:
            i = min(rng.integers(cfg.population), rng.integers(cfg.population))
            j = min(rng.integers(cfg.population), rng.integers(cfg.population))
            mix = rng.random(m)
            child = mix * pop[i] + (1.0 - mix) * pop[j]
            mutate = rng.random(m) < 0.25
            child = child + mutate * rng.normal(0.0, scale)
            children.append(np.clip(child, lo, hi)[None, :])
        pop = np.vstack(children)[: cfg.population]
        fitness = np.concatenate(
            [fitness[:n_elite], [objective(z) for z in pop[n_elite:]]]
        )
        history.extend(fitness[n_elite:])

    best = int(np.argmin(fitness))
    z_best, f_best = pop[best], fitness[best]
    if cfg.polish_iters > 0:
        res = minimize(
            objective, z_best, method="Nelder-Mead",
            bounds=[(float(a), float(b)) for a, b in zip(lo, hi)],
            options={"maxiter": cfg.polish_iters, "xatol": 1e-4, "fatol": 1e-12},
        )
        if np.isfinite(res.fun) and res.fun <= f_best:
            z_best, f_best = np.clip(res.x, lo, hi), float(res.fun)
    return z_best, f_best, history


def fit(x, t, cfg: FitConfig = FitConfig(), warm_theta=None) -> KrigingModel:
    """Fit length-scales by LOO cross-validation and build the surrogate.

    ``warm_theta`` (standardized units) seeds the population with a previous
    estimate, which is how the active-learning loop keeps retraining cheap.
    """
    cfg.validate()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    n, m = x.shape
    if n < max(m + 1, 10):
        raise FitError(f"need at least {max(m + 1, 10)} samples to fit, got {n}")

    probe = KrigingModel.build(x, t, np.ones(m), nugget=cfg.nugget)
    xs = (x - probe.x_shift) / probe.x_scale
    ts = (t - probe.t_shift) / probe.t_scale

    cache: dict[bytes, float] = {}

    def objective(z: np.ndarray) -> float:
        key = np.round(z, 12).tobytes()
        if key in cache:
            return cache[key]
        theta = 10.0**z
        try:
            f = _factorize(xs, ts, theta, cfg.nugget)
            e, _ = _loo_stats(f)
            val = float(np.sum(e * e))
        except FitError:
            val = np.inf
        cache[key] = val
        return val

    lo = np.full(m, math.log10(cfg.theta_bounds[0]))
    hi = np.full(m, math.log10(cfg.theta_bounds[1]))
    warm = None
    if warm_theta is not None:
        warm = np.log10(np.broadcast_to(np.asarray(warm_theta, dtype=float), (m,)))
    rng = np.random.default_rng(cfg.seed)
    z_best, f_best, history = _ga_minimize(objective, lo, hi, cfg, warm, rng)
    if not np.isfinite(f_best):
        raise FitError("no feasible length-scales found within the bounds")

    theta = 10.0**z_best
    model = KrigingModel.build(
        x, t, theta, nugget=cfg.nugget,
        fit_info={"objective": f_best, "ga_objectives": history,
                  "n_evaluations": len(cache)},
    )
    return model
