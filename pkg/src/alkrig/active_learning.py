"""Active-learning loop: U-function enrichment of a Kriging margin surrogate.

One iteration fits the surrogate on the current training set, predicts the
margin over a large unlabeled pool, estimates the instability probability as
the fraction of negative predicted margins, tests a relative-stability
stopping rule on the recent estimates, and otherwise sends the pool points
with the smallest ``|mean| / std`` to the expensive evaluator.  Points near
the predicted stability boundary or with low predictive credibility are
exactly the ones that refine the boundary fastest, which is what makes rare
instability regions learnable from a few hundred evaluations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .kriging import FitConfig, KrigingModel, fit
from .sampling import ConfigurationError, SampleSet, UncertaintySpec, lhs_sample, mc_sample
from .seeds import derive_seed

__all__ = [
    "ALConfig",
    "ALState",
    "IterationRecord",
    "u_value",
    "select_by_u",
    "select_enrichment",
    "estimate_pf",
    "check_stop",
    "run_al",
]

STOP_CRITERION = "criterion met"
STOP_ITERATION_CAP = "iteration cap"
STOP_EXHAUSTED = "evaluator exhausted"


@dataclass(frozen=True)
class ALConfig:
    """Iteration parameters of the enrichment loop."""

    n_e: int = 10          # samples enriched per iteration
    l_max: int = 40        # iteration cap
    eps_s: float = 0.02    # stopping tolerance on relative spread
    l_ck: int = 5          # stopping window length
    n_v: int = 100_000     # pool size
    n0: int = 50           # initial design size
    seed: int = 0

    def validate(self, ndim: int | None = None) -> None:
        if self.n_e < 1:
            raise ConfigurationError(f"n_e must be >= 1, got {self.n_e}")
        if self.l_max < 1:
            raise ConfigurationError(f"l_max must be >= 1, got {self.l_max}")
        if not self.eps_s > 0.0:
            raise ConfigurationError(f"eps_s must be > 0, got {self.eps_s}")
        if not (2 <= self.l_ck <= self.l_max):
            raise ConfigurationError(
                f"l_ck must lie in [2, l_max themselves={self.l_max}], got {self.l_ck}"
            )
        if self.n_v < 10 * self.n_e:
            raise ConfigurationError(
                f"pool size {self.n_v} too small for n_e={self.n_e} (need >= 10*n_e)"
            )
        if ndim is not None and self.n0 < ndim + 1:
            raise ConfigurationError(
                f"initial design size {self.n0} below dimension+1 = {ndim + 1}"
            )

    def to_dict(self) -> dict:
        return {
            "n_e": self.n_e, "l_max": self.l_max, "eps_s": self.eps_s,
            "l_ck": self.l_ck, "n_v": self.n_v, "n0": self.n0, "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ALConfig":
        return ALConfig(
            n_e=int(d.get("n_e", 10)), l_max=int(d.get("l_max", 40)),
            eps_s=float(d.get("eps_s", 0.02)), l_ck=int(d.get("l_ck", 5)),
            n_v=int(d.get("n_v", 100_000)), n0=int(d.get("n0", 50)),
            seed=int(d.get("seed", 0)),
        )


def u_value(mu, sigma):
    """Learning-function value ``|mu| / sigma``; +inf where sigma is zero.

    Training points have (numerically) zero predictive std and therefore an
    infinite U, so they are never selected again.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0.0):
        raise ValueError("predictive std must be >= 0")
    with np.errstate(divide="ignore"):
        u = np.where(sigma > 0.0, np.abs(mu) / np.where(sigma > 0.0, sigma, 1.0), np.inf)
    if u.ndim == 0:
        return float(u)
    return u


def select_by_u(u: np.ndarray, excluded, n_e: int) -> np.ndarray:
    """Indices of the ``n_e`` smallest U values, skipping ``excluded``.

    Ties break toward the lowest index; fewer than ``n_e`` remaining
    candidates simply yields what remains.
    """
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ValueError("empty pool")
    mask = np.zeros(u.size, dtype=bool)
    if excluded is not None:
        idx = np.fromiter(excluded, dtype=int) if not isinstance(excluded, np.ndarray) else excluded
        if idx.size:
            mask[idx] = True
    order = np.argsort(u, kind="stable")
    order = order[~mask[order]]
    return order[:n_e]


def estimate_pf(mu) -> float:
    """Fraction of pool predictions strictly below zero (zeros count stable)."""
    mu = np.asarray(mu, dtype=float)
    if mu.size == 0:
        raise ValueError("empty pool")
    return float(np.count_nonzero(mu < 0.0)) / mu.size


def check_stop(history, eps_s: float, l_ck: int) -> bool:
    """Relative max-min spread of the last ``l_ck`` estimates within ``eps_s``.

    A zero anywhere in the window blocks stopping: the spread cannot be
    normalized, and a zero estimate of a rare-event probability is exactly
    the situation the loop must keep working on.
    """
    if not eps_s > 0.0:
        raise ValueError("eps_s must be > 0")
    history = list(history)
    if len(history) < l_ck:
        return False
    window = history[-l_ck:]
    mn, mx = min(window), max(window)
    if mn <= 0.0:
        return False
    # 1e-9 relative slack so an exactly-on-tolerance window stops despite
    # floating-point rounding of the ratio
    return (mx - mn) <= eps_s * mn * (1.0 + 1e-9)


@dataclass
class IterationRecord:
    l: int
    n_train: int
    pf: float
    min_u: float | None
    selected: list
    u_selected: list
    mu_selected: list
    margins: list
    failed: list
    wall_s: float

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "l": self.l, "n_train": self.n_train, "pf": self.pf,
            "min_u": self.min_u, "selected": self.selected,
            "u_selected": self.u_selected, "mu_selected": self.mu_selected,
            "margins": self.margins, "failed": self.failed,
        }
        if include_timing:
            d["wall_s"] = self.wall_s
        return d


@dataclass
class ALState:
    """Everything the enrichment loop accumulated, dumpable to JSON."""

    config: ALConfig
    fit_config: FitConfig
    spec: UncertaintySpec
    pool: SampleSet
    pool_seed: int
    x_train: np.ndarray
    t_train: np.ndarray
    pf_history: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    enriched: list = field(default_factory=list)   # pool indices, all iterations
    initial_failures: list = field(default_factory=list)
    stop_reason: str = ""
    mu_pool: np.ndarray | None = None
    sigma_pool: np.ndarray | None = None
    n_eval: int = 0

    @property
    def iteration(self) -> int:
        return len(self.pf_history)

    def to_dict(self, include_timing: bool = True, include_pool: bool = False) -> dict:
        d = {
            "schema": "alkrig-alstate-1",
            "config": self.config.to_dict(),
            "fit_config": self.fit_config.to_dict(),
            "spec": self.spec.to_dict(),
            "pool_seed": self.pool_seed,
            "pool_size": len(self.pool),
            "x_train": self.x_train.tolist(),
            "t_train": self.t_train.tolist(),
            "pf_history": self.pf_history,
            "iterations": [r.to_dict(include_timing) for r in self.iterations],
            "enriched": self.enriched,
            "initial_failures": self.initial_failures,
            "stop_reason": self.stop_reason,
            "mu_pool": None if self.mu_pool is None else self.mu_pool.tolist(),
            "sigma_pool": None if self.sigma_pool is None else self.sigma_pool.tolist(),
            "n_eval": self.n_eval,
        }
        if include_pool:
            d["pool"] = self.pool.values.tolist()
        return d


def select_enrichment(state: ALState, n_e: int) -> np.ndarray:
    """Enrichment indices for the current state (cached pool predictions)."""
    if state.mu_pool is None or state.sigma_pool is None:
        raise ValueError("pool predictions not cached yet")
    u = u_value(state.mu_pool, state.sigma_pool)
    return select_by_u(u, state.enriched, n_e)


def run_al(
    spec: UncertaintySpec,
    evaluator,
    cfg: ALConfig,
    fit_cfg: FitConfig = FitConfig(),
    pool: SampleSet | None = None,
    progress=None,
):
    """Run the full enrichment loop.

    Returns ``(model, state, stats)`` where ``stats`` carries the evaluator
    call count and wall-time split (evaluator vs. surrogate work).  The
    evaluator is any object with ``margins(X) -> array`` (NaN marks a failed
    sample, which is dropped from training and logged).  ``pool`` overrides
    the internally sampled selection pool (it must match the spec dimension).
    """
    cfg.validate(spec.ndim)
    pool_seed = derive_seed(cfg.seed, "pool")
    if pool is None:
        pool = mc_sample(replace(spec, seed=pool_seed), cfg.n_v, tag="pool")
    if pool.ndim != spec.ndim:
        raise ConfigurationError("pool dimension does not match the uncertainty spec")
    if len(pool) < 10 * cfg.n_e:
        raise ConfigurationError("supplied pool is too small for n_e")

    t_ed = 0.0
    t_sg = 0.0

    init_seed = derive_seed(cfg.seed, "initial")
    x0 = lhs_sample(replace(spec, seed=init_seed), cfg.n0, tag="initial")
    tic = time.perf_counter()
    t0 = np.asarray(evaluator.margins(x0.values), dtype=float)
    t_ed += time.perf_counter() - tic

    ok = np.isfinite(t0)
    initial_failures = [int(i) for i in np.nonzero(~ok)[0]]
    x_train = x0.values[ok]
    t_train = t0[ok]

    state = ALState(
        config=cfg, fit_config=fit_cfg, spec=spec, pool=pool, pool_seed=pool_seed,
        x_train=x_train, t_train=t_train, initial_failures=initial_failures,
        n_eval=cfg.n0,
    )

    model = None
    warm = None
    for l in range(1, cfg.l_max + 1):
        tic = time.perf_counter()
        model = fit(
            state.x_train, state.t_train,
            replace(fit_cfg, seed=derive_seed(cfg.seed, "fit", l)),
            warm_theta=warm,
        )
        warm = model.theta
        mu, var = model.predict(pool.values)
        sigma = np.sqrt(var)
        t_sg += time.perf_counter() - tic

        pf = estimate_pf(mu)
        state.pf_history.append(pf)
        state.mu_pool = mu
        state.sigma_pool = sigma

        if check_stop(state.pf_history, cfg.eps_s, cfg.l_ck):
            state.stop_reason = STOP_CRITERION
            rec = IterationRecord(l, len(state.t_train), pf, None, [], [], [], [], [],
                                  t_sg + t_ed)
            state.iterations.append(rec)
            if progress:
                progress(rec)
            break

        if l == cfg.l_max:
            state.stop_reason = STOP_ITERATION_CAP
            rec = IterationRecord(l, len(state.t_train), pf, None, [], [], [], [], [],
                                  t_sg + t_ed)
            state.iterations.append(rec)
            if progress:
                progress(rec)
            break

        u = u_value(mu, sigma)
        sel = select_by_u(u, state.enriched, cfg.n_e)
        if sel.size == 0:
            state.stop_reason = STOP_EXHAUSTED
            rec = IterationRecord(l, len(state.t_train), pf, None, [], [], [], [], [],
                                  t_sg + t_ed)
            state.iterations.append(rec)
            if progress:
                progress(rec)
            break

        tic = time.perf_counter()
        margins = np.asarray(evaluator.margins(pool.values[sel]), dtype=float)
        t_ed += time.perf_counter() - tic
        state.n_eval += int(sel.size)

        good = np.isfinite(margins)
        # an enriched index is burned even if its evaluation failed
        state.enriched.extend(int(i) for i in sel)
        new_x = pool.values[sel[good]]
        new_t = margins[good]
        # exact duplicates would make the correlation matrix singular
        dup = np.array([np.any(np.all(state.x_train == r, axis=1)) for r in new_x])
        if dup.any():
            new_x, new_t = new_x[~dup], new_t[~dup]
        state.x_train = np.vstack([state.x_train, new_x])
        state.t_train = np.concatenate([state.t_train, new_t])

        rec = IterationRecord(
            l=l, n_train=len(state.t_train), pf=pf, min_u=float(u[sel[0]]),
            selected=[int(i) for i in sel],
            u_selected=[float(v) for v in u[sel]],
            mu_selected=[float(v) for v in mu[sel]],
            margins=[float(v) for v in margins],
            failed=[int(i) for i in sel[~good]],
            wall_s=t_sg + t_ed,
        )
        state.iterations.append(rec)
        if progress:
            progress(rec)

    stats = {"n_eval": state.n_eval, "t_ed": t_ed, "t_sg": t_sg,
             "l_total": state.iteration}
    return model, state, stats
