"""Sampling of uncertain grid inputs: correlated marginals and wind power.

Uncertain inputs (load scaling factors, wind speeds, solar injections) are
described by an :class:`UncertaintySpec`: one marginal distribution per
dimension plus a block-equicorrelation dependence structure imposed through a
Gaussian copula.  Two generators are provided, plain Monte Carlo
(:func:`mc_sample`) and Latin hypercube (:func:`lhs_sample`); both are pure
functions of (spec, seed) and reproducible across platforms (the RNG is
numpy's seeded PCG64, ``numpy.random.default_rng``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "ConfigurationError",
    "Marginal",
    "Group",
    "UncertaintySpec",
    "WindTurbineCurve",
    "SampleSet",
    "lhs_sample",
    "mc_sample",
    "wind_power",
    "load_empirical",
]


class ConfigurationError(ValueError):
    """Invalid uncertainty/experiment configuration."""


@dataclass(frozen=True)
class Marginal:
    """One-dimensional marginal distribution of an uncertain input.

    ``kind`` is one of ``"gaussian"`` (mean/std, typically per-unit of base
    power), ``"weibull"`` (scale m/s, shape) or ``"empirical"`` (resampling
    with replacement from recorded values).
    """

    kind: str
    mean: float = 0.0
    std: float = 1.0
    scale: float = 1.0
    shape: float = 1.0
    values: tuple[float, ...] = ()

    @staticmethod
    def gaussian(mean: float, std: float) -> "Marginal":
        return Marginal(kind="gaussian", mean=mean, std=std)

    @staticmethod
    def weibull(scale: float, shape: float) -> "Marginal":
        return Marginal(kind="weibull", scale=scale, shape=shape)

    @staticmethod
    def empirical(values) -> "Marginal":
        return Marginal(kind="empirical", values=tuple(float(v) for v in values))

    def validate(self) -> None:
        if self.kind == "gaussian":
            if not (self.std > 0.0) or not np.isfinite(self.mean):
                raise ConfigurationError(f"gaussian marginal needs std > 0, got {self.std}")
        elif self.kind == "weibull":
            if not (self.scale > 0.0 and self.shape > 0.0):
                raise ConfigurationError(
                    f"weibull marginal needs scale, shape > 0, got ({self.scale}, {self.shape})"
                )
        elif self.kind == "empirical":
            if len(self.values) == 0:
                raise ConfigurationError("empirical marginal needs at least one value")
            if not np.all(np.isfinite(self.values)):
                raise ConfigurationError("empirical marginal contains non-finite values")
        else:
            raise ConfigurationError(f"unknown marginal kind {self.kind!r}")

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF applied elementwise to uniforms in [0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return self.mean + self.std * ndtri(u)
        if self.kind == "weibull":
            return self.scale * (-np.log1p(-u)) ** (1.0 / self.shape)
        # Empirical: type-1 step quantile, i.e. exact resampling with
        # replacement when u is uniform.
        vals = np.sort(np.asarray(self.values, dtype=float))
        idx = np.minimum((u * len(vals)).astype(int), len(vals) - 1)
        return vals[idx]

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return ndtr((x - self.mean) / self.std)
        if self.kind == "weibull":
            z = np.maximum(x, 0.0) / self.scale
            return -np.expm1(-(z**self.shape))
        vals = np.sort(np.asarray(self.values, dtype=float))
        return np.searchsorted(vals, x, side="right") / len(vals)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean, "std": self.std}
        if self.kind == "weibull":
            return {"kind": "weibull", "scale": self.scale, "shape": self.shape}
        return {"kind": "empirical", "values": list(self.values)}

    @staticmethod
    def from_dict(d: dict) -> "Marginal":
        kind = d.get("kind")
        if kind == "gaussian":
            return Marginal.gaussian(d["mean"], d["std"])
        if kind == "weibull":
            return Marginal.weibull(d["scale"], d["shape"])
        if kind == "empirical":
            return Marginal.empirical(d["values"])
        raise ConfigurationError(f"unknown marginal kind {kind!r}")


@dataclass(frozen=True)
class Group:
    """Set of input dimensions sharing one pairwise correlation coefficient."""

    members: tuple[int, ...]
    rho: float = 0.0

    def validate(self, ndim: int) -> None:
        if len(self.members) == 0:
            raise ConfigurationError("empty correlation group")
        if any(i < 0 or i >= ndim for i in self.members):
            raise ConfigurationError(f"group member out of range: {self.members}")
        if len(set(self.members)) != len(self.members):
            raise ConfigurationError(f"duplicate member in group {self.members}")
        k = len(self.members)
        if not (-1.0 <= self.rho < 1.0):
            raise ConfigurationError(f"correlation {self.rho} outside [-1, 1)")
        # Equicorrelation matrix is positive definite iff rho > -1/(k-1).
        if k > 1 and self.rho <= -1.0 / (k - 1):
            raise ConfigurationError(
                f"correlation {self.rho} not positive definite for group of size {k}"
            )


@dataclass(frozen=True)
class UncertaintySpec:
    """Joint description of the uncertain inputs.

    Every dimension must belong to exactly one group; dimensions listed in no
    group are treated as independent singletons.  Correlation is imposed on
    the Gaussian-copula scale (rank correlation), not Pearson on the physical
    scale.
    """

    dims: tuple[Marginal, ...]
    groups: tuple[Group, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        covered: list[int] = []
        groups = [g if isinstance(g, Group) else Group(tuple(g[0]), float(g[1])) for g in self.groups]
        for g in groups:
            g.validate(len(self.dims))
            covered.extend(g.members)
        if len(covered) != len(set(covered)):
            raise ConfigurationError("some dimension belongs to more than one group")
        missing = sorted(set(range(len(self.dims))) - set(covered))
        groups.extend(Group((i,), 0.0) for i in missing)
        object.__setattr__(self, "groups", tuple(groups))
        for m in self.dims:
            m.validate()

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def correlation_matrix(self) -> np.ndarray:
        """Block-diagonal copula correlation matrix (unit diagonal)."""
        c = np.eye(self.ndim)
        for g in self.groups:
            for i in g.members:
                for j in g.members:
                    if i != j:
                        c[i, j] = g.rho
        return c

    def to_dict(self) -> dict:
        return {
            "dims": [m.to_dict() for m in self.dims],
            "groups": [{"members": list(g.members), "rho": g.rho} for g in self.groups],
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "UncertaintySpec":
        dims = tuple(Marginal.from_dict(m) for m in d["dims"])
        groups = tuple(Group(tuple(g["members"]), float(g.get("rho", 0.0))) for g in d.get("groups", []))
        return UncertaintySpec(dims=dims, groups=groups, seed=int(d.get("seed", 0)))


@dataclass(frozen=True)
class WindTurbineCurve:
    """Piecewise-cubic wind turbine power curve (power in MW, speeds in m/s)."""

    rated_power: float
    cut_in: float = 3.0
    rated_speed: float = 12.0
    cut_out: float = 25.0

    def __post_init__(self):
        if not (0.0 < self.cut_in < self.rated_speed < self.cut_out):
            raise ConfigurationError(
                f"need 0 < cut_in < rated_speed < cut_out, got "
                f"({self.cut_in}, {self.rated_speed}, {self.cut_out})"
            )
        if not self.rated_power > 0.0:
            raise ConfigurationError(f"rated power must be > 0, got {self.rated_power}")

    def to_dict(self) -> dict:
        return {
            "rated_power": self.rated_power,
            "cut_in": self.cut_in,
            "rated_speed": self.rated_speed,
            "cut_out": self.cut_out,
        }

    @staticmethod
    def from_dict(d: dict) -> "WindTurbineCurve":
        return WindTurbineCurve(
            rated_power=float(d["rated_power"]),
            cut_in=float(d.get("cut_in", 3.0)),
            rated_speed=float(d.get("rated_speed", 12.0)),
            cut_out=float(d.get("cut_out", 25.0)),
        )


@dataclass(frozen=True)
class SampleSet:
    """Immutable N x M matrix of input realizations with a provenance tag."""

    values: np.ndarray
    tag: str = "pool"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ConfigurationError(f"sample matrix must be 2-D, got shape {v.shape}")
        if v.size and not np.all(np.isfinite(v)):
            raise ConfigurationError("sample matrix contains non-finite entries")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def ndim(self) -> int:
        return self.values.shape[1]


def _correlated_normals(spec: UncertaintySpec, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, spec.ndim))
    chol = np.linalg.cholesky(spec.correlation_matrix())
    return z @ chol.T


def mc_sample(spec: UncertaintySpec, n: int, tag: str = "pool") -> SampleSet:
    """Plain i.i.d. Gaussian-copula sampling of ``n`` points."""
    if n < 0:
        raise ConfigurationError(f"sample count must be >= 0, got {n}")
    rng = np.random.default_rng(spec.seed)
    if n == 0:
        return SampleSet(np.empty((0, spec.ndim)), tag=tag)
    z = _correlated_normals(spec, n, rng)
    u = ndtr(z)
    x = np.column_stack([spec.dims[j].ppf(u[:, j]) for j in range(spec.ndim)])
    return SampleSet(x, tag=tag)


def lhs_sample(spec: UncertaintySpec, n: int, tag: str = "initial") -> SampleSet:
    """Latin hypercube sample: one point per equal-probability stratum.

    Stratified uniforms are drawn per dimension and then reordered so their
    ranks follow a correlated Gaussian draw (Iman-Conover style).  Reordering
    leaves each dimension's values untouched, so the one-point-per-stratum
    property survives the imposed correlation exactly.
    """
    if n < 1:
        raise ConfigurationError(f"LHS needs n >= 1, got {n}")
    rng = np.random.default_rng(spec.seed)
    m = spec.ndim
    u = np.empty((n, m))
    for j in range(m):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    z = _correlated_normals(spec, n, rng)
    for j in range(m):
        order = np.argsort(np.argsort(z[:, j]))
        u[:, j] = np.sort(u[:, j])[order]
    x = np.column_stack([spec.dims[j].ppf(u[:, j]) for j in range(m)])
    return SampleSet(x, tag=tag)


def wind_power(curve: WindTurbineCurve, v) -> np.ndarray | float:
    """Wind-farm active power (MW) at wind speed ``v`` (m/s).

    Cubic ramp between cut-in and rated speed, flat at rated power up to the
    cut-out speed, zero elsewhere.  The cut-out edge is a genuine
    discontinuity: the turbine still produces rated power at exactly
    ``cut_out`` and trips above it.
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0.0):
        raise ValueError("wind speed must be >= 0")
    c = curve
    ramp = c.rated_power * (v_arr**3 - c.cut_in**3) / (c.rated_speed**3 - c.cut_in**3)
    p = np.where(
        (v_arr >= c.cut_in) & (v_arr <= c.rated_speed),
        ramp,
        np.where((v_arr > c.rated_speed) & (v_arr <= c.cut_out), c.rated_power, 0.0),
    )
    if np.isscalar(v) or v_arr.ndim == 0:
        return float(p)
    return p


def load_empirical(path, column: str) -> Marginal:
    """Build an empirical marginal from a named numeric CSV column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ConfigurationError(f"column {column!r} not found in {path}")
        values = []
        for row in reader:
            cell = row[column]
            if cell is None or cell.strip() == "":
                continue
            try:
                values.append(float(cell))
            except ValueError as exc:
                raise ConfigurationError(f"non-numeric value {cell!r} in column {column!r}") from exc
    if not values:
        raise ConfigurationError(f"column {column!r} in {path} is empty")
    return Marginal.empirical(values)
