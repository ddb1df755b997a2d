"""Level hierarchy, per-level path densities, and the midpoint Gaussian reference.

Level i lives on the time-grid subset S_i = {0, 2^i, ..., K} with spacing
2^i * dt.  Splitting S_i into alternating slices gives the retained (hat)
sites, which coincide with S_{i+1}, and the discarded (tilde) sites that are
integrated out when moving one level up.  Unnormalized level densities are
sums of one-step potentials in log space, plus observation factors for the
smoothing problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ModelSpec, potential_v

LOG_2PI = math.log(2.0 * math.pi)


class ConfigError(ValueError):
    """Raised for inconsistent grid / hierarchy / observation configuration."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid with K steps on [0, horizon], plus bridge endpoint values."""

    horizon: float
    steps: int
    z_left: float = 0.0
    z_right: float = 0.0

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        k = self.steps
        if k < 2 or (k & (k - 1)) != 0:
            raise ConfigError(f"steps must be a power of two >= 2, got {k}")
        assert self.dt * k == self.horizon, "dt * steps must reproduce horizon exactly"

    @property
    def dt(self) -> float:
        return self.horizon / self.steps


@dataclass(frozen=True)
class Hierarchy:
    """Ladder of coarsened grids: level i keeps every 2^i-th site of the fine grid."""

    grid: GridSpec
    n_levels: int

    @property
    def top(self) -> int:
        return self.n_levels - 1

    def stride(self, i: int) -> int:
        return 1 << i

    def level_steps(self, i: int) -> int:
        return self.grid.steps // self.stride(i)

    def level_size(self, i: int) -> int:
        return self.level_steps(i) + 1

    def level_dt(self, i: int) -> float:
        return self.stride(i) * self.grid.dt

    def indices(self, i: int) -> np.ndarray:
        return np.arange(0, self.grid.steps + 1, self.stride(i))

    def hat_indices(self, i: int) -> np.ndarray:
        return self.indices(i)[0::2]

    def tilde_indices(self, i: int) -> np.ndarray:
        return self.indices(i)[1::2]


def build_hierarchy(grid: GridSpec, levels: int) -> Hierarchy:
    """Construct a hierarchy with the given number of levels (fine level included).

    Requires levels <= log2(steps) so the coarsest grid keeps at least one
    interior site between the endpoints.
    """
    if levels < 1:
        raise ConfigError(f"levels must be >= 1, got {levels}")
    if (1 << (levels - 1)) > grid.steps // 2:
        raise ConfigError(
            f"levels={levels} too deep for steps={grid.steps}: need levels <= log2(steps)")
    return Hierarchy(grid=grid, n_levels=levels)


@dataclass
class Path:
    """Values of one level's chain on its grid S_i, in index order."""

    level: int
    values: np.ndarray
    kind: str = "bridge"

    def copy(self) -> "Path":
        return Path(self.level, self.values.copy(), self.kind)


def split(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Alternating slices of a level vector: (hat = even positions, tilde = odd)."""
    if len(values) % 2 != 1:
        raise ValueError(f"level vector must have odd length, got {len(values)}")
    return values[0::2].copy(), values[1::2].copy()


def merge(hat: np.ndarray, tilde: np.ndarray) -> np.ndarray:
    """Inverse of split: interleave hat and tilde back into a level vector."""
    if len(hat) != len(tilde) + 1:
        raise ValueError(f"need len(hat) == len(tilde) + 1, got {len(hat)}, {len(tilde)}")
    out = np.empty(len(hat) + len(tilde), dtype=np.float64)
    out[0::2] = hat
    out[1::2] = tilde
    return out


def merge_many(hat: np.ndarray, tilde: np.ndarray) -> np.ndarray:
    """Merge one hat vector with a batch of tilde vectors, shape (m, n_tilde)."""
    m, n_t = tilde.shape
    if len(hat) != n_t + 1:
        raise ValueError(f"need len(hat) == tilde.shape[1] + 1, got {len(hat)}, {n_t}")
    out = np.empty((m, len(hat) + n_t), dtype=np.float64)
    out[:, 0::2] = hat
    out[:, 1::2] = tilde
    return out


def _broadcast_model_fn(fn: Callable, x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(fn(x), dtype=np.float64), x.shape)


def log_q(model: ModelSpec, hier: Hierarchy, level: int, values: np.ndarray) -> np.ndarray | float:
    """Unnormalized log-density of the coarsened one-step chain at this level.

    Sum over increments of minus the one-step potential at spacing 2^level * dt,
    plus the -log sigma prefactor at each increment's starting site.  Accepts a
    batch of level vectors in the leading axes.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != hier.level_size(level):
        raise ValueError(
            f"level {level} expects {hier.level_size(level)} values, got {values.shape[-1]}")
    dt = hier.level_dt(level)
    x = values[..., :-1]
    y = values[..., 1:]
    sig = _broadcast_model_fn(model.diffusion, x)
    if np.any(sig <= 0.0):
        raise ValueError("diffusion must be strictly positive along the path")
    f = _broadcast_model_fn(model.drift, x)
    fp = _broadcast_model_fn(model.drift_derivative, x)
    r = (1.0 - dt * fp) * (y - x) - dt * f
    out = -np.sum(r * r / (2.0 * sig * sig * dt) + np.log(sig), axis=-1)
    if np.any(np.isnan(out)):
        raise FloatingPointError("non-finite level log-density")
    return out if out.ndim else float(out)


def log_pi_bridge(model: ModelSpec, hier: Hierarchy, level: int,
                  values: np.ndarray) -> np.ndarray | float:
    """Level density for bridge sampling: log_q with both endpoints pinned."""
    values = np.asarray(values, dtype=np.float64)
    g = hier.grid
    if np.any(values[..., 0] != g.z_left) or np.any(values[..., -1] != g.z_right):
        raise ValueError(
            f"bridge path endpoints must equal ({g.z_left}, {g.z_right})")
    return log_q(model, hier, level, values)


@dataclass(frozen=True)
class ObservationSet:
    """Noisy observations h_j of r(X) at times s_j, plus the initial density.

    log_noise is the log-density of the observation error (normalization
    included so values are comparable across levels); log_initial is the
    unnormalized log-density of the path's starting value.
    """

    times: np.ndarray
    values: np.ndarray
    log_noise: Callable[[float], float]
    observation_map: Callable[[float], float]
    log_initial: Callable[[float], float]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 1:
            raise ConfigError("observation times and values must be equal-length 1-d arrays")
        if np.any(np.diff(t) <= 0.0):
            raise ConfigError("observation times must be strictly increasing")


def gaussian_obs_noise(variance: float) -> Callable:
    """Centered Gaussian observation-noise log-density with its normalization."""
    if variance <= 0.0:
        raise ConfigError(f"observation noise variance must be positive, got {variance}")
    c = -0.5 * math.log(2.0 * math.pi * variance)

    def log_noise(e):
        return -np.square(e) / (2.0 * variance) + c

    return log_noise


def snap_observation_positions(hier: Hierarchy, level: int, times: np.ndarray) -> np.ndarray:
    """Positions (indices into the level vector) nearest to each observation time.

    Ties are broken toward the smaller index.  Times must lie within the grid.
    """
    g = hier.grid
    t = np.asarray(times, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > g.horizon):
        raise ConfigError("observation times must lie within [0, horizon]")
    if not (t[0] == 0.0 and t[-1] == g.horizon):
        raise ConfigError("observations must start at time 0 and end at the horizon")
    q = t / (g.dt * hier.stride(level))
    pos = np.ceil(q - 0.5).astype(np.int64)
    return np.clip(pos, 0, hier.level_steps(level))


def log_pi_smoothing(model: ModelSpec, hier: Hierarchy, level: int, values: np.ndarray,
                     obs: ObservationSet) -> np.ndarray | float:
    """Level density for smoothing: log_q + initial factor + one factor per observation.

    Each observation contributes log_noise(h_j - r(x)) at the level site nearest
    to its time; several observations may share a site on coarse levels.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.asarray(log_q(model, hier, level, values), dtype=np.float64).copy()
    out += obs.log_initial(values[..., 0])
    pos = snap_observation_positions(hier, level, obs.times)
    for j, p in enumerate(pos):
        out = out + obs.log_noise(obs.values[j] - obs.observation_map(values[..., p]))
    if np.any(np.isnan(out)):
        raise FloatingPointError("non-finite smoothing log-density")
    return out if out.ndim else float(out)


def reference_variance(hier: Hierarchy, level: int) -> float:
    """Variance of one tilde site under the midpoint reference at this level."""
    return 0.5 * hier.level_dt(level)


def log_reference(hier: Hierarchy, level: int, hat: np.ndarray,
                  tilde: np.ndarray) -> np.ndarray | float:
    """Log-density of tilde sites under the midpoint Gaussian reference given hat.

    Sites are independent Gaussians centered at the mean of their two hat
    neighbors, with variance half the level spacing.  Batched over leading
    axes of tilde.
    """
    hat = np.asarray(hat, dtype=np.float64)
    tilde = np.asarray(tilde, dtype=np.float64)
    n_t = tilde.shape[-1]
    if len(hat) != n_t + 1:
        raise ValueError(f"need len(hat) == tilde size + 1, got {len(hat)}, {n_t}")
    var = reference_variance(hier, level)
    mid = 0.5 * (hat[:-1] + hat[1:])
    d = tilde - mid
    out = -np.sum(d * d, axis=-1) / (2.0 * var) - 0.5 * n_t * (LOG_2PI + math.log(var))
    return out if out.ndim else float(out)


def sample_reference(hier: Hierarchy, level: int, hat: np.ndarray,
                     rng: np.random.Generator, size: int | None = None):
    """Draw tilde sites from the midpoint reference; returns (tilde, log_density).

    With size=None one vector is drawn; otherwise a (size, n_tilde) batch.
    """
    hat = np.asarray(hat, dtype=np.float64)
    n_t = len(hat) - 1
    var = reference_variance(hier, level)
    mid = 0.5 * (hat[:-1] + hat[1:])
    shape = (n_t,) if size is None else (size, n_t)
    tilde = mid + math.sqrt(var) * rng.standard_normal(shape)
    return tilde, log_reference(hier, level, hat, tilde)
