"""Per-problem sampling targets: level densities plus compiled site-update kernels.

A target bundles the hierarchy, the model, and (for smoothing) the observation
set behind a small interface consumed by the kernels module:

    log_density(i, values)      unnormalized level log-density, batched
    free_count(i) / free_slice  which sites single-site Metropolis may move
    sweep(i, values, ...)       one in-place ascending-order Metropolis sweep
    delta_site(i, values, ...)  local log-density change of a one-site move
    ref_*                       the midpoint Gaussian reference used by swaps

Sweeps are compiled with numba when the model and observation callables are
jit-compatible (the built-ins are); otherwise an equivalent pure-Python sweep
consuming the identical random draws is used.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .hierarchy import (
    Hierarchy,
    ObservationSet,
    log_pi_bridge,
    log_pi_smoothing,
    log_reference,
    reference_variance,
    sample_reference,
    snap_observation_positions,
)
from .model import ModelSpec


def _compile_bridge_sweep(f, fp, sig):
    @njit
    def sweep(vals, dt, scale, zn, un):
        acc = 0
        n = vals.shape[0]
        for pos in range(1, n - 1):
            xl = vals[pos - 1]
            x = vals[pos]
            xr = vals[pos + 1]
            xp = x + scale * zn[pos - 1]
            sl = sig(xl)
            al = 1.0 - dt * fp(xl)
            bl = dt * f(xl)
            rl = al * (x - xl) - bl
            rlp = al * (xp - xl) - bl
            sx = sig(x)
            rx = (1.0 - dt * fp(x)) * (xr - x) - dt * f(x)
            sp = sig(xp)
            if sp <= 0.0:
                raise ValueError("diffusion must stay strictly positive")
            rp = (1.0 - dt * fp(xp)) * (xr - xp) - dt * f(xp)
            cur = -rl * rl / (2.0 * sl * sl * dt) - rx * rx / (2.0 * sx * sx * dt) - np.log(sx)
            new = -rlp * rlp / (2.0 * sl * sl * dt) - rp * rp / (2.0 * sp * sp * dt) - np.log(sp)
            d = new - cur
            if d >= 0.0 or un[pos - 1] < np.exp(d):
                vals[pos] = xp
                acc += 1
        return acc

    return sweep


def _compile_smoothing_sweep(f, fp, sig, log_mu, robs, log_rho):
    @njit
    def sweep(vals, dt, scale, zn, un, obs_start, obs_h):
        acc = 0
        n = vals.shape[0]
        for pos in range(n):
            x = vals[pos]
            xp = x + scale * zn[pos]
            cur = 0.0
            new = 0.0
            if pos > 0:
                xl = vals[pos - 1]
                sl = sig(xl)
                al = 1.0 - dt * fp(xl)
                bl = dt * f(xl)
                rl = al * (x - xl) - bl
                rlp = al * (xp - xl) - bl
                cur -= rl * rl / (2.0 * sl * sl * dt)
                new -= rlp * rlp / (2.0 * sl * sl * dt)
            if pos < n - 1:
                xr = vals[pos + 1]
                sx = sig(x)
                rx = (1.0 - dt * fp(x)) * (xr - x) - dt * f(x)
                sp = sig(xp)
                if sp <= 0.0:
                    raise ValueError("diffusion must stay strictly positive")
                rp = (1.0 - dt * fp(xp)) * (xr - xp) - dt * f(xp)
                cur += -rx * rx / (2.0 * sx * sx * dt) - np.log(sx)
                new += -rp * rp / (2.0 * sp * sp * dt) - np.log(sp)
            if pos == 0:
                cur += log_rho(x)
                new += log_rho(xp)
            for j in range(obs_start[pos], obs_start[pos + 1]):
                cur += log_mu(obs_h[j] - robs(x))
                new += log_mu(obs_h[j] - robs(xp))
            d = new - cur
            if d >= 0.0 or un[pos] < np.exp(d):
                vals[pos] = xp
                acc += 1
        return acc

    return sweep


def _python_bridge_sweep(f, fp, sig):
    def sweep(vals, dt, scale, zn, un):
        acc = 0
        n = vals.shape[0]
        for pos in range(1, n - 1):
            xl = vals[pos - 1]
            x = vals[pos]
            xr = vals[pos + 1]
            xp = x + scale * zn[pos - 1]
            sl = sig(xl)
            al = 1.0 - dt * fp(xl)
            bl = dt * f(xl)
            rl = al * (x - xl) - bl
            rlp = al * (xp - xl) - bl
            sx = sig(x)
            rx = (1.0 - dt * fp(x)) * (xr - x) - dt * f(x)
            sp = sig(xp)
            if sp <= 0.0:
                raise ValueError("diffusion must stay strictly positive")
            rp = (1.0 - dt * fp(xp)) * (xr - xp) - dt * f(xp)
            cur = -rl * rl / (2.0 * sl * sl * dt) - rx * rx / (2.0 * sx * sx * dt) - math.log(sx)
            new = -rlp * rlp / (2.0 * sl * sl * dt) - rp * rp / (2.0 * sp * sp * dt) - math.log(sp)
            d = new - cur
            if d >= 0.0 or un[pos - 1] < math.exp(d):
                vals[pos] = xp
                acc += 1
        return acc

    return sweep


def _python_smoothing_sweep(f, fp, sig, log_mu, robs, log_rho):
    def sweep(vals, dt, scale, zn, un, obs_start, obs_h):
        acc = 0
        n = vals.shape[0]
        for pos in range(n):
            x = vals[pos]
            xp = x + scale * zn[pos]
            cur = 0.0
            new = 0.0
            if pos > 0:
                xl = vals[pos - 1]
                sl = sig(xl)
                al = 1.0 - dt * fp(xl)
                bl = dt * f(xl)
                rl = al * (x - xl) - bl
                rlp = al * (xp - xl) - bl
                cur -= rl * rl / (2.0 * sl * sl * dt)
                new -= rlp * rlp / (2.0 * sl * sl * dt)
            if pos < n - 1:
                xr = vals[pos + 1]
                sx = sig(x)
                rx = (1.0 - dt * fp(x)) * (xr - x) - dt * f(x)
                sp = sig(xp)
                if sp <= 0.0:
                    raise ValueError("diffusion must stay strictly positive")
                rp = (1.0 - dt * fp(xp)) * (xr - xp) - dt * f(xp)
                cur += -rx * rx / (2.0 * sx * sx * dt) - math.log(sx)
                new += -rp * rp / (2.0 * sp * sp * dt) - math.log(sp)
            if pos == 0:
                cur += log_rho(x)
                new += log_rho(xp)
            for j in range(obs_start[pos], obs_start[pos + 1]):
                cur += log_mu(obs_h[j] - robs(x))
                new += log_mu(obs_h[j] - robs(xp))
            d = new - cur
            if d >= 0.0 or un[pos] < math.exp(d):
                vals[pos] = xp
                acc += 1
        return acc

    return sweep


class BridgeTarget:
    """Endpoint-pinned path target: level densities are pure coarsened-step sums."""

    kind = "bridge"
    supports_shared_noise = True

    def __init__(self, model: ModelSpec, hierarchy: Hierarchy, compiled: bool = True):
        self.model = model
        self.hierarchy = hierarchy
        self._sweep = None
        self._compiled = compiled

    @property
    def n_levels(self) -> int:
        return self.hierarchy.n_levels

    def log_density(self, level: int, values: np.ndarray):
        return log_pi_bridge(self.model, self.hierarchy, level, values)

    def free_count(self, level: int) -> int:
        return self.hierarchy.level_size(level) - 2

    def free_slice(self, level: int) -> slice:
        return slice(1, self.hierarchy.level_size(level) - 1)

    def delta_site(self, level: int, values: np.ndarray, pos: int, new: float) -> float:
        """Log-density change of replacing values[pos] by new; pos must be interior."""
        m = self.model
        dt = self.hierarchy.level_dt(level)
        xl, x, xr = values[pos - 1], values[pos], values[pos + 1]
        sl = m.diffusion(xl)
        al = 1.0 - dt * m.drift_derivative(xl)
        bl = dt * m.drift(xl)
        rl = al * (x - xl) - bl
        rlp = al * (new - xl) - bl
        sx = m.diffusion(x)
        rx = (1.0 - dt * m.drift_derivative(x)) * (xr - x) - dt * m.drift(x)
        sp = m.diffusion(new)
        rp = (1.0 - dt * m.drift_derivative(new)) * (xr - new) - dt * m.drift(new)
        cur = -rl * rl / (2.0 * sl * sl * dt) - rx * rx / (2.0 * sx * sx * dt) - math.log(sx)
        prop = -rlp * rlp / (2.0 * sl * sl * dt) - rp * rp / (2.0 * sp * sp * dt) - math.log(sp)
        return prop - cur

    def _build_sweep(self):
        m = self.model
        if self._compiled:
            try:
                sw = _compile_bridge_sweep(m.drift, m.drift_derivative, m.diffusion)
                sw(np.zeros(3), 0.1, 0.0, np.zeros(1), np.full(1, 0.5))
                return sw
            except Exception:
                pass
        return _python_bridge_sweep(m.drift, m.drift_derivative, m.diffusion)

    def sweep(self, level: int, values: np.ndarray, scale: float,
              zn: np.ndarray, un: np.ndarray) -> int:
        if self._sweep is None:
            self._sweep = self._build_sweep()
        return self._sweep(values, self.hierarchy.level_dt(level), scale, zn, un)

    def ref_var(self, level: int) -> float:
        return reference_variance(self.hierarchy, level)

    def ref_logpdf(self, level: int, hat: np.ndarray, tilde: np.ndarray):
        return log_reference(self.hierarchy, level, hat, tilde)

    def ref_sample(self, level: int, hat: np.ndarray, size: int, rng: np.random.Generator):
        return sample_reference(self.hierarchy, level, hat, rng, size=size)


class SmoothingTarget(BridgeTarget):
    """Free-endpoint path target with initial-density and observation factors."""

    kind = "smoothing"

    def __init__(self, model: ModelSpec, hierarchy: Hierarchy, obs: ObservationSet,
                 compiled: bool = True):
        super().__init__(model, hierarchy, compiled=compiled)
        self.obs = obs
        # per level: observation values in site order plus CSR offsets into them
        self._obs_start = []
        self._obs_h = []
        self.snapped_positions = []
        for i in range(hierarchy.n_levels):
            pos = snap_observation_positions(hierarchy, i, obs.times)
            order = np.argsort(pos, kind="stable")
            counts = np.bincount(pos, minlength=hierarchy.level_size(i))
            start = np.zeros(hierarchy.level_size(i) + 1, dtype=np.int64)
            np.cumsum(counts, out=start[1:])
            self._obs_start.append(start)
            self._obs_h.append(np.asarray(obs.values, dtype=np.float64)[order])
            self.snapped_positions.append(pos)

    def log_density(self, level: int, values: np.ndarray):
        return log_pi_smoothing(self.model, self.hierarchy, level, values, self.obs)

    def free_count(self, level: int) -> int:
        return self.hierarchy.level_size(level)

    def free_slice(self, level: int) -> slice:
        return slice(0, self.hierarchy.level_size(level))

    def delta_site(self, level: int, values: np.ndarray, pos: int, new: float) -> float:
        m = self.model
        o = self.obs
        dt = self.hierarchy.level_dt(level)
        n = len(values)
        x = values[pos]
        cur = 0.0
        prop = 0.0
        if pos > 0:
            xl = values[pos - 1]
            sl = m.diffusion(xl)
            al = 1.0 - dt * m.drift_derivative(xl)
            bl = dt * m.drift(xl)
            rl = al * (x - xl) - bl
            rlp = al * (new - xl) - bl
            cur -= rl * rl / (2.0 * sl * sl * dt)
            prop -= rlp * rlp / (2.0 * sl * sl * dt)
        if pos < n - 1:
            xr = values[pos + 1]
            sx = m.diffusion(x)
            rx = (1.0 - dt * m.drift_derivative(x)) * (xr - x) - dt * m.drift(x)
            sp = m.diffusion(new)
            rp = (1.0 - dt * m.drift_derivative(new)) * (xr - new) - dt * m.drift(new)
            cur += -rx * rx / (2.0 * sx * sx * dt) - math.log(sx)
            prop += -rp * rp / (2.0 * sp * sp * dt) - math.log(sp)
        if pos == 0:
            cur += o.log_initial(x)
            prop += o.log_initial(new)
        start = self._obs_start[level]
        hvals = self._obs_h[level]
        for j in range(start[pos], start[pos + 1]):
            cur += o.log_noise(hvals[j] - o.observation_map(x))
            prop += o.log_noise(hvals[j] - o.observation_map(new))
        return prop - cur

    def _build_sweep(self):
        m = self.model
        o = self.obs
        args = (m.drift, m.drift_derivative, m.diffusion,
                o.log_noise, o.observation_map, o.log_initial)
        if self._compiled:
            try:
                sw = _compile_smoothing_sweep(*args)
                sw(np.zeros(3), 0.1, 0.0, np.zeros(3), np.full(3, 0.5),
                   np.zeros(4, dtype=np.int64), np.zeros(0))
                return sw
            except Exception:
                pass
        return _python_smoothing_sweep(*args)

    def sweep(self, level: int, values: np.ndarray, scale: float,
              zn: np.ndarray, un: np.ndarray) -> int:
        if self._sweep is None:
            self._sweep = self._build_sweep()
        return self._sweep(values, self.hierarchy.level_dt(level), scale, zn, un,
                           self._obs_start[level], self._obs_h[level])


@njit(cache=True)
def identity_map(x):
    return x


def quartic_wells_log_density():
    """Unnormalized log-density -(x^2-1)^2: mass concentrated near the wells at +-1."""

    @njit
    def log_rho(x):
        w = x * x - 1.0
        return -w * w

    return log_rho


def flat_log_density():
    """Improper flat log-density (identically zero)."""

    @njit
    def log_rho(x):
        return 0.0 * x

    return log_rho
