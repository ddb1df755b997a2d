"""SDE model functions and the one-step potential of the linearly implicit Euler scheme.

A model is a scalar SDE  dZ = f(Z) dt + sigma(Z) dW  described by its drift f,
the drift derivative f' (supplied explicitly, validated numerically), and the
diffusion sigma.  The one-step transition of the linearly implicit Euler
discretization

    X_{k+1} = X_k + f(X_k) dt + (X_{k+1} - X_k) f'(X_k) dt + sigma(X_k) sqrt(dt) xi_k

has Gaussian noise xi_k whose squared value, halved, is the potential V below.
Path densities are built as sums of V terms in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit


class ModelError(ValueError):
    """Raised when model functions violate their contract (e.g. sigma <= 0)."""


@dataclass(frozen=True)
class ModelSpec:
    """Scalar SDE model: drift, explicit drift derivative, strictly positive diffusion."""

    drift: Callable[[float], float]
    drift_derivative: Callable[[float], float]
    diffusion: Callable[[float], float]
    name: str = "custom"


def potential_v(model: ModelSpec, x: float, y: float, dt: float) -> float:
    """Half squared noise of one linearly implicit Euler step from x to y.

    V(x, y, dt) = [(1 - dt f'(x)) (y - x) - dt f(x)]^2 / (2 sigma(x)^2 dt).

    Solving the implicit step for the Gaussian increment gives the residual
    (1 - dt f'(x))(y - x) - dt f(x); V vanishes exactly on the noise-free step.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    sig = model.diffusion(x)
    if sig <= 0.0:
        raise ModelError(f"sigma({x}) = {sig} must be strictly positive")
    r = (1.0 - dt * model.drift_derivative(x)) * (y - x) - dt * model.drift(x)
    v = r * r / (2.0 * sig * sig * dt)
    if not math.isfinite(v):
        raise FloatingPointError(f"non-finite potential at x={x}, y={y}, dt={dt}")
    return v


def log_sigma_correction(model: ModelSpec, x: float) -> float:
    """State-dependent log prefactor -log sigma(x) of the one-step Gaussian density.

    Zero for unit diffusion; required for path densities with nonconstant sigma,
    where the prefactor varies along the path and cannot be dropped as a constant.
    """
    sig = model.diffusion(x)
    if sig <= 0.0:
        raise ModelError(f"sigma({x}) = {sig} must be strictly positive")
    return -math.log(sig)


@njit(cache=True)
def _dw_f(x):
    return -4.0 * x * (x * x - 1.0)


@njit(cache=True)
def _dw_fp(x):
    return -12.0 * x * x + 4.0


@njit(cache=True)
def _unit_sigma(x):
    return 1.0


def builtin_double_well() -> ModelSpec:
    """Diffusion in the double-well potential (x^2-1)^2: f(x) = -4x(x^2-1), sigma = 1."""
    return ModelSpec(drift=_dw_f, drift_derivative=_dw_fp, diffusion=_unit_sigma,
                     name="double_well")


def builtin_ou(rate: float = 1.0) -> ModelSpec:
    """Linear mean-reverting drift f(x) = -rate*x, sigma = 1 (Gaussian path densities)."""
    if rate <= 0.0:
        raise ValueError(f"rate must be positive, got {rate}")

    a = float(rate)

    @njit(cache=True)
    def f(x):
        return -a * x

    @njit(cache=True)
    def fp(x):
        return -a

    return ModelSpec(drift=f, drift_derivative=fp, diffusion=_unit_sigma,
                     name="ou")


def validate_drift_derivative(model: ModelSpec, rng: np.random.Generator,
                              n_points: int = 100, rtol: float = 1e-5,
                              lo: float = -3.0, hi: float = 3.0) -> None:
    """Check drift_derivative against a centered finite difference of drift.

    Samples n_points uniformly in [lo, hi]; raises ModelError on relative
    disagreement beyond rtol.
    """
    h = 1e-4
    for x in rng.uniform(lo, hi, size=n_points):
        fd = (model.drift(x + h) - model.drift(x - h)) / (2.0 * h)
        fp = model.drift_derivative(x)
        if abs(fd - fp) > rtol * max(1.0, abs(fp)):
            raise ModelError(
                f"drift_derivative({x}) = {fp} disagrees with finite difference {fd}")


_BUILTINS: dict[str, Callable[..., ModelSpec]] = {
    "double_well": builtin_double_well,
    "ou": builtin_ou,
}


def model_by_name(name: str, **params) -> ModelSpec:
    """Look up a built-in model by its string identifier."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; available: {sorted(_BUILTINS)}") from None
    return factory(**params)
