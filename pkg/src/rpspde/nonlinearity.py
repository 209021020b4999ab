"""Bounded superposition nonlinearities ``u(.) -> F(t, u(.))``.

A :class:`Nonlinearity` works on grid values.  ``values(t, u)`` takes
``u`` of shape ``(..., n_grid)`` and ``t`` broadcastable to ``u.shape[:-1]``.
Projection onto the eigenbasis happens in :func:`apply_nemytskii` (and in
the solvers) by quadrature, i.e. evaluate on the grid first, then project.
"""
from __future__ import annotations

import math

import numpy as np

from .spectral import Field, SpectralOperator


class Nonlinearity:
    """Base class: ``F(t, u)`` with reported bounds ``sup_f`` and ``sup_grad``.

    ``sup_grad`` bounds the pointwise derivative ``|dF/du|``; the solvers use
    it as the Lipschitz constant of the induced map on L2(D).
    """

    kind = "base"
    pointwise = True

    def __init__(self, tau: float, sup_f: float, sup_grad: float):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.tau = float(tau)
        self.sup_f = float(sup_f)
        self.sup_grad = float(sup_grad)

    def values(self, t, u):
        raise NotImplementedError

    def gradient(self, t, u):
        raise NotImplementedError

    def __call__(self, t, u):
        return self.values(t, u)

    @property
    def is_zero(self) -> bool:
        return self.sup_f == 0.0

    def describe(self) -> dict:
        return {"kind": self.kind, "sup_f": self.sup_f, "sup_grad": self.sup_grad, "tau": self.tau}


def _phase(t, tau):
    return 2.0 * math.pi * np.mod(np.asarray(t, dtype=float), tau) / tau


class SineNonlinearity(Nonlinearity):
    """``F(t, u) = a sin(u) + b cos(2 pi t / tau)``."""

    kind = "sine"

    def __init__(self, a: float, b: float, tau: float):
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("a and b must be finite")
        super().__init__(tau, abs(a) + abs(b), abs(a))
        self.a, self.b = float(a), float(b)
        if a == 0 and b == 0:
            self.kind = "zero"

    def values(self, t, u):
        u = np.asarray(u, dtype=float)
        forcing = self.b * np.cos(_phase(t, self.tau))
        if np.ndim(forcing) and u.ndim > np.ndim(forcing):
            forcing = np.expand_dims(forcing, -1)
        if self.a == 0:
            return np.zeros_like(u) + forcing
        return self.a * np.sin(u) + forcing

    def gradient(self, t, u):
        u = np.asarray(u, dtype=float)
        if self.a == 0:
            return np.zeros_like(u)
        return self.a * np.cos(u)

    def describe(self):
        return {**super().describe(), "a": self.a, "b": self.b}


class ConstantFieldNonlinearity(Nonlinearity):
    """``F(t, u) = sum_i c_i phi_i``, independent of time and state."""

    kind = "constant_field"
    pointwise = False

    def __init__(self, op: SpectralOperator, coefficients, tau: float = 1.0):
        coef = np.asarray(coefficients, dtype=float)
        if coef.shape != (op.n_modes,):
            raise ValueError("one coefficient per mode is required")
        self.coefficients = coef
        self.field = op.synthesize(coef)
        super().__init__(tau, float(np.max(np.abs(self.field), initial=0.0)), 0.0)

    def values(self, t, u):
        return np.broadcast_to(self.field, np.shape(u)).copy()

    def gradient(self, t, u):
        return np.zeros(np.shape(u))

    def describe(self):
        return {**super().describe(), "coefficients": self.coefficients.tolist()}


def chi(z):
    """Cut-off: 1 on ``|z| <= 1``, 0 on ``|z| >= 4``, quintic smoothstep between.

    The quintic has zero first and second derivatives at both ends.
    """
    z = np.abs(np.asarray(z, dtype=float))
    s = np.clip((z - 1.0) / 3.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def chi_prime(z):
    z = np.abs(np.asarray(z, dtype=float))
    s = np.clip((z - 1.0) / 3.0, 0.0, 1.0)
    return -30.0 * s**2 * (1.0 - s) ** 2 / 3.0


class TruncatedNonlinearity(Nonlinearity):
    """``f_N(u) = chi(||u||^2 / N^2) f(u)`` with the norm taken over the whole field.

    ``sup_f`` and ``sup_grad`` are sampled over the pointwise range a field
    with ``||u|| <= 2N`` can reach on the grid, ``|u(x_j)| <= 2N / sqrt(w_j)``.
    The cut-off derivative term of the field Lipschitz constant is not
    folded into ``sup_grad``.
    """

    kind = "truncated"
    pointwise = False

    def __init__(self, f, N: float, op: SpectralOperator, fprime=None, tau: float = 1.0,
                 n_probe: int = 20001):
        if not N > 0:
            raise ValueError("N must be positive")
        self.f = f
        self.fprime = fprime if fprime is not None else _central_difference(f)
        self.N = float(N)
        self.weights = op.weights
        reach = 2.0 * self.N / math.sqrt(float(np.min(op.weights)))
        v = np.linspace(-reach, reach, n_probe)
        super().__init__(tau, float(np.max(np.abs(f(v)))), float(np.max(np.abs(self.fprime(v)))))

    def scale(self, u):
        norm_sq = np.sum(np.asarray(u) ** 2 * self.weights, axis=-1, keepdims=True)
        return chi(norm_sq / self.N**2)

    def values(self, t, u):
        u = np.asarray(u, dtype=float)
        return self.scale(u) * self.f(u)

    def gradient(self, t, u):
        u = np.asarray(u, dtype=float)
        return self.scale(u) * self.fprime(u)

    def describe(self):
        return {**super().describe(), "N": self.N}


def _central_difference(f, h=1e-6):
    def fprime(u):
        return (f(u + h) - f(u - h)) / (2 * h)
    return fprime


def make_sine_nonlinearity(a: float, b: float, tau: float) -> SineNonlinearity:
    return SineNonlinearity(a, b, tau)


def make_truncated_nonlinearity(f, N: float, op: SpectralOperator, fprime=None,
                                tau: float = 1.0) -> TruncatedNonlinearity:
    return TruncatedNonlinearity(f, N, op, fprime=fprime, tau=tau)


def make_constant_field(op: SpectralOperator, coefficients, tau: float = 1.0):
    return ConstantFieldNonlinearity(op, coefficients, tau)


def apply_nemytskii(F: Nonlinearity, t: float, u: Field, op: SpectralOperator) -> Field:
    """Evaluate ``F(t, u(x_j))`` on the grid and project onto the eigenbasis."""
    grid_u = u.with_grid(op).grid_values
    vals = F.values(t, grid_u)
    return Field(op.project(vals), vals)
