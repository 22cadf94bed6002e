"""Closed-form backward solve for the child-order-placement LQR.

The state is x = (q, lam): outstanding lots still to buy, and the Poisson
rate (lots per minute) at which opposite aggressive flow lifts our passive
single-lot quote.  The control u is the number of lots we snipe at the far
touch at each action time; sniping u lots knocks the hit rate down to
lam - eta*u.  Stage cost is gamma_n*q^2 + u^2 - W (all in half-spread
units, with the half-spread scaled into gamma), terminal cost is
gamma_N*q_N^2.

Every value function is an exact quadratic V_n(x) = x'P_n x + b_n'x + c_n
with P_n positive definite, and the optimal control is affine,
u*_n = alpha_n + beta_n'x.  ``solve_backward`` cascades both from the
terminal penalty; no iteration or approximation is involved.

Units: costs in half-spreads, time in minutes, quantities in lots.  Any
variance scaling belongs inside the user-supplied gamma_n.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidParams",
    "SolverError",
    "ModelParams",
    "ExecState",
    "QuadraticValue",
    "AffinePolicy",
    "SolvedModel",
    "gamma_constant",
    "gamma_linear",
    "step_matrices",
    "terminal_value",
    "last_period_policy",
    "backstep",
    "solve_backward",
    "value_at",
    "policy_action",
]

# Scaled tolerance below which a computed P_n may dip indefinite before the
# solver faults.  Exact-zero determinants (legitimate for an all-zero gamma
# tail) are accepted; anything clearly negative is not.
PD_TOL = 1e-12


class InvalidParams(ValueError):
    """Model or configuration parameters violate an invariant."""


class SolverError(RuntimeError):
    """Backward recursion produced a non-finite or indefinite value matrix."""


def gamma_constant(n_steps: int, value: float) -> tuple[float, ...]:
    """Constant delay-penalty schedule."""
    return (float(value),) * n_steps


def gamma_linear(n_steps: int, start: float, stop: float) -> tuple[float, ...]:
    """Linear delay-penalty ramp from ``start`` to ``stop`` inclusive."""
    if n_steps == 1:
        return (float(start),)
    step = (stop - start) / (n_steps - 1)
    return tuple(start + step * i for i in range(n_steps))


@dataclass(frozen=True)
class ModelParams:
    """Horizon partition and cost coefficients.

    Attributes:
        n_steps: number of action times (terminal time comes on top).
        dt: per-step durations in minutes, length ``n_steps``.
        gamma: delay penalties (half-spreads per lot^2), length ``n_steps``.
        gamma_terminal: terminal penalty on q_N^2, must be positive.
        eta: hit-rate reduction per lot sniped.

    ``eta * dt_n < 1`` is required for every step; at equality the policy
    denominators blow up and the model loses meaning.
    """

    n_steps: int
    dt: tuple[float, ...]
    gamma: tuple[float, ...]
    gamma_terminal: float
    eta: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise InvalidParams(f"n_steps must be >= 1, got {self.n_steps}")
        object.__setattr__(self, "dt", tuple(float(v) for v in self.dt))
        object.__setattr__(self, "gamma", tuple(float(v) for v in self.gamma))
        if len(self.dt) != self.n_steps:
            raise InvalidParams(
                f"dt has {len(self.dt)} entries, expected n_steps={self.n_steps}"
            )
        if len(self.gamma) != self.n_steps:
            raise InvalidParams(
                f"gamma has {len(self.gamma)} entries, expected n_steps={self.n_steps}"
            )
        if not all(math.isfinite(v) and v > 0.0 for v in self.dt):
            raise InvalidParams("every dt must be finite and positive")
        if not all(math.isfinite(v) and v >= 0.0 for v in self.gamma):
            raise InvalidParams("every gamma must be finite and nonnegative")
        if not (math.isfinite(self.gamma_terminal) and self.gamma_terminal > 0.0):
            raise InvalidParams("gamma_terminal must be finite and positive")
        if not (math.isfinite(self.eta) and self.eta >= 0.0):
            raise InvalidParams("eta must be finite and nonnegative")
        bad = [n for n, d in enumerate(self.dt) if self.eta * d >= 1.0]
        if bad:
            raise InvalidParams(
                f"validity constraint eta*dt < 1 violated at step(s) {bad}: "
                f"eta={self.eta}, dt={[self.dt[n] for n in bad]}"
            )
        if any(a > b for a, b in zip(self.gamma, self.gamma[1:])):
            warnings.warn(
                "gamma schedule is not monotone non-decreasing; completion "
                "pressure weakens over the bin",
                stacklevel=2,
            )

    @classmethod
    def uniform(
        cls,
        n_steps: int,
        dt: float,
        gamma: float | tuple[float, ...],
        gamma_terminal: float,
        eta: float,
    ) -> "ModelParams":
        """Equal step durations; scalar gamma means a constant schedule."""
        g = gamma_constant(n_steps, gamma) if isinstance(gamma, (int, float)) else tuple(gamma)
        return cls(n_steps, (float(dt),) * n_steps, g, gamma_terminal, eta)


@dataclass(frozen=True)
class ExecState:
    """State vector: outstanding lots q and Poisson hit rate lam."""

    q: float
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.q) and math.isfinite(self.lam)):
            raise InvalidParams(f"state components must be finite, got {self}")


@dataclass(frozen=True)
class QuadraticValue:
    """One value function V(x) = x'Px + b'x + c, P symmetric via (p11, p12, p22)."""

    p11: float
    p12: float
    p22: float
    b1: float
    b2: float
    c: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.p11, self.p12], [self.p12, self.p22]])

    def vector(self) -> np.ndarray:
        return np.array([self.b1, self.b2])


@dataclass(frozen=True)
class AffinePolicy:
    """Optimal control u*(x) = alpha + beta_q*q + beta_lambda*lam."""

    alpha: float
    beta_q: float
    beta_lambda: float


@dataclass(frozen=True)
class SolvedModel:
    """Backward-solve output: values[0..N] and policies[0..N-1]."""

    values: tuple[QuadraticValue, ...]
    policies: tuple[AffinePolicy, ...]


def step_matrices(params: ModelParams, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Transition helpers for step n: J maps the state to its drifted mean,
    h is the per-unit-control pullback of the next-step mean.

    J = [[1, -dt], [0, 1]],  h = (1 - eta*dt, eta).
    """
    if not 0 <= n < params.n_steps:
        raise IndexError(f"step index {n} out of range [0, {params.n_steps})")
    dt = params.dt[n]
    J = np.array([[1.0, -dt], [0.0, 1.0]])
    h = np.array([1.0 - params.eta * dt, params.eta])
    return J, h


def terminal_value(params: ModelParams) -> QuadraticValue:
    """Terminal cost gamma_N * q^2 as a quadratic (P = diag(gamma_N, 0))."""
    return QuadraticValue(params.gamma_terminal, 0.0, 0.0, 0.0, 0.0, 0.0)


def last_period_policy(params: ModelParams) -> AffinePolicy:
    """Closed form for the final action time, u* = alpha + beta*(q - lam*dt).

    alpha = (gamma_N - 1)*eta*dt / (2*(1 + gamma_N*(1 - eta*dt)^2))
    beta  = gamma_N*(1 - eta*dt) / (1 + gamma_N*(1 - eta*dt)^2)
    """
    dt = params.dt[-1]
    g = params.gamma_terminal
    r = 1.0 - params.eta * dt
    denom = 1.0 + g * r * r
    alpha = (g - 1.0) * params.eta * dt / (2.0 * denom)
    beta = g * r / denom
    return AffinePolicy(alpha, beta, -beta * dt)


def _pd_guard(p11: float, p12: float, p22: float, n: int) -> None:
    vals = (p11, p12, p22)
    if not all(map(math.isfinite, vals)):
        raise SolverError(f"step {n}: non-finite value matrix {vals}")
    det = p11 * p22 - p12 * p12
    scale = 1.0 + p11 * p11 + 2.0 * p12 * p12 + p22 * p22
    if p11 <= 0.0 or det < -PD_TOL * scale:
        raise SolverError(
            f"step {n}: value matrix lost positive definiteness "
            f"(p11={p11}, det={det}); the backward cascade preserves it for "
            f"any semi-definite input, so inputs are suspect"
        )


def backstep(
    params: ModelParams, n: int, next_value: QuadraticValue
) -> tuple[AffinePolicy, QuadraticValue]:
    """One Bellman step: from V_{n+1} to (u*_n, V_n).

    With A = 1 + h'P1 h and l11 = 1 - P1[0,0]:
        alpha = (h'b1 - l11*eta*dt) / (2A)
        beta  = J'P1 h / A
        P     = gamma_n*diag(1,0) + J'(P1 - P1 h h'P1 / A)J
        b     = J'b1 - l11*dt*(0,1)' - 2A*alpha*beta
        c     = c1 - A*alpha^2
    The returned P is symmetrized exactly before storage.
    """
    J, h = step_matrices(params, n)
    dt = params.dt[n]
    P1 = next_value.matrix()
    b1 = next_value.vector()

    P1h = P1 @ h
    A = 1.0 + float(h @ P1h)
    l11 = 1.0 - next_value.p11
    alpha = (float(h @ b1) - l11 * params.eta * dt) / (2.0 * A)
    beta = (J.T @ P1h) / A

    Q = P1 - np.outer(P1h, P1h) / A
    P = J.T @ Q @ J
    P[0, 0] += params.gamma[n]
    p12 = 0.5 * (P[0, 1] + P[1, 0])
    b = J.T @ b1 - l11 * dt * np.array([0.0, 1.0]) - 2.0 * A * alpha * beta
    c = next_value.c - A * alpha * alpha

    if not (math.isfinite(alpha) and math.isfinite(c) and np.all(np.isfinite(beta))):
        raise SolverError(f"step {n}: non-finite policy or constant term")
    _pd_guard(float(P[0, 0]), p12, float(P[1, 1]), n)

    policy = AffinePolicy(alpha, float(beta[0]), float(beta[1]))
    value = QuadraticValue(
        float(P[0, 0]), p12, float(P[1, 1]), float(b[0]), float(b[1]), c
    )
    return policy, value


def solve_backward(params: ModelParams) -> SolvedModel:
    """Cascade the closed form from the terminal penalty down to step 0."""
    values = [terminal_value(params)]
    policies = []
    for n in range(params.n_steps - 1, -1, -1):
        policy, value = backstep(params, n, values[0])
        values.insert(0, value)
        policies.insert(0, policy)
    return SolvedModel(tuple(values), tuple(policies))


def value_at(v: QuadraticValue, x: ExecState) -> float:
    """Evaluate x'Px + b'x + c."""
    q, lam = x.q, x.lam
    return (
        v.p11 * q * q
        + 2.0 * v.p12 * q * lam
        + v.p22 * lam * lam
        + v.b1 * q
        + v.b2 * lam
        + v.c
    )


def policy_action(p: AffinePolicy, x: ExecState) -> float:
    """Evaluate u = alpha + beta_q*q + beta_lambda*lam (signed, unclamped)."""
    return p.alpha + p.beta_q * x.q + p.beta_lambda * x.lam
