"""Shared domain types: environment models with analytic derivatives, affine
generator fields, finite transforms, and mismatch reports.

States are plain numpy arrays of shape ``(d,)`` and actions of shape ``(m,)``.
Every callable attached to an :class:`EnvModel` is batch-aware: it accepts
leading batch dimensions (``(..., d)`` / ``(..., m)``) and broadcasts, which
keeps the residual and Monte Carlo code fully vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "EnvModel",
    "GeneratorPair",
    "FiniteTransform",
    "MismatchReport",
    "DerivativeCheckReport",
    "check_derivatives",
]


@dataclass(frozen=True)
class EnvModel:
    """Closed-form controlled-diffusion model with analytic derivatives.

    ``drift(s, a) -> (..., d)`` and ``diffusion_Q(s, a) -> (..., d, d)`` give
    the drift vector and the (symmetric PSD) diffusion matrix Q = Sigma
    Sigma^T; ``reward(s, a) -> (...)`` the instantaneous reward.  The
    remaining callables are the exact partial derivatives needed by the
    determining-equation residuals:

    - ``grad_s_reward`` / ``grad_a_reward``: gradients of the reward,
    - ``jac_s_drift`` (``(..., d, d)``) / ``jac_a_drift`` (``(..., d, m)``):
      drift Jacobians,
    - ``dir_s_Q(s, a, X)`` / ``dir_a_Q(s, a, Y)``: directional derivatives of
      Q along a state (resp. action) direction, linear in the direction.

    Instances are immutable and safe to share across threads.
    """

    name: str
    dim_s: int
    dim_a: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion_Q: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reward: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_s_reward: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_a_reward: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_s_drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_a_drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dir_s_Q: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dir_a_Q: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    discount_beta: float = 1.0


@dataclass(frozen=True)
class GeneratorPair:
    """Affine infinitesimal generator fields X(s) = A_X s + c_X on states and
    Y(a) = A_Y a + c_Y on actions.

    The Jacobians are the constant matrices A_X, A_Y and all Hessians vanish,
    so the second-order (Ito) correction in the drift residual is identically
    zero for this class.
    """

    A_X: np.ndarray
    c_X: np.ndarray
    A_Y: np.ndarray
    c_Y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A_X", np.asarray(self.A_X, dtype=float))
        object.__setattr__(self, "c_X", np.asarray(self.c_X, dtype=float))
        object.__setattr__(self, "A_Y", np.asarray(self.A_Y, dtype=float))
        object.__setattr__(self, "c_Y", np.asarray(self.c_Y, dtype=float))
        d, m = self.c_X.shape[0], self.c_Y.shape[0]
        if self.A_X.shape != (d, d) or self.A_Y.shape != (m, m):
            raise ValueError("generator matrix/offset shapes are inconsistent")

    @property
    def dim_s(self) -> int:
        return self.c_X.shape[0]

    @property
    def dim_a(self) -> int:
        return self.c_Y.shape[0]

    def X(self, s: np.ndarray) -> np.ndarray:
        """Evaluate the state field at s, shape (..., d)."""
        return np.asarray(s) @ self.A_X.T + self.c_X

    def Y(self, a: np.ndarray) -> np.ndarray:
        """Evaluate the action field at a, shape (..., m)."""
        return np.asarray(a) @ self.A_Y.T + self.c_Y

    def scaled(self, factor: float) -> "GeneratorPair":
        return GeneratorPair(factor * self.A_X, factor * self.c_X,
                             factor * self.A_Y, factor * self.c_Y)

    def as_vector(self) -> np.ndarray:
        """Flatten parameters to [vec(A_X), c_X, vec(A_Y), c_Y]."""
        return np.concatenate([self.A_X.ravel(), self.c_X,
                               self.A_Y.ravel(), self.c_Y])

    @staticmethod
    def from_vector(vec: np.ndarray, dim_s: int, dim_a: int) -> "GeneratorPair":
        vec = np.asarray(vec, dtype=float)
        d2, m2 = dim_s * dim_s, dim_a * dim_a
        if vec.shape != (d2 + dim_s + m2 + dim_a,):
            raise ValueError("parameter vector has wrong length")
        i = 0
        A_X = vec[i:i + d2].reshape(dim_s, dim_s); i += d2
        c_X = vec[i:i + dim_s]; i += dim_s
        A_Y = vec[i:i + m2].reshape(dim_a, dim_a); i += m2
        c_Y = vec[i:i + dim_a]
        return GeneratorPair(A_X, c_X, A_Y, c_Y)

    @staticmethod
    def zero(dim_s: int, dim_a: int) -> "GeneratorPair":
        return GeneratorPair(np.zeros((dim_s, dim_s)), np.zeros(dim_s),
                             np.zeros((dim_a, dim_a)), np.zeros(dim_a))


@dataclass(frozen=True)
class FiniteTransform:
    """A finite state/action transformation, usually an integrated flow.

    ``state_map`` and ``action_map`` are batch-aware (``(..., d) -> (..., d)``).
    For flows, ``alpha`` is the flow time, ``step_size`` the integrator step
    and ``integrator_order`` its classical order; closed-form transforms keep
    ``alpha`` as a label and record ``step_size = 0``.  ``retraction``, when
    present, is the feasibility projection that was applied after each
    integrator step.
    """

    alpha: float
    state_map: Callable[[np.ndarray], np.ndarray]
    action_map: Callable[[np.ndarray], np.ndarray]
    step_size: float = 0.0
    integrator_order: int = 4
    retraction: Optional[Callable[[np.ndarray], tuple]] = None
    # like state_map but returning (state, retraction-fired); set by flows
    state_map_flagged: Optional[Callable[[np.ndarray], tuple]] = None

    def g(self, s: np.ndarray) -> np.ndarray:
        return self.state_map(np.asarray(s, dtype=float))

    def h(self, a: np.ndarray) -> np.ndarray:
        return self.action_map(np.asarray(a, dtype=float))

    @staticmethod
    def identity() -> "FiniteTransform":
        return FiniteTransform(0.0, lambda s: np.array(s, dtype=float, copy=True),
                               lambda a: np.array(a, dtype=float, copy=True))

    @staticmethod
    def from_linear(alpha: float, M_s: np.ndarray, M_a: np.ndarray) -> "FiniteTransform":
        """Closed-form linear transform pair (e.g. an exact rotation or
        reflection), recorded with flow-time label ``alpha``."""
        M_s = np.asarray(M_s, dtype=float)
        M_a = np.asarray(M_a, dtype=float)
        return FiniteTransform(alpha,
                               lambda s, M=M_s: np.asarray(s, dtype=float) @ M.T,
                               lambda a, M=M_a: np.asarray(a, dtype=float) @ M.T)


@dataclass(frozen=True)
class MismatchReport:
    """Measured mismatch levels of a candidate transform.

    ``eps_L``/``eps_r`` are suprema over the probe set (generator and reward
    mismatch); ``value_noninvariance_sup``/``_mean`` summarize |V(s) -
    V(g(s))| over probes when a value table was supplied.  ``test_family``
    records which test-function class was used, since the mismatch level is
    only defined relative to it.
    """

    eps_L: float
    eps_r: float
    value_noninvariance_sup: float
    value_noninvariance_mean: float
    probe_count: int
    test_family: str = "quadratic monomials"

    def __post_init__(self):
        for name in ("eps_L", "eps_r", "value_noninvariance_sup",
                     "value_noninvariance_mean"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "eps_L": self.eps_L,
            "eps_r": self.eps_r,
            "value_noninvariance_sup": self.value_noninvariance_sup,
            "value_noninvariance_mean": self.value_noninvariance_mean,
            "probe_count": self.probe_count,
            "test_family": self.test_family,
        }


# ---------------------------------------------------------------------------
# Derivative verification
# ---------------------------------------------------------------------------

@dataclass
class DerivativeCheckReport:
    """Outcome of comparing analytic derivatives against central differences."""

    ok: bool
    worst_error: float
    worst_entry: str
    per_probe_errors: list = field(default_factory=list)
    domain_violations: list = field(default_factory=list)


def _fd_steps(x: np.ndarray, base: float = 1e-5) -> np.ndarray:
    # Step scaled by coordinate magnitude so large coordinates keep relative accuracy.
    return base * np.maximum(1.0, np.abs(x))


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> np.ndarray:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    return np.abs(analytic - fd) / scale


def check_derivatives(model: EnvModel, probes, tol: float = 1e-4,
                      feasible=None) -> DerivativeCheckReport:
    """Verify every analytic derivative of ``model`` against central finite
    differences at the given ``(s, a)`` probe points.

    The comparison is relative with a floor of 1 on the denominator, so small
    absolute entries are compared absolutely.  Probes outside the feasible
    set (when a ``feasible`` predicate is given) are recorded in
    ``domain_violations`` and still checked; they never abort the run.
    """
    if len(probes) == 0:
        raise ValueError("probe list must be nonempty")

    worst = 0.0
    worst_entry = ""
    per_probe = []
    violations = []
    rng = np.random.default_rng(0)

    for idx, (s, a) in enumerate(probes):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if feasible is not None and not feasible(s):
            violations.append(idx)

        errs = {}

        hs = _fd_steps(s)
        ha = _fd_steps(a)

        # reward gradients
        g_s = model.grad_s_reward(s, a)
        g_a = model.grad_a_reward(s, a)
        fd_gs = np.empty_like(g_s)
        for i in range(model.dim_s):
            e = np.zeros(model.dim_s); e[i] = hs[i]
            fd_gs[i] = (model.reward(s + e, a) - model.reward(s - e, a)) / (2 * hs[i])
        fd_ga = np.empty_like(g_a)
        for j in range(model.dim_a):
            e = np.zeros(model.dim_a); e[j] = ha[j]
            fd_ga[j] = (model.reward(s, a + e) - model.reward(s, a - e)) / (2 * ha[j])
        errs["grad_s_reward"] = _rel_err(g_s, fd_gs)
        errs["grad_a_reward"] = _rel_err(g_a, fd_ga)

        # drift Jacobians
        J_s = model.jac_s_drift(s, a)
        J_a = model.jac_a_drift(s, a)
        fd_Js = np.empty_like(J_s)
        for i in range(model.dim_s):
            e = np.zeros(model.dim_s); e[i] = hs[i]
            fd_Js[:, i] = (model.drift(s + e, a) - model.drift(s - e, a)) / (2 * hs[i])
        fd_Ja = np.empty_like(J_a)
        for j in range(model.dim_a):
            e = np.zeros(model.dim_a); e[j] = ha[j]
            fd_Ja[:, j] = (model.drift(s, a + e) - model.drift(s, a - e)) / (2 * ha[j])
        errs["jac_s_drift"] = _rel_err(J_s, fd_Js)
        errs["jac_a_drift"] = _rel_err(J_a, fd_Ja)

        # directional derivatives of Q along random directions
        X = rng.standard_normal(model.dim_s)
        Y = rng.standard_normal(model.dim_a)
        h = 1e-5
        dQs = model.dir_s_Q(s, a, X)
        fd_dQs = (model.diffusion_Q(s + h * X, a) - model.diffusion_Q(s - h * X, a)) / (2 * h)
        dQa = model.dir_a_Q(s, a, Y)
        fd_dQa = (model.diffusion_Q(s, a + h * Y) - model.diffusion_Q(s, a - h * Y)) / (2 * h)
        errs["dir_s_Q"] = _rel_err(dQs, fd_dQs)
        errs["dir_a_Q"] = _rel_err(dQa, fd_dQa)

        probe_worst = 0.0
        for name, e in errs.items():
            e = np.atleast_1d(e)
            m = float(np.max(e))
            if m > probe_worst:
                probe_worst = m
            if m > worst:
                worst = m
                flat = int(np.argmax(e))
                worst_entry = f"probe {idx}: {name}[{np.unravel_index(flat, e.shape)}]"
        per_probe.append(probe_worst)

    return DerivativeCheckReport(ok=worst <= tol, worst_error=worst,
                                 worst_entry=worst_entry,
                                 per_probe_errors=per_probe,
                                 domain_violations=violations)
