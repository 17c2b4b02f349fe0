"""Lower-triangular uncertain agent dynamics, exosystem, steady-state chain.

All plant callables are vectorized across the agent axis: states carry a
leading agent dimension and the uncertainty vector ``w`` is shared (each
callable slices out its per-agent parameters). The built-in example plant
has relative degree 2, one zero-dynamics state per agent, and six uncertain
parameters per agent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidParameter, NonFiniteState
from .numerics import OdeSystem, integrate

ORIGIN_EQ_TOL = 1e-12
V_FD_STEP = 1e-5


@dataclass(frozen=True)
class Exosystem:
    """Autonomous disturbance generator ``vdot = S v`` with initial-set box."""

    S: np.ndarray
    v0_box: np.ndarray  # (n_v, 2) lo/hi per coordinate

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        box = np.array(self.v0_box, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("S must be square")
        if box.shape != (S.shape[0], 2):
            raise ValueError("v0_box must be (n_v, 2)")
        if (box[:, 0] > box[:, 1]).any():
            raise ValueError("v0_box lower bounds exceed upper bounds")
        S.setflags(write=False)
        box.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "v0_box", box)

    @property
    def n_v(self) -> int:
        return self.S.shape[0]


def exo_rhs(exo: Exosystem, v: np.ndarray) -> np.ndarray:
    return exo.S @ np.asarray(v, dtype=float)


def exo_trajectory(exo: Exosystem, v0: np.ndarray, t_final: float, h: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Sampled disturbance trajectory on a uniform grid (RK4)."""
    sys = OdeSystem(exo.n_v, lambda t, v: exo.S @ v)
    ts, vs = [], []

    def observer(step, t, v):
        ts.append(t)
        vs.append(v.copy())

    integrate(sys, np.asarray(v0, dtype=float), 0.0, t_final, h, observer)
    return np.array(ts), np.array(vs)


@dataclass(frozen=True)
class Uncertainty:
    """A constant parameter draw together with the box it came from."""

    w: np.ndarray
    box: np.ndarray  # (n_w, 2)

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        box = np.array(self.box, dtype=float)
        if box.shape != (w.shape[0], 2):
            raise ValueError("box must be (n_w, 2)")
        if ((w < box[:, 0] - 1e-12) | (w > box[:, 1] + 1e-12)).any():
            raise ValueError("w outside its box")
        w.setflags(write=False)
        box.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "box", box)


def sample_uncertainty(box: np.ndarray, seed) -> Uncertainty:
    """Uniform draw from the box; identical seeds give identical draws."""
    box = np.array(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or box.shape[0] == 0:
        raise ValueError("box must be (n_w, 2) with n_w >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Uncertainty(w=rng.uniform(box[:, 0], box[:, 1]), box=box)


@dataclass(frozen=True)
class PlantModel:
    """Lower-triangular dynamics shared by all agents.

    ``f0(z, x1, v, w)`` drives the zero-dynamics block; ``f_levels[s-1]``
    is the drift of the s-th integrator (its arguments are ``z`` and the
    states ``x_1 .. x_s``). ``steady_zero(s, v, w)`` is the zero-dynamics
    steady-state map, and ``im_polys`` holds the recurrence coefficients of
    the steady-state signals per level (level r's entry describes the
    feedforward input). ``steady_poly``, when provided, returns exact
    constant/linear/quadratic-in-v representations of those signals and
    unlocks machine-precision diagnostics.
    """

    n_agents: int
    r: int
    n_z: int
    n_w: int
    f0: Callable
    f_levels: Sequence[Callable]
    steady_zero: Callable
    im_polys: Sequence[np.ndarray]
    steady_poly: Callable | None = None
    bind: Callable | None = None  # optional: w -> (f0, f_levels) with w folded in
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("relative degree must be >= 1")
        if len(self.f_levels) != self.r:
            raise ValueError("need one drift callable per integrator level")
        if len(self.im_polys) != self.r:
            raise ValueError("need recurrence coefficients for every level")
        object.__setattr__(self, "f_levels", tuple(self.f_levels))
        object.__setattr__(self, "im_polys",
                           tuple(np.array(c, dtype=float) for c in self.im_polys))


@dataclass
class PlantState:
    """Stacked agent states: zero dynamics (N, n_z), chain (r, N), last input."""

    z: np.ndarray
    x: np.ndarray
    last_u: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.array(self.z, dtype=float)
        self.x = np.array(self.x, dtype=float)
        if self.last_u is None:
            self.last_u = np.zeros(self.x.shape[1])


def plant_rhs(model: PlantModel, state: PlantState, u: np.ndarray, v: np.ndarray,
              w: Uncertainty | np.ndarray, check_finite: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative ``(dz, dx)`` of the stacked plant under input ``u``."""
    wv = w.w if isinstance(w, Uncertainty) else np.asarray(w, dtype=float)
    z, x = state.z, state.x
    u = np.asarray(u, dtype=float)
    dz = model.f0(z, x[0], v, wv)
    dx = np.empty_like(x)
    for s in range(1, model.r + 1):
        drift = model.f_levels[s - 1](z, x[:s], v, wv)
        dx[s - 1] = drift + (x[s] if s < model.r else u)
    if check_finite and not (np.isfinite(dz).all() and np.isfinite(dx).all()):
        raise NonFiniteState("plant derivative is not finite")
    return dz, dx


# ---------------------------------------------------------------------------
# Exact polynomial-in-v signal representation (constant + linear + quadratic)


@dataclass(frozen=True)
class VPoly:
    """Per-agent scalar signals ``c0_i + c1_i . v + v^T C2_i v``.

    Closed under time differentiation along ``vdot = S v``, which is what
    makes steady-state derivative stacks exact for polynomial plants.
    """

    c0: np.ndarray        # (N,)
    c1: np.ndarray        # (N, n_v)
    c2: np.ndarray        # (N, n_v, n_v), symmetric in the last two axes

    @classmethod
    def affine(cls, c0: np.ndarray, c1: np.ndarray) -> "VPoly":
        c0 = np.asarray(c0, dtype=float)
        c1 = np.asarray(c1, dtype=float)
        return cls(c0, c1, np.zeros((c0.shape[0], c1.shape[1], c1.shape[1])))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.c0 + self.c1 @ v + np.einsum("ijk,j,k->i", self.c2, v, v)

    def time_derivative(self, S: np.ndarray) -> "VPoly":
        """Derivative along the exosystem flow, again a `VPoly`."""
        c1 = self.c1 @ S
        c2 = np.einsum("jl,ilk->ijk", S.T, self.c2) + np.einsum("ijl,lk->ijk", self.c2, S)
        return VPoly(np.zeros_like(self.c0), c1, c2)

    def stack(self, S: np.ndarray, depth: int, v: np.ndarray) -> np.ndarray:
        """Derivative stack ``(depth, N)``: value, 1st, ... (depth-1)-th derivative."""
        out = np.empty((depth, self.c0.shape[0]))
        poly = self
        for k in range(depth):
            out[k] = poly(v)
            if k + 1 < depth:
                poly = poly.time_derivative(S)
        return out

    @staticmethod
    def product_affine(a: "VPoly", b: "VPoly") -> "VPoly":
        """Product of two affine signals (quadratic result)."""
        if np.abs(a.c2).max() > 0 or np.abs(b.c2).max() > 0:
            raise ValueError("product only supported for affine factors")
        c0 = a.c0 * b.c0
        c1 = a.c0[:, None] * b.c1 + b.c0[:, None] * a.c1
        outer = np.einsum("ij,ik->ijk", a.c1, b.c1)
        c2 = (outer + outer.transpose(0, 2, 1)) / 2.0
        return VPoly(c0, c1, c2)

    def scaled(self, factor: np.ndarray) -> "VPoly":
        f = np.asarray(factor, dtype=float)
        return VPoly(self.c0 * f, self.c1 * f[:, None], self.c2 * f[:, None, None])

    def shifted(self, offset: np.ndarray) -> "VPoly":
        return VPoly(self.c0 + np.asarray(offset, dtype=float), self.c1, self.c2)

    def plus(self, other: "VPoly") -> "VPoly":
        return VPoly(self.c0 + other.c0, self.c1 + other.c1, self.c2 + other.c2)


# ---------------------------------------------------------------------------
# Steady-state signal chain


class SteadyState:
    """Steady-state signals of all agents for a fixed equilibrium and draw.

    ``x_star(1)`` is the (possibly still moving) reference itself; higher
    levels and the feedforward input are functions of the disturbance state
    only. Models that provide ``steady_poly`` get exact evaluation and
    derivative stacks; otherwise the chain is built by the generic recursion
    with central differences in ``v`` (step ``V_FD_STEP``).
    """

    def __init__(self, model: PlantModel, p_star: np.ndarray, exo: Exosystem,
                 w: Uncertainty | np.ndarray):
        self.model = model
        self.p_star = np.asarray(p_star, dtype=float)
        self.exo = exo
        self.w = w.w if isinstance(w, Uncertainty) else np.asarray(w, dtype=float)
        self._polys = None
        if model.steady_poly is not None:
            self._polys = model.steady_poly(self.p_star, self.w, exo.S)

    def z_star(self, v: np.ndarray) -> np.ndarray:
        return self.model.steady_zero(self.p_star, np.asarray(v, dtype=float), self.w)

    def x_star(self, s: int, v: np.ndarray, p: np.ndarray | None = None) -> np.ndarray:
        """Level-s steady-state signal, ``s`` in ``1 .. r+1`` (r+1 = input)."""
        if s == 1:
            return self.p_star.copy() if p is None else np.asarray(p, dtype=float)
        if self._polys is not None:
            return self._polys[s - 2](np.asarray(v, dtype=float))
        return self._generic_level(s)(np.asarray(v, dtype=float))

    def u_star(self, v: np.ndarray) -> np.ndarray:
        return self.x_star(self.model.r + 1, v)

    def derivative_stack(self, s: int, v: np.ndarray, depth: int) -> np.ndarray:
        """Exact time-derivative stack of the level-s signal (needs polys)."""
        if self._polys is None:
            raise NotImplementedError("model provides no polynomial steady-state form")
        return self._polys[s - 2].stack(self.exo.S, depth, np.asarray(v, dtype=float))

    def _generic_level(self, s: int) -> Callable:
        model, w, p_star = self.model, self.w, self.p_star

        if s == 2:
            def level2(v):
                return -model.f_levels[0](self.z_star(v), p_star[None, :], v, w)
            return level2

        prev = self._generic_level(s - 1)

        def level(v):
            v = np.asarray(v, dtype=float)
            sv = self.exo.S @ v
            # (d prev / dv) S v by central differences in each v coordinate
            total = np.zeros(p_star.shape[0])
            for j in range(v.shape[0]):
                dv = np.zeros(v.shape[0])
                dv[j] = V_FD_STEP
                total += (prev(v + dv) - prev(v - dv)) / (2.0 * V_FD_STEP) * sv[j]
            stars = np.vstack([p_star[None, :]]
                              + [self.x_star(k, v)[None, :] for k in range(2, s)])
            drift = model.f_levels[s - 2](self.z_star(v), stars, v, w)
            return total - drift

        return level


def steady_state_chain(model: PlantModel, p_star: np.ndarray, exo: Exosystem,
                       w: Uncertainty | np.ndarray) -> SteadyState:
    """Build the steady-state signal chain for a fixed equilibrium and draw."""
    return SteadyState(model, p_star, exo, w)


# ---------------------------------------------------------------------------
# Built-in example plant


def example_plant(g: np.ndarray, n_agents: int | None = None) -> PlantModel:
    """Relative-degree-2 benchmark plant with six uncertain parameters per agent.

    Per agent (parameters ``g1 .. g6``, effective value = nominal + the
    matching slice of ``w``):

    - zero dynamics   ``zdot  = g1*z + x1 + g2*v1``
    - first level     ``x1dot = g3*z*x1 + g4*v2 + x2``
    - second level    ``x2dot = g5*z^2*x1 + g6*x1*x2 + u``

    ``g1 < 0`` is required (stable zero dynamics).

    Parameters
    ----------
    g : (N, 6) array_like
        Nominal parameter rows per agent.
    """
    g = np.atleast_2d(np.array(g, dtype=float))
    if g.shape[1] != 6:
        raise InvalidParameter(f"expected 6 parameters per agent, got {g.shape[1]}")
    if n_agents is not None and g.shape[0] != n_agents:
        raise InvalidParameter(f"expected {n_agents} parameter rows, got {g.shape[0]}")
    if (g[:, 0] >= 0).any():
        raise InvalidParameter("g1 must be negative for every agent")
    n = g.shape[0]

    def geff(w):
        return g + np.asarray(w, dtype=float).reshape(n, 6)

    def f0(z, x1, v, w):
        ge = geff(w)
        return (ge[:, 0] * z[:, 0] + x1 + ge[:, 1] * v[0])[:, None]

    def f1(z, xs, v, w):
        ge = geff(w)
        return ge[:, 2] * z[:, 0] * xs[0] + ge[:, 3] * v[1]

    def f2(z, xs, v, w):
        ge = geff(w)
        return ge[:, 4] * z[:, 0] ** 2 * xs[0] + ge[:, 5] * xs[0] * xs[1]

    def bind(w):
        # fold the drawn parameters in once; the returned callables are the
        # hot-loop versions of f0/f1/f2
        g1, g2, g3, g4, g5, g6 = geff(w).T.copy()

        def f0b(z, x1, v):
            return (g1 * z[:, 0] + x1 + g2 * v[0])[:, None]

        def f1b(z, xs, v):
            return g3 * z[:, 0] * xs[0] + g4 * v[1]

        def f2b(z, xs, v):
            return g5 * z[:, 0] ** 2 * xs[0] + g6 * xs[0] * xs[1]

        return f0b, (f1b, f2b)

    def steady_zero(s, v, w):
        ge = geff(w)
        g1, g2 = ge[:, 0], ge[:, 1]
        den = g1 ** 2 + 1.0
        return (-g1 * g2 * v[0] / den - g2 * v[1] / den - np.asarray(s, dtype=float) / g1)[:, None]

    def steady_poly(p_star, w, S):
        ge = geff(w)
        g1, g2, g3, g4, g5, g6 = (ge[:, k] for k in range(6))
        den = g1 ** 2 + 1.0
        z_lin = np.stack([-g1 * g2 / den, -g2 / den], axis=1)
        z_poly = VPoly.affine(-p_star / g1, z_lin)
        e2 = np.zeros((n, 2))
        e2[:, 1] = 1.0
        x2_poly = z_poly.scaled(-g3 * p_star).plus(VPoly.affine(np.zeros(n), -g4[:, None] * e2))
        u_poly = (x2_poly.time_derivative(S)
                  .plus(VPoly.product_affine(z_poly, z_poly).scaled(-g5 * p_star))
                  .plus(x2_poly.scaled(-g6 * p_star)))
        return [x2_poly, u_poly]

    return PlantModel(
        n_agents=n, r=2, n_z=1, n_w=6 * n,
        f0=f0, f_levels=(f1, f2), steady_zero=steady_zero,
        im_polys=(np.array([0.0, -1.0, 0.0]), np.array([0.0, -4.0, 0.0, -5.0, 0.0])),
        steady_poly=steady_poly, bind=bind, params={"g": g},
    )


def check_origin_equilibrium(model: PlantModel, w_samples: Sequence[np.ndarray],
                             n_v: int = 2, tol: float = ORIGIN_EQ_TOL) -> float:
    """Largest drift magnitude at the origin over the given parameter draws.

    Raises
    ------
    InvalidParameter
        If the origin is not an equilibrium of the unforced plant for some
        draw (violates the model's admissibility requirement).
    """
    n = model.n_agents
    z0 = np.zeros((n, model.n_z))
    x0 = np.zeros((model.r, n))
    v0 = np.zeros(n_v)
    worst = 0.0
    for w in w_samples:
        worst = max(worst, float(np.abs(model.f0(z0, x0[0], v0, w)).max()))
        for s in range(1, model.r + 1):
            worst = max(worst, float(np.abs(model.f_levels[s - 1](z0, x0[:s], v0, w)).max()))
    if worst > tol:
        raise InvalidParameter(f"origin drift {worst:.3e} exceeds {tol:.1e}")
    return worst


def check_steady_zero_pde(model: PlantModel, exo: Exosystem, w, s_values: np.ndarray,
                          v0: np.ndarray, t_final: float = 5.0, h: float = 1e-3) -> float:
    """Residual of the zero-dynamics steady-state map along a disturbance run.

    With the output argument frozen, the time derivative of the map along
    the exosystem flow (central differences in t) must equal the
    zero-dynamics drift evaluated on the map. Returns the worst residual.
    """
    wv = w.w if isinstance(w, Uncertainty) else np.asarray(w, dtype=float)
    ts, vs = exo_trajectory(exo, v0, t_final, h)
    s_values = np.asarray(s_values, dtype=float)
    worst = 0.0
    for k in range(1, len(ts) - 1):
        num = (model.steady_zero(s_values, vs[k + 1], wv)
               - model.steady_zero(s_values, vs[k - 1], wv)) / (2.0 * h)
        ana = model.f0(model.steady_zero(s_values, vs[k], wv), s_values, vs[k], wv)
        worst = max(worst, float(np.abs(num - ana).max()))
    return worst


def check_steady_chain_consistency(steady: SteadyState, v0: np.ndarray,
                                   t_final: float = 5.0, h: float = 1e-3) -> float:
    """Time-consistency of the steady-state chain along a disturbance run.

    For each level ``s >= 2``, the finite-difference time derivative of the
    level-s signal must match ``x_star(s+1) + drift_s`` evaluated on the
    starred states. Returns the worst mismatch across levels and time.
    """
    model = steady.model
    ts, vs = exo_trajectory(steady.exo, v0, t_final, h)
    worst = 0.0
    p_star = steady.p_star
    for s in range(2, model.r + 1):
        sig = np.array([steady.x_star(s, v) for v in vs])
        nxt = np.array([steady.x_star(s + 1, v) for v in vs])
        for k in range(1, len(ts) - 1):
            z = steady.z_star(vs[k])
            stars = [p_star] + [steady.x_star(j, vs[k]) for j in range(2, s + 1)]
            drift = model.f_levels[s - 1](z, np.array(stars), vs[k], steady.w)
            num = (sig[k + 1] - sig[k - 1]) / (2.0 * h)
            worst = max(worst, float(np.abs(num - (nxt[k] + drift)).max()))
    return worst
