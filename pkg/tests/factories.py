"""Factories referenced by the custom-kind scenario configs in the tests."""

from __future__ import annotations

import numpy as np

from nesim.game import CustomGame
from nesim.plant import PlantModel


def build_game(h1, coupling):
    """Quadratic costs exposed only through callables (forces the FD paths)."""
    h1 = np.asarray(h1, dtype=float)
    n = h1.shape[0]

    def make(i):
        def cost(yi, profile):
            y = profile.copy()
            y[i] = yi
            return (yi - h1[i]) ** 2 + coupling * yi * y.sum()
        return cost

    return CustomGame(costs=[make(i) for i in range(n)],
                      sample_box=np.tile([-6.0, 6.0], (n, 1)))


def build_plant(n_agents, leak=1.0, feedthrough=1.0):
    """Relative-degree-1 agents with decoupled stable zero dynamics.

    The chain drift is a disturbance feedthrough scaled per agent by the
    uncertainty: ``x1dot = feedthrough * (1 + w_i) * v1 + u``. The signal the
    compensator must reproduce is a plain sinusoid, so the recurrence is
    second order with roots at +-1j.
    """

    def f0(z, x1, v, w):
        return -leak * z

    def f1(z, xs, v, w):
        return feedthrough * (1.0 + np.asarray(w)) * v[0]

    def steady_zero(s, v, w):
        return np.zeros((n_agents, 1))

    return PlantModel(n_agents=n_agents, r=1, n_z=1, n_w=n_agents,
                      f0=f0, f_levels=(f1,), steady_zero=steady_zero,
                      im_polys=([-1.0, 0.0],))
