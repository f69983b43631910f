"""Shared builders for randomized test scenarios."""

from __future__ import annotations

import numpy as np
import pytest

from prefelicit.model import KEY, REGULAR, AgentProfile, AlternativeProfile, Parameter, Scenario


def make_scenario(rng, m=4, n_alt_attrs=3, n_agent_attrs=3, n_key=1, n_regular=2) -> Scenario:
    alts = tuple(
        AlternativeProfile(id=i, attributes=rng.standard_normal(n_alt_attrs)) for i in range(m)
    )
    agents = tuple(
        AgentProfile(
            id=j,
            attributes=rng.standard_normal(n_agent_attrs),
            group=KEY if j < n_key else REGULAR,
        )
        for j in range(n_key + n_regular)
    )
    return Scenario(alternatives=alts, agents=agents)


def make_param(rng, n_alt_attrs=3, n_agent_attrs=3, scale=1.0) -> Parameter:
    return Parameter(scale * rng.standard_normal((n_alt_attrs, n_agent_attrs)))


def fd_gradient(func, x, step=1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = step
        out[i] = (func(x + bump) - func(x - bump)) / (2 * step)
    return out


def fd_jacobian(func, x, step=1e-5) -> np.ndarray:
    """Central finite differences of a vector function of a vector."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = step
        cols.append((func(x + bump) - func(x - bump)) / (2 * step))
    return np.stack(cols, axis=1)


def rel_err(got, expected) -> float:
    got = np.asarray(got, dtype=float)
    expected = np.asarray(expected, dtype=float)
    scale = max(float(np.max(np.abs(expected))), 1e-8)
    return float(np.max(np.abs(got - expected))) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)
