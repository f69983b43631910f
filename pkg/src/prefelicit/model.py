"""Plackett-Luce model with features.

Utilities are bilinear: an alternative with attribute vector z and an agent
with attribute vector x give utility z' B x, where B is the coefficient
matrix being learned. Rankings are generated stage by stage, each stage a
softmax choice among the alternatives not yet picked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import permutations
from typing import Iterator, Sequence

import numpy as np

from .errors import ScenarioError, TooManyResponsesError

KEY = "key"
REGULAR = "regular"


@dataclass(frozen=True, eq=False)
class AlternativeProfile:
    """An alternative described by a real attribute vector."""

    id: int
    attributes: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.attributes, dtype=float)
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ScenarioError(f"alternative {self.id}: attributes must be a finite 1-d vector")
        object.__setattr__(self, "attributes", arr)


@dataclass(frozen=True, eq=False)
class AgentProfile:
    """An agent described by a real attribute vector and a group tag."""

    id: int
    attributes: np.ndarray
    group: str

    def __post_init__(self):
        arr = np.asarray(self.attributes, dtype=float)
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ScenarioError(f"agent {self.id}: attributes must be a finite 1-d vector")
        if self.group not in (KEY, REGULAR):
            raise ScenarioError(f"agent {self.id}: group must be '{KEY}' or '{REGULAR}'")
        object.__setattr__(self, "attributes", arr)


@dataclass(frozen=True, eq=False)
class Parameter:
    """Coefficient matrix B of shape (n_alt_attrs, n_agent_attrs).

    The vector view flattens row-major, so entry (kappa, iota) of the matrix
    lands at index kappa * n_agent_attrs + iota. Covariance lookups elsewhere
    rely on this map, so it is fixed.
    """

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2 or not np.all(np.isfinite(mat)):
            raise ScenarioError("parameter matrix must be a finite 2-d array")
        object.__setattr__(self, "matrix", mat)

    @property
    def vector(self) -> np.ndarray:
        return self.matrix.reshape(-1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @classmethod
    def from_vector(cls, vector, n_alt_attrs: int, n_agent_attrs: int) -> "Parameter":
        vec = np.asarray(vector, dtype=float)
        if vec.size != n_alt_attrs * n_agent_attrs:
            raise ScenarioError(
                f"vector of size {vec.size} cannot fill a "
                f"{n_alt_attrs}x{n_agent_attrs} parameter"
            )
        return cls(vec.reshape(n_alt_attrs, n_agent_attrs))

    @classmethod
    def zeros(cls, n_alt_attrs: int, n_agent_attrs: int) -> "Parameter":
        return cls(np.zeros((n_alt_attrs, n_agent_attrs)))


@dataclass(frozen=True)
class Question:
    """Ask an agent to rank their top `depth` among the `subset` alternatives."""

    subset: tuple[int, ...]
    depth: int

    def __post_init__(self):
        subset = tuple(int(i) for i in self.subset)
        object.__setattr__(self, "subset", subset)
        if len(subset) < 2:
            raise ValueError("question needs at least two alternatives")
        if len(set(subset)) != len(subset):
            raise ValueError(f"duplicate alternative ids in subset {subset}")
        if not 1 <= self.depth <= len(subset) - 1:
            raise ValueError(f"depth {self.depth} invalid for subset of size {len(subset)}")

    @property
    def size(self) -> int:
        return len(self.subset)


@dataclass(frozen=True)
class Response:
    """One agent's ordered top-k answer to a question."""

    agent: int
    question: Question
    ranking: tuple[int, ...]

    def __post_init__(self):
        ranking = tuple(int(i) for i in self.ranking)
        object.__setattr__(self, "ranking", ranking)
        if len(ranking) != self.question.depth:
            raise ValueError(
                f"ranking length {len(ranking)} != question depth {self.question.depth}"
            )
        if len(set(ranking)) != len(ranking):
            raise ValueError(f"duplicate ids in ranking {ranking}")
        subset = set(self.question.subset)
        for alt in ranking:
            if alt not in subset:
                raise ValueError(f"ranked id {alt} not offered by the question")


class Dataset:
    """Append-ordered collection of responses."""

    def __init__(self, entries: Sequence[Response] = ()):
        self._entries: list[Response] = list(entries)

    def append(self, response: Response) -> None:
        self._entries.append(response)

    @property
    def entries(self) -> tuple[Response, ...]:
        return tuple(self._entries)

    def __iter__(self) -> Iterator[Response]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, idx):
        return self._entries[idx]

    def copy(self) -> "Dataset":
        return Dataset(self._entries)


@dataclass(frozen=True, eq=False)
class Scenario:
    """All alternatives and agents of one elicitation problem.

    Agents are ordered key group first; ids are their positions.
    """

    alternatives: tuple[AlternativeProfile, ...]
    agents: tuple[AgentProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.alternatives) < 2:
            raise ScenarioError("need at least two alternatives")
        if not self.agents:
            raise ScenarioError("need at least one agent")
        for i, alt in enumerate(self.alternatives):
            if alt.id != i:
                raise ScenarioError(f"alternative ids must be 0..m-1 in order, got {alt.id} at {i}")
            if alt.attributes.size != self.alternatives[0].attributes.size:
                raise ScenarioError("all alternatives must share the same attribute count")
        for j, agent in enumerate(self.agents):
            if agent.id != j:
                raise ScenarioError(f"agent ids must be 0..n-1 in order, got {agent.id} at {j}")
            if agent.attributes.size != self.agents[0].attributes.size:
                raise ScenarioError("all agents must share the same attribute count")
        groups = [a.group for a in self.agents]
        n_key = sum(1 for g in groups if g == KEY)
        if groups != [KEY] * n_key + [REGULAR] * (len(groups) - n_key):
            raise ScenarioError("agents must be ordered key group first, then regular group")

    @property
    def m(self) -> int:
        return len(self.alternatives)

    @property
    def n_alt_attrs(self) -> int:
        return self.alternatives[0].attributes.size

    @property
    def n_agent_attrs(self) -> int:
        return self.agents[0].attributes.size

    @property
    def n_key(self) -> int:
        return sum(1 for a in self.agents if a.group == KEY)

    @property
    def n_regular(self) -> int:
        return len(self.agents) - self.n_key

    @property
    def key_agents(self) -> tuple[AgentProfile, ...]:
        return self.agents[: self.n_key]

    @property
    def regular_agents(self) -> tuple[AgentProfile, ...]:
        return self.agents[self.n_key:]

    @cached_property
    def alt_matrix(self) -> np.ndarray:
        """(m, n_alt_attrs) attribute rows."""
        return np.array([a.attributes for a in self.alternatives])

    @cached_property
    def agent_matrix(self) -> np.ndarray:
        """(n_agents, n_agent_attrs) attribute rows."""
        return np.array([a.attributes for a in self.agents])

    @cached_property
    def features(self) -> np.ndarray:
        """(n_agents, m, K*L) coefficient rows of the utility in the flat parameter.

        features[j, i] is kron(z_i, x_j): the utility of alternative i to
        agent j equals features[j, i] @ beta.
        """
        z = self.alt_matrix  # (m, K)
        x = self.agent_matrix  # (n, L)
        return (z[None, :, :, None] * x[:, None, None, :]).reshape(
            len(self.agents), self.m, -1
        )

    def utilities(self, param: Parameter) -> np.ndarray:
        """(m, n_agents) utility table for all alternative/agent pairs."""
        self._check_param(param)
        return self.alt_matrix @ param.matrix @ self.agent_matrix.T

    def _check_param(self, param: Parameter) -> None:
        if param.shape != (self.n_alt_attrs, self.n_agent_attrs):
            raise ScenarioError(
                f"parameter shape {param.shape} does not match scenario "
                f"({self.n_alt_attrs}, {self.n_agent_attrs})"
            )


# ---------------------------------------------------------------------------
# probability kernels


def _softmax(u: np.ndarray) -> np.ndarray:
    e = np.exp(u - u.max())
    return e / e.sum()


def _suffix_logsumexp(u: np.ndarray) -> np.ndarray:
    """out[p] = log sum_{i >= p} exp(u[i]), computed with running max shifts."""
    return np.logaddexp.accumulate(u[::-1])[::-1]


def _stage_log_prob(u: np.ndarray, depth: int) -> float:
    """Log probability of picking items 0..depth-1 of u in order."""
    return float(u[:depth].sum() - _suffix_logsumexp(u)[:depth].sum())


def _stage_log_prob_batch(u_all: np.ndarray, depth: int) -> np.ndarray:
    """_stage_log_prob over a (batch, l) array of ordered utilities."""
    suffix = np.logaddexp.accumulate(u_all[:, ::-1], axis=1)[:, ::-1]
    return u_all[:, :depth].sum(axis=1) - suffix[:, :depth].sum(axis=1)


def _stage_grad(u: np.ndarray, coeffs: np.ndarray, depth: int) -> np.ndarray:
    g = coeffs[:depth].sum(axis=0)
    for p in range(depth):
        g -= _softmax(u[p:]) @ coeffs[p:]
    return g


def _stage_hess(u: np.ndarray, coeffs: np.ndarray, depth: int) -> np.ndarray:
    d = coeffs.shape[1]
    h = np.zeros((d, d))
    for p in range(depth):
        w = _softmax(u[p:])
        weighted = coeffs[p:] * w[:, None]
        s = weighted.sum(axis=0)
        h -= coeffs[p:].T @ weighted - np.outer(s, s)
    return 0.5 * (h + h.T)


def _stage_hess_batch(u_all: np.ndarray, coeffs_all: np.ndarray, depth: int) -> np.ndarray:
    """_stage_hess over a batch of canonical orderings of one question.

    u_all is (batch, l), coeffs_all is (batch, l, dim); returns
    (batch, dim, dim).
    """
    batch, _, dim = coeffs_all.shape
    h = np.zeros((batch, dim, dim))
    for p in range(depth):
        tail_u = u_all[:, p:]
        e = np.exp(tail_u - tail_u.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        tail_c = coeffs_all[:, p:, :]
        weighted = tail_c * w[:, :, None]
        s = weighted.sum(axis=1)
        h -= np.einsum("bld,ble->bde", tail_c, weighted) - s[:, :, None] * s[:, None, :]
    return 0.5 * (h + np.swapaxes(h, 1, 2))


def _canonical_order(response: Response) -> list[int]:
    """Subset reordered with the ranked prefix first, remainder in subset order."""
    picked = set(response.ranking)
    return list(response.ranking) + [i for i in response.question.subset if i not in picked]


def _response_arrays(
    scenario: Scenario, response: Response, param: Parameter
) -> tuple[np.ndarray, np.ndarray]:
    """(utilities, coefficient rows) in canonical order for one response."""
    scenario._check_param(param)
    order = _canonical_order(response)
    coeffs = scenario.features[response.agent][order]
    return coeffs @ param.vector, coeffs


# ---------------------------------------------------------------------------
# public operations


def utility(agent: AgentProfile, alt: AlternativeProfile, param: Parameter) -> float:
    """Bilinear utility z' B x of an alternative to an agent."""
    k, l = param.shape
    if alt.attributes.size != k or agent.attributes.size != l:
        raise ScenarioError(
            f"attribute sizes ({alt.attributes.size}, {agent.attributes.size}) "
            f"do not match parameter shape {param.shape}"
        )
    return float(alt.attributes @ param.matrix @ agent.attributes)


def top_prob(
    agent: AgentProfile,
    alts: Sequence[AlternativeProfile],
    target: int,
    param: Parameter,
) -> float:
    """Probability that `target` is ranked first among `alts` by the agent."""
    if len(alts) < 2:
        raise ValueError("need at least two alternatives")
    ids = [a.id for a in alts]
    if target not in ids:
        raise ValueError(f"target {target} not among alternatives {ids}")
    u = np.array([utility(agent, a, param) for a in alts])
    return float(_softmax(u)[ids.index(target)])


def pairwise_prob(
    agent: AgentProfile,
    alt_a: AlternativeProfile,
    alt_b: AlternativeProfile,
    param: Parameter,
) -> float:
    """Probability that the agent prefers alt_a over alt_b."""
    if alt_a.id == alt_b.id:
        raise ValueError("pairwise probability needs two distinct alternatives")
    diff = utility(agent, alt_a, param) - utility(agent, alt_b, param)
    # logistic in the utility difference
    if diff >= 0:
        return float(1.0 / (1.0 + math.exp(-diff)))
    e = math.exp(diff)
    return float(e / (1.0 + e))


def response_log_prob(scenario: Scenario, response: Response, param: Parameter) -> float:
    """Log probability of an observed top-k answer under the stage-wise model."""
    u, _ = _response_arrays(scenario, response, param)
    return _stage_log_prob(u, response.question.depth)


def response_grad(scenario: Scenario, response: Response, param: Parameter) -> np.ndarray:
    """Gradient of response_log_prob in the flat parameter vector."""
    u, coeffs = _response_arrays(scenario, response, param)
    return _stage_grad(u, coeffs, response.question.depth)


def response_hessian(scenario: Scenario, response: Response, param: Parameter) -> np.ndarray:
    """Hessian of response_log_prob in the flat parameter vector.

    Negative semidefinite: each stage contributes the negated softmax
    covariance pushed through the constant coefficient rows.
    """
    u, coeffs = _response_arrays(scenario, response, param)
    return _stage_hess(u, coeffs, response.question.depth)


def sample_response(
    scenario: Scenario,
    agent: int,
    question: Question,
    param: Parameter,
    rng: np.random.Generator,
) -> Response:
    """Draw a top-k answer stage by stage, proportional to exp(utility)."""
    coeffs = scenario.features[agent][list(question.subset)]
    u = coeffs @ param.vector
    remaining = list(range(question.size))
    picked: list[int] = []
    for _ in range(question.depth):
        w = _softmax(u[remaining])
        cum = np.cumsum(w)
        idx = int(np.searchsorted(cum, rng.random(), side="right"))
        idx = min(idx, len(remaining) - 1)
        picked.append(question.subset[remaining[idx]])
        del remaining[idx]
    return Response(agent=agent, question=question, ranking=tuple(picked))


def enumerate_responses(
    question: Question, agent: int, cap: int = 24
) -> list[Response]:
    """All ordered top-k answers to a question, as responses by `agent`.

    Raises TooManyResponsesError when the count l!/(l-k)! exceeds `cap`, in
    which case callers fall back to Monte Carlo.
    """
    count = math.perm(question.size, question.depth)
    if count > cap:
        raise TooManyResponsesError(count, cap)
    return [
        Response(agent=agent, question=question, ranking=prefix)
        for prefix in permutations(question.subset, question.depth)
    ]
