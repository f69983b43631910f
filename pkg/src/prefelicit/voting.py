"""Randomized voting rules for aggregating key-group preferences.

A randomized rule turns scores into winning probabilities. Under the
Plackett-Luce model the expected plurality score of an alternative is its
top-choice probability and the expected Borda score is the sum of its
pairwise win probabilities, which gives closed forms for both rules; other
positional scoring vectors fall back to Monte Carlo over sampled rankings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import AgentProfile, AlternativeProfile, Parameter, _softmax

PLURALITY = "plurality"
BORDA = "borda"


@dataclass(frozen=True, eq=False)
class WinnerDistribution:
    """Probability of each alternative winning under a randomized rule."""

    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("winner distribution must be a 1-d vector")
        if np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError("winner probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "probabilities", np.clip(probs, 0.0, None))

    def __len__(self) -> int:
        return self.probabilities.size


@dataclass(frozen=True)
class Profile:
    """Full rankings of all alternatives, one per key agent."""

    rankings: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rankings = tuple(tuple(int(i) for i in r) for r in self.rankings)
        object.__setattr__(self, "rankings", rankings)
        if not rankings:
            raise ValueError("profile needs at least one ranking")
        m = len(rankings[0])
        for ranking in rankings:
            if sorted(ranking) != list(range(m)):
                raise ValueError(f"ranking {ranking} is not a permutation of 0..{m - 1}")

    @property
    def m(self) -> int:
        return len(self.rankings[0])


def profile_winner_dist(profile: Profile, rule: str) -> WinnerDistribution:
    """Score-proportional winner probabilities for a deterministic profile."""
    m = profile.m
    scores = np.zeros(m)
    for ranking in profile.rankings:
        if rule == PLURALITY:
            scores[ranking[0]] += 1.0
        elif rule == BORDA:
            for pos, alt in enumerate(ranking):
                scores[alt] += m - 1 - pos
        else:
            raise ValueError(f"unknown voting rule {rule!r}")
    return WinnerDistribution(scores / scores.sum())


def _utilities(
    param: Parameter,
    key_agents: Sequence[AgentProfile],
    alternatives: Sequence[AlternativeProfile],
) -> np.ndarray:
    """(n_key, m) utility table."""
    z = np.array([a.attributes for a in alternatives])
    x = np.array([a.attributes for a in key_agents])
    return x @ param.matrix.T @ z.T


def plurality_winner_dist(
    param: Parameter,
    key_agents: Sequence[AgentProfile],
    alternatives: Sequence[AlternativeProfile],
) -> WinnerDistribution:
    """Probabilistic plurality: average top-choice probability per key agent."""
    if not key_agents:
        raise ValueError("need at least one key agent")
    utils = _utilities(param, key_agents, alternatives)
    tops = np.array([_softmax(row) for row in utils])
    return WinnerDistribution(tops.mean(axis=0))


def borda_winner_dist(
    param: Parameter,
    key_agents: Sequence[AgentProfile],
    alternatives: Sequence[AlternativeProfile],
) -> WinnerDistribution:
    """Probabilistic Borda: summed pairwise win probabilities, normalized.

    Each agent's ordered pairwise probabilities sum to m(m-1)/2, so the
    normalizer is n_key * m * (m-1) / 2 exactly.
    """
    if not key_agents:
        raise ValueError("need at least one key agent")
    utils = _utilities(param, key_agents, alternatives)
    m = utils.shape[1]
    scores = np.zeros(m)
    for row in utils:
        diff = row[:, None] - row[None, :]
        wins = 1.0 / (1.0 + np.exp(-diff))
        np.fill_diagonal(wins, 0.0)
        scores += wins.sum(axis=1)
    return WinnerDistribution(scores / (len(key_agents) * m * (m - 1) / 2.0))


def expected_score_winner_dist(
    param: Parameter,
    key_agents: Sequence[AgentProfile],
    alternatives: Sequence[AlternativeProfile],
    score_vector: Sequence[float],
    mc_samples: int,
    rng: np.random.Generator,
) -> WinnerDistribution:
    """Monte Carlo winner distribution for an arbitrary positional scoring rule.

    Rankings are drawn with the Gumbel-max trick (argsort of utility plus
    Gumbel noise draws exactly from the stage-wise model).
    """
    scores = np.asarray(score_vector, dtype=float)
    m = len(alternatives)
    if scores.shape != (m,):
        raise ValueError("score vector length must match the number of alternatives")
    if np.any(scores < 0) or np.all(scores == scores[0]):
        raise ValueError("score vector must be nonnegative and not all equal")
    utils = _utilities(param, key_agents, alternatives)
    totals = np.zeros(m)
    for row in utils:
        noisy = row[None, :] + rng.gumbel(size=(mc_samples, m))
        order = np.argsort(-noisy, axis=1)
        positions = np.argsort(order, axis=1)
        totals += scores[positions].mean(axis=0)
    return WinnerDistribution(totals / totals.sum())


def total_variation(p: WinnerDistribution, q: WinnerDistribution) -> float:
    """Half the L1 distance between two winner distributions."""
    pv = p.probabilities if isinstance(p, WinnerDistribution) else np.asarray(p, float)
    qv = q.probabilities if isinstance(q, WinnerDistribution) else np.asarray(q, float)
    if pv.shape != qv.shape:
        raise ValueError(f"distribution lengths differ: {pv.shape} vs {qv.shape}")
    return 0.5 * float(np.abs(pv - qv).sum())
