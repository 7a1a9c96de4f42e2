"""Concentration bounds and regret guarantees for empirical games."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .estimation import EmpiricalGame, PureProfile, true_payoff
from .game_tree import GameTree


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the sub-Gaussian uniform-approximation bound.

    ``n_terms`` is the number of (player, restricted profile) pairs the
    bound holds over simultaneously; ``c`` is the data-sharing multiplicity
    of the tree-exploiting model.
    """

    delta: float
    m: int
    variance: float
    n_terms: int
    c: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.c < 1:
            raise ValueError("c must be at least 1")
        if self.n_terms < 1:
            raise ValueError("n_terms must be at least 1")
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")


def variance_proxy(payoff_range: float, noise_variance: float) -> float:
    """Sub-Gaussian variance proxy of one noisy payoff sample.

    A payoff confined to an interval of width ``payoff_range`` contributes
    ``range**2 / 4``; independent Gaussian noise adds its variance.
    """
    if payoff_range < 0 or noise_variance < 0:
        raise ValueError("range and noise variance must be nonnegative")
    return payoff_range ** 2 / 4.0 + noise_variance


def hoeffding_eps(kind: str, inputs: BoundInputs) -> float:
    """Radius that every estimate stays within, with probability 1 - delta."""
    if kind not in ("nf", "te"):
        raise ValueError("kind must be 'nf' or 'te'")
    n = inputs.m if kind == "nf" else inputs.c * inputs.m
    return math.sqrt(2.0 * inputs.variance * math.log(2.0 * inputs.n_terms / inputs.delta) / n)


def _abs_errors(true_tree: GameTree, estimator, profiles) -> np.ndarray:
    rows = [np.abs(true_payoff(true_tree, p) - np.asarray(estimator(p), dtype=float)) for p in profiles]
    if not rows:
        raise ValueError("empty restricted profile set")
    return np.array(rows)


def linf_distance(true_tree: GameTree, estimator: Callable[[PureProfile], Sequence[float]],
                  profiles: Iterable[PureProfile]) -> float:
    """Largest absolute payoff error over players and restricted profiles."""
    return float(_abs_errors(true_tree, estimator, profiles).max())


def compute_c(game: EmpiricalGame, leaf: tuple) -> int:
    return game.compute_c(leaf)


def c_values(game: EmpiricalGame) -> list[int]:
    """The multiplicity ``c`` of every leaf in the tree-exploiting model."""
    return [game.compute_c(leaf) for leaf in game.leaves]


def c_histogram(values: Iterable[int]) -> dict[int, int]:
    return dict(sorted(Counter(int(v) for v in values).items()))


@dataclass(frozen=True)
class BoundReport:
    passed: bool
    bound: float
    regrets: tuple[float, ...]
    slack: tuple[float, ...]

    def __str__(self) -> str:
        regs = ", ".join(f"{r:.6g}" for r in self.regrets)
        return f"{'PASS' if self.passed else 'FAIL'}: regrets [{regs}] vs bound {self.bound:.6g}"


def regret_bound_check(eps: float, gamma: float, regrets: Sequence[float], tol: float = 1e-9) -> BoundReport:
    """Check every player's true regret against ``2 * eps + gamma``."""
    bound = 2.0 * eps + gamma
    regs = tuple(float(r) for r in regrets)
    slack = tuple(bound - r for r in regs)
    return BoundReport(all(r <= bound + tol for r in regs), bound, regs, slack)
