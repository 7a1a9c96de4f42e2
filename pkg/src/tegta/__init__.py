"""Tree-exploiting empirical game-theoretic analysis.

Estimate payoffs of extensive-form games from simulation traces, either
per strategy profile (normal-form) or by pooling data across profiles
through a tree-shaped empirical model, and drive policy-space response
oracles with either estimator.
"""

from .game_tree import (
    GameTree,
    InvalidGameError,
    Node,
    Infoset,
    StrategyProfile,
    best_response,
    expected_payoff,
    is_eps_nash,
    load_game,
    reach_probability,
    regret,
    save_game,
)

__version__ = "0.1.0"

__all__ = [
    "GameTree",
    "InvalidGameError",
    "Node",
    "Infoset",
    "StrategyProfile",
    "best_response",
    "expected_payoff",
    "is_eps_nash",
    "load_game",
    "reach_probability",
    "regret",
    "save_game",
]
