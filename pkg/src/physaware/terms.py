"""Polynomial term libraries for sparse ODE models."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .core import InputError


def _monomials(state_dim: int, max_degree: int) -> tuple[tuple[int, ...], ...]:
    # constant first, then degree by degree; inside a degree, lexicographic on
    # the variable multiset (x0x0 < x0x1 < x1x1 ...)
    out = []
    for deg in range(max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(state_dim), deg):
            e = [0] * state_dim
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return tuple(out)


@dataclass(frozen=True)
class TermLibrary:
    state_dim: int
    max_degree: int = 2
    terms: tuple[tuple[int, ...], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.max_degree < 0:
            raise InputError("state_dim >= 1 and max_degree >= 0 required")
        if not self.terms:
            object.__setattr__(self, "terms", _monomials(self.state_dim, self.max_degree))

    def __len__(self) -> int:
        return len(self.terms)

    def names(self, variables: list[str] | None = None) -> list[str]:
        variables = variables or [f"x{i + 1}" for i in range(self.state_dim)]
        out = []
        for e in self.terms:
            parts = []
            for v, k in zip(variables, e):
                parts.extend([v] * k)
            out.append("*".join(parts) if parts else "1")
        return out

    def index(self, exponents) -> int:
        return self.terms.index(tuple(exponents))


def n_terms(state_dim: int, max_degree: int) -> int:
    return comb(state_dim + max_degree, max_degree)


def build_library(traj, lib: TermLibrary) -> np.ndarray:
    """Evaluate every library monomial on every row of ``traj`` (T x d)."""
    X = np.atleast_2d(np.asarray(traj, dtype=float))
    if X.shape[1] != lib.state_dim:
        raise InputError(f"trajectory has {X.shape[1]} columns, library expects {lib.state_dim}")
    E = np.asarray(lib.terms, dtype=int)
    Theta = np.ones((X.shape[0], len(lib.terms)))
    for j, e in enumerate(E):
        for i, k in enumerate(e):
            if k:
                Theta[:, j] *= X[:, i] ** k
    return Theta
