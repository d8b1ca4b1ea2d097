"""Quadrature rules on a delay window [a, b].

Three rules are supported: left rectangles, composite trapezoid and
Clenshaw-Curtis. Nodes are always returned in ascending order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("rectangles", "trapezoid", "clenshaw_curtis")

_MIN_NODES = {"rectangles": 1, "trapezoid": 2, "clenshaw_curtis": 2}


def normalize_kind(kind: str) -> str:
    """Accept the CLI spelling ``clenshaw-curtis`` as well as ``clenshaw_curtis``."""
    k = kind.strip().lower().replace("-", "_")
    if k not in KINDS:
        raise ValueError(f"unknown quadrature kind {kind!r}; expected one of {KINDS}")
    return k


@dataclass(frozen=True)
class QuadratureRule:
    kind: str
    a: float
    b: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def K(self) -> int:
        return len(self.nodes)

    def integrate(self, samples):
        return integrate(self, samples)


def clenshaw_curtis_reference(K: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the K-point Clenshaw-Curtis rule on [-1, 1].

    Direct O(K^2) evaluation of the cosine-series weight formula, nodes sorted
    ascending.
    """
    N = K - 1
    theta = np.pi * np.arange(K) / N
    x = np.cos(theta)
    w = np.empty(K)
    kmax = N // 2
    for j in range(K):
        s = 0.0
        for k in range(1, kmax + 1):
            bk = 1.0 if 2 * k == N else 2.0
            s += bk / (4.0 * k * k - 1.0) * np.cos(2.0 * k * theta[j])
        cj = 1.0 if j in (0, N) else 2.0
        w[j] = cj / N * (1.0 - s)
    order = np.argsort(x)
    x = x[order]
    w = w[order]
    # cos(pi/2) is ~6e-17, not 0
    x[np.abs(x) < 1e-15] = 0.0
    x[0], x[-1] = -1.0, 1.0
    return x, w


def make_rule(kind: str, K: int, a: float, b: float) -> QuadratureRule:
    kind = normalize_kind(kind)
    K = int(K)
    a = float(a)
    b = float(b)
    if not a < b:
        raise ValueError(f"quadrature window needs a < b, got [{a}, {b}]")
    if K < _MIN_NODES[kind]:
        raise ValueError(f"{kind} needs K >= {_MIN_NODES[kind]}, got K={K}")

    if kind == "rectangles":
        h = (b - a) / K
        nodes = a + h * np.arange(K)
        weights = np.full(K, h)
    elif kind == "trapezoid":
        h = (b - a) / (K - 1)
        nodes = a + h * np.arange(K)
        nodes[-1] = b
        weights = np.full(K, h)
        weights[0] = weights[-1] = h / 2
    else:
        x, w = clenshaw_curtis_reference(K)
        half = (b - a) / 2
        nodes = a + half * (x + 1.0)
        nodes[0], nodes[-1] = a, b
        weights = half * w
    return QuadratureRule(kind, a, b, nodes, weights)


def integrate(rule: QuadratureRule, samples):
    """Weighted sum over the leading axis; matrices are reduced column-wise."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != rule.K:
        raise ValueError(f"expected {rule.K} samples along axis 0, got {samples.shape[0]}")
    return np.tensordot(rule.weights, samples, axes=(0, 0))
