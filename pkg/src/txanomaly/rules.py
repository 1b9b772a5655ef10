"""Anomaly rules read off decision-tree paths, and Gini feature importances."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .learners import THRESHOLD, TreeModel

LE = "<="
GT = ">"
CLASS_NAMES = {1: "Anomalous", 0: "Normal"}


@dataclass(frozen=True)
class Predicate:
    feature: str
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in (LE, GT):
            raise ValueError(f"operator must be '<=' or '>', got {self.op!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("predicate threshold must be finite")

    def holds(self, value) -> bool | np.ndarray:
        return value <= self.threshold if self.op == LE else value > self.threshold

    def text(self, digits: int = 3) -> str:
        word = "less than or equal to" if self.op == LE else "greater than"
        return f"{self.feature} is {word} {self.threshold:.{digits}f}"


@dataclass
class AnomalyRule:
    predicates: list[Predicate]
    predicted_class: int
    support: int = 0
    correct: int = 0
    confidence: float = 0.0
    leaf: int = -1

    def text(self, digits: int = 3) -> str:
        if not self.predicates:
            return "Always"
        return "If (" + " and ".join(p.text(digits) for p in self.predicates) + ") then"

    def to_dict(self) -> dict:
        return {
            "predicates": [{"feature": p.feature, "op": p.op, "threshold": p.threshold} for p in self.predicates],
            "predicted_class": CLASS_NAMES[self.predicted_class].lower(),
            "support": self.support,
            "correct": self.correct,
            "confidence": self.confidence,
            "leaf": self.leaf,
        }


@dataclass
class ImportanceTable:
    items: list[tuple[str, float]] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return dict(self.items)

    def to_csv(self) -> str:
        lines = ["feature,importance"]
        lines += [f"{name},{v!r}" for name, v in self.items]
        return "\n".join(lines) + "\n"


def _resolve(names: Sequence[str], feature: str) -> int:
    try:
        return list(names).index(feature)
    except ValueError:
        raise KeyError(f"rule refers to missing feature {feature!r}") from None


def rule_mask(rule: AnomalyRule, X: np.ndarray, feature_names: Sequence[str]) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mask = np.ones(X.shape[0], dtype=bool)
    for p in rule.predicates:
        mask &= p.holds(X[:, _resolve(feature_names, p.feature)])
    return mask


def apply_rule(rule: AnomalyRule, x, feature_names: Sequence[str] | None = None) -> bool:
    """Whether one instance satisfies every predicate.

    ``x`` may be a mapping of feature name to value, or a vector aligned with
    ``feature_names``.
    """
    if isinstance(x, dict):
        for p in rule.predicates:
            if p.feature not in x:
                raise KeyError(f"rule refers to missing feature {p.feature!r}")
        return all(p.holds(x[p.feature]) for p in rule.predicates)
    if feature_names is None:
        raise ValueError("feature_names are required for vector input")
    return bool(rule_mask(rule, np.asarray(x, dtype=np.float64).reshape(1, -1), feature_names)[0])


def simplify(predicates: Sequence[Predicate]) -> list[Predicate]:
    """Tightest lower (>) and upper (<=) bound per feature.

    Features keep the order of their first appearance; a lower bound is
    listed before the upper bound of the same feature.
    """
    order: list[str] = []
    lower: dict[str, float] = {}
    upper: dict[str, float] = {}
    for p in predicates:
        if p.feature not in order:
            order.append(p.feature)
        if p.op == GT:
            lower[p.feature] = max(lower.get(p.feature, -math.inf), p.threshold)
        else:
            upper[p.feature] = min(upper.get(p.feature, math.inf), p.threshold)
    out = []
    for f in order:
        if f in lower:
            out.append(Predicate(f, GT, lower[f]))
        if f in upper:
            out.append(Predicate(f, LE, upper[f]))
    return out


def leaf_paths(tree: TreeModel) -> list[tuple[int, list[Predicate]]]:
    """Every root-to-leaf path as raw predicates, leaves in preorder."""
    out = []
    stack: list[tuple[int, list[Predicate]]] = [(0, [])]
    while stack:
        node, preds = stack.pop()
        f = int(tree.feature[node])
        if f < 0:
            out.append((node, preds))
            continue
        name = tree.feature_names[f]
        t = float(tree.threshold[node])
        stack.append((int(tree.right[node]), preds + [Predicate(name, GT, t)]))
        stack.append((int(tree.left[node]), preds + [Predicate(name, LE, t)]))
    return out


def leaf_class(tree: TreeModel, leaf: int) -> int:
    return int(tree.value[leaf] > THRESHOLD)


def score_rule(rule: AnomalyRule, reference: Dataset, target: int) -> AnomalyRule:
    mask = rule_mask(rule, reference.X, reference.feature_names)
    rule.support = int(mask.sum())
    rule.correct = int(np.sum(reference.y[mask] == target))
    rule.confidence = rule.correct / rule.support if rule.support else 0.0
    return rule


def extract_rules(
    tree: TreeModel,
    reference: Dataset,
    target: int = 1,
    min_support: int = 5,
    min_confidence: float = 0.9,
    simplify_paths: bool = True,
) -> list[AnomalyRule]:
    """Rules for the leaves predicting ``target``, scored on ``reference``.

    Counts come from replaying each rule over ``reference`` rather than from
    the tree's stored leaf counts. Results are ordered by confidence, then
    support, both descending.
    """
    if tuple(tree.feature_names) != tuple(reference.feature_names):
        raise ValueError(
            f"tree features {list(tree.feature_names)} do not match data features {list(reference.feature_names)}"
        )
    rules = []
    for leaf, preds in leaf_paths(tree):
        if leaf_class(tree, leaf) != target:
            continue
        rule = AnomalyRule(simplify(preds) if simplify_paths else preds, target, leaf=leaf)
        score_rule(rule, reference, target)
        if rule.support >= min_support and rule.confidence >= min_confidence:
            rules.append(rule)
    rules.sort(key=lambda r: (-r.confidence, -r.support))
    return rules


def rules_table(rules: Sequence[AnomalyRule], digits: int = 3) -> str:
    """Plain-text table: rule, class, total samples, correctly identified, confidence %."""
    if not rules:
        return "no qualifying rules\n"
    header = "No. | Rule | Class | Total Samples | Correctly Identified | Confidence (%)"
    lines = [header]
    for i, r in enumerate(rules, 1):
        lines.append(
            f"{i}. | {r.text(digits)} | {CLASS_NAMES[r.predicted_class]} | {r.support} | {r.correct} | "
            f"{round(100 * r.confidence)}"
        )
    return "\n".join(lines) + "\n"


def rules_json(rules: Sequence[AnomalyRule]) -> str:
    payload = {"rules": [r.to_dict() for r in rules]}
    if not rules:
        payload["note"] = "no qualifying rules"
    return json.dumps(payload, indent=2)


def gini_importances(tree: TreeModel) -> ImportanceTable:
    """Normalized total impurity decrease contributed by each feature.

    Every split adds ``(n/N) g - (n_L/N) g_L - (n_R/N) g_R`` to its feature,
    with ``n`` the (weighted) node size and ``g`` the node's Gini impurity.
    """
    if tree.class_counts is None:
        raise ValueError("importances need a classification tree")
    split_nodes = np.flatnonzero(tree.feature >= 0)
    if split_nodes.size == 0:
        return ImportanceTable([])
    w = tree.class_counts.sum(axis=1)
    N = w[0]
    acc = np.zeros(tree.n_features)
    for i in split_nodes:
        l, r = tree.left[i], tree.right[i]
        acc[tree.feature[i]] += (
            w[i] / N * tree.impurity[i] - w[l] / N * tree.impurity[l] - w[r] / N * tree.impurity[r]
        )
    acc = np.maximum(acc, 0.0)  # rounding can leave -1e-17 on zero-gain splits
    total = acc.sum()
    if total <= 0:
        return ImportanceTable([])
    acc = acc / total
    order = sorted(range(tree.n_features), key=lambda j: -acc[j])
    return ImportanceTable([(tree.feature_names[j], float(acc[j])) for j in order])
