"""Stacked generalization and voting over tree-based members."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from .dataset import Dataset
from .learners import LogisticModel, LogisticParams, fit_learner, fit_logistic, hard_labels
from .learners.common import THRESHOLD, check_features
from .seeding import derive_seed

FitFn = Callable[[np.ndarray, np.ndarray, int], Any]


@dataclass
class MemberSpec:
    """One ensemble member: a registry learner kind, or a custom ``fit(X, y, seed)``."""

    name: str
    kind: Union[str, FitFn]
    params: Mapping[str, Any] = field(default_factory=dict)

    def fit(self, X, y, seed: int, feature_names=None):
        if callable(self.kind):
            return self.kind(X, y, seed)
        return fit_learner(self.kind, X, y, dict(self.params), seed=seed, feature_names=feature_names)


def member_specs(spec) -> list[MemberSpec]:
    """Accept kind names, ``(name, kind[, params])`` tuples, dicts or MemberSpecs."""
    out = []
    for s in spec:
        if isinstance(s, MemberSpec):
            out.append(s)
        elif isinstance(s, str):
            out.append(MemberSpec(s, s))
        elif isinstance(s, Mapping):
            out.append(MemberSpec(s.get("name", s["kind"]), s["kind"], s.get("params", {})))
        else:
            out.append(MemberSpec(*s))
    return out


STACK_BASES = ("rf", "dt", "gb", "adb")
VOTE_MEMBERS = ("dt", "xgb", "gb", "rf", "adb")


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin."""
    if folds < 2:
        raise ValueError("need at least two folds")
    y = np.asarray(y)
    assignment = np.empty(y.size, dtype=np.intp)
    rng = np.random.default_rng(seed)
    for label in (0, 1):
        members = np.flatnonzero(y == label)
        if members.size < folds:
            raise ValueError(
                f"class {label} has {members.size} rows; cannot place one in each of {folds} folds"
            )
        perm = rng.permutation(members)
        assignment[perm] = np.arange(perm.size) % folds
    return assignment


@dataclass(eq=False)
class StackedModel:
    base_names: list[str]
    base_models: list[Any]
    meta: LogisticModel
    fold_count: int
    fold_assignment: np.ndarray
    meta_features: np.ndarray
    feature_names: tuple[str, ...]
    seed: int
    fold_models: list[list[Any]] | None = field(default=None, repr=False)

    def base_probabilities(self, X) -> np.ndarray:
        X = check_features(X, len(self.feature_names))
        return np.column_stack([m.predict_proba(X) for m in self.base_models])

    def predict_proba(self, X) -> np.ndarray:
        return self.meta.predict_proba(self.base_probabilities(X))


def oof_meta_features(
    train: Dataset,
    bases: Sequence[MemberSpec],
    assignment: np.ndarray,
    seed: int,
    keep_models: bool = False,
):
    """Out-of-fold probability matrix ``M`` (rows x bases).

    ``M[i, j]`` comes from a copy of base ``j`` trained on every fold except
    the one holding row ``i``.
    """
    folds = int(assignment.max()) + 1
    M = np.empty((len(train), len(bases)))
    kept = []
    for f in range(folds):
        held = assignment == f
        fit_idx = np.flatnonzero(~held)
        score_idx = np.flatnonzero(held)
        row = []
        for j, b in enumerate(bases):
            model = b.fit(train.X[fit_idx], train.y[fit_idx], derive_seed(seed, "fold", f, b.name),
                          feature_names=train.feature_names)
            M[score_idx, j] = model.predict_proba(train.X[score_idx])
            row.append(model)
        if keep_models:
            kept.append(row)
    return (M, kept) if keep_models else M


def fit_stacked(
    train: Dataset,
    base_cfgs=STACK_BASES,
    folds: int = 10,
    seed: int = 0,
    meta_params: LogisticParams | None = None,
    keep_fold_models: bool = True,
) -> StackedModel:
    """Out-of-fold stacking with a logistic meta-classifier.

    Only base-model probabilities feed the meta learner. Bases are refit on
    the whole training set for inference.
    """
    bases = member_specs(base_cfgs)
    assignment = stratified_folds(train.y, folds, derive_seed(seed, "folds"))
    M, fold_models = oof_meta_features(train, bases, assignment, seed, keep_models=True)
    meta = fit_logistic(M, train.y, meta_params, feature_names=tuple(b.name for b in bases))
    full = [b.fit(train.X, train.y, derive_seed(seed, "full", b.name), feature_names=train.feature_names)
            for b in bases]
    return StackedModel(
        [b.name for b in bases], full, meta, folds, assignment, M,
        train.feature_names, seed, fold_models if keep_fold_models else None,
    )


def predict_stacked(m: StackedModel, X) -> np.ndarray:
    return m.predict_proba(X)


@dataclass(eq=False)
class VotingModel:
    names: list[str]
    members: list[Any]
    mode: str  # "hard" | "soft"
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("voting needs at least two members")
        if self.mode not in ("hard", "soft"):
            raise ValueError("mode must be 'hard' or 'soft'")

    def member_probabilities(self, X) -> np.ndarray:
        X = check_features(X, len(self.feature_names))
        return np.column_stack([m.predict_proba(X) for m in self.members])

    def predict_proba(self, X) -> np.ndarray:
        """Mean member probability (the score used for ROC in both modes)."""
        return self.member_probabilities(X).mean(axis=1)

    def predict(self, X) -> np.ndarray:
        return combine_votes(self.member_probabilities(X), self.mode)[0]


def combine_votes(P: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Labels and mean probabilities from a rows x members probability matrix.

    Hard mode takes the majority of member labels; a tied vote goes to the
    mean probability and, failing that, to label 0.
    """
    P = np.atleast_2d(P)
    mean = P.mean(axis=1)
    soft = (mean > THRESHOLD).astype(np.int8)
    if mode == "soft":
        return soft, mean
    votes = hard_labels(P).sum(axis=1).astype(np.int64)
    n = P.shape[1]
    labels = np.where(2 * votes > n, 1, np.where(2 * votes < n, 0, soft)).astype(np.int8)
    return labels, mean


def fit_voting(train: Dataset, member_cfgs=VOTE_MEMBERS, mode: str = "soft", seed: int = 0) -> VotingModel:
    specs = member_specs(member_cfgs)
    models = [s.fit(train.X, train.y, derive_seed(seed, "member", s.name), feature_names=train.feature_names)
              for s in specs]
    return VotingModel([s.name for s in specs], models, mode, train.feature_names)


def predict_voting(m: VotingModel, X) -> tuple[np.ndarray, np.ndarray]:
    return combine_votes(m.member_probabilities(X), m.mode)
