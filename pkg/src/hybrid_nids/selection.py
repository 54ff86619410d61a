"""Threshold-driven search over prefixes of a gain ranking.

Prefix sizes N, N - step, ... (> 0) are evaluated with cross-validated
accuracy for every learner; the chosen feature set is the smallest prefix on
which all learners reach the accuracy threshold.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .boost import FeatureRanking
from .errors import ArgumentError
from .evaluation import FoldSpec, run_cv
from .ingest import Dataset
from .learners import LearnerSpec
from .sampler import SmoteConfig

logger = logging.getLogger(__name__)

__all__ = ["FeatureRanking", "Candidate", "SelectionResult", "prefix_sizes", "evaluate_prefix", "search_subsets"]


@dataclass(frozen=True)
class Candidate:
    k: int
    accuracy: dict[str, float]
    passed: bool


@dataclass(frozen=True)
class SelectionResult:
    candidates: tuple[Candidate, ...]  # ordered by k descending
    chosen: tuple[int, ...]
    threshold: float
    step: int
    any_passed: bool
    early_exit: bool = False

    @property
    def chosen_k(self) -> int:
        return len(self.chosen)

    def to_dict(self, ranking: FeatureRanking | None = None) -> dict:
        out = {
            "threshold": self.threshold,
            "step": self.step,
            "early_exit": self.early_exit,
            "any_passed": self.any_passed,
            "chosen_k": self.chosen_k,
            "chosen": list(self.chosen),
            "candidates": [{"k": c.k, "passed": c.passed, "accuracy": c.accuracy} for c in self.candidates],
        }
        if ranking is not None:
            out["ranking"] = list(ranking.order)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> SelectionResult:
        return cls(
            tuple(Candidate(c["k"], dict(c["accuracy"]), c["passed"]) for c in d["candidates"]),
            tuple(d["chosen"]), d["threshold"], d["step"], d["any_passed"], d.get("early_exit", False),
        )

    def write_csv(self, path: str | Path) -> None:
        """One row per (k, learner): the accuracy-vs-k curve."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "learner", "accuracy", "passed"])
            for c in self.candidates:
                for name, acc in c.accuracy.items():
                    w.writerow([c.k, name, repr(acc), int(c.passed)])


def prefix_sizes(n_features: int, step: int = 2) -> list[int]:
    return list(range(n_features, 0, -step))


def evaluate_prefix(
    data: Dataset,
    ranking: FeatureRanking,
    k: int,
    learners: Sequence[LearnerSpec],
    cv: FoldSpec = FoldSpec(),
    smote_cfg: SmoteConfig | None = None,
) -> dict[str, float]:
    """Mean cross-validated accuracy of each learner on the top-``k`` features."""
    if not 0 < k <= data.n_features:
        raise ArgumentError(f"k={k} must be in (0, {data.n_features}]")
    features = ranking.top(k)
    out = {}
    for spec in learners:
        result = run_cv(data, spec, features, cv, smote_cfg)
        out[spec.name] = result.mean_row().accuracy
    return out


def search_subsets(
    data: Dataset,
    ranking: FeatureRanking,
    learners: Sequence[LearnerSpec],
    threshold: float,
    step: int = 2,
    cv: FoldSpec = FoldSpec(),
    early_exit: bool = False,
    smote_cfg: SmoteConfig | None = None,
) -> SelectionResult:
    """Evaluate prefixes and keep the smallest one every learner passes.

    With ``early_exit`` prefixes are visited from the smallest upward and the
    sweep stops at the first pass, which yields the same chosen set.
    """
    if not learners:
        raise ArgumentError("at least one learner is required")
    if not 0 <= threshold <= 1:
        raise ArgumentError("threshold must be in [0, 1]")
    if step < 1:
        raise ArgumentError("step must be >= 1")
    sizes = prefix_sizes(len(ranking.order), step)
    visit = list(reversed(sizes)) if early_exit else sizes
    results: dict[int, Candidate] = {}
    for k in visit:
        acc = evaluate_prefix(data, ranking, k, learners, cv, smote_cfg)
        passed = all(a >= threshold for a in acc.values())
        results[k] = Candidate(k, acc, passed)
        logger.info("prefix k=%d: %s%s", k, ", ".join(f"{n}={a:.5f}" for n, a in acc.items()),
                    " (pass)" if passed else "")
        if early_exit and passed:
            break
    passing = [k for k, c in results.items() if c.passed]
    if passing:
        chosen = tuple(ranking.top(min(passing)))
    else:
        chosen = tuple(ranking.order)
    candidates = tuple(results[k] for k in sorted(results, reverse=True))
    return SelectionResult(candidates, chosen, threshold, step, bool(passing), early_exit)
