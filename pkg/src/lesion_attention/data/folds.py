"""Stratified k-fold assignment."""

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..rng import FOLDS, stream

log = logging.getLogger(__name__)


@dataclass
class FoldSplit:
    n_folds: int
    assignment: dict  # sample id -> fold index
    folds_without_positives: tuple = ()

    def fold_ids(self, fold):
        return [i for i, f in self.assignment.items() if f == fold]

    def indices(self, fold, ids):
        """Positions in ``ids`` that belong to ``fold``."""
        return [k for k, i in enumerate(ids) if self.assignment[i] == fold]


def stratified_folds(labels, n_folds, seed, ids=None):
    """Shuffle each class with ``seed`` and deal it round-robin over the folds.

    Dealing continues where the previous class stopped, so fold sizes also
    differ by at most one. Folds that end up without a positive sample are
    reported in ``folds_without_positives``.
    """
    labels = [int(v) for v in labels]
    if n_folds < 2:
        raise ConfigError(f"n_folds must be >= 2, got {n_folds}")
    if len(labels) < n_folds:
        raise ConfigError(f"{len(labels)} samples cannot fill {n_folds} folds")
    ids = list(range(len(labels))) if ids is None else list(ids)
    if len(ids) != len(labels) or len(set(ids)) != len(ids):
        raise ConfigError("ids must be unique and match labels one-to-one")

    rng = stream(seed, FOLDS)
    assignment = {}
    cursor = 0
    for cls in (1, 0):
        members = [i for i, y in zip(ids, labels) if y == cls]
        order = rng.permutation(len(members))
        for k in order:
            assignment[members[k]] = cursor % n_folds
            cursor += 1
    # preserve the caller's id order in the mapping
    assignment = {i: assignment[i] for i in ids}
    pos_count = np.zeros(n_folds, dtype=int)
    for i, y in zip(ids, labels):
        pos_count[assignment[i]] += y
    empty = tuple(int(f) for f in np.flatnonzero(pos_count == 0))
    if empty:
        log.warning("folds %s contain no positive samples; AUC is undefined there", list(empty))
    return FoldSplit(n_folds, assignment, empty)
