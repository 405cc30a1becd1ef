"""Synthetic leakage benchmark: baseline vs attention-loss training.

Training data carries an artifact strongly correlated with the label; test
data carries the same artifacts independently of the label. A model that
learned the shortcut loses AUC on the test set and puts its CAM mass on the
artifact rather than the lesion.
"""

import logging
import time
from dataclasses import dataclass, replace

from .data.synthetic import GenConfig, generate_dataset
from .evaluation import evaluate
from .rng import derive_seed
from .training import TrainConfig, inner_split, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LeakageConfig:
    n_train: int = 2000
    n_test: int = 500
    image_side: int = 64
    melanoma_fraction: float = 0.3
    train_correlation: float = 0.9
    test_correlation: float = 0.0
    lam: float = 0.66
    train: TrainConfig = TrainConfig(precision=32, learning_rate=0.01)


def run_seed(seed, config=LeakageConfig()):
    """Train baseline (lambda = 0) and attention models on one seed; return both test reports."""
    gen = dict(image_side=config.image_side, melanoma_fraction=config.melanoma_fraction)
    train_set = generate_dataset(GenConfig(n_samples=config.n_train, artifact_correlation=config.train_correlation,
                                           seed=derive_seed(seed, 0), **gen))
    test_set = generate_dataset(GenConfig(n_samples=config.n_test, artifact_correlation=config.test_correlation,
                                          seed=derive_seed(seed, 1), **gen))
    fit, val = inner_split(train_set, seed)
    out = {}
    for name, lam in (("baseline", 0.0), ("attention", config.lam)):
        started = time.time()
        tc = replace(config.train, lam=lam, seed=seed, input_side=config.image_side)
        result = train(fit, val, tc)
        report = evaluate(result.checkpoint, test_set)
        out[name] = {
            "auc": report.auc,
            "cam_concentration": report.cam_concentration_mean,
            "score_separation_correct": report.score_separation_correct,
            "score_separation": report.score_separation,
            "best_epoch": result.checkpoint.metadata["best_epoch"],
            "epochs_run": result.checkpoint.metadata["epochs_run"],
            "seconds": time.time() - started,
        }
        log.info("seed %d %s: %s", seed, name, out[name])
    return out


def criteria(result, margin=0.15):
    """The three per-seed comparisons: concentration gain, AUC, confident separation."""
    b, a = result["baseline"], result["attention"]
    sep_a = a["score_separation_correct"]
    sep_b = b["score_separation_correct"]
    return {
        "concentration": a["cam_concentration"] - b["cam_concentration"] >= margin,
        "auc": a["auc"] >= b["auc"],
        "separation": sep_a is not None and (sep_b is None or sep_a >= sep_b),
    }
