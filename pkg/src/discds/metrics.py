"""Diversity and inter-class separation metrics on generated samples.

Both metrics rely on the world's exact Bayes posterior in place of a trained
scoring network: diversity is the exponentiated mean KL between per-sample
class posteriors and their average, and confusion is the fraction of a
class's samples the oracle assigns to a specific rival class.
"""

from __future__ import annotations

import numpy as np

from .samples import DataError


def diversity_score(x: np.ndarray, posterior_fn) -> float:
    """exp(mean_x KL(p(c|x) || mean_x p(c|x))), >= 1.

    Equals 1 when every sample has the same posterior; approaches the number
    of covered classes when samples split between them with confident
    posteriors.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise DataError("diversity of an empty sample set is undefined")
    p = np.atleast_2d(posterior_fn(x))
    p_bar = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(p_bar)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def confusion_rate(x: np.ndarray, posterior_fn, c_minus: int) -> float:
    """Fraction of samples whose oracle argmax class is c_minus."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise DataError("confusion rate of an empty sample set is undefined")
    pred = np.atleast_2d(posterior_fn(x)).argmax(axis=1)
    return float((pred == c_minus).mean())


def oracle_confusion_matrix(samples, posterior_fn, num_classes: int) -> np.ndarray:
    """M[c, c'] = fraction of class-c rows the oracle assigns to class c'."""
    m = np.zeros((num_classes, num_classes))
    for c in range(num_classes):
        rows = samples.x[samples.labels == c]
        if rows.shape[0] == 0:
            continue
        pred = np.atleast_2d(posterior_fn(rows)).argmax(axis=1)
        m[c] = np.bincount(pred, minlength=num_classes) / rows.shape[0]
    return m
