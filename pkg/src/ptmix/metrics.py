"""Partition agreement and variable-selection scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _pairs(k):
    return sum(int(v) * (int(v) - 1) // 2 for v in np.ravel(k))


def contingency_table(labels_a, labels_b):
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def ari_details(labels_a, labels_b):
    """Adjusted Rand Index (Hubert and Arabie) and a degeneracy flag.

    When the maximum and expected index coincide the ratio is undefined; the
    value is then 1.0 for identical partitions and 0.0 otherwise.
    """
    a = np.asarray(labels_a)
    if a.size < 2:
        raise ValidationError("ARI needs at least two labels")
    table = contingency_table(labels_a, labels_b)
    big_n = _pairs([table.sum()])
    index = _pairs(table)
    sum_a = _pairs(table.sum(axis=1))
    sum_b = _pairs(table.sum(axis=0))
    # (index - expected) / (max - expected), scaled by 2 * C(n, 2): exact integers
    num = 2 * big_n * index - 2 * sum_a * sum_b
    den = big_n * (sum_a + sum_b) - 2 * sum_a * sum_b
    if den == 0:
        same = index == sum_a == sum_b
        return (1.0 if same else 0.0), True
    return num / den, False


def adjusted_rand_index(labels_a, labels_b):
    return ari_details(labels_a, labels_b)[0]


def selection_scores(selected, true_informative, p):
    """Sensitivity tp/m and specificity tn/q with true-count denominators.

    Returns (sensitivity, specificity, tp, fp, tn, fn); a rate is None when
    its denominator is zero.
    """
    sel = {int(d) for d in selected}
    truth = {int(d) for d in true_informative}
    if any(d < 0 or d >= p for d in sel | truth):
        raise ValidationError(f"variable indices must lie in [0, {p})")
    tp = len(sel & truth)
    fn = len(truth - sel)
    fp = len(sel - truth)
    tn = p - tp - fn - fp
    m, q = tp + fn, tn + fp
    sens = tp / m if m else None
    spec = tn / q if q else None
    return sens, spec, tp, fp, tn, fn


@dataclass
class EvalResult:
    ari: float
    sensitivity: float | None
    specificity: float | None
    confusion: np.ndarray
    tp: int
    fp: int
    tn: int
    fn: int
    ari_degenerate: bool = False
    extra: dict = field(default_factory=dict)


def evaluate(true_labels, est_labels, selected, true_informative, p):
    ari, degenerate = ari_details(true_labels, est_labels)
    sens, spec, tp, fp, tn, fn = selection_scores(selected, true_informative, p)
    return EvalResult(
        ari=ari, sensitivity=sens, specificity=spec,
        confusion=contingency_table(true_labels, est_labels),
        tp=tp, fp=fp, tn=tn, fn=fn, ari_degenerate=degenerate,
    )
