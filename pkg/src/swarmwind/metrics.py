"""Error metrics for wind series: component RMSE, overall RMSE, relative error."""

import numpy as np


class MetricsError(ValueError):
    pass


def _paired(pred, truth):
    p = np.atleast_2d(np.asarray(pred, dtype=float))
    t = np.atleast_2d(np.asarray(truth, dtype=float))
    if p.shape != t.shape:
        raise MetricsError("prediction and truth shapes differ")
    if p.shape[0] < 1:
        raise MetricsError("need at least one sample")
    return p, t


def rmse(pred, truth):
    """Per-component RMSE and the RMS of the 3-vector error magnitude."""
    p, t = _paired(pred, truth)
    err = p - t
    per = np.sqrt(np.mean(err * err, axis=0))
    overall = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    return per, overall


def relative_error(pred, truth):
    """Mean |error| over mean |truth| per component, in percent.

    A component whose truth is identically zero has no meaningful scale;
    its entry is NaN and flagged undefined.
    """
    p, t = _paired(pred, truth)
    denom = np.mean(np.abs(t), axis=0)
    defined = denom > 0.0
    num = np.mean(np.abs(p - t), axis=0)
    out = np.full(p.shape[1], np.nan)
    out[defined] = 100.0 * num[defined] / denom[defined]
    return out, defined
