"""Persistence forecasts computed within each origin-destination pair."""
from __future__ import annotations

import numpy as np
import pandas as pd


class _PairHistory:
    def __init__(self, log_scale: bool = False):
        self.log_scale = log_scale

    def fit(self, history: pd.DataFrame):
        """``history`` has columns month, origin, destination, count."""
        h = history.sort_values(["origin", "destination", "month"], kind="mergesort")
        vals = h["count"].to_numpy(float)
        if self.log_scale:
            vals = np.log1p(vals)
        self.series_ = {}
        for (o, d), idx in h.groupby(["origin", "destination"], sort=False).indices.items():
            self.series_[(o, d)] = (h["month"].to_numpy()[idx], vals[idx])
        return self

    def predict(self, origin, destination, month) -> np.ndarray:
        out = np.zeros(len(month))
        for i, key in enumerate(zip(origin, destination)):
            s = self.series_.get(key)
            if s is None:
                continue
            k = np.searchsorted(s[0], month[i], side="left")
            if k:
                out[i] = self._reduce(s[1][:k])
        return out


class HistoricalMean(_PairHistory):
    """Mean of the pair's observed values strictly before the forecast month."""

    @staticmethod
    def _reduce(vals):
        return vals.sum() / len(vals)


class LastObservation(_PairHistory):
    """Most recent observed value before the forecast month, across gaps."""

    @staticmethod
    def _reduce(vals):
        return vals[-1]
