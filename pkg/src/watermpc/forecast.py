"""Nominal demand and price forecasts.

Forecasting is decoupled from the controller: any model that produces an
H_p-step-ahead series can drive the controller, either programmatically or
through the forecast JSON document (see :mod:`watermpc.io`). This module
defines the series container and one deterministic baseline, seasonal
persistence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ForecastSeries:
    """H_p-step nominal forecasts: demands (m^3/s) and prices per flow."""

    d_hat: np.ndarray      # (horizon, n_demand)
    alpha_hat: np.ndarray  # (horizon, n_price)

    def __post_init__(self) -> None:
        self.d_hat = np.atleast_2d(np.asarray(self.d_hat, float))
        self.alpha_hat = np.atleast_2d(np.asarray(self.alpha_hat, float))
        if self.d_hat.shape[0] != self.alpha_hat.shape[0]:
            raise ValueError(
                f"demand and price forecasts disagree on horizon: "
                f"{self.d_hat.shape[0]} vs {self.alpha_hat.shape[0]}"
            )
        if self.d_hat.size == 0:
            raise ValueError("dHat must not be empty")
        if self.alpha_hat.size == 0:
            raise ValueError("alphaHat must not be empty")
        if np.any(self.d_hat < 0):
            raise ValueError("dHat must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.d_hat.shape[0]

    @property
    def n_demand(self) -> int:
        return self.d_hat.shape[1]

    @property
    def n_price(self) -> int:
        return self.alpha_hat.shape[1]


def seasonal_persistence(history: np.ndarray, horizon: int, period: int) -> np.ndarray:
    """Replay the last full period: forecast step j equals the value one
    period earlier at the same phase (cyclically for horizons beyond one
    period).

    ``history`` is (n_samples, n_series) with the last row being the most
    recent observation.
    """
    history = np.asarray(history, float)
    single = history.ndim == 1
    if single:
        history = history[:, None]
    if period < 1:
        raise ValueError("period must be at least 1")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if history.shape[0] < period:
        raise ValueError(
            f"history of length {history.shape[0]} is shorter than period {period}"
        )
    last = history[history.shape[0] - period:]
    out = last[np.arange(horizon) % period]
    return out[:, 0] if single else out


def seasonal_persistence_forecast(
    demand_history: np.ndarray,
    price_history: np.ndarray,
    horizon: int,
    period: int,
) -> ForecastSeries:
    """Baseline forecaster: seasonal persistence on demands and prices."""
    return ForecastSeries(
        d_hat=seasonal_persistence(demand_history, horizon, period),
        alpha_hat=seasonal_persistence(price_history, horizon, period),
    )
