"""Log-log regression of norm values against the frequency parameter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class ScalingFit:
    lambdas: tuple[float, ...]
    values: tuple[float, ...]
    exponent: float          # b in value ~ exp(a) * lam^b [* (log lam)^c]
    log_power: float | None
    intercept: float
    r2: float
    model: str               # "pure-power" | "power-times-log"

    def predict(self, lam) -> np.ndarray:
        lam = np.asarray(lam, float)
        out = self.intercept + self.exponent * np.log(lam)
        if self.log_power is not None:
            out = out + self.log_power * np.log(np.log(lam))
        return np.exp(out)


def fit_scaling_law(lambdas, values, model: str = "pure-power") -> ScalingFit:
    """Least squares of log(value) on log(lam) (plus log log lam for the
    power-times-log model)."""
    lam = np.asarray(lambdas, float)
    val = np.asarray(values, float)
    if lam.size < 4:
        raise ConfigError("need at least 4 sample points for a scaling fit")
    if np.any(np.diff(lam) <= 0) or np.any(lam < 2):
        raise ConfigError("lambdas must be strictly increasing and >= 2")
    if np.any(val <= 0) or not np.all(np.isfinite(val)):
        raise ConfigError("values must be positive and finite")
    ylog = np.log(val)
    cols = [np.ones_like(lam), np.log(lam)]
    if model == "power-times-log":
        cols.append(np.log(np.log(lam)))
    elif model != "pure-power":
        raise ConfigError(f"unknown scaling model {model!r}")
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, ylog, rcond=None)
    resid = ylog - X @ coef
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ylog - ylog.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(
        lambdas=tuple(lam), values=tuple(val),
        exponent=float(coef[1]),
        log_power=float(coef[2]) if model == "power-times-log" else None,
        intercept=float(coef[0]), r2=r2, model=model)
