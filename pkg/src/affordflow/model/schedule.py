"""Linear-beta DDPM schedule, forward noising and the ancestral update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # index k-1 holds beta_k, k = 1..K
    gamma: float = 5.0

    @classmethod
    def linear(cls, K: int, beta_start: float, beta_end: float, gamma: float = 5.0) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, K), gamma)

    @classmethod
    def from_config(cls, cfg) -> "NoiseSchedule":
        return cls.linear(cfg.K, cfg.beta_start, cfg.beta_end, cfg.snr_gamma)

    @property
    def K(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def snr(self) -> np.ndarray:
        ab = self.alpha_bar
        return ab / (1.0 - ab)

    @property
    def min_snr_weight(self) -> np.ndarray:
        """``min(SNR(k), gamma) / SNR(k)`` for k = 1..K."""
        s = self.snr
        return np.minimum(s, self.gamma) / s

    def at(self, k, table: str = "alpha_bar") -> np.ndarray:
        """Look up a per-step table at 1-based steps ``k``."""
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise ValueError(f"diffusion step outside 1..{self.K}")
        return getattr(self, table)[k - 1]


def q_sample(clean: np.ndarray, k, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_k) * clean + sqrt(1 - ab_k) * eps`` with ``k`` per leading row."""
    ab = _rows(schedule.at(k), clean.ndim)
    return np.sqrt(ab) * clean + np.sqrt(1.0 - ab) * eps


def predict_x0(x_k: np.ndarray, k, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    ab = _rows(schedule.at(k), x_k.ndim)
    return (x_k - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def posterior_sigma(k: int, schedule: NoiseSchedule) -> float:
    """sqrt(beta_k (1 - ab_{k-1}) / (1 - ab_k)); zero at k = 1."""
    if k <= 1:
        return 0.0
    ab = schedule.alpha_bar
    return float(np.sqrt(schedule.betas[k - 1] * (1.0 - ab[k - 2]) / (1.0 - ab[k - 1])))


def reverse_step(x_k: np.ndarray, k: int, eps_hat: np.ndarray, schedule: NoiseSchedule,
                 z: np.ndarray | None) -> np.ndarray:
    beta = schedule.betas[k - 1]
    ab = schedule.alpha_bar[k - 1]
    mean = (x_k - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
    if k == 1 or z is None:
        return mean
    return mean + posterior_sigma(k, schedule) * z


def _rows(v: np.ndarray, ndim: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))
