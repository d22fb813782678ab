"""Forward noising process: schedule, transition matrices, posteriors.

Each step mixes identity retention with resampling from the training
marginal: Q(t) = alpha_t * I + (1 - alpha_t) * 1 m^T.  The cumulative
matrices have the same closed form with cumulative coefficients, which is
how they are materialized here (the product identity is kept as a test).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import GraphState, sample_discrete


class NoiseModelError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Retention coefficients alpha_t and their cumulative products.

    Arrays are indexed by timestep with slot 0 as the clean endpoint:
    alpha[0] = alpha_bar[0] = 1 and alpha_bar[t] = prod_{tau<=t} alpha[tau].
    """

    T: int
    alpha: np.ndarray      # (T+1,)
    alpha_bar: np.ndarray  # (T+1,)

    def __post_init__(self):
        if self.T < 1:
            raise NoiseModelError("T must be >= 1")
        if self.alpha.shape != (self.T + 1,) or self.alpha_bar.shape != (self.T + 1,):
            raise NoiseModelError("schedule arrays must have length T+1")
        if self.alpha[0] != 1.0 or self.alpha_bar[0] != 1.0:
            raise NoiseModelError("alpha[0] and alpha_bar[0] must be 1")
        if np.any(self.alpha <= 0.0) or np.any(self.alpha > 1.0):
            raise NoiseModelError("alpha values must lie in (0, 1]")
        if np.any(np.diff(self.alpha_bar) > 0.0):
            raise NoiseModelError("alpha_bar must be non-increasing")

    @property
    def beta(self) -> np.ndarray:
        return 1.0 - self.alpha

    @property
    def beta_bar(self) -> np.ndarray:
        return 1.0 - self.alpha_bar

    @classmethod
    def from_alpha_bar(cls, alpha_bar) -> "NoiseSchedule":
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        alpha = np.ones_like(alpha_bar)
        alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
        return cls(T=len(alpha_bar) - 1, alpha=alpha, alpha_bar=alpha_bar)


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    """Squared-cosine retention curve, normalized so alpha_bar[0] = 1."""
    if T < 1:
        raise NoiseModelError("T must be >= 1")
    if s <= 0:
        raise NoiseModelError("s must be positive")
    t = np.arange(T + 1, dtype=np.float64)
    curve = np.cos(0.5 * np.pi * (t / T + s) / (1.0 + s)) ** 2
    return NoiseSchedule.from_alpha_bar(curve / curve[0])


def transition_matrix(alpha_t: float, m: np.ndarray) -> np.ndarray:
    """Row-stochastic single-step matrix alpha * I + (1 - alpha) * 1 m^T."""
    if not 0.0 <= alpha_t <= 1.0:
        raise NoiseModelError(f"alpha_t must be in [0, 1], got {alpha_t}")
    m = np.asarray(m, dtype=np.float64)
    return alpha_t * np.eye(m.shape[0]) + (1.0 - alpha_t) * np.tile(m, (m.shape[0], 1))


@dataclass(frozen=True)
class TransitionMatrices:
    """Single-step and cumulative matrices for one timestep."""

    Q_X: np.ndarray
    Q_E: np.ndarray
    Qbar_X: np.ndarray
    Qbar_E: np.ndarray
    m_X: np.ndarray
    m_E: np.ndarray


class NoiseModel:
    """Schedule plus node/edge marginals with all matrices precomputed."""

    def __init__(self, schedule: NoiseSchedule, m_X, m_E):
        self.schedule = schedule
        self.m_X = np.asarray(m_X, dtype=np.float64)
        self.m_E = np.asarray(m_E, dtype=np.float64)
        for m in (self.m_X, self.m_E):
            if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
                raise NoiseModelError("marginals must be probability vectors")
        T = schedule.T
        self.Q_X = np.stack([transition_matrix(schedule.alpha[t], self.m_X) for t in range(T + 1)])
        self.Q_E = np.stack([transition_matrix(schedule.alpha[t], self.m_E) for t in range(T + 1)])
        self.Qbar_X = np.stack([transition_matrix(schedule.alpha_bar[t], self.m_X) for t in range(T + 1)])
        self.Qbar_E = np.stack([transition_matrix(schedule.alpha_bar[t], self.m_E) for t in range(T + 1)])
        self._posterior_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def a(self) -> int:
        return self.m_X.shape[0]

    @property
    def b(self) -> int:
        return self.m_E.shape[0]

    def at(self, t: int) -> TransitionMatrices:
        self._check_t(t)
        return TransitionMatrices(
            Q_X=self.Q_X[t], Q_E=self.Q_E[t],
            Qbar_X=self.Qbar_X[t], Qbar_E=self.Qbar_E[t],
            m_X=self.m_X, m_E=self.m_E,
        )

    def _check_t(self, t: int, low: int = 1):
        if not low <= t <= self.T:
            raise NoiseModelError(f"timestep {t} outside [{low}, {self.T}]")

    def posterior_tensors(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Stacked single-step posteriors P[k, x, j] = q(state_{t-1}=j | clean=x, state_t=k).

        Rows with zero forward likelihood q(state_t=k | clean=x) come back
        all-zero (the dropped-contribution case).  At t=1 the posterior is
        the clean one-hot regardless of k.
        """
        self._check_t(t)
        cached = self._posterior_cache.get(t)
        if cached is None:
            cached = (
                _posterior_tensor(t, self.Q_X[t], self.Qbar_X[t - 1], self.Qbar_X[t]),
                _posterior_tensor(t, self.Q_E[t], self.Qbar_E[t - 1], self.Qbar_E[t]),
            )
            self._posterior_cache[t] = cached
        return cached


def _posterior_tensor(t: int, Q_t: np.ndarray, Qbar_tm1: np.ndarray,
                      Qbar_t: np.ndarray) -> np.ndarray:
    K = Q_t.shape[0]
    if t == 1:
        # chain endpoint: the state below t=1 is the clean category itself
        return np.broadcast_to(np.eye(K)[None, :, :], (K, K, K)).copy()
    # P[k, x, j] = Qbar_tm1[x, j] * Q_t[j, k] / Qbar_t[x, k], zero row if denom 0
    num = Qbar_tm1[None, :, :] * Q_t.T[:, None, :]
    denom = Qbar_t.T[:, :, None]
    out = np.zeros_like(num)
    np.divide(num, denom, out=out, where=denom > 0.0)
    return out


def posterior_step(x0: np.ndarray, xt: np.ndarray, t: int, Q_t: np.ndarray,
                   Qbar_tm1: np.ndarray, Qbar_t: np.ndarray) -> np.ndarray:
    """Single-step posterior q(state_{t-1} | clean one-hot x0, noisy one-hot xt).

    Returns the all-zero vector when the forward likelihood of xt given x0
    is zero (the contribution is dropped by callers, never renormalized
    here).  At t=1 the result is exactly the clean one-hot.
    """
    if t < 1:
        raise NoiseModelError("t must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if t == 1:
        return x0.copy()
    num = (xt @ Q_t.T) * (x0 @ Qbar_tm1)
    denom = float(x0 @ Qbar_t @ xt)
    if denom <= 0.0:
        return np.zeros_like(num)
    return num / denom


def forward_noise(g0: GraphState, t: int, nm: NoiseModel,
                  rng: np.random.Generator) -> GraphState:
    """Jump the clean graph straight to step t and sample a discrete state."""
    nm._check_t(t)
    E = g0.E @ nm.Qbar_E[t]
    diag = np.arange(g0.n)
    E[diag, diag, :] = 0.0
    E[diag, diag, 0] = 1.0
    soft = GraphState(X=g0.X @ nm.Qbar_X[t], E=E, mode="soft")
    return sample_discrete(soft, rng)
