"""Linear-Gaussian actor, linear state-value critic and a numpy Adam."""

from __future__ import annotations

import math

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -1.0, 0.5
_LOG_2PI = math.log(2.0 * math.pi)


class GaussianPolicy:
    """pi(a|s) = N(a; W phi(s), diag(exp(log_std))^2) with state-free std.

    Parameters live in one flat vector ``theta`` = [W.ravel(), log_std].
    """

    def __init__(self, n_features, action_dim, init_log_std=0.0, weights=None):
        self.n_features = n_features
        self.action_dim = action_dim
        w = np.zeros((action_dim, n_features)) if weights is None else np.asarray(weights, float)
        self.theta = np.concatenate([w.ravel(), np.full(action_dim, float(init_log_std))])

    @property
    def W(self):
        return self.theta[: self.action_dim * self.n_features].reshape(self.action_dim, self.n_features)

    @property
    def log_std(self):
        return self.theta[self.action_dim * self.n_features:]

    def clamp(self):
        ls = self.log_std
        np.clip(ls, LOG_STD_MIN, LOG_STD_MAX, out=ls)

    def mean(self, feats):
        return np.asarray(feats, float) @ self.W.T

    def sample(self, feats, rng):
        mu = self.mean(feats)
        return mu + np.exp(self.log_std) * rng.standard_normal(np.shape(mu))

    def log_prob(self, feats, actions):
        feats = np.atleast_2d(np.asarray(feats, float))
        actions = np.atleast_2d(np.asarray(actions, float))
        z = (actions - self.mean(feats)) / np.exp(self.log_std)
        return -0.5 * np.sum(z * z, axis=1) - np.sum(self.log_std) - 0.5 * self.action_dim * _LOG_2PI

    def grad_log_prob(self, feats, actions, weights=None):
        """Gradient w.r.t. ``theta`` of ``sum_i weights_i * log pi(a_i|s_i)``."""
        feats = np.atleast_2d(np.asarray(feats, float))
        actions = np.atleast_2d(np.asarray(actions, float))
        w = np.ones(len(feats)) if weights is None else np.asarray(weights, float)
        var = np.exp(2.0 * self.log_std)
        diff = actions - self.mean(feats)
        g_w = ((diff / var) * w[:, None]).T @ feats
        g_ls = np.sum(w[:, None] * (diff * diff / var - 1.0), axis=0)
        return np.concatenate([g_w.ravel(), g_ls])


class LinearCritic:
    """V(s) = v . phi(s)."""

    def __init__(self, n_features):
        self.theta = np.zeros(n_features)

    def value(self, feats):
        return np.asarray(feats, float) @ self.theta


class Adam:
    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        """In-place descent step on ``params`` along ``grad``."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
