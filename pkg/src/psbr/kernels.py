"""Hot loops: rollout simulation and Bellman sweeps over compiled strategy tables.

Strategy tables (see :mod:`psbr.strategies`) are

* ``trans[state, phase, own_action, opp_action] -> next state`` (int64)
* ``probs[state, phase, own_action] -> probability`` (float64)

where ``phase = (t - 1) % 2`` for 1-based round ``t``. Every function here is
plain Python over numpy arrays and is compiled by :func:`psbr._accel.jit`.
"""
from __future__ import annotations

import numpy as np

from ._accel import jit


@jit
def draw_index(p, u):
    """Inverse-CDF categorical draw for a single uniform ``u`` in [0, 1)."""
    acc = 0.0
    last = 0
    for k in range(p.shape[0]):
        if p[k] > 0.0:
            last = k
            acc += p[k]
            if u < acc:
                return k
    return last


@jit
def rollout_values(
    self_trans, self_probs, self_state0,
    opp_trans, opp_probs, opp_state0,
    payoff, t0, gamma, uniforms,
):
    """Discounted rollout returns for a batch of candidate self-strategies.

    ``self_trans``/``self_probs`` are stacked per candidate (leading axis C),
    padded to a common state count. ``uniforms`` has shape (C, K, L, 2) where
    L is the number of simulated rounds; index 0 drives the candidate's draw,
    index 1 the opponent's. Returns an array of shape (C, K).
    """
    n_cand = uniforms.shape[0]
    n_samp = uniforms.shape[1]
    n_steps = uniforms.shape[2]
    out = np.zeros((n_cand, n_samp))
    for c in range(n_cand):
        for m in range(n_samp):
            s_self = self_state0[c]
            s_opp = opp_state0
            total = 0.0
            disc = 1.0
            for j in range(n_steps):
                ph = (t0 + j - 1) % 2
                a = draw_index(self_probs[c, s_self, ph], uniforms[c, m, j, 0])
                b = draw_index(opp_probs[s_opp, ph], uniforms[c, m, j, 1])
                total += disc * payoff[a, b]
                disc *= gamma
                s_self = self_trans[c, s_self, ph, a, b]
                s_opp = opp_trans[s_opp, ph, b, a]
            out[c, m] = total
    return out


@jit
def bellman_q(opp_trans, opp_probs, payoff, gamma, v):
    """Action values Q[state, phase, own_action] for value array v[state, phase].

    Stage payoffs enter with the (1 - gamma) normalisation so that values stay
    on the payoff scale.
    """
    n_s = opp_probs.shape[0]
    n_b = opp_probs.shape[2]
    n_a = payoff.shape[0]
    q = np.zeros((n_s, 2, n_a))
    for s in range(n_s):
        for ph in range(2):
            nph = 1 - ph
            for a in range(n_a):
                acc = 0.0
                for b in range(n_b):
                    pb = opp_probs[s, ph, b]
                    if pb > 0.0:
                        nxt = opp_trans[s, ph, b, a]
                        acc += pb * ((1.0 - gamma) * payoff[a, b] + gamma * v[nxt, nph])
                q[s, ph, a] = acc
    return q


@jit
def bellman_apply(opp_trans, opp_probs, payoff, gamma, v):
    q = bellman_q(opp_trans, opp_probs, payoff, gamma, v)
    n_s = q.shape[0]
    out = np.empty((n_s, 2))
    for s in range(n_s):
        for ph in range(2):
            best = q[s, ph, 0]
            for a in range(1, q.shape[2]):
                if q[s, ph, a] > best:
                    best = q[s, ph, a]
            out[s, ph] = best
    return out


@jit
def value_iteration(opp_trans, opp_probs, payoff, gamma, tol, max_iter, v0):
    """Iterate the Bellman operator until the sup-norm change is at most ``tol``.

    Returns (values, residual, iterations).
    """
    v = v0.copy()
    residual = np.inf
    it = 0
    while it < max_iter:
        nv = bellman_apply(opp_trans, opp_probs, payoff, gamma, v)
        residual = np.max(np.abs(nv - v))
        v = nv
        it += 1
        if residual <= tol:
            break
    return v, residual, it
