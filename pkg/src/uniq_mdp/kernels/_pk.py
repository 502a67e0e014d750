"""Pure-numpy kernel backend. Mirrors _ck exactly; see kernels/__init__ for
the argument contracts."""

from __future__ import annotations

import numpy as np

_LIMIT = 1e9


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ratio_ascent(l1, l2, w_un, w_mix, steps, lr, clip_eps, every):
    t_step, t_val = [], []

    def value() -> float:
        m1 = np.clip(_sigmoid(l1), clip_eps, 1.0 - clip_eps)
        m2 = np.clip(_sigmoid(l2), clip_eps, 1.0 - clip_eps)
        return float(
            np.dot(w_mix, np.log(m2) + np.log1p(-m1))
            + np.dot(w_un, np.log(m1) + np.log1p(-m2))
        )

    for step in range(steps):
        if step % every == 0:
            t_step.append(step)
            t_val.append(value())
        m1 = _sigmoid(l1)
        m2 = _sigmoid(l2)
        l1 += lr * (w_un * (1.0 - m1) - w_mix * m1)
        l2 += lr * (w_mix * (1.0 - m2) - w_un * m2)
    t_step.append(steps)
    t_val.append(value())
    return l1, l2, np.asarray(t_step, dtype=np.int64), np.asarray(t_val)


def _masked_logsumexp(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    qm = np.where(mask, q, -np.inf)
    m = qm.max(axis=1)
    return m + np.log(np.exp(qm - m[:, None]).sum(axis=1))


def train_loop(
    q,
    theta,
    sa,
    ns,
    wt,
    tau,
    w0,
    wbc,
    mask,
    gamma,
    steps,
    lr_q,
    lr_pi,
    direction,
    cap_lo,
    cap_hi,
    every,
):
    S, A = q.shape
    n_flat = S * A
    maskb = mask.astype(bool)
    tau_k = tau[sa]
    wbc2 = wbc.reshape(S, A)
    t_step, t_f, t_wbc = [], [], []
    status, bad_step = 0, -1

    def evaluate():
        v = _masked_logsumexp(q, maskb)
        r = q.reshape(-1)[sa] - gamma * v[ns]
        f = float(np.dot(wt, tau_k * r + r - r * r) - (1.0 - gamma) * np.dot(w0, v))
        adv_w = wbc2 * np.clip(np.exp(np.minimum(q - v[:, None], 50.0)), cap_lo, cap_hi)
        th_max = theta.max(axis=1, keepdims=True)
        log_pi = theta - th_max - np.log(np.exp(theta - th_max).sum(axis=1, keepdims=True))
        wbc_obj = float(np.sum(adv_w * log_pi))
        return v, r, f, adv_w, log_pi, wbc_obj

    step = 0
    for step in range(steps):
        v, r, f, adv_w, log_pi, wbc_obj = evaluate()
        if not np.isfinite(f) or abs(f) > _LIMIT:
            status, bad_step = 1, step
            break
        if step % every == 0:
            t_step.append(step)
            t_f.append(f)
            t_wbc.append(-wbc_obj)
        coef = wt * (tau_k + 1.0 - 2.0 * r)
        grad = np.bincount(sa, weights=coef, minlength=n_flat).reshape(S, A)
        ns_mass = np.bincount(ns, weights=coef, minlength=S)
        pi_q = np.where(maskb, np.exp(q - v[:, None]), 0.0)
        grad -= pi_q * (gamma * ns_mass + (1.0 - gamma) * w0)[:, None]
        q -= (lr_q * direction) * grad
        if lr_pi != 0.0:
            pi_th = np.exp(log_pi)
            theta += lr_pi * (adv_w - pi_th * adv_w.sum(axis=1, keepdims=True))
    if status == 0:
        _, _, f, _, _, wbc_obj = evaluate()
        if not np.isfinite(f) or abs(f) > _LIMIT:
            status, bad_step = 1, steps
        else:
            t_step.append(steps)
            t_f.append(f)
            t_wbc.append(-wbc_obj)
    return (
        q,
        theta,
        np.asarray(t_step, dtype=np.int64),
        np.asarray(t_f),
        np.asarray(t_wbc),
        status,
        bad_step,
    )
