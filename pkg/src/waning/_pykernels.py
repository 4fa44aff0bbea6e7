"""Pure numpy implementations of the hot loops.

These are the fallback when the compiled module is unavailable, and the
reference the compiled module is tested against. Signatures match
``_ckernels`` exactly.
"""
import numpy as np


def cox_partial_stats(time, event, X, beta, efron=True):
    """Cox partial log-likelihood, score and Hessian.

    Parameters
    ----------
    time : (n,) float array sorted ascending
    event : (n,) int8 array of 0/1
    X : (n, p) float array
    beta : (p,) float array
    efron : bool
        Efron tie correction if True, Breslow otherwise.

    Returns
    -------
    loglik : float
    grad : (p,) array
    hess : (p, p) array, the Hessian of ``loglik`` (negative semi-definite)
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    X = np.asarray(X, dtype=float).reshape(len(time), -1)
    beta = np.asarray(beta, dtype=float)
    p = X.shape[1]
    if not event.any():
        return 0.0, np.zeros(p), np.zeros((p, p))

    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)

    # unique times and the first index of each block in the sorted arrays
    starts = np.flatnonzero(np.r_[True, time[1:] != time[:-1]])
    # risk sums over {i : time_i >= t}: reverse cumulative sums read at block starts
    S0 = np.cumsum(w[::-1])[::-1][starts]
    S1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1][starts]
    XX = X[:, :, None] * X[:, None, :]
    S2 = np.cumsum((w[:, None, None] * XX)[::-1], axis=0)[::-1][starts]

    ev = event.astype(float)
    we = w * ev
    D0 = np.add.reduceat(we, starts)
    D1 = np.add.reduceat(we[:, None] * X, starts, axis=0)
    D2 = np.add.reduceat(we[:, None, None] * XX, starts, axis=0)
    d = np.add.reduceat(event.astype(np.int64), starts)

    # one row per event: block index and Efron fraction r/d
    block = np.repeat(np.arange(len(starts)), d)
    offset = np.arange(block.size) - np.repeat(np.cumsum(d) - d, d)
    frac = offset / d[block] if efron else np.zeros(block.size)

    den = S0[block] - frac * D0[block]
    m1 = (S1[block] - frac[:, None] * D1[block]) / den[:, None]
    m2 = (S2[block] - frac[:, None, None] * D2[block]) / den[:, None, None]

    xe = X[event]
    loglik = float(np.sum(eta[event]) - np.sum(np.log(den) + shift))
    grad = xe.sum(axis=0) - m1.sum(axis=0)
    hess = -(m2.sum(axis=0) - m1.T @ m1)
    return loglik, grad, hess


def breslow_increments(time, event, eta):
    """Baseline hazard jumps ``d(t) / sum_{time_i >= t} exp(eta_i)`` at each event time.

    ``time`` must be sorted ascending. Returns ``(event_times, increments)``.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    eta = np.asarray(eta, dtype=float)
    if not event.any():
        return np.empty(0), np.empty(0)
    w = np.exp(eta)
    starts = np.flatnonzero(np.r_[True, time[1:] != time[:-1]])
    S0 = np.cumsum(w[::-1])[::-1][starts]
    d = np.add.reduceat(event.astype(np.int64), starts)
    keep = d > 0
    return time[starts][keep], d[keep] / S0[keep]


def tabulate(time, event, group, n_groups, starts, ends):
    """Events and person-time per (group, window).

    Window ``m`` is the half-open span ``(starts[m], ends[m]]``; windows must
    be sorted and non-overlapping. A record contributes
    ``max(0, min(time, end) - start)`` person-time and counts as an event in
    the window containing its event time.

    Returns ``(events, person_time)``, each of shape ``(n_groups, n_windows)``.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    group = np.asarray(group, dtype=np.int64)
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    m = len(starts)
    events = np.zeros((n_groups, m), dtype=np.int64)
    ptime = np.zeros((n_groups, m), dtype=float)
    if len(time) == 0:
        return events, ptime
    for w in range(m):
        contrib = np.clip(np.minimum(time, ends[w]) - starts[w], 0.0, None)
        ptime[:, w] = np.bincount(group, weights=contrib, minlength=n_groups)
        hit = event & (time > starts[w]) & (time <= ends[w])
        events[:, w] = np.bincount(group[hit], minlength=n_groups)
    return events, ptime
