"""Log-domain lattice kernels, compiled with numba.

All indices here are 0-based: frames ``t`` in ``[0, T)``, extended-label
states ``s`` in ``[0, S)`` with ``S = 2U + 1``. ``logp`` is a ``(T, V+1)``
float64 array and ``ext`` the int64 extended label sequence (blank = 0).
Unreachable cells hold ``-inf``.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def lae(a, b):
    """log(exp(a) + exp(b)) for scalars, tolerant of -inf."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _skip_from_below(ext, s):
    # transition s-2 -> s is allowed only onto a token that differs from l'[s-2]
    return s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]


@njit(cache=True)
def _skip_from_above(ext, s):
    return s + 2 < ext.shape[0] and ext[s] != 0 and ext[s] != ext[s + 2]


@njit(cache=True)
def forward(logp, ext):
    T = logp.shape[0]
    S = ext.shape[0]
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, 0]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = lae(a, alpha[t - 1, s - 1])
            if _skip_from_below(ext, s):
                a = lae(a, alpha[t - 1, s - 2])
            if a != NEG_INF:
                alpha[t, s] = a + logp[t, ext[s]]
    return alpha


@njit(cache=True)
def backward(logp, ext):
    T = logp.shape[0]
    S = ext.shape[0]
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = logp[T - 1, 0]
    if S > 1:
        beta[T - 1, S - 2] = logp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = beta[t + 1, s]
            if s + 1 < S:
                b = lae(b, beta[t + 1, s + 1])
            if _skip_from_above(ext, s):
                b = lae(b, beta[t + 1, s + 2])
            if b != NEG_INF:
                beta[t, s] = b + logp[t, ext[s]]
    return beta


@njit(cache=True)
def occupancy(alpha, beta, logp, ext):
    """log of alpha * beta / y per cell; the path mass through (t, s)."""
    T, S = alpha.shape
    out = np.full((T, S), NEG_INF)
    for t in range(T):
        for s in range(S):
            if alpha[t, s] != NEG_INF and beta[t, s] != NEG_INF:
                out[t, s] = alpha[t, s] + beta[t, s] - logp[t, ext[s]]
    return out


@njit(cache=True)
def exit_mass(beta, logp, ext, q):
    """log beta_hat(t, q) for every frame, built from the exit transitions.

    Paths counted leave state ``q`` right after frame ``t`` (or finish there
    when ``t`` is the last frame). Summing the exits instead of subtracting
    the "stay" term from beta avoids cancellation entirely.
    """
    T = beta.shape[0]
    S = ext.shape[0]
    out = np.full(T, NEG_INF)
    for t in range(T - 1):
        b = beta[t + 1, q + 1]
        if _skip_from_above(ext, q):
            b = lae(b, beta[t + 1, q + 2])
        if b != NEG_INF:
            out[t] = b + logp[t, ext[q]]
    out[T - 1] = beta[T - 1, q]
    return out


@njit(cache=True)
def group_masses(alpha, beta, logp, ext, q):
    """Log mass of the paths whose last frame on state ``q`` is ``t``, per t."""
    T = alpha.shape[0]
    bhat = exit_mass(beta, logp, ext, q)
    out = np.full(T, NEG_INF)
    for t in range(T):
        if alpha[t, q] != NEG_INF and bhat[t] != NEG_INF:
            out[t] = alpha[t, q] + bhat[t] - logp[t, ext[q]]
    return out


@njit(cache=True)
def weighted_occupancy(alpha, beta, logp, ext, q, log_risk):
    """Per-cell log of sum over paths through (t, s) of p(path) * r(end frame).

    ``log_risk[t]`` is the log risk of the group whose path leaves state
    ``q`` after frame ``t``. For ``s <= q`` the end frame lies in the suffix,
    so a risk-weighted backward table is used; for ``s > q`` it lies in the
    prefix and a risk-weighted forward table is used instead.
    """
    T, S = alpha.shape
    bhat = exit_mass(beta, logp, ext, q)

    wbeta = np.full((T, S), NEG_INF)
    if bhat[T - 1] != NEG_INF:
        wbeta[T - 1, q] = log_risk[T - 1] + bhat[T - 1]
    for t in range(T - 2, -1, -1):
        b = NEG_INF
        if wbeta[t + 1, q] != NEG_INF:
            b = wbeta[t + 1, q] + logp[t, ext[q]]
        if bhat[t] != NEG_INF:
            b = lae(b, log_risk[t] + bhat[t])
        wbeta[t, q] = b
        for s in range(q - 1, -1, -1):
            b = lae(wbeta[t + 1, s], wbeta[t + 1, s + 1])
            if _skip_from_above(ext, s):
                b = lae(b, wbeta[t + 1, s + 2])
            if b != NEG_INF:
                wbeta[t, s] = b + logp[t, ext[s]]

    walpha = np.full((T, S), NEG_INF)
    for t in range(1, T):
        for s in range(q + 1, S):
            a = walpha[t - 1, s]
            prev = s - 1
            if prev > q:
                a = lae(a, walpha[t - 1, prev])
            elif alpha[t - 1, q] != NEG_INF:
                a = lae(a, log_risk[t - 1] + alpha[t - 1, q])
            if _skip_from_below(ext, s):
                prev = s - 2
                if prev > q:
                    a = lae(a, walpha[t - 1, prev])
                elif alpha[t - 1, q] != NEG_INF:
                    a = lae(a, log_risk[t - 1] + alpha[t - 1, q])
            if a != NEG_INF:
                walpha[t, s] = a + logp[t, ext[s]]

    out = np.full((T, S), NEG_INF)
    for t in range(T):
        for s in range(S):
            if s <= q:
                a = alpha[t, s]
                b = wbeta[t, s]
            else:
                a = walpha[t, s]
                b = beta[t, s]
            if a != NEG_INF and b != NEG_INF:
                out[t, s] = a + b - logp[t, ext[s]]
    return out


@njit(cache=True)
def fold_states(cells, ext, num_symbols):
    """Sum (log domain) the per-state grid into a per-symbol grid."""
    T, S = cells.shape
    out = np.full((T, num_symbols), NEG_INF)
    for t in range(T):
        for s in range(S):
            k = ext[s]
            out[t, k] = lae(out[t, k], cells[t, s])
    return out


@njit(cache=True)
def viterbi(logp, ext):
    """Max-product forward pass with back-pointers.

    Ties prefer staying on the current state, then the neighbour, then the
    skip, so a symbol is entered as early as possible.
    """
    T = logp.shape[0]
    S = ext.shape[0]
    score = np.full((T, S), NEG_INF)
    back = np.full((T, S), -1, dtype=np.int64)
    score[0, 0] = logp[0, 0]
    if S > 1:
        score[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            best = score[t - 1, s]
            arg = s
            if s >= 1 and score[t - 1, s - 1] > best:
                best = score[t - 1, s - 1]
                arg = s - 1
            if _skip_from_below(ext, s) and score[t - 1, s - 2] > best:
                best = score[t - 1, s - 2]
                arg = s - 2
            if best != NEG_INF:
                score[t, s] = best + logp[t, ext[s]]
                back[t, s] = arg
    return score, back


@njit(cache=True)
def _logsumexp_1d(x):
    m = NEG_INF
    for v in x:
        if v > m:
            m = v
    if m == NEG_INF:
        return NEG_INF
    acc = 0.0
    for v in x:
        acc += math.exp(v - m)
    return m + math.log(acc)


VANILLA = 0
DOWNSAMPLE = 1
EARLY_EMISSION = 2


@njit(cache=True)
def objective(logp, ext, kind, lam, clamp_floor, want_grad):
    """Fused objective and logit gradient for one utterance.

    Returns ``(neg_log_objective, grad, clamped)`` where ``clamped`` flags the
    tokens whose early-emission term fell below ``clamp_floor``. A zero
    objective (vanilla or downsample) comes back as ``+inf`` with a zero
    gradient; callers decide how to report it.
    """
    T = logp.shape[0]
    S = ext.shape[0]
    K = logp.shape[1]
    U = (S - 1) // 2
    alpha = forward(logp, ext)
    beta = backward(logp, ext)
    grad = np.zeros((T, K))
    clamped = np.zeros(U, dtype=np.bool_)
    probs = np.exp(logp)

    if kind == VANILLA:
        log_j = lae(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
        if log_j == NEG_INF:
            return np.inf, grad, clamped
        if want_grad:
            occ = fold_states(occupancy(alpha, beta, logp, ext), ext, K)
            grad = probs - np.exp(occ - log_j)
        return -log_j, grad, clamped

    first = U if kind == DOWNSAMPLE else 1
    total = 0.0
    log_risk = np.empty(T)
    for u in range(first, U + 1):
        q = 2 * u - 1
        masses = group_masses(alpha, beta, logp, ext, q)
        bias = 0
        if kind == EARLY_EMISSION:
            # first maximum: ties resolve to the earliest frame
            best = NEG_INF
            for t in range(T):
                if masses[t] > best:
                    best = masses[t]
                    bias = t + 1
        for t in range(T):
            log_risk[t] = -lam * ((t + 1) - bias) / T
        log_j = _logsumexp_1d(masses + log_risk)
        if kind == DOWNSAMPLE and log_j == NEG_INF:
            return np.inf, grad, clamped
        if not log_j >= clamp_floor:
            clamped[u - 1] = True
            total += clamp_floor
            continue
        total += log_j
        if want_grad:
            cells = weighted_occupancy(alpha, beta, logp, ext, q, log_risk)
            occ = fold_states(cells, ext, K)
            grad += probs - np.exp(occ - log_j)
    n_terms = U - first + 1
    return -total / n_terms, grad / n_terms, clamped
