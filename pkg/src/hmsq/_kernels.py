"""Compiled inner loops shared by every codec.

Encoders and decoders call the same functions here, so the floating point
path is identical on both ends of a link.  Mixture pdfs are passed as flat
arrays: ``w`` (per-component weights, already divided by the component's
mass on the support), ``mu``, ``sd`` and the support ``(lo, hi)``.
"""
import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
EMPTY_MASS = 1e-12
DENSITY_FLOOR = 1e-300


@njit(cache=True)
def norm_pdf(z):
    if math.isinf(z):
        return 0.0
    return INV_SQRT2PI * math.exp(-0.5 * z * z)


@njit(cache=True)
def norm_mass(za, zb):
    """Phi(zb) - Phi(za) without cancellation in either tail."""
    if zb <= za:
        return 0.0
    if za >= 0.0:
        return 0.5 * (math.erfc(za / SQRT2) - math.erfc(zb / SQRT2))
    if zb <= 0.0:
        return 0.5 * (math.erfc(-zb / SQRT2) - math.erfc(-za / SQRT2))
    return 1.0 - 0.5 * math.erfc(-za / SQRT2) - 0.5 * math.erfc(zb / SQRT2)


@njit(cache=True)
def _zphi(z):
    if math.isinf(z):
        return 0.0
    return z * INV_SQRT2PI * math.exp(-0.5 * z * z)


@njit(cache=True)
def component_moments(mu, sd, a, b, c):
    """Mass, first moment and second moment about ``c`` of N(mu, sd^2) on (a, b]."""
    za = (a - mu) / sd
    zb = (b - mu) / sd
    m = norm_mass(za, zb)
    dphi = norm_pdf(za) - norm_pdf(zb)
    s1 = mu * m + sd * dphi
    d = mu - c
    s2 = d * d * m + 2.0 * d * sd * dphi + sd * sd * (m + _zphi(za) - _zphi(zb))
    return m, s1, s2


@njit(cache=True)
def cell_masses(mu, sd, a, b, out):
    for j in range(mu.shape[0]):
        out[j] = norm_mass((a - mu[j]) / sd[j], (b - mu[j]) / sd[j])


@njit(cache=True)
def support_weights(probs, mu, sd, lo, hi, out):
    """Weights of sum_j probs_j g_j / Z_j, each component normalized on (lo, hi]."""
    total = 0.0
    for j in range(mu.shape[0]):
        if math.isinf(lo) and math.isinf(hi):
            z = 1.0
        else:
            z = norm_mass((lo - mu[j]) / sd[j], (hi - mu[j]) / sd[j])
        if z > 0.0 and probs[j] > 0.0:
            out[j] = probs[j] / z
            total += probs[j]
        else:
            out[j] = 0.0
    if total <= 0.0:
        return False
    for j in range(mu.shape[0]):
        out[j] /= total
    return True


@njit(cache=True)
def _edge(cw, k, lo, hi):
    # upper edge of cell k, clamped into the support
    if k == cw.shape[0] - 1:
        return hi
    e = 0.5 * (cw[k] + cw[k + 1])
    if e < lo:
        return lo
    if e > hi:
        return hi
    return e


@njit(cache=True)
def cell_stats(w, mu, sd, lo, hi, cw, mass, cent, dist):
    """Per-cell mass, centroid and distortion of codebook ``cw`` (midpoint cells)."""
    a = lo
    for k in range(cw.shape[0]):
        b = _edge(cw, k, lo, hi)
        m_tot = 0.0
        s1_tot = 0.0
        s2_tot = 0.0
        if b > a:
            for j in range(mu.shape[0]):
                if w[j] == 0.0:
                    continue
                m, s1, s2 = component_moments(mu[j], sd[j], a, b, cw[k])
                m_tot += w[j] * m
                s1_tot += w[j] * s1
                s2_tot += w[j] * s2
        mass[k] = m_tot
        dist[k] = s2_tot
        if m_tot > 0.0:
            c = s1_tot / m_tot
            # keep the centroid inside its own cell against rounding
            if c < a:
                c = a
            if c > b:
                c = b
            cent[k] = c
        else:
            cent[k] = cw[k]
        a = b


@njit(cache=True)
def distortion(w, mu, sd, lo, hi, cw):
    K = cw.shape[0]
    mass = np.empty(K)
    cent = np.empty(K)
    dist = np.empty(K)
    cell_stats(w, mu, sd, lo, hi, cw, mass, cent, dist)
    return dist.sum()


@njit(cache=True)
def _repair(cw, mass, cent, lo, hi, w, mu, sd):
    """Move codewords of (near) empty cells into the heaviest cell."""
    K = cw.shape[0]
    for _ in range(K):
        empty = -1
        for k in range(K):
            if mass[k] < EMPTY_MASS:
                empty = k
                break
        if empty < 0:
            return
        heavy = 0
        for k in range(K):
            if mass[k] > mass[heavy]:
                heavy = k
        if mass[heavy] < EMPTY_MASS:
            return
        a = lo if heavy == 0 else 0.5 * (cw[heavy - 1] + cw[heavy])
        b = hi if heavy == K - 1 else 0.5 * (cw[heavy] + cw[heavy + 1])
        a = max(a, lo)
        b = min(b, hi)
        c = cent[heavy]
        if math.isinf(a) or math.isinf(b):
            # conditional spread of the cell stands in for its width
            m_tot = 0.0
            s2_tot = 0.0
            for j in range(mu.shape[0]):
                if w[j] == 0.0:
                    continue
                m, s1, s2 = component_moments(mu[j], sd[j], a, b, c)
                m_tot += w[j] * m
                s2_tot += w[j] * s2
            h = 0.5 * math.sqrt(s2_tot / m_tot)
        else:
            h = 0.25 * (b - a)
        if h <= 0.0:
            return
        vals = np.empty(K + 1)
        ms = np.empty(K + 1)
        n = 0
        for k in range(K):
            if k == empty:
                continue
            if k == heavy:
                vals[n] = c - h
                ms[n] = 0.5 * mass[k]
                n += 1
                vals[n] = c + h
                ms[n] = 0.5 * mass[k]
                n += 1
            else:
                vals[n] = cw[k]
                ms[n] = mass[k]
                n += 1
        order = np.argsort(vals[:n])
        for k in range(K):
            cw[k] = vals[order[k]]
            mass[k] = ms[order[k]]
            cent[k] = cw[k]


@njit(cache=True)
def lloyd(w, mu, sd, lo, hi, init, iters, tol, repair):
    """Lloyd iterations from ``init``; returns (codewords, final distortion, steps).

    One iteration is a midpoint partition of the current codewords followed by
    a centroid update.  With ``tol > 0`` iterations stop once the relative
    change of distortion drops below ``tol``.
    """
    K = init.shape[0]
    cw = init.copy()
    mass = np.empty(K)
    cent = np.empty(K)
    dist = np.empty(K)
    prev = np.inf
    steps = 0
    for it in range(iters):
        cell_stats(w, mu, sd, lo, hi, cw, mass, cent, dist)
        d = dist.sum()
        # a repair may raise distortion; only a small decrease means convergence
        if tol > 0.0 and prev < np.inf and 0.0 <= prev - d <= tol * prev:
            break
        prev = d
        for k in range(K):
            cw[k] = cent[k]
        if repair:
            _repair(cw, mass, cent, lo, hi, w, mu, sd)
        steps += 1
    final = distortion(w, mu, sd, lo, hi, cw) if tol > 0.0 else -1.0
    return cw, final, steps


@njit(cache=True)
def midpoints(cw):
    b = np.empty(cw.shape[0] - 1)
    for k in range(b.shape[0]):
        b[k] = 0.5 * (cw[k] + cw[k + 1])
    return b


@njit(cache=True)
def find_cell(bounds, x):
    # first boundary >= x; a point on a boundary goes to the lower cell
    lo = 0
    hi = bounds.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if bounds[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def cell_edges(bounds, idx, lo, hi):
    a = lo if idx == 0 else bounds[idx - 1]
    b = hi if idx == bounds.shape[0] else bounds[idx]
    return a, b


@njit(cache=True)
def bayes_predict(belief, lik, A, out):
    """out = normalize(belief * lik) @ A, renormalized; False if all mass vanished."""
    N = belief.shape[0]
    post = np.empty(N)
    s = 0.0
    for j in range(N):
        post[j] = belief[j] * lik[j]
        s += post[j]
    if not s > 0.0:
        return False
    for j in range(N):
        post[j] /= s
    predict(post, A, out)
    return True


@njit(cache=True)
def predict(post, A, out):
    N = post.shape[0]
    s = 0.0
    for i in range(N):
        acc = 0.0
        for j in range(N):
            acc += post[j] * A[j, i]
        out[i] = acc
        s += acc
    for i in range(N):
        out[i] /= s


@njit(cache=True)
def nearest_rep(belief, reps):
    best = 0
    best_d = np.inf
    for n in range(reps.shape[0]):
        d = 0.0
        for j in range(belief.shape[0]):
            diff = belief[j] - reps[n, j]
            d += diff * diff
        if d < best_d:
            best_d = d
            best = n
    return best


@njit(cache=True)
def adapt(belief, mu, sd, reps, bank, iters, out_w):
    """Online codebook for a belief: nearest class codebook + Lloyd iterations."""
    n = nearest_rep(belief, reps)
    support_weights(belief, mu, sd, -np.inf, np.inf, out_w)
    cw, _, _ = lloyd(out_w, mu, sd, -np.inf, np.inf, bank[n], iters, 0.0, True)
    return cw


@njit(cache=True)
def track(obs, given, mu, sd, A, pi, init_cw, reps, bank, iters, p_loss, received):
    """Run the tracking codec over a sequence.

    Encoding when ``given`` is empty, decoding otherwise.  ``p_loss`` > 0 selects
    the encoder-side expected-belief update; a non-empty ``received`` mask
    selects the decoder-side realized-outcome update (erasures are concealed
    with the predictive mean).  Returns indices, reconstructions and the
    predictive belief used at every step, and the transmitted cells.
    """
    n = obs.shape[0] if given.shape[0] == 0 else given.shape[0]
    N = mu.shape[0]
    decoding = given.shape[0] > 0
    lossy_dec = received.shape[0] > 0
    idx_out = np.empty(n, np.int64)
    rec = np.empty(n)
    beliefs = np.empty((n, N))
    cells = np.empty((n, 2))
    belief = pi.copy()
    w = np.empty(N)
    lik = np.empty(N)
    nxt = np.empty(N)
    nxt_loss = np.empty(N)
    for t in range(n):
        beliefs[t] = belief
        if t == 0:
            cw = init_cw
        else:
            cw = adapt(belief, mu, sd, reps, bank, iters, w)
        bounds = midpoints(cw)
        if lossy_dec and not received[t]:
            c = 0.0
            for j in range(N):
                c += belief[j] * mu[j]
            rec[t] = c
            idx_out[t] = -1
            cells[t, 0] = -np.inf
            cells[t, 1] = np.inf
            predict(belief, A, nxt)
            belief = nxt.copy()
            continue
        if decoding:
            k = given[t]
        else:
            k = find_cell(bounds, obs[t])
        idx_out[t] = k
        rec[t] = cw[k]
        a, b = cell_edges(bounds, k, -np.inf, np.inf)
        cells[t, 0] = a
        cells[t, 1] = b
        cell_masses(mu, sd, a, b, lik)
        ok = bayes_predict(belief, lik, A, nxt)
        if not ok:
            raise ValueError("cell has zero probability under every state")
        if p_loss > 0.0:
            predict(belief, A, nxt_loss)
            s = 0.0
            for j in range(N):
                nxt[j] = (1.0 - p_loss) * nxt[j] + p_loss * nxt_loss[j]
                s += nxt[j]
            for j in range(N):
                nxt[j] /= s
        belief = nxt.copy()
    return idx_out, rec, beliefs, cells


@njit(cache=True)
def backward_window(mu, sd, A, cells, t0, t1, out):
    """Scaled backward variable at t0-1 over base cells t0..t1-1 (out = 1 if empty)."""
    N = mu.shape[0]
    for i in range(N):
        out[i] = 1.0
    lik = np.empty(N)
    tmp = np.empty(N)
    for t in range(t1 - 1, t0 - 1, -1):
        cell_masses(mu, sd, cells[t, 0], cells[t, 1], lik)
        s = 0.0
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * lik[j] * out[j]
            tmp[i] = acc
            s += acc
        if not s > 0.0:
            raise ValueError("base cell window has zero probability")
        for i in range(N):
            out[i] = tmp[i] / s


@njit(cache=True)
def clip_cell(probs, mu, sd, a0, b0, clip_sigma, w):
    """Finite support for a semi-infinite cell: truncated-mixture mean -/+ clip_sigma std."""
    if not (math.isinf(a0) or math.isinf(b0)):
        return a0, b0
    if not support_weights(probs, mu, sd, a0, b0, w):
        raise ValueError("base cell has zero probability under every state")
    m0 = 0.0
    s1 = 0.0
    for j in range(mu.shape[0]):
        if w[j] == 0.0:
            continue
        m, a1, _ = component_moments(mu[j], sd[j], a0, b0, 0.0)
        m0 += w[j] * m
        s1 += w[j] * a1
    mean = s1 / m0
    s2 = 0.0
    for j in range(mu.shape[0]):
        if w[j] == 0.0:
            continue
        m, _, a2 = component_moments(mu[j], sd[j], a0, b0, mean)
        s2 += w[j] * a2
    s = math.sqrt(s2 / m0)
    lo = a0
    hi = b0
    if math.isinf(lo):
        lo = min(mean - clip_sigma * s, hi - s)
    if math.isinf(hi):
        hi = max(mean + clip_sigma * s, lo + s)
    return lo, hi


@njit(cache=True)
def enh_layer(obs, given, mu, sd, A, pi, base_cells, R2, iters, tol, clip_sigma, L):
    """Enhancement layer over precomputed base cells.

    ``L`` = 0 uses the enhancement tracker belief alone; ``L`` >= 1 folds in
    the base cells at t .. t+L-1 through a forward-backward product.
    Returns enhancement indices, reconstructions, the enhancement cells and the
    coding weights used at each step.
    """
    n = base_cells.shape[0]
    N = mu.shape[0]
    K = 1 << R2
    decoding = given.shape[0] > 0
    idx_out = np.empty(n, np.int64)
    rec = np.empty(n)
    enh_cells = np.empty((n, 2))
    used = np.empty((n, N))
    belief = pi.copy()
    w = np.empty(N)
    probs = np.empty(N)
    lik = np.empty(N)
    beta = np.empty(N)
    nxt = np.empty(N)
    init = np.empty(K)
    for t in range(n):
        a0 = base_cells[t, 0]
        b0 = base_cells[t, 1]
        if L >= 1:
            cell_masses(mu, sd, a0, b0, lik)
            t1 = min(t + L, n)
            backward_window(mu, sd, A, base_cells, t + 1, t1, beta)
            s = 0.0
            for j in range(N):
                probs[j] = belief[j] * lik[j] * beta[j]
                s += probs[j]
            if not s > 0.0:
                raise ValueError("delayed belief vanished")
            for j in range(N):
                probs[j] /= s
        else:
            for j in range(N):
                probs[j] = belief[j]
        used[t] = probs
        # the clip only places the uniform start; the design pdf keeps the whole cell
        lo, hi = clip_cell(probs, mu, sd, a0, b0, clip_sigma, w)
        ok = support_weights(probs, mu, sd, a0, b0, w)
        if not ok:
            raise ValueError("base cell has zero probability under every state")
        for k in range(K):
            init[k] = lo + (hi - lo) * (2 * k + 1) / (2 * K)
        cw, _, _ = lloyd(w, mu, sd, a0, b0, init, iters, tol, True)
        bounds = midpoints(cw)
        if decoding:
            k = given[t]
        else:
            k = find_cell(bounds, obs[t])
        idx_out[t] = k
        rec[t] = cw[k]
        # outer enhancement cells reach the unclipped base edges
        a, b = cell_edges(bounds, k, a0, b0)
        a = max(a, a0)
        b = min(b, b0)
        enh_cells[t, 0] = a
        enh_cells[t, 1] = b
        cell_masses(mu, sd, a, b, lik)
        if not bayes_predict(belief, lik, A, nxt):
            raise ValueError("enhancement cell has zero probability under every state")
        belief = nxt.copy()
    return idx_out, rec, enh_cells, used


@njit(cache=True)
def fsq_run(obs, given, books, nbounds, next_state):
    """Finite-state quantizer; ``books``/``nbounds`` are padded per-state arrays."""
    n = obs.shape[0] if given.shape[0] == 0 else given.shape[0]
    decoding = given.shape[0] > 0
    idx = np.empty(n, np.int64)
    rec = np.empty(n)
    states = np.empty(n, np.int64)
    s = 0
    for t in range(n):
        states[t] = s
        if decoding:
            k = given[t]
        else:
            k = find_cell(nbounds[s], obs[t])
        idx[t] = k
        rec[t] = books[s, k]
        s = next_state[s, k]
    return idx, rec, states


@njit(cache=True)
def dpcm_run(obs, given, a, m, x0, cw, received):
    n = obs.shape[0] if given.shape[0] == 0 else given.shape[0]
    decoding = given.shape[0] > 0
    lossy = received.shape[0] > 0
    bounds = midpoints(cw)
    idx = np.empty(n, np.int64)
    rec = np.empty(n)
    prev = x0
    for t in range(n):
        pred = m + a * (prev - m)
        if lossy and not received[t]:
            idx[t] = -1
            rec[t] = pred
            prev = pred
            continue
        if decoding:
            k = given[t]
        else:
            k = find_cell(bounds, obs[t] - pred)
        idx[t] = k
        rec[t] = pred + cw[k]
        prev = rec[t]
    return idx, rec


@njit(cache=True)
def forward_predictive(obs, mu, sd, A, pi):
    """Predictive beliefs P(q_t | O_1..O_{t-1}) from unquantized Gaussian data."""
    n = obs.shape[0]
    N = mu.shape[0]
    out = np.empty((n, N))
    belief = pi.copy()
    lik = np.empty(N)
    nxt = np.empty(N)
    for t in range(n):
        out[t] = belief
        for j in range(N):
            z = (obs[t] - mu[j]) / sd[j]
            lik[j] = max(math.exp(-0.5 * z * z) / sd[j], DENSITY_FLOOR)
        bayes_predict(belief, lik, A, nxt)
        belief = nxt.copy()
    return out


@njit(cache=True)
def clean_history_run(obs, beliefs, mu, sd, R, iters, tol):
    """Per-sample converged Lloyd quantizer on the clean-history belief mixture."""
    n = obs.shape[0]
    N = mu.shape[0]
    K = 1 << R
    w = np.empty(N)
    rec = np.empty(n)
    # warm start: quantiles-ish spread around the first mixture
    support_weights(beliefs[0], mu, sd, -np.inf, np.inf, w)
    m1 = 0.0
    m2 = 0.0
    for j in range(N):
        m1 += w[j] * mu[j]
        m2 += w[j] * (sd[j] * sd[j] + mu[j] * mu[j])
    s = math.sqrt(m2 - m1 * m1)
    cw = np.empty(K)
    for k in range(K):
        cw[k] = m1 + s * 3.0 * ((k + 0.5) / K - 0.5) * 2.0
    for t in range(n):
        support_weights(beliefs[t], mu, sd, -np.inf, np.inf, w)
        cw, _, _ = lloyd(w, mu, sd, -np.inf, np.inf, cw, iters, tol, True)
        bounds = midpoints(cw)
        rec[t] = cw[find_cell(bounds, obs[t])]
    return rec


@njit(cache=True)
def scaled_forward(B, A, pi):
    """Normalized forward variables and per-step scale factors.

    Returns (alpha, scales, bad) where ``bad`` is the first step whose total
    probability vanished, or -1.
    """
    n, N = B.shape
    alpha = np.empty((n, N))
    scales = np.empty(n)
    for t in range(n):
        s = 0.0
        for j in range(N):
            if t == 0:
                v = pi[j] * B[0, j]
            else:
                acc = 0.0
                for i in range(N):
                    acc += alpha[t - 1, i] * A[i, j]
                v = acc * B[t, j]
            alpha[t, j] = v
            s += v
        if not s > 0.0:
            return alpha, scales, t
        scales[t] = s
        for j in range(N):
            alpha[t, j] /= s
    return alpha, scales, -1


@njit(cache=True)
def scaled_backward(B, A, scales):
    n, N = B.shape
    beta = np.empty((n, N))
    for i in range(N):
        beta[n - 1, i] = 1.0
    for t in range(n - 2, -1, -1):
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * B[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / scales[t + 1]
    return beta


@njit(cache=True)
def xi_sum(alpha, beta, B, A, scales):
    n, N = B.shape
    out = np.zeros((N, N))
    for t in range(n - 1):
        for i in range(N):
            for j in range(N):
                out[i, j] += alpha[t, i] * A[i, j] * B[t + 1, j] * beta[t + 1, j] / scales[t + 1]
    return out


@njit(cache=True)
def sample_chain(cum, u, states):
    N = cum.shape[0]
    for t in range(1, u.shape[0]):
        row = cum[states[t - 1]]
        k = 0
        while k < N - 1 and u[t] >= row[k]:
            k += 1
        states[t] = k
