# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ULA/MALA chain kernel.

Must stay arithmetically identical to ``_chain_py.py``; tests compare the two
backends on the same noise.
"""

from libc.math cimport exp, log, sqrt, isfinite, INFINITY
from libc.stdlib cimport malloc, free


cdef double _energy_grad(int code, const double* dp, const long* ip, double inv_t,
                         const double* x, double* g, int d) noexcept nogil:
    cdef double e = 0.0
    cdef int i, j, k, K, n, s
    cdef double r, acc, m, ssum, w, a, b, c, d0, q, A, dx, dy, u, base, ev, cap
    cdef double r2, u2, dedr, f
    cdef double* logits
    cdef double diff[8]
    for i in range(d):
        g[i] = 0.0
    if code == 0:
        for i in range(d):
            r = x[i] - dp[i]
            e += 0.5 * dp[d + i] * r * r
            g[i] = dp[d + i] * r
    elif code == 1:
        K = <int>ip[0]
        logits = <double*>malloc(K * sizeof(double))
        m = -INFINITY
        for k in range(K):
            acc = dp[k]
            for i in range(d):
                r = x[i] - dp[K + k * d + i]
                acc -= 0.5 * dp[K + K * d + k * d + i] * r * r
            logits[k] = acc
            if acc > m:
                m = acc
        ssum = 0.0
        for k in range(K):
            logits[k] = exp(logits[k] - m)
            ssum += logits[k]
        e = -(m + log(ssum))
        for k in range(K):
            w = logits[k] / ssum
            for i in range(d):
                g[i] += w * dp[K + K * d + k * d + i] * (x[i] - dp[K + k * d + i])
        free(logits)
    elif code == 2:
        a = dp[0]
        b = dp[1]
        q = x[0] * x[0] - 1.0
        e = a * q * q + b * x[0]
        g[0] = 4.0 * a * x[0] * q + b
        for i in range(1, d):
            e += 0.5 * x[i] * x[i]
            g[i] = x[i]
    elif code == 3:
        cap = dp[24]
        for j in range(4):
            A = dp[j]
            a = dp[4 + j]
            b = dp[8 + j]
            c = dp[12 + j]
            dx = x[0] - dp[16 + j]
            dy = x[1] - dp[20 + j]
            u = a * dx * dx + b * dx * dy + c * dy * dy
            if u > cap:
                base = exp(cap)
                ev = base * (1.0 + (u - cap))
            else:
                base = exp(u)
                ev = base
            e += A * ev
            g[0] += A * base * (2.0 * a * dx + b * dy)
            g[1] += A * base * (b * dx + 2.0 * c * dy)
    else:
        n = <int>ip[0]
        s = <int>ip[1]
        a = dp[0]
        b = dp[1]
        c = dp[2]
        d0 = dp[3]
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(s):
                    diff[k] = x[i * s + k] - x[j * s + k]
                    r2 += diff[k] * diff[k]
                r = sqrt(r2)
                u = r - d0
                u2 = u * u
                e += a * u + b * u2 + c * u2 * u2
                dedr = a + 2.0 * b * u + 4.0 * c * u2 * u
                f = dedr / (r if r > 1e-12 else 1e-12)
                for k in range(s):
                    g[i * s + k] += f * diff[k]
                    g[j * s + k] -= f * diff[k]
    for i in range(d):
        g[i] *= inv_t
    return e * inv_t


def point_energy_grad(int code, const double[::1] dp, const long[::1] ip, double inv_t,
                      const double[::1] x, double[::1] g):
    cdef const long* ipp = &ip[0] if ip.shape[0] > 0 else NULL
    return _energy_grad(code, &dp[0], ipp, inv_t, &x[0], &g[0], x.shape[0])


def run_chain(int code, const double[::1] dp, const long[::1] ip, double inv_t,
              double[::1] x, double h, const double[:, ::1] noise, const double[::1] unif,
              bint mala, double[:, ::1] out, long step_offset, long burn_in, long thin):
    cdef int d = x.shape[0]
    cdef long nsteps = noise.shape[0]
    cdef const long* ipp = &ip[0] if ip.shape[0] > 0 else NULL
    if code == 4 and ip[1] > 8:
        raise ValueError("compiled kernel supports spatial_dim <= 8")
    cdef double* buf = <double*>malloc(4 * d * sizeof(double))
    cdef double* xs = buf
    cdef double* y = buf + d
    cdef double* gx = buf + 2 * d
    cdef double* gy = buf + 3 * d
    cdef double* tmp
    cdef double ux, uy, sq, fwd, bwd, t, log_alpha
    cdef long k, t_abs, accepted = 0, rows = 0, fail = -1
    cdef int i
    cdef bint finite, take
    for i in range(d):
        xs[i] = x[i]
    with nogil:
        ux = _energy_grad(code, &dp[0], ipp, inv_t, xs, gx, d)
        sq = sqrt(2.0 * h)
        for k in range(nsteps):
            for i in range(d):
                y[i] = xs[i] - h * gx[i] + sq * noise[k, i]
            uy = _energy_grad(code, &dp[0], ipp, inv_t, y, gy, d)
            finite = isfinite(uy)
            for i in range(d):
                if not (isfinite(y[i]) and isfinite(gy[i])):
                    finite = False
            if not finite:
                fail = k + step_offset
                break
            take = True
            if mala:
                fwd = 0.0
                bwd = 0.0
                for i in range(d):
                    t = y[i] - xs[i] + h * gx[i]
                    fwd += t * t
                    t = xs[i] - y[i] + h * gy[i]
                    bwd += t * t
                log_alpha = ux - uy + (fwd - bwd) / (4.0 * h)
                take = log(unif[k]) < log_alpha
            if take:
                accepted += 1
                tmp = xs; xs = y; y = tmp
                tmp = gx; gx = gy; gy = tmp
                ux = uy
            t_abs = k + step_offset
            if t_abs >= burn_in and (t_abs - burn_in) % thin == 0:
                for i in range(d):
                    out[rows, i] = xs[i]
                rows += 1
    for i in range(d):
        x[i] = xs[i]
    free(buf)
    return accepted, rows, fail
