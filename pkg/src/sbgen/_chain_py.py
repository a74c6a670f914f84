"""Pure-Python chain kernel.

Scalar mirror of ``_chain.pyx``: same arithmetic in the same order, so the two
backends agree bit-for-bit on the same noise.  Used when the extension is not
built.
"""

import math


def point_energy_grad(code, dp, ip, inv_t, x, g):
    d = len(x)
    e = 0.0
    for i in range(d):
        g[i] = 0.0
    if code == 0:
        for i in range(d):
            r = x[i] - dp[i]
            e += 0.5 * dp[d + i] * r * r
            g[i] = dp[d + i] * r
    elif code == 1:
        K = ip[0]
        logits = [0.0] * K
        m = -math.inf
        for k in range(K):
            acc = dp[k]
            for i in range(d):
                r = x[i] - dp[K + k * d + i]
                acc -= 0.5 * dp[K + K * d + k * d + i] * r * r
            logits[k] = acc
            if acc > m:
                m = acc
        s = 0.0
        for k in range(K):
            logits[k] = math.exp(logits[k] - m)
            s += logits[k]
        e = -(m + math.log(s))
        for k in range(K):
            w = logits[k] / s
            for i in range(d):
                g[i] += w * dp[K + K * d + k * d + i] * (x[i] - dp[K + k * d + i])
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
                base = math.exp(cap)
                ev = base * (1.0 + (u - cap))
            else:
                base = math.exp(u)
                ev = base
            e += A * ev
            g[0] += A * base * (2.0 * a * dx + b * dy)
            g[1] += A * base * (b * dx + 2.0 * c * dy)
    else:
        n = ip[0]
        s = ip[1]
        a, b, c, d0 = dp[0], dp[1], dp[2], dp[3]
        diff = [0.0] * s
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(s):
                    diff[k] = x[i * s + k] - x[j * s + k]
                    r2 += diff[k] * diff[k]
                r = math.sqrt(r2)
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


def run_chain(code, dp, ip, inv_t, x, h, noise, unif, mala, out, step_offset, burn_in, thin):
    """Advance ``x`` (modified in place) by ``len(noise)`` ULA/MALA steps.

    Returns ``(accepted, rows_written, fail_step)`` with ``fail_step = -1`` on
    success.
    """
    dp = [float(v) for v in dp]
    ip = [int(v) for v in ip]
    noise = noise.tolist()
    unif = unif.tolist()
    d = len(x)
    xs = [float(v) for v in x]
    gx = [0.0] * d
    gy = [0.0] * d
    y = [0.0] * d
    ux = point_energy_grad(code, dp, ip, inv_t, xs, gx)
    sq = math.sqrt(2.0 * h)
    accepted = 0
    rows = 0
    fail = -1
    for k in range(len(noise)):
        nk = noise[k]
        for i in range(d):
            y[i] = xs[i] - h * gx[i] + sq * nk[i]
        uy = point_energy_grad(code, dp, ip, inv_t, y, gy)
        finite = math.isfinite(uy)
        for i in range(d):
            if not (math.isfinite(y[i]) and math.isfinite(gy[i])):
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
            take = math.log(unif[k]) < log_alpha
        if take:
            accepted += 1
            xs, y = y, xs
            gx, gy = gy, gx
            ux = uy
        t_abs = k + step_offset
        if t_abs >= burn_in and (t_abs - burn_in) % thin == 0:
            row = out[rows]
            for i in range(d):
                row[i] = xs[i]
            rows += 1
    for i in range(d):
        x[i] = xs[i]
    return accepted, rows, fail
