"""Standalone scalar recursions used as test oracles.

They call only the public scalar maps and never the engine code.
"""
import math

from coupled_de.functions import cf, cf_inv, j_fun, j_inv, phi, phi_inv, reciprocal_snr

INF = math.inf
PROMOTE = 1e-9


def _promote_ga(m):
    return INF if m == INF or 1.0 - j_fun(m) < PROMOTE else m


def _promote_rca(z):
    return INF if z == INF or 1.0 - cf(z) < PROMOTE else z


def _ga_chk(terms):
    """phi^-1(1 - prod (1 - phi(m))^q) via logs."""
    s = 0.0
    for m, q in terms:
        f = phi(m)
        if f == 1.0:
            return 0.0
        s += q * math.log1p(-f)
    return phi_inv(-math.expm1(s))


def regular_ga(dv, dc, sigma, n_iter):
    """MI of the variable message after each iteration (index 0 = channel)."""
    x = _promote_ga(2 / sigma ** 2)
    out = [j_fun(x)]
    for _ in range(n_iter):
        y = _ga_chk([(x, dc - 1)])
        x = _promote_ga(2 / sigma ** 2 + (dv - 1) * y)
        out.append(j_fun(x))
    return out


def regular_rca(dv, dc, sigma, n_iter):
    x = _promote_rca(1 / sigma ** 2)
    out = [cf(x)]
    for _ in range(n_iter):
        y = (dc - 1) * reciprocal_snr(x)
        x = _promote_rca(1 / sigma ** 2 + (dv - 1) * reciprocal_snr(y))
        out.append(cf(x))
    return out


# (3,6,3,2): edge e joins variable VAR[e] and check CHK[e]; q_var = 1, q_chk = 2
VAR = {1: 1, 2: 1, 3: 1, 4: 2, 5: 2, 6: 2}
CHK = {1: 1, 2: 2, 3: 3, 4: 2, 5: 3, 6: 4}


def met3623_rca(sigma, n_iter):
    ch = 1 / sigma ** 2
    x = {e: _promote_rca(ch) for e in VAR}
    hist = [dict(x)]
    for _ in range(n_iter):
        r = {e: reciprocal_snr(x[e]) for e in x}
        y = {
            1: r[1],
            2: r[2] + 2 * r[4], 4: r[4] + 2 * r[2],
            3: r[3] + 2 * r[5], 5: r[5] + 2 * r[3],
            6: r[6],
        }
        s = {e: reciprocal_snr(y[e]) for e in y}
        x = {
            1: ch + s[2] + s[3], 2: ch + s[1] + s[3], 3: ch + s[1] + s[2],
            4: ch + s[5] + s[6], 5: ch + s[4] + s[6], 6: ch + s[4] + s[5],
        }
        x = {e: _promote_rca(v) for e, v in x.items()}
        hist.append(dict(x))
    return hist


def met3623_ga(sigma, n_iter):
    ch = 2 / sigma ** 2
    x = {e: _promote_ga(ch) for e in VAR}
    hist = [dict(x)]
    for _ in range(n_iter):
        y = {
            1: _ga_chk([(x[1], 1)]),
            2: _ga_chk([(x[2], 1), (x[4], 2)]), 4: _ga_chk([(x[4], 1), (x[2], 2)]),
            3: _ga_chk([(x[3], 1), (x[5], 2)]), 5: _ga_chk([(x[5], 1), (x[3], 2)]),
            6: _ga_chk([(x[6], 1)]),
        }
        y = {e: _promote_ga(v) for e, v in y.items()}
        x = {
            1: ch + y[2] + y[3], 2: ch + y[1] + y[3], 3: ch + y[1] + y[2],
            4: ch + y[5] + y[6], 5: ch + y[4] + y[6], 6: ch + y[4] + y[5],
        }
        x = {e: _promote_ga(v) for e, v in x.items()}
        hist.append(dict(x))
    return hist


def two_type_ga(sigma, n_iter):
    """B = [[2,1],[1,2]], uncoupled, single position.

    Each node J-averages its incoming values weighted by edge multiplicity
    and applies the GA rule with its own degree minus one.
    """
    ch = 2 / sigma ** 2
    xa = xb = ch
    hist = [(xa, xb)]
    for _ in range(n_iter):
        m0 = j_inv((2 * j_fun(xa) + j_fun(xb)) / 3)
        m1 = j_inv((j_fun(xa) + 2 * j_fun(xb)) / 3)
        y0 = _promote_ga(_ga_chk([(m0, 2)]))
        y1 = _promote_ga(_ga_chk([(m1, 2)]))
        xa = _promote_ga(ch + 2 * j_inv((2 * j_fun(y0) + j_fun(y1)) / 3))
        xb = _promote_ga(ch + 2 * j_inv((j_fun(y0) + 2 * j_fun(y1)) / 3))
        hist.append((xa, xb))
    return hist
