"""Hot per-cell kernels shared by the tensor, material, grid and solver layers.

Everything in here is nopython-compatible and wrapped by :func:`incplast._numba.njit`;
with ``INCPLAST_NO_NUMBA=1`` the identical source runs as plain numpy.  Matrices are
3x3 float64 arrays, cell fields are ``(ncells, 3, 3)`` with C-order flat index
``cell = (ix*ny + iy)*nz + iz`` and node fields ``(nnodes, 3)`` with
``node = (ix*(ny+1) + iy)*(nz+1) + iz``.

Coefficient packs (see material.py / flowrule.py):

* elastic ``ce = [alpha, beta, gamma_det, delta, q_e, zeta, w_off]``
* plastic ``cp = [h_p, c_p, q_p, s_p, p_off]``
* flow    ``fc = [r_0, g_0, r_max]``
"""
import math

import numpy as np

from ._numba import njit

# Thresholds for the matrix-function iterations.
_EXP_SCALE_LIMIT = 0.25
_LOG_SERIES_LIMIT = 0.25
_DEXP_TERMS = 30


# ---------------------------------------------------------------------------
# 3x3 primitives
# ---------------------------------------------------------------------------

@njit
def _frob(a):
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * a[i, j]
    return math.sqrt(s)


@njit
def _trace3(a):
    return a[0, 0] + a[1, 1] + a[2, 2]


@njit
def _dev3(a):
    out = a.copy()
    t = _trace3(a) / 3.0
    out[0, 0] -= t
    out[1, 1] -= t
    out[2, 2] -= t
    return out


@njit
def _det3(a):
    return (
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )


@njit
def _cof3(a):
    c = np.empty((3, 3))
    c[0, 0] = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    c[0, 1] = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    c[0, 2] = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    c[1, 0] = a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]
    c[1, 1] = a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
    c[1, 2] = a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]
    c[2, 0] = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
    c[2, 1] = a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]
    c[2, 2] = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return c


@njit
def _transpose3(a):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = a[j, i]
    return out


@njit
def _inv3(a):
    """Return (inverse, ok); ok is False for numerically singular input."""
    d = _det3(a)
    if abs(d) < 1e-30 or not math.isfinite(d):
        return np.zeros((3, 3)), False
    return _transpose3(_cof3(a)) / d, True


@njit
def _expm3(a):
    """Matrix exponential: scaling and squaring with a degree-6 diagonal Pade."""
    nrm = _frob(a)
    s = 0
    if nrm > _EXP_SCALE_LIMIT:
        s = int(math.ceil(math.log2(nrm / _EXP_SCALE_LIMIT)))
    x = a / (2.0 ** s)
    eye = np.eye(3)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    # p(z) = sum b_j z^j, even part v, odd part u; exp ~ (v-u)^{-1}(v+u)
    u = x @ (0.5 * eye + (1.0 / 66.0) * x2 + (1.0 / 15840.0) * x4)
    v = eye + (5.0 / 44.0) * x2 + (1.0 / 792.0) * x4 + (1.0 / 665280.0) * x6
    den_inv, ok = _inv3(v - u)
    if not ok:
        # unreachable for the scaled argument; keep a defined result anyway
        return np.eye(3)
    r = den_inv @ (v + u)
    for _ in range(s):
        r = r @ r
    return r


@njit
def _sqrtm3(m):
    """Principal square root by the Denman-Beavers iteration: (root, ok)."""
    y = m.copy()
    z = np.eye(3)
    for _ in range(60):
        yi, ok1 = _inv3(y)
        zi, ok2 = _inv3(z)
        if not (ok1 and ok2):
            return y, False
        yn = 0.5 * (y + zi)
        zn = 0.5 * (z + yi)
        step = _frob(yn - y)
        y = yn
        z = zn
        if not math.isfinite(step):
            return y, False
        if step <= 1e-15 * max(1.0, _frob(y)):
            break
    res = _frob(y @ y - m)
    return y, res <= 1e-11 * max(1.0, _frob(m))


@njit
def _logm3(m):
    """Principal matrix log by inverse scaling and squaring: (log, ok).

    ok is False when the square-root / series reduction fails, which happens
    exactly when the principal log does not exist (spectrum touching the
    closed negative real axis) or the input is singular.
    """
    eye = np.eye(3)
    x = m.copy()
    k = 0
    while _frob(x - eye) > _LOG_SERIES_LIMIT and k < 40:
        x, ok = _sqrtm3(x)
        if not ok:
            return np.zeros((3, 3)), False
        k += 1
    if _frob(x - eye) > _LOG_SERIES_LIMIT:
        return np.zeros((3, 3)), False
    # atanh (Gregory) series: log x = 2 sum_j z^(2j+1)/(2j+1), z = (x-I)(x+I)^-1
    inv_xp, ok = _inv3(x + eye)
    if not ok:
        return np.zeros((3, 3)), False
    z = (x - eye) @ inv_xp
    z2 = z @ z
    term = z.copy()
    total = np.zeros((3, 3))
    for j in range(12):
        total = total + term / (2.0 * j + 1.0)
        term = term @ z2
    return (2.0 ** (k + 1)) * total, True


@njit
def _dexp_adjoint(a, g, nterms):
    """Adjoint of the exponential differential at ``a`` applied to ``g``.

    Maps the gradient wrt ``exp(a)`` pulled back as ``g = exp(a)^T G P^T`` to the
    gradient wrt ``a`` via sum_k (-1)^k / (k+1)! ad_{a^T}^k (g).
    """
    at = a.T.copy()
    term = g.copy()
    total = g.copy()
    fact = 1.0
    sign = 1.0
    for k in range(1, nterms):
        term = at @ term - term @ at
        fact *= k + 1.0
        sign = -sign
        total = total + (sign / fact) * term
    return total


# ---------------------------------------------------------------------------
# energy densities and their gradients
# ---------------------------------------------------------------------------

@njit
def _dcof_adjoint(f, c):
    """Adjoint of the cofactor differential at ``f`` applied to ``c``."""
    trf = _trace3(f)
    trc = _trace3(c)
    ft = _transpose3(f)
    ct = _transpose3(c)
    cf = 0.0  # <c, f^T>
    for i in range(3):
        for j in range(3):
            cf += c[i, j] * ft[i, j]
    out = ft @ ct + ct @ ft - trf * ct - trc * ft
    for i in range(3):
        out[i, i] += trc * trf - cf
    return out


@njit
def _we_value(f, ce):
    alpha, beta, gamma_det, delta, q_e, zeta, w_off = ce[0], ce[1], ce[2], ce[3], ce[4], ce[5], ce[6]
    f2 = 0.0
    for i in range(3):
        for j in range(3):
            f2 += f[i, j] * f[i, j]
    c = _cof3(f)
    c2 = 0.0
    for i in range(3):
        for j in range(3):
            c2 += c[i, j] * c[i, j]
    d = _det3(f)
    return alpha * f2 + beta * c2 + gamma_det * (d - 1.0) ** 2 + delta * f2 ** (q_e / 2.0) + zeta * d + w_off


@njit
def _we_value_grad(f, ce):
    alpha, beta, gamma_det, delta, q_e, zeta, w_off = ce[0], ce[1], ce[2], ce[3], ce[4], ce[5], ce[6]
    f2 = 0.0
    for i in range(3):
        for j in range(3):
            f2 += f[i, j] * f[i, j]
    c = _cof3(f)
    c2 = 0.0
    for i in range(3):
        for j in range(3):
            c2 += c[i, j] * c[i, j]
    d = _det3(f)
    w = alpha * f2 + beta * c2 + gamma_det * (d - 1.0) ** 2 + delta * f2 ** (q_e / 2.0) + zeta * d + w_off
    g = (2.0 * alpha + delta * q_e * f2 ** ((q_e - 2.0) / 2.0)) * f
    g = g + (2.0 * gamma_det * (d - 1.0) + zeta) * c
    g = g + 2.0 * beta * _dcof_adjoint(f, c)
    return w, g


@njit
def _wp_value(p, ce_p):
    h_p, c_p, q_p, s_p, p_off = ce_p[0], ce_p[1], ce_p[2], ce_p[3], ce_p[4]
    dist2 = 0.0
    p2 = 0.0
    for i in range(3):
        for j in range(3):
            e = p[i, j] - (1.0 if i == j else 0.0)
            dist2 += e * e
            p2 += p[i, j] * p[i, j]
    return 0.5 * h_p * dist2 + (c_p / q_p) * p2 ** (q_p / 2.0) + s_p * _trace3(p) + p_off


@njit
def _wp_value_grad(p, ce_p):
    h_p, c_p, q_p, s_p, p_off = ce_p[0], ce_p[1], ce_p[2], ce_p[3], ce_p[4]
    dist2 = 0.0
    p2 = 0.0
    for i in range(3):
        for j in range(3):
            e = p[i, j] - (1.0 if i == j else 0.0)
            dist2 += e * e
            p2 += p[i, j] * p[i, j]
    w = 0.5 * h_p * dist2 + (c_p / q_p) * p2 ** (q_p / 2.0) + s_p * _trace3(p) + p_off
    g = c_p * p2 ** ((q_p - 2.0) / 2.0) * p + h_p * p
    for i in range(3):
        g[i, i] += s_p - h_p
    return w, g


@njit
def _piola(f, p, ce):
    """First Piola stress of the composite elastic density: (stress, ok)."""
    pinv, ok = _inv3(p)
    if not ok:
        return np.zeros((3, 3)), False
    fe = f @ pinv
    _, dwe = _we_value_grad(fe, ce)
    return dwe @ _transpose3(pinv), True


@njit
def _thermo(f, p, ce, cp):
    """Force conjugate to the plastic strain: (force, ok)."""
    pinv, ok = _inv3(p)
    if not ok:
        return np.zeros((3, 3)), False
    fe = f @ pinv
    _, dwe = _we_value_grad(fe, ce)
    _, dwp = _wp_value_grad(p, cp)
    return _transpose3(fe) @ dwe @ _transpose3(pinv) - dwp, True


@njit
def _resistance(x, fc):
    """State-dependent dissipation weight from the driving-force magnitude x."""
    r = fc[0] + (1.0 - fc[1]) * x
    if r > fc[2]:
        r = fc[2]
    return r


@njit
def _force_magnitude(n, p):
    """|dev(N P^T)| for the flow rule."""
    return _frob(_dev3(n @ _transpose3(p)))


# ---------------------------------------------------------------------------
# structured-grid operators
# ---------------------------------------------------------------------------

@njit
def _node_index(ix, iy, iz, ny, nz):
    return (ix * (ny + 1) + iy) * (nz + 1) + iz


@njit
def _gradient_y(y, nx, ny, nz, hx, hy, hz):
    """Cell-centered deformation gradient from nodal values (trilinear differences)."""
    out = np.zeros((nx * ny * nz, 3, 3))
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                c = (ix * ny + iy) * nz + iz
                for a in range(2):
                    for b in range(2):
                        for d in range(2):
                            node = _node_index(ix + a, iy + b, iz + d, ny, nz)
                            wx = (2.0 * a - 1.0) / (4.0 * hx)
                            wy = (2.0 * b - 1.0) / (4.0 * hy)
                            wz = (2.0 * d - 1.0) / (4.0 * hz)
                            for j in range(3):
                                yj = y[node, j]
                                out[c, j, 0] += yj * wx
                                out[c, j, 1] += yj * wy
                                out[c, j, 2] += yj * wz
    return out


@njit
def _gradient_y_adjoint(cellmats, nx, ny, nz, hx, hy, hz):
    """Adjoint of _gradient_y: scatter per-cell matrices to nodal vectors."""
    nnodes = (nx + 1) * (ny + 1) * (nz + 1)
    out = np.zeros((nnodes, 3))
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                c = (ix * ny + iy) * nz + iz
                for a in range(2):
                    for b in range(2):
                        for d in range(2):
                            node = _node_index(ix + a, iy + b, iz + d, ny, nz)
                            wx = (2.0 * a - 1.0) / (4.0 * hx)
                            wy = (2.0 * b - 1.0) / (4.0 * hy)
                            wz = (2.0 * d - 1.0) / (4.0 * hz)
                            for j in range(3):
                                out[node, j] += cellmats[c, j, 0] * wx + cellmats[c, j, 1] * wy + cellmats[c, j, 2] * wz
    return out


@njit
def _gradient_p(p, nx, ny, nz, hx, hy, hz):
    """Cell-lattice gradient of a matrix field: central inside, one-sided at faces."""
    out = np.zeros((nx * ny * nz, 3, 3, 3))
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                c = (ix * ny + iy) * nz + iz
                # axis 0
                if nx > 1:
                    if ix == 0:
                        cp = ((ix + 1) * ny + iy) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 0] = (p[cp, i, j] - p[c, i, j]) / hx
                    elif ix == nx - 1:
                        cm = ((ix - 1) * ny + iy) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 0] = (p[c, i, j] - p[cm, i, j]) / hx
                    else:
                        cp = ((ix + 1) * ny + iy) * nz + iz
                        cm = ((ix - 1) * ny + iy) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 0] = (p[cp, i, j] - p[cm, i, j]) / (2.0 * hx)
                # axis 1
                if ny > 1:
                    if iy == 0:
                        cp = (ix * ny + iy + 1) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 1] = (p[cp, i, j] - p[c, i, j]) / hy
                    elif iy == ny - 1:
                        cm = (ix * ny + iy - 1) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 1] = (p[c, i, j] - p[cm, i, j]) / hy
                    else:
                        cp = (ix * ny + iy + 1) * nz + iz
                        cm = (ix * ny + iy - 1) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 1] = (p[cp, i, j] - p[cm, i, j]) / (2.0 * hy)
                # axis 2
                if nz > 1:
                    if iz == 0:
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 2] = (p[c + 1, i, j] - p[c, i, j]) / hz
                    elif iz == nz - 1:
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 2] = (p[c, i, j] - p[c - 1, i, j]) / hz
                    else:
                        for i in range(3):
                            for j in range(3):
                                out[c, i, j, 2] = (p[c + 1, i, j] - p[c - 1, i, j]) / (2.0 * hz)
    return out


@njit
def _gradient_p_adjoint(g, nx, ny, nz, hx, hy, hz):
    """Adjoint of _gradient_p on cell matrix fields."""
    out = np.zeros((nx * ny * nz, 3, 3))
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                c = (ix * ny + iy) * nz + iz
                if nx > 1:
                    if ix == 0:
                        cp = ((ix + 1) * ny + iy) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 0] / hx
                                out[cp, i, j] += v
                                out[c, i, j] -= v
                    elif ix == nx - 1:
                        cm = ((ix - 1) * ny + iy) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 0] / hx
                                out[c, i, j] += v
                                out[cm, i, j] -= v
                    else:
                        cp = ((ix + 1) * ny + iy) * nz + iz
                        cm = ((ix - 1) * ny + iy) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 0] / (2.0 * hx)
                                out[cp, i, j] += v
                                out[cm, i, j] -= v
                if ny > 1:
                    if iy == 0:
                        cp = (ix * ny + iy + 1) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 1] / hy
                                out[cp, i, j] += v
                                out[c, i, j] -= v
                    elif iy == ny - 1:
                        cm = (ix * ny + iy - 1) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 1] / hy
                                out[c, i, j] += v
                                out[cm, i, j] -= v
                    else:
                        cp = (ix * ny + iy + 1) * nz + iz
                        cm = (ix * ny + iy - 1) * nz + iz
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 1] / (2.0 * hy)
                                out[cp, i, j] += v
                                out[cm, i, j] -= v
                if nz > 1:
                    if iz == 0:
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 2] / hz
                                out[c + 1, i, j] += v
                                out[c, i, j] -= v
                    elif iz == nz - 1:
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 2] / hz
                                out[c, i, j] += v
                                out[c - 1, i, j] -= v
                    else:
                        for i in range(3):
                            for j in range(3):
                                v = g[c, i, j, 2] / (2.0 * hz)
                                out[c + 1, i, j] += v
                                out[c - 1, i, j] -= v
    return out


@njit
def _space_convolve(field, nx, ny, nz, offsets, weights):
    """Stencil convolution of a cell matrix field, zero extension outside the box.

    ``weights`` already include the cell volume, so an interior stencil sums to 1.
    """
    out = np.zeros_like(field)
    nofs = offsets.shape[0]
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                c = (ix * ny + iy) * nz + iz
                for k in range(nofs):
                    jx = ix + offsets[k, 0]
                    jy = iy + offsets[k, 1]
                    jz = iz + offsets[k, 2]
                    if jx < 0 or jx >= nx or jy < 0 or jy >= ny or jz < 0 or jz >= nz:
                        continue
                    src = (jx * ny + jy) * nz + jz
                    w = weights[k]
                    for i in range(3):
                        for j in range(3):
                            out[c, i, j] += w * field[src, i, j]
    return out


# ---------------------------------------------------------------------------
# assembled objectives
# ---------------------------------------------------------------------------

@njit
def _y_objective(y, pinv, nx, ny, nz, hx, hy, hz, ce):
    """Elastic part of the stored energy and its nodal gradient for fixed P.

    Returns (sum of elastic densities, nodal gradient of that sum, ok).
    """
    nnodes = (nx + 1) * (ny + 1) * (nz + 1)
    grad = np.zeros((nnodes, 3))
    total = 0.0
    ok = True
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                c = (ix * ny + iy) * nz + iz
                g = np.zeros((3, 3))
                for a in range(2):
                    for b in range(2):
                        for d in range(2):
                            node = _node_index(ix + a, iy + b, iz + d, ny, nz)
                            wx = (2.0 * a - 1.0) / (4.0 * hx)
                            wy = (2.0 * b - 1.0) / (4.0 * hy)
                            wz = (2.0 * d - 1.0) / (4.0 * hz)
                            for j in range(3):
                                yj = y[node, j]
                                g[j, 0] += yj * wx
                                g[j, 1] += yj * wy
                                g[j, 2] += yj * wz
                fe = g @ pinv[c]
                w, dwe = _we_value_grad(fe, ce)
                if not math.isfinite(w):
                    ok = False
                total += w
                pio = dwe @ _transpose3(pinv[c])
                for a in range(2):
                    for b in range(2):
                        for d in range(2):
                            node = _node_index(ix + a, iy + b, iz + d, ny, nz)
                            wx = (2.0 * a - 1.0) / (4.0 * hx)
                            wy = (2.0 * b - 1.0) / (4.0 * hy)
                            wz = (2.0 * d - 1.0) / (4.0 * hz)
                            for j in range(3):
                                grad[node, j] += pio[j, 0] * wx + pio[j, 1] * wy + pio[j, 2] * wz
    return total, grad, ok


@njit
def _energy_density_cells(grady, p, gradp, ce, cp, mu, q_r):
    """Per-cell stored-energy density (elastic + plastic + strain-gradient)."""
    n = grady.shape[0]
    dens = np.zeros(n)
    ok = True
    for c in range(n):
        pinv, inv_ok = _inv3(p[c])
        if not inv_ok:
            ok = False
            continue
        fe = grady[c] @ pinv
        gp2 = 0.0
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    gp2 += gradp[c, i, j, k] * gradp[c, i, j, k]
        dens[c] = _we_value(fe, ce) + _wp_value(p[c], cp) + (mu / q_r) * gp2 ** (q_r / 2.0)
    return dens, ok


@njit
def _p_objective(grady, p, nx, ny, nz, hx, hy, hz, ce, cp, mu, q_r, want_grad):
    """Stored-energy sum over cells and its gradient wrt the plastic field.

    Returns (density sum, per-cell gradient, ok); the gradient entry is zeros
    when ``want_grad`` is False.
    """
    n = p.shape[0]
    gradp = _gradient_p(p, nx, ny, nz, hx, hy, hz)
    total = 0.0
    ok = True
    grad = np.zeros((n, 3, 3))
    s_field = np.zeros((n, 3, 3, 3))
    for c in range(n):
        pinv, inv_ok = _inv3(p[c])
        if not inv_ok:
            ok = False
            continue
        fe = grady[c] @ pinv
        gp2 = 0.0
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    gp2 += gradp[c, i, j, k] * gradp[c, i, j, k]
        if want_grad:
            we, dwe = _we_value_grad(fe, ce)
            wp, dwp = _wp_value_grad(p[c], cp)
            grad[c] = -(_transpose3(fe) @ dwe @ _transpose3(pinv)) + dwp
            scale = mu * gp2 ** ((q_r - 2.0) / 2.0)
            for i in range(3):
                for j in range(3):
                    for k in range(3):
                        s_field[c, i, j, k] = scale * gradp[c, i, j, k]
        else:
            we = _we_value(fe, ce)
            wp = _wp_value(p[c], cp)
        total += we + wp + (mu / q_r) * gp2 ** (q_r / 2.0)
        if not math.isfinite(total):
            ok = False
    if want_grad:
        grad = grad + _gradient_p_adjoint(s_field, nx, ny, nz, hx, hy, hz)
    return total, grad, ok


@njit
def _compose_exp(afield, pbase):
    """Per-cell exp(A) P for an increment field over a base plastic field."""
    n = pbase.shape[0]
    out = np.empty_like(pbase)
    for c in range(n):
        out[c] = _expm3(afield[c]) @ pbase[c]
    return out


@njit
def _chain_to_increment(afield, gfield, pbase):
    """Pull a plastic-field gradient back to the traceless increment field.

    For the parameterization P = exp(A) P_base: grad_A = dev(dexp*(A, exp(A)^T G P_base^T)).
    """
    n = pbase.shape[0]
    out = np.empty_like(gfield)
    for c in range(n):
        m0 = _transpose3(_expm3(afield[c])) @ gfield[c] @ _transpose3(pbase[c])
        out[c] = _dev3(_dexp_adjoint(afield[c], m0, _DEXP_TERMS))
    return out


@njit
def _resistance_weights(fhat, ptilde, ce, cp, fc):
    """Per-cell dissipation weight r evaluated at the given probe states."""
    n = ptilde.shape[0]
    out = np.empty(n)
    ok = True
    for c in range(n):
        nn, t_ok = _thermo(fhat[c], ptilde[c], ce, cp)
        if not t_ok:
            ok = False
            out[c] = fc[0]
            continue
        out[c] = _resistance(_force_magnitude(nn, ptilde[c]), fc)
    return out, ok


# ---------------------------------------------------------------------------
# dissipation-path costs
# ---------------------------------------------------------------------------

@njit
def _segment_cost(f, q0, q1, ce, cp, fc, nq):
    """Cost of one exponential segment q0 -> q1: (cost, travel, ok).

    The state-dependent weight r is averaged over ``nq`` interior quadrature
    points of the segment (composite midpoint rule).
    """
    q0inv, ok = _inv3(q0)
    if not ok:
        return 0.0, 0.0, False
    l, log_ok = _logm3(q1 @ q0inv)
    if not log_ok:
        return 0.0, 0.0, False
    travel = _frob(l)
    if travel < 1e-15:
        return 0.0, 0.0, True
    acc = 0.0
    for j in range(nq):
        t = (j + 0.5) / nq
        mid = _expm3(t * l) @ q0
        nn, t_ok = _thermo(f, mid, ce, cp)
        if not t_ok:
            return 0.0, 0.0, False
        acc += _resistance(_force_magnitude(nn, mid), fc)
    return (acc / nq) * travel, travel, True


@njit
def _path_cost(points, f, ce, cp, fc, nq):
    """Weighted cost of a piecewise-exponential path through ``points``."""
    m = points.shape[0] - 1
    total = 0.0
    travel = 0.0
    for k in range(m):
        c, t, ok = _segment_cost(f, points[k], points[k + 1], ce, cp, fc, nq)
        if not ok:
            return 0.0, 0.0, False
        total += c
        travel += t
    return total, travel, True


@njit
def _traceless_basis():
    """Orthonormal basis of the 8-dimensional traceless matrix space."""
    basis = np.zeros((8, 3, 3))
    isq2 = 1.0 / math.sqrt(2.0)
    # off-diagonal pairs
    basis[0, 0, 1] = 1.0
    basis[1, 1, 0] = 1.0
    basis[2, 0, 2] = 1.0
    basis[3, 2, 0] = 1.0
    basis[4, 1, 2] = 1.0
    basis[5, 2, 1] = 1.0
    # diagonal traceless directions
    basis[6, 0, 0] = isq2
    basis[6, 1, 1] = -isq2
    basis[7, 0, 0] = 1.0 / math.sqrt(6.0)
    basis[7, 1, 1] = 1.0 / math.sqrt(6.0)
    basis[7, 2, 2] = -2.0 / math.sqrt(6.0)
    return basis


@njit
def _local_cost(points, j, f, ce, cp, fc, nq):
    """Cost of the two segments adjacent to interior point ``j``."""
    c0, t0, ok0 = _segment_cost(f, points[j - 1], points[j], ce, cp, fc, nq)
    if not ok0:
        return 0.0, 0.0, False
    c1, t1, ok1 = _segment_cost(f, points[j], points[j + 1], ce, cp, fc, nq)
    if not ok1:
        return 0.0, 0.0, False
    return c0 + c1, t0 + t1, True


@njit
def _refine_path(points, f, ce, cp, fc, nq, iters, fd_step):
    """Monotone descent on the interior points of a piecewise-exponential path.

    Each interior point moves as Q_j <- exp(t B) Q_j along the finite-difference
    steepest-descent direction B of the two adjacent segment costs; steps are
    backtracked and accepted only on strict decrease, so the total cost never
    increases.  Modifies ``points`` in place and returns (cost, travel, ok).
    """
    m = points.shape[0] - 1
    basis = _traceless_basis()
    grad = np.empty(8)
    for _ in range(iters):
        for j in range(1, m):
            base, local_travel, ok = _local_cost(points, j, f, ce, cp, fc, nq)
            if not ok:
                continue
            scale = max(local_travel, 1e-8)
            for i in range(8):
                step = fd_step * scale
                moved = _expm3(step * basis[i]) @ points[j]
                saved = points[j].copy()
                points[j] = moved
                cp_plus, _, okp = _local_cost(points, j, f, ce, cp, fc, nq)
                points[j] = _expm3(-step * basis[i]) @ saved
                cp_minus, _, okm = _local_cost(points, j, f, ce, cp, fc, nq)
                points[j] = saved
                if okp and okm:
                    grad[i] = (cp_plus - cp_minus) / (2.0 * step)
                else:
                    grad[i] = 0.0
            gnorm = 0.0
            for i in range(8):
                gnorm += grad[i] * grad[i]
            gnorm = math.sqrt(gnorm)
            if gnorm < 1e-13:
                continue
            b = np.zeros((3, 3))
            for i in range(8):
                b += (-grad[i] / gnorm) * basis[i]
            t = 0.25 * scale
            for _try in range(12):
                cand = _expm3(t * b) @ points[j]
                saved = points[j].copy()
                points[j] = cand
                new_cost, _, ok_new = _local_cost(points, j, f, ce, cp, fc, nq)
                if ok_new and new_cost < base - 1e-15:
                    break
                points[j] = saved
                t *= 0.5
    return _path_cost(points, f, ce, cp, fc, nq)
