"""Box grid: discrete gradients, boundary bookkeeping, load assembly."""
import numpy as np
import pytest

from incplast.grid import (
    Grid,
    LoadProgram,
    SizeMismatchError,
    TimeOutOfRangeError,
    external_power,
    external_work,
    gradient_P,
    gradient_y,
)


@pytest.fixture(scope="module")
def unit_grid():
    return Grid((1.0, 1.0, 1.0), (3, 3, 3))


def test_grid_construction_and_indexers():
    g = Grid((1.0, 0.5, 0.25), (2, 3, 4))
    assert g.ncells == 24
    assert g.nnodes == 3 * 4 * 5
    assert g.cell_sizes == (0.5, 0.5 / 3, 0.0625)
    assert g.cell_volume == pytest.approx(0.5 * (0.5 / 3) * 0.0625, rel=1e-15)
    assert g.node_index(2, 3, 4) == g.nnodes - 1
    assert g.cell_index(1, 2, 3) == g.ncells - 1
    corners = g.cell_corner_nodes[g.cell_index(0, 0, 0)]
    assert corners[0] == g.node_index(0, 0, 0)
    assert corners[-1] == g.node_index(1, 1, 1)
    with pytest.raises(ValueError):
        Grid((1.0, -1.0, 1.0), (2, 2, 2))
    with pytest.raises(ValueError):
        Grid((1.0, 1.0, 1.0), (0, 2, 2))


def test_default_clamping_is_x_zero_face(unit_grid):
    g = unit_grid
    clamped = g.node_positions[g.dirichlet_nodes]
    assert clamped.shape[0] == 16  # (ny+1)*(nz+1)
    assert np.all(clamped[:, 0] == 0.0)
    free = g.node_positions[g.free_nodes]
    assert np.all(free[:, 0] > 0.0)
    with pytest.raises(ValueError):
        Grid((1.0, 1.0, 1.0), (2, 2, 2), dirichlet_nodes=np.zeros(27, bool))
    with pytest.raises(SizeMismatchError):
        Grid((1.0, 1.0, 1.0), (2, 2, 2), dirichlet_nodes=np.zeros(5, bool))


def test_traction_faces_disjoint_from_clamped_face():
    g = Grid((1.0, 0.5, 0.25), (2, 3, 4))
    # every boundary face except the clamped plane x = 0
    assert g.nfaces == 2 * (3 * 4 + 2 * 4 + 2 * 3) - 3 * 4
    assert np.all(g.neumann_face_centers[:, 0] > 0.0)
    fully_clamped = g.dirichlet_nodes[g.neumann_face_nodes].all(axis=1)
    assert not fully_clamped.any()
    total_area = 2 * (0.5 * 0.25 + 1.0 * 0.25 + 1.0 * 0.5)
    assert g.neumann_face_area.sum() == pytest.approx(total_area - 0.5 * 0.25, rel=1e-12)


def test_cell_average_of_identity_is_cell_center(unit_grid):
    g = unit_grid
    avg = g.cell_average_nodal(g.identity_deformation())
    np.testing.assert_allclose(avg, g.cell_centers, atol=1e-14)


def test_gradient_y_identity_and_affine(unit_grid):
    g = unit_grid
    gy = gradient_y(g, g.identity_deformation())
    np.testing.assert_allclose(gy, np.broadcast_to(np.eye(3), (g.ncells, 3, 3)), atol=1e-13)
    rng = np.random.default_rng(90)
    amat = np.eye(3) + 0.5 * rng.standard_normal((3, 3))
    c = rng.standard_normal(3)
    y = g.node_positions @ amat.T + c
    gy = gradient_y(g, y)
    np.testing.assert_allclose(gy, np.broadcast_to(amat, (g.ncells, 3, 3)), atol=1e-12)


def test_gradient_y_matches_interpolant_difference(unit_grid):
    # independent oracle: finite differences of the trilinear interpolant at
    # the cell center reproduce the discrete gradient
    g = unit_grid
    rng = np.random.default_rng(91)
    y = rng.standard_normal((g.nnodes, 3))
    hx, hy, hz = g.cell_sizes

    def interp(cell, local):
        ix, iy, iz = cell
        sx, sy, sz = local  # in [0,1]^3
        val = np.zeros(3)
        for a in (0, 1):
            for b in (0, 1):
                for d in (0, 1):
                    w = ((1 - sx, sx)[a]) * ((1 - sy, sy)[b]) * ((1 - sz, sz)[d])
                    val += w * y[g.node_index(ix + a, iy + b, iz + d)]
        return val

    eps = 1e-6
    for cell in ((0, 0, 0), (1, 2, 0), (2, 1, 2)):
        num = np.empty((3, 3))
        for ax, h in enumerate((hx, hy, hz)):
            lo = [0.5, 0.5, 0.5]
            hi = [0.5, 0.5, 0.5]
            lo[ax] -= eps
            hi[ax] += eps
            num[:, ax] = (interp(cell, hi) - interp(cell, lo)) / (2 * eps * h)
        got = gradient_y(g, y)[g.cell_index(*cell)]
        np.testing.assert_allclose(got, num, atol=1e-8)


def test_gradient_y_size_guard(unit_grid):
    with pytest.raises(SizeMismatchError):
        gradient_y(unit_grid, np.zeros((5, 3)))


def test_gradient_p_constant_and_affine(unit_grid):
    g = unit_grid
    const = np.broadcast_to(np.arange(9.0).reshape(3, 3), (g.ncells, 3, 3)).copy()
    np.testing.assert_allclose(gradient_P(g, const), 0.0, atol=1e-14)
    rng = np.random.default_rng(92)
    slopes = rng.standard_normal((3, 3, 3))  # d P_ij / d x_k
    p = np.einsum("ijk,ck->cij", slopes, g.cell_centers) + 1.0
    gp = gradient_P(g, p)
    np.testing.assert_allclose(gp, np.broadcast_to(slopes, (g.ncells, 3, 3, 3)), atol=1e-12)
    with pytest.raises(SizeMismatchError):
        gradient_P(g, np.zeros((g.ncells, 3)))


def test_gradient_p_second_order_interior():
    # smooth synthetic field: interior central differences converge at O(h^2)
    scale = np.arange(1.0, 10.0).reshape(3, 3)

    def field(pts):
        phi = np.sin(2 * pts[:, 0] + pts[:, 1]) * np.cos(3 * pts[:, 2])
        return phi[:, None, None] * scale

    def exact_grad(pts):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        gx = 2 * np.cos(2 * x + y) * np.cos(3 * z)
        gy = np.cos(2 * x + y) * np.cos(3 * z)
        gz = -3 * np.sin(2 * x + y) * np.sin(3 * z)
        return scale[None, :, :, None] * np.stack([gx, gy, gz], axis=1)[:, None, None, :]

    errs = []
    for n in (4, 8, 16):
        g = Grid((1.0, 1.0, 1.0), (n, n, n))
        gp = gradient_P(g, field(g.cell_centers))
        err = np.abs(gp - exact_grad(g.cell_centers))
        box = err.reshape(n, n, n, 3, 3, 3)
        errs.append(box[1:-1, 1:-1, 1:-1].max())
    assert 0.15 <= errs[1] / errs[0] <= 0.4
    assert 0.15 <= errs[2] / errs[1] <= 0.4


def test_load_program_validation(unit_grid):
    g = unit_grid
    with pytest.raises(ValueError):
        LoadProgram(g, [0.0], np.zeros((1, g.ncells, 3)), np.zeros((1, g.nfaces, 3)))
    with pytest.raises(ValueError):
        LoadProgram(g, [0.0, 0.0], np.zeros((2, g.ncells, 3)), np.zeros((2, g.nfaces, 3)))
    with pytest.raises(SizeMismatchError):
        LoadProgram(g, [0.0, 1.0], np.zeros((2, 5, 3)), np.zeros((2, g.nfaces, 3)))
    with pytest.raises(SizeMismatchError):
        LoadProgram(g, [0.0, 1.0], np.zeros((2, g.ncells, 3)), np.zeros((2, 5, 3)))


def test_zero_loads_zero_work(unit_grid):
    g = unit_grid
    loads = LoadProgram.zero(g, 2.0)
    y = g.identity_deformation()
    assert external_work(y, 0.7, loads) == 0.0
    assert external_power(y, 0.7, loads) == 0.0


def test_body_force_work_is_volume_integral(unit_grid):
    # b = e1 constant, y = id on the unit box: the pairing is the integral of
    # x_1 over the box, which midpoint quadrature reproduces exactly
    g = unit_grid
    loads = LoadProgram.build(
        g, [0.0, 1.0], body=lambda pts, t: np.tile([1.0, 0.0, 0.0], (pts.shape[0], 1))
    )
    w = external_work(g.identity_deformation(), 0.3, loads)
    assert w == pytest.approx(0.5, rel=1e-13)


def test_traction_work_on_pulled_face(unit_grid):
    g = unit_grid

    def trac(pts, t):
        out = np.zeros_like(pts)
        out[pts[:, 0] > 1.0 - 1e-9, 0] = 1.0
        return out

    loads = LoadProgram.build(g, [0.0, 1.0], traction=trac)
    # integral of x_1 over the face x = 1 is the face area times 1
    w = external_work(g.identity_deformation(), 0.5, loads)
    assert w == pytest.approx(1.0, rel=1e-13)


def test_ramp_power_is_table_slope(unit_grid):
    g = unit_grid
    loads = LoadProgram.build(
        g, [0.0, 2.0], body=lambda pts, t: np.tile([0.5 * t, 0.0, 0.0], (pts.shape[0], 1))
    )
    y = g.identity_deformation()
    # value interpolates linearly, power is the constant slope pairing
    assert external_work(y, 1.0, loads) == pytest.approx(0.25, rel=1e-12)
    for t in (0.0, 0.6, 2.0):
        assert external_power(y, t, loads) == pytest.approx(0.25, rel=1e-12)
    with pytest.raises(TimeOutOfRangeError):
        external_work(y, 2.5, loads)
    with pytest.raises(TimeOutOfRangeError):
        external_power(y, -0.5, loads)


def test_smooth_tables_have_continuous_rate(unit_grid):
    g = unit_grid
    times = [0.0, 1.0, 2.0]

    def body(pts, t):
        mag = (0.0, 1.0, 0.0)[int(round(t))]
        return np.tile([mag, 0.0, 0.0], (pts.shape[0], 1))

    y = g.identity_deformation()
    kinked = LoadProgram.build(g, times, body=body)
    jump = abs(
        external_power(y, 1.0 + 1e-9, kinked) - external_power(y, 1.0 - 1e-9, kinked)
    )
    assert jump > 0.5  # piecewise-linear rate jumps at the knot
    smooth = LoadProgram.build(g, times, body=body, smooth=True)
    gap = abs(
        external_power(y, 1.0 + 1e-9, smooth) - external_power(y, 1.0 - 1e-9, smooth)
    )
    assert gap < 1e-6
    # spline interpolates the knots
    assert external_work(y, 1.0, smooth) == pytest.approx(
        external_work(y, 1.0, kinked), rel=1e-12
    )


def test_fully_clamped_grid_has_no_traction_faces():
    mask = np.ones(27, dtype=bool)
    g = Grid((1.0, 1.0, 1.0), (2, 2, 2), dirichlet_nodes=mask)
    assert g.nfaces == 0
    loads = LoadProgram.zero(g, 1.0)
    assert external_work(g.identity_deformation(), 0.5, loads) == 0.0
