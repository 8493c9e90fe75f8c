import numpy as np
import pytest

from wickwaves.torus import (
    FourierField,
    GridMismatchError,
    LPPartition,
    TorusGrid,
    chi_plateau,
    convolution_power_oracle,
    dealiased_power,
    from_physical,
    from_physical_array,
    hermitian_symmetrize,
    is_hermitian,
    lp_block,
    project,
    read_snapshot,
    snapshot_bytes,
    to_physical,
    to_physical_array,
    write_snapshot,
)


def random_real_field(grid, gen):
    c = gen.standard_normal((grid.nk, grid.nk)) \
        + 1j * gen.standard_normal((grid.nk, grid.nk))
    c = hermitian_symmetrize(np.where(grid.ball_mask(), c, 0.0))
    return FourierField(grid, c, real=True)


def test_grid_invariants(small_grid):
    g = small_grid
    assert g.nk == 2 * g.kmax + 1
    assert g.volume == pytest.approx(g.L ** 2)
    assert g.h == pytest.approx(g.L / g.M)
    assert g.n_active() == int(np.sum(g.ball_mask()))


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(1.0, 7, 1.0)          # odd M
    with pytest.raises(ValueError):
        TorusGrid(1.0, 4, 2.0)          # too coarse
    with pytest.raises(ValueError):
        TorusGrid(-1.0, 16, 1.0)


def test_round_trip(small_grid, gen):
    f = random_real_field(small_grid, gen)
    phys = to_physical(f)
    back = from_physical(small_grid, phys)
    assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-12
    assert np.max(np.abs(phys.imag)) < 1e-12


def test_parseval(small_grid, gen):
    f = random_real_field(small_grid, gen)
    phys = to_physical(f).real
    lhs = np.sum(phys ** 2) * small_grid.h ** 2
    rhs = small_grid.volume * np.sum(np.abs(f.coeffs) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_projection_algebra(small_grid, gen):
    f = random_real_field(small_grid, gen)
    p1 = project(f, 1.0)
    assert np.max(np.abs(project(p1, 1.0).coeffs - p1.coeffs)) == 0.0
    assert np.max(np.abs(project(p1, 2.0).coeffs - p1.coeffs)) == 0.0


def test_dealiased_power_matches_convolution(small_grid, gen):
    f = random_real_field(small_grid, gen)
    for j in (2, 3):
        fast = dealiased_power(f, j)
        slow = convolution_power_oracle(f, j)
        assert np.max(np.abs(fast.coeffs - slow.coeffs)) < 1e-12


def test_hermitian_helpers(small_grid, gen):
    f = random_real_field(small_grid, gen)
    assert is_hermitian(f.coeffs, tol=1e-14)
    phys = to_physical(f)
    assert np.max(np.abs(phys.imag)) < 1e-12


def test_lp_partition_of_unity(medium_grid):
    part = LPPartition(medium_grid.K)
    r = np.linspace(0.0, medium_grid.K, 300)
    total = sum(part.sigma(k, r) for k in part.blocks())
    assert np.max(np.abs(total - 1.0)) < 1e-12


def test_lp_blocks_sum_to_field(medium_grid, gen):
    f = random_real_field(medium_grid, gen)
    part = LPPartition(medium_grid.K)
    total = np.zeros_like(f.coeffs)
    for k in part.blocks():
        total = total + lp_block(f, k, part).coeffs
    assert np.max(np.abs(total - f.coeffs)) < 1e-12


def test_chi_plateau_profile():
    assert chi_plateau(np.array([0.0, 0.5, 0.74]))[0] == 1.0
    vals = chi_plateau(np.array([0.0, 0.5, 0.74, 4.0 / 3.0, 2.0]))
    assert np.all(vals[:3] == 1.0)
    assert np.all(vals[3:] == 0.0)


def test_snapshot_round_trip(small_grid, gen, tmp_path):
    f = random_real_field(small_grid, gen)
    path = str(tmp_path / "snap.wwf")
    write_snapshot(f, path)
    g = read_snapshot(path)
    assert g.grid == small_grid
    assert np.array_equal(g.coeffs, f.coeffs)
    assert snapshot_bytes(f) == snapshot_bytes(g)


def test_grid_mismatch_raises(small_grid, medium_grid, gen):
    f = random_real_field(small_grid, gen)
    g = random_real_field(medium_grid, gen)
    with pytest.raises(GridMismatchError):
        _ = f + g


def test_physical_array_batched(small_grid, gen):
    c = np.stack([random_real_field(small_grid, gen).coeffs
                  for _ in range(3)])
    phys = to_physical_array(small_grid, c)
    back = from_physical_array(small_grid, phys)
    assert np.max(np.abs(back - c)) < 1e-12
