"""Projection engine: per-scale pieces, assembly identities, residuals."""

import math

import numpy as np
import pytest

from phaseproj.cubes import DyadicCube, TreeConfig, unit_cube
from phaseproj.errors import ResolutionError, ValidationError
from phaseproj.grid import (
    SampledField,
    TorusGrid,
    cube_mask,
    field_from_values,
    weighted_lp_norm,
    zero_field,
)
from phaseproj.projection import (
    ProjectionBuilder,
    ProjectionSettings,
    assemble,
    projection_input,
    residual_decomposition,
    resolution_check,
)


def bandpass_field(grid, seed=0, n_modes=8, lo=2.0, hi=16.0):
    """Random real trigonometric polynomial with spectrum in an annulus."""
    rng = np.random.default_rng(seed)
    lat = 1.0 / (2 * grid.half_width)
    spec = np.zeros(grid.shape, dtype=np.complex128)
    count = 0
    while count < n_modes:
        k = rng.integers(-int(hi / lat), int(hi / lat) + 1, size=grid.dim)
        r = math.sqrt(float(np.sum((k * lat) ** 2)))
        if not (lo <= r <= hi):
            continue
        amp = rng.normal() + 1j * rng.normal()
        idx = tuple(int(kk) % grid.samples for kk in k)
        idx_conj = tuple((-int(kk)) % grid.samples for kk in k)
        spec[idx] += amp
        spec[idx_conj] += np.conj(amp)
        count += 1
    vals = np.fft.ifftn(spec) * grid.size
    return SampledField(grid, vals)


@pytest.fixture(scope="module")
def setup_1d():
    grid = TorusGrid(1, 8.0, 1 << 14)
    cfg = TreeConfig(unit_cube(1), (DyadicCube(-1, (0,)),), 0, 2.0)
    f = bandpass_field(grid, seed=1)
    pin = projection_input(f, cfg, grid)
    return pin


@pytest.fixture(scope="module")
def output_1d(setup_1d):
    return assemble(setup_1d)


class TestResolutionPolicy:
    def test_refusal_below_strict_tier(self):
        grid = TorusGrid(1, 8.0, 1 << 10)
        cfg = TreeConfig(unit_cube(1), (DyadicCube(-2, (0,)),), 2, 2.0)
        with pytest.raises(ResolutionError) as err:
            resolution_check(cfg, grid, ProjectionSettings())
        assert err.value.required_samples is not None

    def test_relaxed_tier_allows_more(self):
        grid = TorusGrid(1, 8.0, 1 << 10)
        cfg = TreeConfig(unit_cube(1), (DyadicCube(-2, (0,)),), 0, 2.0)
        with pytest.raises(ResolutionError):
            resolution_check(cfg, grid, ProjectionSettings(strict=True))
        resolution_check(cfg, grid, ProjectionSettings(strict=False))

    def test_boundary_at_half_n(self):
        # refusal triggers exactly when the strict sample requirement fails
        cfg = TreeConfig(unit_cube(1), (DyadicCube(-1, (0,)),), 0, 2.0)
        settings = ProjectionSettings()
        radius = 0.75 * 2.0 ** (-4)
        for n_exp in (10, 16):
            grid = TorusGrid(1, 8.0, 1 << n_exp)
            ok = radius >= settings.min_samples_per_radius * grid.spacing
            if ok:
                resolution_check(cfg, grid, settings)
            else:
                with pytest.raises(ResolutionError):
                    resolution_check(cfg, grid, settings)

    def test_requires_normalized(self):
        grid = TorusGrid(1, 8.0, 1 << 12)
        cfg = TreeConfig(DyadicCube(1, (0,)), (DyadicCube(-1, (0,)),), 0, 2.0)
        with pytest.raises(ValidationError):
            projection_input(zero_field(grid), cfg, grid)


class TestPieces:
    def test_sigma_zero_below_leaves(self, setup_1d):
        b = ProjectionBuilder(setup_1d)
        assert b.sigma(0, setup_1d.cfg.j_min - 1).max_abs() == 0.0

    def test_sigma_zero_for_zero_f(self, setup_1d):
        pin = projection_input(zero_field(setup_1d.grid), setup_1d.cfg, setup_1d.grid)
        b = ProjectionBuilder(pin)
        assert b.sigma(0, 0).max_abs() == 0.0

    def test_sigma_vanishes_on_ring(self, output_1d, setup_1d):
        for (n, j), bundle in output_1d.pieces.items():
            smax = bundle.sigma.max_abs()
            if smax == 0:
                continue
            mask = cube_mask(setup_1d.grid, setup_1d.tree.cubes(j, 1))
            assert np.max(np.abs(bundle.sigma.values[mask])) <= 1e-9 * smax

    def test_sigma_support_in_second_ring(self, output_1d, setup_1d):
        for (n, j), bundle in output_1d.pieces.items():
            smax = bundle.sigma.max_abs()
            if smax == 0:
                continue
            outside = ~cube_mask(setup_1d.grid, setup_1d.tree.cubes(j, 2))
            assert np.max(np.abs(bundle.sigma.values[outside])) <= 1e-12 * smax

    def test_big_g_two_routes(self, output_1d):
        for (n, j), bundle in output_1d.pieces.items():
            diag = output_1d.diagnostics["levels"][(n, j)]
            assert diag["big_g_route_err"] <= 1e-12

    def test_leibniz_cross_check(self, output_1d):
        for (n, j), diag in output_1d.diagnostics["levels"].items():
            assert diag["leibniz_rel_err"] <= 1e-6

    def test_piecewise_derivative_identity(self, output_1d, setup_1d):
        # away from the ring boundary, g_piece = (psi_cone*f) 1_E + d^{d+1} sigma
        from phaseproj.grid import fd_derivative
        b = output_1d._builder
        grid = setup_1d.grid
        for (n, j), bundle in output_1d.pieces.items():
            mask = cube_mask(grid, setup_1d.tree.cubes(j, 1))
            interior = mask & np.roll(mask, 1) & np.roll(mask, -1)
            interior &= np.roll(interior, 2) & np.roll(interior, -2)
            deep = interior & np.roll(interior, 4) & np.roll(interior, -4)
            if not deep.any():
                continue
            lhs = bundle.g_piece.values[deep]
            rhs = (b.psi_cone_f(n, j) * b.e_indicator(j)).values[deep]
            scale = bundle.g_piece.max_abs()
            # deep inside E the sigma term vanishes identically
            assert np.max(np.abs(lhs - rhs)) <= 1e-3 * scale


class TestAssembly:
    def test_zero_input(self, setup_1d):
        pin = projection_input(zero_field(setup_1d.grid), setup_1d.cfg, setup_1d.grid)
        out = assemble(pin)
        assert out.g.max_abs() == 0.0

    def test_two_route_identity(self, output_1d):
        assert output_1d.diagnostics["g_two_route_rel_err"] <= 1e-10

    def test_support_outside_5u(self, output_1d):
        assert output_1d.diagnostics["support_5u_rel"] <= 1e-8

    def test_linearity(self, setup_1d):
        grid, cfg = setup_1d.grid, setup_1d.cfg
        f1 = bandpass_field(grid, seed=11)
        f2 = bandpass_field(grid, seed=12)
        a, b = 0.7, -1.3
        g1 = assemble(projection_input(f1, cfg, grid)).g
        g2 = assemble(projection_input(f2, cfg, grid)).g
        combo = assemble(projection_input(a * f1 + b * f2, cfg, grid)).g
        expected = a * g1 + b * g2
        scale = max(combo.max_abs(), 1e-300)
        assert np.max(np.abs(combo.values - expected.values)) <= 1e-10 * scale

    def test_residual_identity(self, setup_1d, output_1d):
        comp_low, comp_mid, comp_corr = residual_decomposition(setup_1d, output_1d)
        recon = comp_low + comp_mid - comp_corr
        target = setup_1d.f - output_1d.g
        scale = setup_1d.f.max_abs()
        assert np.max(np.abs(recon.values - target.values)) <= 1e-8 * scale

    def test_residual_zero_f(self, setup_1d):
        pin = projection_input(zero_field(setup_1d.grid), setup_1d.cfg, setup_1d.grid)
        out = assemble(pin)
        parts = residual_decomposition(pin, out)
        for part in parts:
            assert part.max_abs() == 0.0

    def test_low_frequency_single_node(self):
        # M = {U} with low-pass f: annulus terms vanish inside 3U, the
        # residual concentrates outside
        grid = TorusGrid(1, 8.0, 1 << 14)
        cfg = TreeConfig(unit_cube(1), (unit_cube(1),), 0, 2.0)
        x = grid.axis_points
        f = field_from_values(grid, np.cos(2 * np.pi * x * (1.0 / 16.0)))
        pin = projection_input(f, cfg, grid)
        out = assemble(pin)
        comp_low, comp_mid, comp_corr = residual_decomposition(pin, out)
        inner = cube_mask(grid, [DyadicCube(0, (k,)) for k in (-1, 0, 1)])
        margin = inner & np.roll(inner, 8) & np.roll(inner, -8)
        resid = pin.f - out.g
        inside_max = np.max(np.abs(resid.values[margin]))
        outside_max = np.max(np.abs(resid.values[~inner]))
        assert inside_max <= 1e-6 * max(outside_max, 1e-300)


class TestFdWitness:
    def test_fd_agreement_at_resolved_scale(self):
        grid = TorusGrid(1, 8.0, 1 << 16)
        cfg = TreeConfig(unit_cube(1), (DyadicCube(-1, (0,)),), 0, 2.0)
        f = bandpass_field(grid, seed=3, lo=2.0, hi=8.0)
        pin = projection_input(f, cfg, grid)
        out = assemble(pin)
        recorded = [d.get("fd_rel_err") for d in out.diagnostics["levels"].values()]
        measured = [e for e in recorded if e is not None]
        assert measured, "no level reached the fd-witness resolution"
        assert max(measured) <= 1e-4


class Test2D:
    def test_identities_2d(self):
        grid = TorusGrid(2, 8.0, 1 << 9)
        cfg = TreeConfig(unit_cube(2), (DyadicCube(-1, (0, 1)),), 0, 3.0)
        f = bandpass_field(grid, seed=5, n_modes=6, lo=1.0, hi=8.0)
        pin = projection_input(f, cfg, grid, ProjectionSettings(strict=False))
        out = assemble(pin)
        assert out.diagnostics["g_two_route_rel_err"] <= 1e-10
        comp = residual_decomposition(pin, out)
        recon = comp[0] + comp[1] - comp[2]
        target = pin.f - out.g
        assert np.max(np.abs(recon.values - target.values)) <= 1e-8 * pin.f.max_abs()
