"""Grid construction, PML stretching, and 5-point assembly."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import hankel1

import helmtraces as ht
from helmtraces.grid import axis_sigma

from conftest import global_solve, make_case


class TestBuildGrid:
    def test_small_grid_total(self):
        g = ht.build_grid(4, 4, 1.0, 2)
        assert g.n_total == 8 * 8 == 64

    def test_paper_smallest_case_dimensions(self):
        g = ht.build_grid(88, 425, 10.0, 12)
        assert (g.nx, g.ny) == (88, 425)
        assert g.n_total == (88 + 24) * (425 + 24)

    def test_too_small_rejected(self):
        with pytest.raises(ht.InvalidGridError):
            ht.build_grid(3, 4, 1.0, 2)

    def test_bad_h_and_npml(self):
        with pytest.raises(ht.InvalidGridError):
            ht.build_grid(8, 8, 0.0, 2)
        with pytest.raises(ht.InvalidGridError):
            ht.build_grid(8, 8, 1.0, 1)
        ht.build_grid(8, 8, 1.0, 0)  # Dirichlet test mode is allowed

    @given(nx=st.integers(4, 20), ny=st.integers(4, 20), npml=st.sampled_from([0, 2, 3, 5]))
    @settings(max_examples=25, deadline=None)
    def test_index_maps_are_bijective(self, nx, ny, npml):
        g = ht.build_grid(nx, ny, 1.0, npml)
        ks = np.arange(g.n_total)
        back = np.array([g.index(*g.point(k)) for k in ks])
        assert np.array_equal(back, ks)


class TestPmlStretch:
    def test_interior_is_unstretched(self):
        prof = ht.PmlProfile(sigma_max=80.0, order=2)
        assert ht.pml_stretch(0.0, prof, omega=40.0) == 1.0 + 0.0j

    def test_full_depth_value(self):
        prof = ht.PmlProfile(sigma_max=80.0, order=2)
        s = ht.pml_stretch(1.0, prof, omega=40.0)
        assert s == pytest.approx(1.0 + 2.0j)

    def test_quadratic_ramp_quarter_point(self):
        prof = ht.PmlProfile(sigma_max=80.0, order=2)
        s_half = ht.pml_stretch(0.5, prof, omega=40.0)
        s_full = ht.pml_stretch(1.0, prof, omega=40.0)
        assert s_half.imag == pytest.approx(0.25 * s_full.imag)

    def test_domain_errors(self):
        prof = ht.PmlProfile(sigma_max=80.0)
        with pytest.raises(ValueError):
            ht.pml_stretch(-0.1, prof, 40.0)
        with pytest.raises(ValueError):
            ht.pml_stretch(1.1, prof, 40.0)
        with pytest.raises(ValueError):
            ht.pml_stretch(0.5, prof, 0.0)

    def test_profile_zero_at_inner_edge_max_at_outer(self):
        prof = ht.PmlProfile(sigma_max=50.0, order=2)
        sig = axis_sigma(20, 6, 6, prof)
        nodes = sig(np.arange(20.0))
        assert nodes[5] == 0.0 and nodes[6] == 0.0      # first collar node, interior
        assert nodes[0] == pytest.approx(50.0)          # outermost node
        assert nodes[-1] == pytest.approx(50.0)
        # half-point between collar and interior carries no absorption
        assert sig(np.array([5.5]))[0] == 0.0

    def test_sigma_max_must_be_positive(self):
        with pytest.raises(ValueError):
            ht.PmlProfile(sigma_max=0.0)


class TestAssembly:
    def test_interior_row_is_classical_stencil(self):
        g = ht.build_grid(6, 6, 1.0, 0)
        m = ht.SlownessModel.from_interior(g, np.ones((6, 6)))
        H = ht.assemble_helmholtz(g, m, omega=0.0, profile=ht.PmlProfile(1.0)).tocsr()
        k = g.index(3, 3)
        row = H.getrow(k).toarray().ravel()
        assert row[k] == pytest.approx(4.0)
        for nb in (g.index(2, 3), g.index(4, 3), g.index(3, 2), g.index(3, 4)):
            assert row[nb] == pytest.approx(-1.0)
        assert np.count_nonzero(row) == 5

    @pytest.mark.parametrize("npml", [0, 4])
    def test_at_most_five_nonzeros_per_row(self, npml):
        g = ht.build_grid(8, 10, 2.0, npml)
        m = ht.SlownessModel.from_interior(g, np.full((10, 8), 1e-6))
        H = ht.assemble_helmholtz(g, m, omega=50.0 if npml else 0.0,
                                  profile=ht.PmlProfile(80.0)).tocsr()
        counts = np.diff(H.indptr)
        assert counts.max() <= 5

    def test_symmetry_without_collar(self):
        g = ht.build_grid(12, 9, 0.5, 0)
        rng = np.random.default_rng(3)
        m = ht.SlownessModel.from_interior(g, 1e-6 * (1 + rng.random((9, 12))))
        H = ht.assemble_helmholtz(g, m, omega=10.0, profile=ht.PmlProfile(1.0))
        diff = (H - H.T).tocoo()
        assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0

    def test_symmetry_with_collar(self):
        # complex-symmetric by construction, stretched or not
        g = ht.build_grid(8, 8, 2.0, 4)
        m = ht.synthetic_model("vertical-gradient", g)
        H = ht.assemble_helmholtz(g, m, omega=30.0,
                                  profile=ht.PmlProfile.default(g, m.c_max))
        diff = (H - H.T).tocoo()
        assert np.abs(diff.data).max() < 1e-18 if diff.nnz else True

    def test_dirichlet_laplace_smallest_eigenvalue(self):
        # unit square, h = 1/65: smallest eigenvalue of -lap is close to 2 pi^2
        n = 64
        g = ht.build_grid(n, n, 1.0 / (n + 1), 0)
        m = ht.SlownessModel.from_interior(g, np.ones((n, n)))
        H = ht.assemble_helmholtz(g, m, omega=0.0, profile=ht.PmlProfile(1.0))
        Hr = sp.csc_matrix((H.data.real.copy(), H.indices.copy(), H.indptr.copy()),
                           shape=H.shape)
        lam = spla.eigsh(Hr, k=1, sigma=0.0, which="LM",
                         return_eigenvectors=False)[0]
        assert lam == pytest.approx(2 * np.pi**2, rel=0.02)

    def test_mismatched_model_rejected(self):
        g = ht.build_grid(8, 8, 1.0, 2)
        g2 = ht.build_grid(8, 10, 1.0, 2)
        m = ht.synthetic_model("constant", g2, c=1500.0)
        with pytest.raises(ht.DimensionMismatchError):
            ht.assemble_helmholtz(g, m, omega=10.0, profile=ht.PmlProfile(1.0))


class TestGreensFunction:
    def test_point_source_matches_hankel(self):
        # homogeneous medium: u approximates (i/4) H0^(1)(omega r / c)
        c = 1500.0
        nx = 128
        grid, model, f, _ = make_case(nx=nx, ny=nx, npml=14, kind="constant",
                                      c=c, ppw=32.0)
        omega = 2 * np.pi * c / (32.0 * grid.h)
        u, _ = global_solve(grid, model, omega, f)
        jc = ic = grid.npml + nx // 2
        jj, ii = np.meshgrid(np.arange(grid.nyt), np.arange(grid.nxt), indexing="ij")
        r = grid.h * np.hypot(jj - jc, ii - ic)
        mask = (r >= 5 * grid.h) & (r <= (nx // 2 - 2) * grid.h)
        exact = 0.25j * hankel1(0, omega * r[mask] / c)
        err = np.abs(u.values[mask] - exact) / np.abs(exact)
        assert err.max() < 0.05

    def test_pml_efficacy_improves_with_npml(self):
        # fixed profile and frequency: doubling the collar reduces the mismatch
        c = 1500.0
        ppw = 64.0
        errs = []
        for npml in (4, 8, 16):
            grid, model, f, omega = make_case(nx=96, ny=96, npml=npml,
                                              kind="constant", c=c, ppw=ppw)
            prof = ht.PmlProfile(sigma_max=0.6 * c / grid.h, order=2)
            u, _ = global_solve(grid, model, omega, f, profile=prof)
            jc = ic = grid.npml + 48
            jj, ii = np.meshgrid(np.arange(grid.nyt), np.arange(grid.nxt), indexing="ij")
            r = grid.h * np.hypot(jj - jc, ii - ic)
            mask = (r >= 5 * grid.h) & (r <= 40 * grid.h)
            exact = 0.25j * hankel1(0, omega * r[mask] / c)
            errs.append(float((np.abs(u.values[mask] - exact) / np.abs(exact)).max()))
        assert errs[0] > errs[1] > errs[2]


class TestComplexField:
    def test_point_source_magnitude(self):
        g = ht.build_grid(8, 8, 0.5, 2)
        f = ht.ComplexField.point_source(g, 4, 4, amplitude=2.0)
        assert f.values[g.npml + 4, g.npml + 4] == pytest.approx(2.0 / 0.25)
        assert np.count_nonzero(f.values) == 1

    def test_source_outside_interior_rejected(self):
        g = ht.build_grid(8, 8, 0.5, 2)
        with pytest.raises(ht.InvalidGridError):
            ht.ComplexField.point_source(g, 8, 0)

    def test_field_length_matches_grid(self):
        g = ht.build_grid(8, 8, 0.5, 2)
        with pytest.raises(ht.DimensionMismatchError):
            ht.ComplexField(np.zeros((5, 5)), g)
