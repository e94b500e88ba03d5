import numpy as np
import pytest
import scipy.sparse.linalg as spla

import helmtraces as ht


def omega_for_ppw(model: ht.SlownessModel, ppw: float) -> float:
    """Angular frequency giving the requested points per wavelength at c_min."""
    return 2.0 * np.pi * model.c_min / (ppw * model.grid.h)


def omega_sqrt_n(model: ht.SlownessModel, n: int, n_base: int = 32,
                 ppw_base: float = 10.0) -> float:
    """The f ~ sqrt(n) frequency rule on a fixed domain, anchored at ppw_base
    for n_base; resolution then grows like sqrt(n)."""
    return omega_for_ppw(model, ppw_base * np.sqrt(n / n_base))


def make_case(nx=32, ny=32, npml=8, kind="constant", seed=7, ppw=10.0, domain=1280.0,
              **model_params):
    """Grid + model + centered point source + omega at the given resolution."""
    h = domain / nx
    grid = ht.build_grid(nx, ny, h, npml)
    model = ht.synthetic_model(kind, grid, seed=seed, **model_params) \
        if kind == "rough-layered" else ht.synthetic_model(kind, grid, **model_params)
    f = ht.ComplexField.point_source(grid, nx // 2, ny // 2)
    return grid, model, f, omega_for_ppw(model, ppw)


def global_solve(grid, model, omega, f, profile=None):
    """Sparse direct solve of the assembled global system (the oracle)."""
    profile = profile or ht.PmlProfile.default(grid, model.c_max)
    H = ht.assemble_helmholtz(grid, model, omega, profile)
    u = spla.splu(H.tocsc()).solve(f.values.ravel())
    return ht.ComplexField(u.reshape(grid.nyt, grid.nxt), grid), H


def rel_err(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
