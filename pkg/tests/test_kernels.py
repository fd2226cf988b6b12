import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from qcool import kernels
from qcool.fock import coherent_density, dark_density
from qcool.qfunc import GridGeometry, qgrid_from_fock

py = kernels.backend_module("python")
try:
    cy = kernels.backend_module("cython")
except ImportError:  # pragma: no cover - extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")
PHYS = dict(hbar=1.0, mass=1.0, omega=1.0, alpha=0.3, eta=0.8)


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")


def test_pure_python_override():
    env = dict(os.environ, QCOOL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import qcool.kernels as k; print(k.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True).stdout
    assert out.strip() == "python"


@needs_ext
@pytest.mark.parametrize("scheme", [0, 1])
def test_gaussian_backends_agree(scheme):
    dW = np.random.default_rng(0).normal(0, 0.03, 2000)
    args = ((0.5, -0.3, 0.8, 0.1, 0.6), 1.0, 1.0, 1.0, 0.3, 0.8, 0.2, -1.35, dW, 1e-3, scheme)
    a, b = py.gaussian_run(*args), cy.gaussian_run(*args)
    np.testing.assert_allclose(np.asarray(a[0]), np.asarray(b[0]), atol=1e-13)
    np.testing.assert_allclose(np.asarray(a[1]), np.asarray(b[1]), atol=1e-13)
    assert a[2] == b[2] == -1


@needs_ext
@pytest.mark.parametrize("mode", [0, 1])
def test_fock_backends_agree(mode):
    rho = dark_density(20).matrix
    inc = np.random.default_rng(1).normal(0, 0.03, 500)
    ctl = np.linspace(-0.1, 0.1, 500) if mode else np.empty(0)
    args = (rho, 1.0, 1.0, 1.0, 0.3, 0.8, 0.0, -1.35, inc, ctl, 1e-3, mode, 100)
    a, b = py.fock_run(*args), cy.fock_run(*args)
    for x, y in zip(a[:4], b[:4]):
        np.testing.assert_allclose(np.asarray(x), np.asarray(y), atol=1e-12)
    assert a[4] == b[4] == -1


@needs_ext
@pytest.mark.parametrize("filter_eps", [0.0, 2e-3])
def test_qfunc_backends_agree(filter_eps):
    g = GridGeometry(48, 48)
    Q0 = qgrid_from_fock(coherent_density(0.6, 20), g).values
    dW = np.random.default_rng(2).normal(0, 0.03, 200)
    args = (Q0, g.x, g.y, 1.0, 1.0, 1.0, 0.3, 0.8, 0.0, -1.35, dW, 1e-3, 20, 50, filter_eps)
    a, b = py.qfunc_run(*args), cy.qfunc_run(*args)
    for x, y in zip(a[:3], b[:3]):
        np.testing.assert_allclose(np.asarray(x), np.asarray(y), atol=1e-13)
    assert a[3] == b[3] == -1


@needs_ext
def test_qgrid_fields_agree():
    g = GridGeometry(40, 40)
    Q = qgrid_from_fock(dark_density(20), g).values
    args = (Q, g.x, g.y, g.hx, g.hy, 1.0, 1.0, 1.0, 0.3, 0.8, 0.1, -1.0)
    for x, y in zip(py.qgrid_fields(*args), cy.qgrid_fields(*args)):
        np.testing.assert_allclose(np.asarray(x), np.asarray(y), atol=1e-13)


def test_filter_preserves_low_moments():
    g = GridGeometry(40, 40)
    Q = qgrid_from_fock(dark_density(20), g).values
    before = np.array(py._grid_stats(Q, g.x, g.y, g.cell_area))[:6]
    after = np.array(py._grid_stats(py._filter6(Q, 1 / 64), g.x, g.y, g.cell_area))[:6]
    # exact up to the tail mass within three cells of the edge
    np.testing.assert_allclose(after, before, atol=1e-9)
    smooth = np.abs(np.diff(py._filter6(Q, 1 / 64), 2, axis=0)).max()
    assert smooth < np.abs(np.diff(Q, 2, axis=0)).max()
