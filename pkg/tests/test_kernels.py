import numpy as np
import pytest

from fedsim import kernels
from fedsim.kernels import available_backends, backend_name, get_backend, use_backend

HAVE_COMPILED = "compiled" in available_backends()

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled backend not built"
)


def _cases(seed=0):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(9, 5))
    y_cls = gen.integers(0, 3, size=9)
    y_reg = gen.normal(size=9)
    lin = gen.normal(size=6)
    logi = gen.normal(size=3 * 5 + 3)
    mlp_ce = gen.normal(size=4 * 5 + 4 + 3 * 4 + 3)
    mlp_mse = gen.normal(size=4 * 5 + 4 + 4 + 1)
    return X, y_cls, y_reg, lin, logi, mlp_ce, mlp_mse


@needs_compiled
def test_backends_agree_to_roundoff():
    X, y_cls, y_reg, lin, logi, mlp_ce, mlp_mse = _cases()
    py = get_backend("python")
    co = get_backend("compiled")
    pairs = [
        (py.linreg_loss_grad(lin, X, y_reg), co.linreg_loss_grad(lin, X, y_reg)),
        (
            py.logistic_loss_grad(logi, X, y_cls, 3),
            co.logistic_loss_grad(logi, X, y_cls, 3),
        ),
    ]
    for act in (kernels.ACT_TANH, kernels.ACT_RELU):
        pairs.append(
            (
                py.mlp_ce_loss_grad(mlp_ce, X, y_cls, 4, 3, act),
                co.mlp_ce_loss_grad(mlp_ce, X, y_cls, 4, 3, act),
            )
        )
        pairs.append(
            (
                py.mlp_mse_loss_grad(mlp_mse, X, y_reg, 4, act),
                co.mlp_mse_loss_grad(mlp_mse, X, y_reg, 4, act),
            )
        )
    for (l_py, g_py), (l_co, g_co) in pairs:
        assert l_co == pytest.approx(l_py, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(g_co, g_py, rtol=1e-12, atol=1e-14)


def test_backend_name_is_registered():
    assert backend_name() in available_backends()
    assert "python" in available_backends()


def test_use_backend_switches_and_restores():
    before = backend_name()
    try:
        use_backend("python")
        assert backend_name() == "python"
        X, y_cls, _, _, logi, _, _ = _cases()
        l1, _ = kernels.logistic_loss_grad(logi, X, y_cls, 3)
        assert np.isfinite(l1)
    finally:
        use_backend(before)
    assert backend_name() == before


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError):
        use_backend("fortran")


@needs_compiled
def test_relu_subgradient_zero_at_kink_both_backends():
    # A sample sitting exactly on the kink must contribute zero gradient
    # through that unit in both implementations.
    X = np.zeros((1, 2))
    y = np.zeros(1)
    params = np.zeros(2 * 2 + 2 + 2 + 1)
    params[-1] = 3.0  # output bias; pre-activations are exactly 0
    for name in available_backends():
        l, g = get_backend(name).mlp_mse_loss_grad(params, X, y, 2, kernels.ACT_RELU)
        assert l == 9.0
        # only the output bias sees a slope: d/db (b - 0)^2 = 2b = 6
        assert g[-1] == 6.0
        assert np.all(g[:-1] == 0.0)
