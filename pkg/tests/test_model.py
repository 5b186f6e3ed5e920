import numpy as np
import pytest
import sympy as sp

from magdrift import catalog
from magdrift.errors import ConfigError, ConditionViolation, FieldHazard
from magdrift.model import (
    PAULI,
    ModelSpec,
    box_grid,
    check_conditions,
    coords,
    euclidean,
    field_data,
    field_tensor,
    field_vector_3d,
    from_expressions,
    pseudoscalar,
    scalar_intensity,
    solenoidal_residual,
    vector_norm,
    vf_grad_hess,
)

X3 = np.array([0.3, -0.2, 0.5])


def test_symmetric_gauge_unit_field():
    m = catalog.ex_13_6_3_i()
    F = field_tensor(m, np.array([0.7, -0.4]))
    assert F[0, 1] == 1.0 and F[1, 0] == -1.0
    assert scalar_intensity(m, np.array([0.7, -0.4])) == 1.0


def test_zero_vecpot_gives_zero_tensor():
    m = from_expressions(["0", "0", "0"], "0")
    assert np.all(field_tensor(m, X3) == 0)
    assert np.all(field_vector_3d(m, X3) == 0)


def test_tensor_by_hand():
    m = from_expressions(["0", "x1**2", "0"], "0")
    F = field_tensor(m, np.array([0.3, 0.1, 0.2]))
    expected = np.zeros((3, 3))
    expected[0, 1], expected[1, 0] = 0.6, -0.6
    np.testing.assert_allclose(F, expected, atol=1e-15)


def test_intensity_double_sum_formula():
    m = catalog.uniform_3d(strength=2)
    assert scalar_intensity(m, X3) == pytest.approx(2.0, abs=1e-14)
    np.testing.assert_allclose(field_vector_3d(m, X3), [0, 0, 2], atol=1e-14)


def test_circle_model_field():
    m = catalog.ex_13_6_36()
    x = np.array([0.6, 0.8, 0.1])
    assert scalar_intensity(m, x) == pytest.approx(1.0, rel=1e-12)
    # curl of (0, 0, alpha(rho)) is (x2, -x1, 0) alpha'(rho) / rho
    np.testing.assert_allclose(field_vector_3d(m, x), [0.8, -0.6, 0.0], atol=1e-14)
    x = np.array([0.3, 0.4, -0.2])
    assert scalar_intensity(m, x) == pytest.approx(0.5, rel=1e-12)


def test_intensity_forms_agree_in_3d():
    m = from_expressions(["x2*x3", "sin(x1) + x3**2", "x1*x2**2"], "0",
                         metric=[["1 + x1**2/4", "0", "0"], ["0", "1", "x1/5"], ["0", "x1/5", "2"]])
    rng = np.random.default_rng(1)
    X = rng.uniform(-0.8, 0.8, size=(3, 50))
    Fv = field_vector_3d(m, X)
    np.testing.assert_allclose(vector_norm(m, X, Fv), scalar_intensity(m, X), rtol=1e-8)


def test_2d_intensity_is_abs_pseudoscalar():
    m = from_expressions(["-x2*(1 + x1**2)", "x1"], "0", metric=[["2", "0"], ["0", "1 + x2**2"]])
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(2, 40))
    np.testing.assert_allclose(scalar_intensity(m, X), np.abs(pseudoscalar(m, X)), rtol=1e-12)


def test_tensor_antisymmetric():
    m = from_expressions(["x2*x3**2", "exp(x1)*x3", "x1*x2"], "0")
    X = np.random.default_rng(3).uniform(-1, 1, size=(3, 20))
    F = field_tensor(m, X)
    assert np.array_equal(F, -np.swapaxes(F, 0, 1))


@pytest.mark.parametrize("name", ["ex-13-6-34-i", "ex-13-6-34-ii", "ex-13-6-34-iv", "ex-13-6-36", "uniform-3d"])
def test_solenoidal_catalog(name):
    m = catalog.build(name)
    grid = box_grid(m.domain, 17)
    assert solenoidal_residual(m, grid) <= 1e-8


def test_constant_field_residual():
    m = catalog.uniform_3d(strength=3)
    assert solenoidal_residual(m, box_grid(m.domain, 9)) <= 1e-10


def test_corrupted_field_detected():
    m = catalog.ex_13_6_36()
    grid = box_grid(m.domain, 17)

    def bad(X):
        F = field_vector_3d(m, X)
        F[0] = F[0] + 0.01 * X[0]
        return F

    assert solenoidal_residual(m, grid, field_fn=bad) >= 0.009


def test_solenoidal_refinement_is_second_order():
    m = from_expressions(["sin(x2)*x3", "x1**3*cos(x3)", "exp(x1)*x2**2"], "0")
    grid = box_grid(((-0.5, 0.5),) * 3, 5)
    res = [solenoidal_residual(m, grid, fd_step=s) for s in (4e-2, 2e-2, 1e-2)]
    ratios = np.array(res[:-1]) / np.array(res[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_vf_grad_hess_examples():
    g, H = vf_grad_hess(catalog.ex_13_6_3_i(), np.array([0.2, 0.5]))
    np.testing.assert_allclose(g, [0, 1], atol=1e-15)
    np.testing.assert_allclose(H, 0, atol=1e-15)
    g, H = vf_grad_hess(catalog.ex_13_6_3_iii(), np.array([0.0, 0.0]))
    np.testing.assert_allclose(g, 0, atol=1e-15)
    assert np.linalg.det(H) == pytest.approx(-1.0)
    m = from_expressions(["-x2/2", "x1/2"], "3/2", tau=1.5)
    g, _ = vf_grad_hess(m, np.array([0.3, 0.1]), m.tau)
    np.testing.assert_allclose(g, 0, atol=1e-15)


def test_field_hazard():
    m = from_expressions(["0", "0"], "x1")
    with pytest.raises(FieldHazard):
        vf_grad_hess(m, np.array([0.1, 0.1]))
    with pytest.raises(ConditionViolation):
        scalar_intensity(m, np.array([0.1, 0.1]), check=True)


def test_check_conditions_trap():
    res = check_conditions(catalog.ex_13_6_34_i(k=1, l=1, tau=1))
    assert res["13-6-89"].holds
    assert res["13-6-90"].holds
    assert res["13-6-90"].margin == pytest.approx(2.0, rel=1e-6)


def test_check_conditions_flat_potential():
    m = from_expressions(["-x2/2", "x1/2"], "1")
    res = check_conditions(m)
    assert not res["13-3-54"].holds and res["13-3-54"].margin == 0.0


def test_check_conditions_no_drift_model():
    res = check_conditions(catalog.ex_13_6_34_iv(k=1, tau=1))
    assert not res["13-3-54"].holds
    # Hess of V/F vanishes in x' so the 3x3 determinant is 0 on the x3=0 line
    assert not res["13-6-100"].holds and res["13-6-100"].margin == 0.0


def test_derivatives_against_finite_differences():
    m = from_expressions(["x2*x3 + x1**2", "sin(x1)*x3", "x1*x2**2"], "x1**2 + x2*x3 + cos(x3)")
    num = m.num
    rng = np.random.default_rng(4)
    X = rng.uniform(-0.7, 0.7, size=(3, 100))
    s = 1e-5
    for value, deriv, ncomp in ((num.V, num.gradV, 1), (num.q, num.gradq, 1), (num.F, num.gradF, 1)):
        d = deriv(*X)
        for j in range(3):
            e = np.zeros((3, 1))
            e[j] = s
            fd = (value(*(X + e))[0] - value(*(X - e))[0]) / (2 * s)
            np.testing.assert_allclose(d[j], fd, rtol=1e-6, atol=1e-8)
    H = num.hessq(*X).reshape(3, 3, -1)
    for j in range(3):
        e = np.zeros((3, 1))
        e[j] = s
        fd = (num.gradq(*(X + e)) - num.gradq(*(X - e))) / (2 * s)
        np.testing.assert_allclose(H[j], fd, rtol=1e-6, atol=1e-7)


def test_model_validation():
    x1, x2 = coords(2)
    with pytest.raises(ConfigError):
        ModelSpec(dim=2, metric=euclidean(2), vecpot=(0, 0), scalpot=x1, mu=0.5)
    with pytest.raises(ConfigError):
        ModelSpec(dim=2, metric=euclidean(2), vecpot=(0, 0), scalpot=x1, hplanck=2)
    with pytest.raises(ConfigError):
        ModelSpec(dim=2, metric=((1, x1), (0, 1)), vecpot=(0, 0), scalpot=x1)
    with pytest.raises(ConfigError):
        from_expressions(["0", "y"], "0")
    with pytest.raises(ConfigError):
        catalog.build("nope")


def test_pauli_and_field_data():
    m = catalog.ex_13_6_34_iv(k=1, tau=1, mu=4, h=0.25, kind=PAULI)
    fd = field_data(m, np.zeros(3))
    assert fd.intensity == 1.0 and fd.sqrtg == 1.0
    assert m.with_params(mu=8).mu == 8
