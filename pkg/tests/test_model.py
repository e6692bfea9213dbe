import numpy as np
import pytest
from scipy.integrate import quad

from biofilm_fv import (
    ModelDomainError,
    ModelError,
    ModelParams,
    entropy_density,
    flux_coefficient_edge,
    get_model,
    model_case1,
    model_case2,
    model_generic,
)

# frozen oracle values (30-digit quadrature of the defining integrals)
H_STAR_CASE2_02_01 = 0.0888060151737645965048222734305
H_STAR_CASE1_PAIR = 0.0261624071882273918258403612467
G1_ORACLE = {
    0.02: 0.00104702436872137380521633169083,
    0.1: 0.0340230860951539317460056809662,
    0.5: 7.38905609893065022723042746058,
    0.9: 215628979.842715734058853162035,
}


def quadrature_g(model, m):
    """Independent evaluation of g from its defining integral."""
    a, b = model.params.a, model.params.b

    def integrand(s):
        return s**a / (1.0 - s) ** b / float(model.p(s)) ** 2

    value, _ = quad(integrand, 0.0, m, epsabs=1e-300, epsrel=1e-13, limit=400)
    return value / m


# -- built-in models --------------------------------------------------------------


def test_case1_closed_form_values(case1):
    assert float(case1.g(0.5)) == pytest.approx(np.exp(2.0), rel=1e-14)
    for m, ref in G1_ORACLE.items():
        assert float(case1.g(m)) == pytest.approx(ref, rel=1e-11)


def test_case1_singularity_exponent(case1):
    # (-(1-m)^2) p'(m)/p(m) -> 1 towards saturation; stay above the underflow
    # point of p itself (exp(-1/(1-m)) vanishes in double precision near 0.9987)
    for m in (0.9, 0.99, 0.995):
        ratio = -((1.0 - m) ** 2) * float(case1.p_prime(m)) / float(case1.p(m))
        assert ratio == pytest.approx(1.0, rel=1e-12)


def test_case1_quadrature_matches_closed_form(case1):
    for m in np.linspace(0.1, 0.9, 9):
        assert float(case1.g(m)) == pytest.approx(quadrature_g(case1, m), rel=1e-8)


def test_case2_closed_forms(case2):
    assert float(case2.g(0.5)) == 1.0
    assert float(case2.g(0.0)) == 0.0
    assert float(case2.g_prime(0.5)) == pytest.approx(6.0, rel=1e-14)


def test_case2_derivative_matches_finite_difference(case2):
    h = 1e-5
    fd = (float(case2.g(0.5 + h)) - float(case2.g(0.5 - h))) / (2.0 * h)
    assert float(case2.g_prime(0.5)) == pytest.approx(fd, rel=1e-8)


@pytest.mark.parametrize("model_name", ["case1", "case2"])
def test_g_strictly_increasing(model_name, case1, case2):
    model = case1 if model_name == "case1" else case2
    grid = np.linspace(1e-4, 0.99, 1000)
    values = model.g(grid)
    assert (np.diff(values) > 0.0).all()
    # m * g(m) increasing as well
    assert (np.diff(grid * values) > 0.0).all()


@pytest.mark.parametrize("model_name", ["case1", "case2"])
def test_g_prime_matches_finite_differences(model_name, case1, case2):
    model = case1 if model_name == "case1" else case2
    grid = np.linspace(0.01, 0.95, 40)
    h = 1e-6
    fd = (model.g(grid + h) - model.g(grid - h)) / (2.0 * h)
    assert np.abs(model.g_prime(grid) - fd).max() <= 1e-6 * np.abs(fd).max()


def test_p_shape_asserted_on_construction():
    params = ModelParams(a=1.0, b=1.0, n_species=1, alphas=(1.0,))
    with pytest.raises(ModelError):
        model_generic(lambda x: np.asarray(x, float), lambda x: np.ones_like(np.asarray(x, float)), params)


# -- generic models -----------------------------------------------------------------


def test_generic_reproduces_case2(case2):
    params = ModelParams(a=1.0, b=1.0, n_species=2, alphas=(1.0, 1.0))
    generic = model_generic(
        lambda x: 1.0 - np.asarray(x, float),
        lambda x: -np.ones_like(np.asarray(x, float)),
        params,
    )
    grid = np.linspace(0.02, 0.9, 50)
    assert np.abs(generic.g(grid) / case2.g(grid) - 1.0).max() < 1e-8
    assert float(generic.g(0.0)) == 0.0


def test_generic_reproduces_case1(case1):
    params = ModelParams(a=2.0, b=2.0, n_species=2, alphas=(1.0, 1.0))
    generic = get_model("generic", (1.0, 1.0), a=2.0, b=2.0, p_name="exp")
    grid = np.linspace(0.02, 0.9, 20)
    assert np.abs(generic.g(grid) / case1.g(grid) - 1.0).max() < 1e-7


def test_generic_rejects_increasing_p():
    params = ModelParams(a=1.0, b=1.0, n_species=1, alphas=(1.0,))
    with pytest.raises(ModelError):
        model_generic(
            lambda x: np.asarray(x, float) * (1.0 - np.asarray(x, float)),
            lambda x: 1.0 - 2.0 * np.asarray(x, float),
            params,
        )


def test_generic_domain_error_near_saturation():
    generic = get_model("generic", (1.0,), a=2.0, b=2.0, p_name="exp")
    with pytest.raises(ModelDomainError) as err:
        generic.g(0.9999)
    assert "0.9999" in str(err.value)


def test_exponent_validation():
    with pytest.raises(ModelError):
        ModelParams(a=0.5, b=1.0, n_species=1, alphas=(1.0,))
    with pytest.raises(ModelError):
        ModelParams(a=1.0, b=1.0, n_species=1, alphas=(-1.0,))


# -- entropy density -----------------------------------------------------------------


def test_entropy_zero_at_reference(case1):
    assert entropy_density([0.1, 0.1], case1, [0.1, 0.1]) == pytest.approx(0.0, abs=1e-14)


def test_entropy_positive_away_from_reference(case2):
    rng = np.random.default_rng(7)
    u_d = np.array([0.1, 0.1])
    for _ in range(100):
        u = rng.uniform(0.01, 0.45, size=2)
        if np.abs(u - u_d).max() < 1e-3:
            continue
        assert entropy_density(u, case2, u_d) > 0.0


def test_entropy_frozen_oracle_case2():
    model = model_case2(alphas=(1.0,))
    value = entropy_density([0.2], model, [0.1])
    assert value == pytest.approx(H_STAR_CASE2_02_01, abs=1e-9)


def test_entropy_frozen_oracle_case1():
    model = model_case1()
    value = entropy_density([0.15, 0.05], model, [0.1, 0.1])
    assert value == pytest.approx(H_STAR_CASE1_PAIR, abs=1e-9)


def test_entropy_permutation_invariant(case1):
    u = np.array([0.22, 0.05])
    u_d = np.array([0.08, 0.13])
    assert entropy_density(u, case1, u_d) == pytest.approx(
        entropy_density(u[::-1], case1, u_d[::-1]), rel=1e-14
    )


def test_entropy_domain_errors(case2):
    with pytest.raises(ModelDomainError):
        entropy_density([0.6, 0.5], case2, [0.1, 0.1])
    with pytest.raises(ModelDomainError):
        entropy_density([-0.01, 0.1], case2, [0.1, 0.1])


def test_cached_primitive_matches_quadrature(case1, case2):
    for model in (case1, case2):
        for m in (0.05, 0.2, 0.45, 0.8):
            assert float(model.log_g_primitive(m)) == pytest.approx(
                model.log_g_primitive.quad(m), abs=1e-11
            )


def test_case2_primitive_closed_form(case2):
    # integral of log g for p = 1-x: (m log m - m) - m log 2 + 2((1-m)log(1-m) + m)
    for m in (0.1, 0.3, 0.6):
        exact = (m * np.log(m) - m) - m * np.log(2.0) + 2.0 * ((1.0 - m) * np.log1p(-m) + m)
        assert float(case2.log_g_primitive(m)) == pytest.approx(exact, abs=1e-12)


# -- edge coefficient -----------------------------------------------------------------


def test_flux_coefficient_equal_arguments(case2):
    assert float(flux_coefficient_edge(0.3, 0.3, case2)) == pytest.approx(
        float(case2.p(0.3)) ** 2, rel=1e-15
    )


def test_flux_coefficient_endpoints(case2):
    assert float(flux_coefficient_edge(0.0, 1.0, case2)) == pytest.approx(0.5, abs=1e-15)


def test_flux_coefficient_lower_bound(case1):
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = rng.uniform(0.0, 0.99, size=2)
        coeff = float(flux_coefficient_edge(a, b, case1))
        assert coeff >= 0.5 * float(case1.p(max(a, b))) ** 2 - 1e-16


def test_flux_coefficient_domain(case2):
    with pytest.raises(ModelDomainError):
        flux_coefficient_edge(-0.1, 0.5, case2)
    with pytest.raises(ModelDomainError):
        flux_coefficient_edge(0.1, 1.5, case2)
