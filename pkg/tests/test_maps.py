import numpy as np
import pytest

from ergostat.errors import DomainError, MapDefinitionError
from ergostat.maps import (
    birkhoff_sums,
    coboundary,
    coin,
    make_map,
    make_observable,
    orbit,
    orbit_value_chunks,
    sawtooth,
)

ALL_BUILTINS = ["doubling", "tent", "perturbed-doubling"]


def test_make_map_builtins():
    d = make_map("doubling")
    assert np.allclose(d.breakpoints, [0.0, 0.5, 1.0])
    assert d.branches[0].slope == 2.0 and d.branches[1].slope == 2.0
    assert d.dyadic_exact

    t = make_map("tent")
    assert np.allclose(t.breakpoints, [0.0, 0.5, 1.0])
    assert (t.branches[0].slope, t.branches[1].slope) == (2.0, -2.0)
    assert t.dyadic_exact

    l3 = make_map("linear", slopes=[3, 3, 3])
    assert l3.n_branches == 3
    assert l3.expansion_constant == 3.0
    assert l3.expansion_exponent == 1
    assert l3.dyadic_exact


def test_make_map_rejects_bad_descriptors():
    with pytest.raises(MapDefinitionError):
        make_map("linear", slopes=[1.0, 3.0])          # not expanding
    with pytest.raises(MapDefinitionError):
        make_map("custom", breakpoints=[0.0, 0.7, 0.3, 1.0], slopes=[2, 2, 2])
    with pytest.raises(MapDefinitionError):
        make_map("nosuchmap")


def test_evaluate_examples():
    d = make_map("doubling")
    assert d.evaluate(0.3) == pytest.approx((0.6, 0, 2.0))
    assert d.evaluate(0.75) == pytest.approx((0.5, 1, 2.0))
    t = make_map("tent")
    img, br, deriv = t.evaluate(0.25)
    assert (img, br, deriv) == pytest.approx((0.5, 0, 2.0))
    with pytest.raises(DomainError):
        d.evaluate(1.0)
    with pytest.raises(DomainError):
        d.evaluate(-0.1)


@pytest.mark.parametrize("name", ALL_BUILTINS + ["linear"])
def test_expansion_on_grid(name):
    m = make_map(name, slopes=[3, 3, 3]) if name == "linear" else make_map(name)
    xs = np.linspace(0.0, 1.0, 10_000, endpoint=False) + 0.5e-4
    expansion = np.abs(m.iterate_derivative(xs, m.expansion_exponent))
    assert expansion.min() >= m.expansion_constant - 1e-9
    assert m.expansion_constant > 1.0


@pytest.mark.parametrize("name", ALL_BUILTINS)
def test_branch_inverse_roundtrip(name):
    m = make_map(name)
    rng = np.random.default_rng(7)
    xs = rng.random(1000)
    idx = m.branch_index(xs)
    ys = m.apply(xs)
    for i, br in enumerate(m.branches):
        mask = idx == i
        back = br.inverse(ys[mask])
        assert np.max(np.abs(back - xs[mask])) < 1e-10
        # forward through the branch recovers the image to 1e-12
        assert np.max(np.abs(br(back) - ys[mask])) < 1e-12


def test_symbolic_orbit_never_collapses():
    d = make_map("doubling")
    o = orbit(d, seed=123, n=1_000_000)
    assert o.mode == "symbolic-exact"
    assert np.all(o.points[53:] != 0.0)
    # consecutive points satisfy x_{t+1} = f(x_t) up to reconstruction ulps
    assert np.max(np.abs(o.points[1:10_000] - d.apply(o.points[:9_999]))) < 1e-12


def test_float_orbit_dyadic_degeneracy_documented():
    d = make_map("doubling")
    o = orbit(d, seed=0, n=4, mode="float-iterate", x0=0.25)
    assert o.points.tolist() == [0.25, 0.5, 0.0, 0.0]


def test_float_orbit_consecutive_points_exact():
    pd = make_map("perturbed-doubling")
    o = orbit(pd, seed=6, n=3000, mode="float-iterate")
    assert np.array_equal(o.points[1:], pd.apply(o.points[:-1]))


def test_symbolic_only_for_dyadic_maps():
    pd = make_map("perturbed-doubling")
    with pytest.raises(DomainError):
        orbit(pd, seed=1, n=10, mode="symbolic-exact")


def test_tent_orbit_lebesgue_mean():
    # Lebesgue is invariant for the tent map; long-run average of points is 1/2.
    # Float iteration is dyadic-degenerate for tent, so the default (symbolic)
    # mode is the meaningful one.
    t = make_map("tent")
    o = orbit(t, seed=5, n=100_000)
    assert abs(float(np.mean(o.points)) - 0.5) < 0.01


def test_monobit_frequency_doubling():
    d = make_map("doubling")
    o = orbit(d, seed=2024, n=1_000_000)
    ones = int(np.sum(o.symbols))
    n = len(o.symbols)
    # proportion of 1s within 3 sigma of 1/2
    assert abs(ones / n - 0.5) < 3.0 * 0.5 / np.sqrt(n)


def test_birkhoff_sums_examples():
    d = make_map("doubling")
    o = orbit(d, seed=1, n=5)
    ones = make_observable("table", xs=[0.0, 1.0], ys=[1.0, 1.0])
    assert np.allclose(birkhoff_sums(o, ones), [1, 2, 3, 4, 5])

    o2 = orbit(d, seed=0, n=3, mode="float-iterate", x0=0.25)
    s = birkhoff_sums(o2, sawtooth())
    assert np.allclose(s, [-0.25, -0.25, -0.75])


def test_coboundary_telescoping():
    d = make_map("doubling")
    u = coboundary(d)                      # v(x) = x, sup|v| = 1
    o = orbit(d, seed=9, n=5000)
    s = birkhoff_sums(o, u)
    assert np.max(np.abs(s)) <= 2.0 + 1e-9


def test_orbit_value_chunks_match_orbit():
    d = make_map("doubling")
    u = sawtooth()
    o = orbit(d, seed=42, n=5000)
    streamed = np.concatenate(list(orbit_value_chunks(d, u, seed=42, total=5000, chunk=700)))
    assert np.array_equal(streamed, u(o.points))

    pd = make_map("perturbed-doubling")
    o2 = orbit(pd, seed=42, n=2000)
    streamed2 = np.concatenate(list(orbit_value_chunks(pd, u, seed=42, total=2000, chunk=333)))
    assert np.allclose(streamed2, u(o2.points), atol=1e-14)


def test_observable_regularity_required():
    with pytest.raises(ValueError):
        from ergostat.maps import Observable
        Observable("bare", lambda x: x)


def test_coin_values():
    u = coin()
    assert np.array_equal(u(np.array([0.1, 0.5, 0.9])), [-0.5, 0.5, 0.5])
    assert u.variation_bound == 1.0


def test_centering_shifts_mean():
    u = sawtooth().with_mean(0.25)
    assert u(np.array([0.75]))[0] == pytest.approx(0.0)
    assert u.raw(np.array([0.75]))[0] == pytest.approx(0.25)
