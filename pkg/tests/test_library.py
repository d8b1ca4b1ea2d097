import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddsindy import library as L
from ddsindy.dataset import SampledTrajectory
from ddsindy.quadrature import make_rule


def const_traj(value=0.5, T=20.0, m=41, n=1):
    t = np.linspace(0, T, m)
    return SampledTrajectory(t, np.full((m, n), value), history_times=np.array([-5.0, 0.0]),
                             history_values=np.full((2, n), value))


def test_monomial_counts():
    labels = [a.label() for a in L.enumerate_monomials([L.sig(), L.shifted(0)], 2)]
    assert labels == ["1", "sig", "x1d", "sig^2", "sig*x1d", "x1d^2"]
    assert len(L.enumerate_monomials([L.sig(), L.shifted(0)], 4)) == 15
    assert [a.label() for a in L.enumerate_monomials([L.shifted(0)], 1)] == ["1", "x1d"]


@given(d=st.integers(1, 6), n=st.integers(1, 4))
def test_monomial_count_is_binomial(d, n):
    symbols = [L.sig()] + [L.shifted(j) for j in range(n - 1)]
    assert len(L.enumerate_monomials(symbols, d)) == math.comb(d + n, n)


@given(d=st.integers(1, 6))
def test_pure_delay_powers_present(d):
    labels = {a.label() for a in L.enumerate_monomials([L.sig(), L.shifted(0)], d)}
    assert {"sig" if p == 1 else f"sig^{p}" for p in range(1, d + 1)} <= labels


def test_monomial_arguments_checked():
    with pytest.raises(L.LibraryError):
        L.enumerate_monomials([L.sig()], 0)
    with pytest.raises(L.LibraryError):
        L.enumerate_monomials([L.sig(), L.sig()], 2)


def test_single_node_rule_is_scaled_atom():
    rule = make_rule("rectangles", 1, -2.0, -0.5)  # one node at -2, weight 1.5
    t = np.linspace(0, 4, 9)
    tr = SampledTrajectory(t, t**2)
    A = L.assemble_distributed(tr, rule, [L.parse_atom("sig*x1d")])
    kept = t[A.row_mask]
    np.testing.assert_allclose(A.matrix[:, 0], 1.5 * (-2.0) * (kept - 2.0) ** 2)


def test_constant_data_closed_form():
    rule = make_rule("trapezoid", 128, -3.0, -1.0)
    A = L.assemble_distributed(const_traj(), rule, [L.parse_atom("sig*x1d")])
    np.testing.assert_allclose(A.matrix[:, 0], 0.5 * (0.5 - 4.5), rtol=1e-12)


@pytest.mark.parametrize("kind", ["rectangles", "trapezoid", "clenshaw_curtis"])
def test_constant_atom_gives_window_length(kind):
    t = np.linspace(0, 10, 30)
    tr = SampledTrajectory(t, np.sin(t))
    A = L.assemble_distributed(tr, make_rule(kind, 9, -2.5, -0.5), [L.Atom()])
    np.testing.assert_allclose(A.matrix[:, 0], 2.0, rtol=1e-12)


def test_instantaneous_block():
    t = np.arange(4.0)
    tr = SampledTrajectory(t, np.column_stack([np.zeros(4), np.full(4, 2.0)]))
    A = L.assemble_instantaneous(tr, [L.parse_atom("x2"), L.parse_atom("x2^2"), L.Atom()])
    np.testing.assert_array_equal(A.matrix, np.tile([2.0, 4.0, 1.0], (4, 1)))


def test_instantaneous_rejects_shifted_atom():
    with pytest.raises(L.LibraryError):
        L.assemble_instantaneous(const_traj(), [L.parse_atom("x1d")])


def test_concat_blocks():
    tr = const_traj()
    rule = make_rule("trapezoid", 5, -1, 0)
    d = L.assemble_distributed(tr, rule, [L.Atom(), L.parse_atom("x1d")])
    i = L.assemble_instantaneous(tr, [L.parse_atom("x1")])
    both = L.concat([i, d])
    assert both.matrix.shape[1] == 3
    assert both.labels == ["x1", "1", "x1d"]
    assert L.concat([d]) is d


def test_concat_disjoint_masks():
    a = L.AssembledLibrary(np.ones((2, 1)), ["a"], np.array([True, True, False, False]))
    b = L.AssembledLibrary(np.ones((2, 1)), ["b"], np.array([False, False, True, True]))
    with pytest.raises(L.LibraryError, match="no retained rows"):
        L.concat([a, b])


def test_no_coverage_names_window():
    tr = SampledTrajectory(np.linspace(0, 1, 5), np.ones(5))
    with pytest.raises(L.LibraryError, match=r"\[-3, -2\]"):
        L.assemble_distributed(tr, make_rule("trapezoid", 4, -3, -2), [L.Atom()])


def test_build_library_drops_separable_current():
    spec = L.build_library([L.sig(), L.shifted(0), L.current(1)], 2,
                           instantaneous=[L.parse_atom("x2"), L.parse_atom("x2^2")])
    labels = [a.label() for a in spec.distributed_atoms]
    assert "x2" not in labels and "sig*x2" not in labels and "x2^2" not in labels
    assert "x1d*x2" in labels and "sig^2" in labels
    assert spec.p == len(spec.distributed_atoms) + 2


def test_instantaneous_atoms_must_be_instantaneous():
    with pytest.raises(L.LibraryError):
        L.LibrarySpec((), (L.parse_atom("sig*x1"),))


@given(st.sampled_from(["x1d", "sig^3*exp(4*sig)*exp(-1*x1d)*x1d", "x1d^2*x2", "gam(4,1)*exp(0.5*sig)*x2d^3",
                        "exp(-0.25*x2d)*sig^2", "1"]))
def test_label_round_trip(label):
    atom = L.parse_atom(label)
    assert L.parse_atom(atom.label()) == atom


def test_parameter_slots_and_binding():
    atom = L.parse_atom("gam(n,tau)*exp(d1*sig)*exp(-a*x1d)*x1d")
    assert set(atom.slots) == {"n", "tau", "d1", "a"}
    bound = atom.bind({"n": 4, "tau": 1.0, "d1": 0.5, "a": 0.3})
    assert bound.slots == ()
    assert bound.label() == "exp(0.5*sig)*gam(4,1)*exp(-0.3*x1d)*x1d"


def test_gamma_values():
    s = np.array([-1.0, 0.0])
    v = L.gamma_density_values(4, 1.0, s)
    np.testing.assert_allclose(v, [128 / 3 * np.exp(-4.0), 0.0])


@given(scale=st.floats(0.1, 3.0), label=st.sampled_from(["x1d", "sig*x1d^2", "x1d^3", "sig^2", "x1d*x2d", "x2"]))
def test_columns_scale_with_state_degree(scale, label):
    rng = np.random.default_rng(0)
    t = np.linspace(0, 5, 40)
    X = rng.uniform(0.5, 1.5, (40, 2))
    H = rng.uniform(0.5, 1.5, (2, 2))
    tr = SampledTrajectory(t, X, history_times=np.array([-2.0, 0.0]), history_values=H)
    tr2 = SampledTrajectory(t, scale * X, history_times=np.array([-2.0, 0.0]), history_values=scale * H)
    atom = L.parse_atom(label)
    rule = make_rule("trapezoid", 7, -2, 0)
    if atom.is_instantaneous:
        a, b = L.assemble_instantaneous(tr, [atom]), L.assemble_instantaneous(tr2, [atom])
    else:
        a, b = L.assemble_distributed(tr, rule, [atom]), L.assemble_distributed(tr2, rule, [atom])
    np.testing.assert_allclose(b.matrix, scale ** atom.state_degree() * a.matrix, rtol=1e-10, atol=1e-12)


@given(st.permutations(range(6)))
def test_atom_permutation_permutes_columns(perm):
    atoms = L.enumerate_monomials([L.sig(), L.shifted(0)], 2)
    tr = SampledTrajectory(np.linspace(0, 4, 12), np.cos(np.linspace(0, 4, 12)))
    rule = make_rule("clenshaw_curtis", 6, -1, 0)
    A = L.assemble_distributed(tr, rule, atoms)
    B = L.assemble_distributed(tr, rule, [atoms[i] for i in perm])
    np.testing.assert_array_equal(B.matrix, A.matrix[:, list(perm)])
    assert B.labels == [A.labels[i] for i in perm]


def test_true_atom_column_converges_at_rule_order():
    # x(t) = t sampled densely, atom sig*x1d on [-3,-1]: exact column is the integral of s(t+s)
    t = np.linspace(3, 10, 8)
    tr = SampledTrajectory(np.linspace(0, 10, 1001), np.linspace(0, 10, 1001))
    exact = (-1 / 3 + 9) + t * (0.5 - 4.5)  # int s^2 + t int s
    errs = []
    for K in (5, 9, 17, 33):
        A = L.assemble_distributed(tr, make_rule("trapezoid", K, -3, -1), [L.parse_atom("sig*x1d")])
        col = A.matrix[:, 0][np.isin(tr.times[A.row_mask], t)]
        errs.append(np.max(np.abs(col - exact)))
    rates = [e1 / e2 for e1, e2 in zip(errs, errs[1:])]
    assert all(3.5 < r < 4.5 for r in rates)  # second order
