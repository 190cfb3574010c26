"""Tests for model module."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from model import (CausalDiagram, CausalModel, Cpt, ModelError, VariableSpec, ancestors, binary_variables,
                   descendants, has_directed_path, independence_equivalent, joint_distribution, joint_probability,
                   skeleton, topological_order, transition_equivalent, transitive_closure, transitive_reduction,
                   v_structures)

pytestmark = pytest.mark.unit


def diagram(names, edges):
    return CausalDiagram.from_edges(binary_variables(names), edges)


@st.composite
def random_diagrams(draw, max_nodes=6):
    """Random DAG over X1..Xn; edges only go from earlier to later in a drawn order."""
    n = draw(st.integers(min_value=1, max_value=max_nodes))
    order = draw(st.permutations(range(n)))
    edges = [(order[a], order[b]) for a, b in itertools.combinations(range(n), 2) if draw(st.booleans())]
    return CausalDiagram.from_edges(binary_variables(f'X{i + 1}' for i in range(n)), edges)


class TestVariableSpec:
    """Test VariableSpec validation and state lookup."""

    def test_state_index_by_label_and_index(self):
        spec = VariableSpec('Rain', ('no', 'yes'))
        assert spec.cardinality == 2
        assert spec.state_index('yes') == 1
        assert spec.state_index(0) == 0

    def test_needs_two_states(self):
        with pytest.raises(ModelError):
            VariableSpec('Rain', ('no',))

    def test_duplicate_states_rejected(self):
        with pytest.raises(ModelError):
            VariableSpec('Rain', ('no', 'no'))

    def test_unknown_state(self):
        spec = VariableSpec('Rain', ('no', 'yes'))
        with pytest.raises(ModelError):
            spec.state_index('maybe')
        with pytest.raises(ModelError):
            spec.state_index(2)


class TestCausalDiagram:
    """Test diagram construction and validation."""

    def test_from_edges_by_name(self):
        d = diagram('ABC', [('A', 'B'), ('B', 'C')])
        assert d.parents == ((), (0,), (1,))
        assert d.edges() == [(0, 1), (1, 2)]
        assert d.children(1) == [2]

    def test_cycle_rejected(self):
        with pytest.raises(ModelError):
            diagram('AB', [('A', 'B'), ('B', 'A')])

    def test_self_parent_rejected(self):
        with pytest.raises(ModelError):
            CausalDiagram(binary_variables('AB'), ((0,), ()))

    def test_parent_out_of_range(self):
        with pytest.raises(ModelError):
            CausalDiagram(binary_variables('AB'), ((), (5,)))

    def test_duplicate_parent_rejected(self):
        with pytest.raises(ModelError):
            CausalDiagram(binary_variables('AB'), ((), (0, 0)))

    def test_index_of(self):
        d = diagram('ABC', [])
        assert d.index_of('C') == 2
        assert d.index_of(1) == 1
        with pytest.raises(ModelError):
            d.index_of('Z')

    def test_configuration_strides_first_parent_slowest(self):
        variables = (VariableSpec('A', ('0', '1', '2')), VariableSpec('B', ('0', '1')), VariableSpec('C', ('0', '1')))
        d = CausalDiagram(variables, ((), (), (0, 1)))
        assert d.n_configurations(2) == 6
        assert list(d.configuration_strides(2)) == [2, 1]


class TestCpt:
    """Test CPT row validation."""

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ModelError):
            Cpt(np.array([[0.5, 0.4]]))

    def test_small_deviation_normalized(self):
        cpt = Cpt(np.array([[0.3, 0.7 + 5e-7]]))
        assert abs(cpt.table.sum() - 1.0) < 1e-12

    def test_table_read_only(self):
        cpt = Cpt(np.array([[0.3, 0.7]]))
        with pytest.raises(ValueError):
            cpt.table[0, 0] = 0.5

    def test_model_checks_shapes(self):
        d = diagram('AB', [('A', 'B')])
        with pytest.raises(ModelError):
            CausalModel(d, (np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]])))


class TestTopologicalOrder:
    """Test topological_order."""

    def test_single_node(self):
        assert topological_order(diagram('A', [])) == [0]

    def test_chain(self):
        assert topological_order(diagram('ABC', [('A', 'B'), ('B', 'C')])) == [0, 1, 2]

    def test_diamond_ties_by_index(self):
        d = diagram('ABCD', [('A', 'B'), ('A', 'C'), ('B', 'D'), ('C', 'D')])
        assert topological_order(d) == [0, 1, 2, 3]

    def test_ties_broken_by_index(self):
        d = diagram('ABC', [('C', 'A')])
        assert topological_order(d) == [1, 2, 0]

    @given(random_diagrams())
    def test_parents_before_children(self, d):
        position = {v: i for i, v in enumerate(topological_order(d))}
        for a, b in d.edges():
            assert position[a] < position[b]


class TestReachability:
    """Test descendants, ancestors and has_directed_path."""

    def test_chain_descendants(self):
        d = diagram('ABC', [('A', 'B'), ('B', 'C')])
        assert descendants(d, 0) == {1, 2}
        assert descendants(d, 2) == set()
        assert ancestors(d, 2) == {0, 1}

    def test_changes_example(self, changes_example_model):
        d = changes_example_model.diagram
        x, y = d.index_of('X'), d.index_of('Y')
        assert {d.index_of(n) for n in 'ZWQ'} <= descendants(d, x)
        assert y not in descendants(d, x)

    def test_has_directed_path(self):
        d = diagram('ABC', [('A', 'B'), ('B', 'C')])
        assert has_directed_path(d, 0, 2)
        assert not has_directed_path(d, 2, 0)
        assert not has_directed_path(d, 1, 1)


class TestSkeletonAndVStructures:
    """Test skeleton and v_structures."""

    def test_skeleton(self):
        assert skeleton(diagram('AB', [('A', 'B')])) == {frozenset((0, 1))}
        assert skeleton(diagram('AB', [])) == frozenset()
        assert skeleton(diagram('ABC', [('A', 'C'), ('B', 'C')])) == {frozenset((0, 2)), frozenset((1, 2))}

    def test_collider(self):
        assert v_structures(diagram('ABC', [('A', 'C'), ('B', 'C')])) == {(0, 2, 1)}

    def test_shielded_collider(self):
        assert v_structures(diagram('ABC', [('A', 'C'), ('B', 'C'), ('A', 'B')])) == frozenset()

    def test_chain_has_none(self):
        assert v_structures(diagram('ABC', [('A', 'B'), ('B', 'C')])) == frozenset()

    def test_tails_stored_smaller_first(self):
        assert v_structures(diagram('ABC', [('C', 'B'), ('A', 'B')])) == {(0, 1, 2)}


class TestEquivalence:
    """Test independence and transition equivalence, including the three-variable classes."""

    # Diagrams over A, B, C sharing the skeleton A - B - C
    CHAINS = {
        'a': [('A', 'B'), ('B', 'C')],
        'b': [('B', 'A'), ('B', 'C')],
        'c': [('C', 'B'), ('B', 'A')],
    }

    def test_reversed_edge_equivalent(self):
        assert independence_equivalent(diagram('AB', [('A', 'B')]), diagram('AB', [('B', 'A')]))

    def test_collider_not_equivalent_to_chain(self):
        assert not independence_equivalent(diagram('ABC', [('A', 'C'), ('B', 'C')]),
                                           diagram('ABC', [('A', 'C'), ('C', 'B')]))

    def test_reflexive(self):
        d = diagram('ABC', [('A', 'B')])
        assert independence_equivalent(d, d)

    def test_chains_independence_equivalent(self):
        chains = [diagram('ABC', e) for e in self.CHAINS.values()]
        for g1, g2 in itertools.combinations(chains, 2):
            assert independence_equivalent(g1, g2)

    def test_focal_b_class(self):
        """Test that a change at B keeps only diagrams giving B the same parents."""
        # skeleton A - C - B without v-structures
        g1 = diagram('ABC', [('A', 'C'), ('C', 'B')])
        g2 = diagram('ABC', [('C', 'A'), ('C', 'B')])
        g3 = diagram('ABC', [('B', 'C'), ('C', 'A')])
        b = 1
        assert independence_equivalent(g1, g3)
        assert transition_equivalent(g1, g2, [b])
        assert not transition_equivalent(g1, g3, [b])
        assert not transition_equivalent(g2, g3, [b])

    def test_focal_a_unique(self):
        """Test that a change at the root of a chain separates every alternative."""
        chains = {k: diagram('ABC', e) for k, e in self.CHAINS.items()}
        a = 0
        for key in ('b', 'c'):
            assert not transition_equivalent(chains['a'], chains[key], [a])
        assert transition_equivalent(chains['a'], chains['a'], [a])

    def test_all_focal_reflexive(self):
        d = diagram('ABC', [('A', 'B'), ('B', 'C')])
        assert transition_equivalent(d, d, [0, 1, 2])

    def test_errors(self):
        d = diagram('AB', [('A', 'B')])
        with pytest.raises(ModelError):
            transition_equivalent(d, d, [])
        with pytest.raises(ModelError):
            transition_equivalent(d, d, [4])
        with pytest.raises(ModelError):
            independence_equivalent(d, diagram('AC', [('A', 'C')]))

    @settings(max_examples=50, deadline=None)
    @given(random_diagrams(), random_diagrams(), random_diagrams())
    def test_equivalence_relation(self, g1, g2, g3):
        assert independence_equivalent(g1, g1)
        if g1.variables == g2.variables:
            assert independence_equivalent(g1, g2) == independence_equivalent(g2, g1)
            if g2.variables == g3.variables and independence_equivalent(g1, g2) and independence_equivalent(g2, g3):
                assert independence_equivalent(g1, g3)

    @settings(max_examples=50, deadline=None)
    @given(random_diagrams(max_nodes=4), st.data())
    def test_transition_refines_independence(self, g1, data):
        # every DAG over the same variables whose skeleton is a subset of the complete graph
        n = g1.n
        pairs = list(itertools.combinations(range(n), 2))
        edges = []
        for a, b in pairs:
            choice = data.draw(st.sampled_from((None, 'fwd', 'back')))
            if choice == 'fwd':
                edges.append((a, b))
            elif choice == 'back':
                edges.append((b, a))
        try:
            g2 = CausalDiagram.from_edges(g1.variables, edges)
        except ModelError:
            return
        focal = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
        if transition_equivalent(g1, g2, focal):
            assert independence_equivalent(g1, g2)
            for sub in range(1, len(focal) + 1):
                assert transition_equivalent(g1, g2, focal[:sub])


class TestTransitiveOperations:
    """Test transitive_closure and transitive_reduction."""

    def test_closure_of_chain(self):
        closure = transitive_closure(diagram('ABC', [('A', 'B'), ('B', 'C')]))
        assert closure.edges() == [(0, 1), (0, 2), (1, 2)]

    def test_closure_of_edgeless(self):
        assert transitive_closure(diagram('ABC', [])).edges() == []

    def test_closure_of_diamond_adds_shortcut(self):
        d = diagram('ABCD', [('A', 'B'), ('A', 'C'), ('B', 'D'), ('C', 'D')])
        assert (0, 3) in transitive_closure(d).edges()

    def test_reduction_removes_shortcut(self):
        d = diagram('XZY', [('X', 'Z'), ('Z', 'Y'), ('X', 'Y')])
        assert transitive_reduction(d).edges() == [(0, 1), (1, 2)]

    def test_reduction_of_reduced_chain(self):
        d = diagram('ABC', [('A', 'B'), ('B', 'C')])
        assert transitive_reduction(d) == d

    def test_reduction_of_diamond_closure(self):
        d = diagram('ABCD', [('A', 'B'), ('A', 'C'), ('B', 'D'), ('C', 'D')])
        assert transitive_reduction(transitive_closure(d)) == d

    @settings(max_examples=50, deadline=None)
    @given(random_diagrams(max_nodes=8))
    def test_reduction_ignores_closure(self, d):
        assert transitive_reduction(transitive_closure(d)) == transitive_reduction(d)

    @settings(max_examples=50, deadline=None)
    @given(random_diagrams(max_nodes=7))
    def test_reduction_is_minimal(self, d):
        reduced = transitive_reduction(d)
        closure = set(transitive_closure(d).edges())
        assert set(transitive_closure(reduced).edges()) == closure
        for edge in reduced.edges():
            pruned = CausalDiagram.from_edges(d.variables, [e for e in reduced.edges() if e != edge])
            assert set(transitive_closure(pruned).edges()) != closure


class TestJointProbability:
    """Test joint_probability and joint_distribution."""

    def test_single_node(self):
        model = CausalModel(diagram('A', []), (np.array([[0.5, 0.5]]),))
        assert joint_probability(model, [0]) == 0.5

    def test_two_nodes(self):
        model = CausalModel(diagram('AB', [('A', 'B')]),
                            (np.array([[0.7, 0.3]]), np.array([[0.6, 0.4], [0.2, 0.8]])))
        assert joint_probability(model, [1, 1]) == pytest.approx(0.24)
        assert joint_probability(model, ['1', '0']) == pytest.approx(0.06)

    def test_deterministic(self):
        model = CausalModel(diagram('AB', [('A', 'B')]),
                            (np.array([[0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]])))
        assert joint_probability(model, [1, 1]) == 1.0

    def test_invalid_state(self):
        model = CausalModel(diagram('A', []), (np.array([[0.5, 0.5]]),))
        with pytest.raises(ModelError):
            joint_probability(model, ['2'])

    def test_distribution_matches_products(self, tree_model):
        joint = joint_distribution(tree_model)
        for assignment in itertools.product((0, 1), repeat=4):
            assert joint[assignment] == pytest.approx(joint_probability(tree_model, assignment))

    def test_distribution_with_mixed_cardinalities(self, benchmark_model):
        joint = joint_distribution(benchmark_model)
        assert joint.shape == tuple(benchmark_model.diagram.cardinalities)
        assert joint.sum() == pytest.approx(1.0, abs=1e-9)

    def test_enumeration_limit(self, tree_model):
        with pytest.raises(ModelError):
            joint_distribution(tree_model, limit=8)

    @settings(max_examples=30, deadline=None)
    @given(random_diagrams(max_nodes=4), st.integers(0, 2 ** 32 - 1))
    def test_sums_to_one(self, d, seed):
        rng = np.random.default_rng(seed)
        cpts = [rng.dirichlet([1.0, 1.0], size=d.n_configurations(i)) for i in range(d.n)]
        model = CausalModel(d, tuple(cpts))
        total = sum(joint_probability(model, a) for a in itertools.product((0, 1), repeat=d.n))
        assert total == pytest.approx(1.0, abs=1e-9)
