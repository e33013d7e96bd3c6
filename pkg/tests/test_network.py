"""Tests for the network topology and LTI model."""

import numpy as np
import pytest

from watermpc.network import (
    ControlledFlow,
    MixingNode,
    NetworkTopology,
    Tank,
    TopologyError,
    build_lti,
)

from conftest import make_model


def single_tank_topology():
    return NetworkTopology(
        tanks=(Tank(v_min=0.0, v_max=100.0, v_safe=20.0, inflows=(0,), demands=(0,)),),
        flows=(ControlledFlow("pump", q_max=0.1, alpha0=1.0),),
        n_demands=1,
    )


class TestBuildLti:
    def test_single_tank(self):
        model = build_lti(single_tank_topology(), 3600.0)
        assert model.A == pytest.approx(np.array([[1.0]]))
        assert model.B == pytest.approx(np.array([[3600.0]]))
        assert model.Gd == pytest.approx(np.array([[-3600.0]]))
        assert model.E.shape == (0, 1)
        assert model.Ed.shape == (0, 1)
        assert model.u_min == pytest.approx([0.0])
        assert model.u_max == pytest.approx([0.1])

    def test_mixing_node_rows(self):
        # Inflow q0, controlled outflow q1, demand d0 at the node.
        topology = NetworkTopology(
            tanks=(Tank(0.0, 50.0, 10.0, outflows=(0,)),),
            flows=(
                ControlledFlow("pump", q_max=1.0),
                ControlledFlow("valve", q_max=1.0),
            ),
            n_demands=1,
            mixing_nodes=(MixingNode(inflows=(0,), outflows=(1,), demands=(0,)),),
        )
        model = build_lti(topology, 60.0)
        assert model.E == pytest.approx(np.array([[1.0, -1.0]]))
        assert model.Ed == pytest.approx(np.array([[-1.0]]))

    def test_city_scale_shapes(self):
        # 63 tanks, 114 controlled flows, 88 demands, 17 mixing nodes.
        tanks = tuple(
            Tank(0.0, 1e4, 1e3, inflows=(i,), demands=(i % 88,)) for i in range(63)
        )
        # Flows 63..113 are wired through the 17 mixing nodes, three each.
        mixing = tuple(
            MixingNode(inflows=(63 + 3 * s,), outflows=(64 + 3 * s, 65 + 3 * s))
            for s in range(17)
        )
        topology = NetworkTopology(
            tanks=tanks,
            flows=tuple(ControlledFlow("pump", 1.0) for _ in range(114)),
            n_demands=88,
            mixing_nodes=mixing,
        )
        model = build_lti(topology, 3600.0)
        assert model.A.shape == (63, 63)
        assert model.B.shape == (63, 114)
        assert model.Gd.shape == (63, 88)
        assert model.E.shape == (17, 114)
        assert model.Ed.shape == (17, 88)

    def test_tank_to_tank_flow_allowed(self):
        topology = NetworkTopology(
            tanks=(
                Tank(0.0, 10.0, 1.0, inflows=(0,), outflows=(1,)),
                Tank(0.0, 10.0, 1.0, inflows=(1,), demands=(0,)),
            ),
            flows=(ControlledFlow("pump", 1.0), ControlledFlow("pump", 1.0)),
            n_demands=1,
        )
        model = build_lti(topology, 2.0)
        np.testing.assert_allclose(model.B[:, 1], [-2.0, 2.0])

    def test_flow_in_and_out_of_same_tank_rejected(self):
        topology = NetworkTopology(
            tanks=(Tank(0.0, 10.0, 1.0, inflows=(0,), outflows=(0,)),),
            flows=(ControlledFlow("pump", 1.0),),
            n_demands=1,
        )
        with pytest.raises(TopologyError, match="both inflow and outflow"):
            build_lti(topology, 1.0)

    def test_mixing_node_without_outgoing_rejected(self):
        topology = NetworkTopology(
            tanks=(Tank(0.0, 10.0, 1.0, outflows=(0,), demands=(0,)),),
            flows=(ControlledFlow("pump", 1.0), ControlledFlow("pump", 1.0)),
            n_demands=1,
            mixing_nodes=(MixingNode(inflows=(0, 1)),),
        )
        with pytest.raises(TopologyError, match="no outgoing"):
            build_lti(topology, 1.0)

    def test_unreferenced_flow_rejected(self):
        topology = NetworkTopology(
            tanks=(Tank(0.0, 10.0, 1.0, inflows=(0,), demands=(0,)),),
            flows=(ControlledFlow("pump", 1.0), ControlledFlow("pump", 1.0)),
            n_demands=1,
        )
        with pytest.raises(TopologyError, match="no incidence list"):
            build_lti(topology, 1.0)

    def test_bad_safety_ordering_rejected(self):
        topology = NetworkTopology(
            tanks=(Tank(0.0, 10.0, 11.0, inflows=(0,), demands=(0,)),),
            flows=(ControlledFlow("pump", 1.0),),
            n_demands=1,
        )
        with pytest.raises(TopologyError, match="v_min <= v_safe <= v_max"):
            build_lti(topology, 1.0)

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ValueError, match="dt"):
            build_lti(single_tank_topology(), 0.0)


class TestStepDynamics:
    def test_single_tank_step(self):
        model = build_lti(single_tank_topology(), 3600.0)
        x1 = model.step_dynamics(np.array([10.0]), np.array([0.002]), np.array([0.001]))
        assert x1 == pytest.approx([13.6])

    def test_identity_case(self):
        model = build_lti(single_tank_topology(), 3600.0)
        x1 = model.step_dynamics(np.array([42.0]), np.array([0.0]), np.array([0.0]))
        assert x1 == pytest.approx([42.0])

    def test_against_triple_loop_oracle(self, rng):
        model = make_model(rng, n_tanks=5, n_inputs=4, n_demands=3, identity_a=False)
        x = rng.standard_normal(5)
        u = rng.standard_normal(4)
        d = rng.standard_normal(3)
        expected = np.zeros(5)
        for i in range(5):
            for j in range(5):
                expected[i] += model.A[i, j] * x[j]
            for j in range(4):
                expected[i] += model.B[i, j] * u[j]
            for j in range(3):
                expected[i] += model.Gd[i, j] * d[j]
        np.testing.assert_allclose(model.step_dynamics(x, u, d), expected, atol=1e-12)

    def test_dimension_mismatch(self):
        model = build_lti(single_tank_topology(), 3600.0)
        with pytest.raises(ValueError, match="input"):
            model.step_dynamics(np.array([1.0]), np.array([1.0, 2.0]), np.array([0.0]))

    def test_mass_conservation_on_transfer(self):
        # A tank-to-tank flow moves volume without creating or destroying it.
        topology = NetworkTopology(
            tanks=(
                Tank(0.0, 10.0, 1.0, outflows=(0,)),
                Tank(0.0, 10.0, 1.0, inflows=(0,), demands=(0,)),
            ),
            flows=(ControlledFlow("pump", 1.0),),
            n_demands=1,
        )
        model = build_lti(topology, 3.0)
        x = np.array([5.0, 2.0])
        x1 = model.step_dynamics(x, np.array([0.4]), np.array([0.0]))
        assert x1.sum() == pytest.approx(x.sum())
        assert x1 == pytest.approx([5.0 - 1.2, 2.0 + 1.2])


class TestCouplingResidual:
    def topology(self):
        return NetworkTopology(
            tanks=(Tank(0.0, 50.0, 10.0, outflows=(0,)),),
            flows=(ControlledFlow("pump", 1.0), ControlledFlow("valve", 1.0)),
            n_demands=1,
            mixing_nodes=(MixingNode(inflows=(0,), outflows=(1,), demands=(0,)),),
        )

    def test_balanced_node(self):
        model = build_lti(self.topology(), 1.0)
        r = model.coupling_residual(np.array([0.5, 0.3]), np.array([0.2]))
        assert r == pytest.approx([0.0])

    def test_unbalanced_node(self):
        model = build_lti(self.topology(), 1.0)
        r = model.coupling_residual(np.array([0.5, 0.5]), np.array([0.2]))
        assert r == pytest.approx([-0.2])

    def test_against_loop_oracle(self, rng):
        model = make_model(rng, n_tanks=3, n_inputs=5, n_demands=4, n_mixing=2)
        u = rng.standard_normal(5)
        d = rng.standard_normal(4)
        expected = np.zeros(2)
        for s in range(2):
            for j in range(5):
                expected[s] += model.E[s, j] * u[j]
            for j in range(4):
                expected[s] += model.Ed[s, j] * d[j]
        np.testing.assert_allclose(model.coupling_residual(u, d), expected, atol=1e-14)

    def test_linearity(self, rng):
        model = make_model(rng, n_tanks=3, n_inputs=5, n_demands=4, n_mixing=2)
        u = rng.standard_normal(5)
        d = rng.standard_normal(4)
        lam = 3.7
        np.testing.assert_allclose(
            model.coupling_residual(lam * u, lam * d),
            lam * model.coupling_residual(u, d),
            atol=1e-12,
        )


def test_b_columns_touch_exactly_their_tanks():
    topology = NetworkTopology(
        tanks=(
            Tank(0.0, 10.0, 1.0, inflows=(0,), outflows=(1,)),
            Tank(0.0, 10.0, 1.0, inflows=(1,), demands=(0,)),
        ),
        flows=(ControlledFlow("pump", 1.0), ControlledFlow("pump", 1.0)),
        n_demands=1,
    )
    dt = 7.0
    model = build_lti(topology, dt)
    for col in model.B.T:
        assert set(np.round(col, 12)) <= {-dt, 0.0, dt}
