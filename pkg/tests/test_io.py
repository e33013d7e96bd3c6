"""Round-trip and error-path tests for the JSON document contracts."""

import json

import numpy as np
import pytest

import watermpc.io as wio
from watermpc.demo import build_demo, write_demo
from watermpc.io import SchemaError


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    bundle = build_demo("tank1", h_sim=30)
    write_demo(bundle, out)
    return out


class TestRoundTrips:
    def test_network(self, demo_dir, tmp_path):
        model = wio.load_network(demo_dir / "network.json")
        wio.save_network(model, tmp_path / "n2.json")
        model2 = wio.load_network(tmp_path / "n2.json")
        for attr in ("A", "B", "Gd", "E", "Ed", "x_min", "x_max", "x_safe",
                     "u_min", "u_max", "alpha0"):
            np.testing.assert_array_equal(getattr(model, attr), getattr(model2, attr))
        assert model.dt == model2.dt
        # Byte-identical documents after one normalization pass.
        wio.save_network(model2, tmp_path / "n3.json")
        assert (tmp_path / "n2.json").read_bytes() == (tmp_path / "n3.json").read_bytes()

    def test_tree(self, demo_dir, tmp_path):
        tree = wio.load_tree(demo_dir / "scenarioTree.json")
        wio.save_tree(tree, tmp_path / "t2.json")
        tree2 = wio.load_tree(tmp_path / "t2.json")
        np.testing.assert_array_equal(tree.anc, tree2.anc)
        np.testing.assert_array_equal(tree.prob, tree2.prob)
        np.testing.assert_array_equal(tree.eps, tree2.eps)
        wio.save_tree(tree2, tmp_path / "t3.json")
        assert (tmp_path / "t2.json").read_bytes() == (tmp_path / "t3.json").read_bytes()

    def test_forecast(self, demo_dir, tmp_path):
        fs = wio.load_forecast(demo_dir / "forecaster.json")
        wio.save_forecast(fs, tmp_path / "f2.json")
        fs2 = wio.load_forecast(tmp_path / "f2.json")
        np.testing.assert_array_equal(fs.d_hat, fs2.d_hat)
        np.testing.assert_array_equal(fs.alpha_hat, fs2.alpha_hat)
        wio.save_forecast(fs2, tmp_path / "f3.json")
        assert (tmp_path / "f2.json").read_bytes() == (tmp_path / "f3.json").read_bytes()

    def test_controller_config(self, demo_dir, tmp_path):
        horizon, weights, solver = wio.load_controller_config(demo_dir / "controllerconfig.json")
        wio.save_controller_config(horizon, weights, solver, tmp_path / "c2.json")
        h2, w2, s2 = wio.load_controller_config(tmp_path / "c2.json")
        assert h2 == horizon
        assert w2.w_alpha == weights.w_alpha and w2.w_s == weights.w_s
        assert s2.max_iter == solver.max_iter and s2.tol == solver.tol
        wio.save_controller_config(h2, w2, s2, tmp_path / "c3.json")
        assert (tmp_path / "c2.json").read_bytes() == (tmp_path / "c3.json").read_bytes()

    def test_control_output(self, tmp_path, rng):
        from watermpc.solver import SolverResult

        res = SolverResult(
            u0=rng.random(3),
            primal=np.zeros(1),
            primal_avg=np.zeros(1),
            dual=np.zeros(1),
            iterations=17,
            termination="converged",
            primal_residual=1.25e-3,
            dual_change=3.5e-7,
            duality_gap=0.5,
            objective=123.0,
            solve_time_s=0.25,
            gamma=1e-3,
            lipschitz=1e3,
        )
        wio.save_control_output(res, tmp_path / "o1.json")
        doc = wio.load_control_output(tmp_path / "o1.json")
        np.testing.assert_array_equal(doc["u0"], res.u0)
        assert doc["iterations"] == 17
        assert doc["terminationReason"] == "converged"
        assert doc["solveTimeMs"] == pytest.approx(250.0)
        # round trip bytes
        text1 = (tmp_path / "o1.json").read_bytes()
        raw = json.loads(text1)
        (tmp_path / "o2.json").write_text(json.dumps(raw, indent=2, allow_nan=False) + "\n")
        assert (tmp_path / "o2.json").read_bytes() == text1

    def test_state(self, demo_dir, tmp_path):
        x, u_prev, k = wio.load_state(demo_dir / "state.json")
        wio.save_state(x, u_prev, k, tmp_path / "s2.json")
        x2, u2, k2 = wio.load_state(tmp_path / "s2.json")
        np.testing.assert_array_equal(x, x2)
        np.testing.assert_array_equal(u_prev, u2)
        assert k == k2

    def test_realizations(self, demo_dir, tmp_path):
        real = wio.load_realizations(demo_dir / "realizations.json")
        wio.save_realizations(
            real["demand"], real["price"], real["nominalDemand"], real["nominalPrice"],
            tmp_path / "r2.json",
            forecast_demand=real["forecastDemand"],
            forecast_price=real["forecastPrice"],
        )
        real2 = wio.load_realizations(tmp_path / "r2.json")
        for key in ("demand", "price", "nominalDemand", "nominalPrice", "forecastDemand"):
            np.testing.assert_array_equal(real[key], real2[key])

    def test_fan(self, demo_dir, tmp_path):
        fan = wio.load_fan(demo_dir / "fan.json")
        wio.save_fan(fan, tmp_path / "fan2.json")
        fan2 = wio.load_fan(tmp_path / "fan2.json")
        np.testing.assert_array_equal(fan.values, fan2.values)
        assert (fan.n_demand, fan.n_price) == (fan2.n_demand, fan2.n_price)

    def test_kpi(self, tmp_path):
        wio.save_kpi(1.5, 0.0, 0.125, tmp_path / "kpi.json")
        doc = wio.load_kpi(tmp_path / "kpi.json")
        assert doc == {"kpiE": 1.5, "kpiS": 0.0, "kpiTauSeconds": 0.125}


class TestErrorPaths:
    def test_truncated_json_reports_byte_offset(self, demo_dir, tmp_path):
        text = (demo_dir / "network.json").read_text()
        broken = tmp_path / "broken.json"
        broken.write_text(text[: len(text) // 2])
        with pytest.raises(SchemaError, match="byte"):
            wio.load_network(broken)

    def test_missing_field_names_pointer(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"schemaVersion": 1}\n')
        with pytest.raises(SchemaError, match="/A"):
            wio.load_network(tmp_path / "bad.json")

    def test_ragged_matrix_rejected(self, tmp_path):
        doc = {"schemaVersion": 1, "horizon": 2, "dHat": [[1.0], [1.0, 2.0]], "alphaHat": [[1.0], [1.0]]}
        path = tmp_path / "f.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="/dHat"):
            wio.load_forecast(path)

    def test_empty_dhat_rejected(self, tmp_path):
        doc = {"schemaVersion": 1, "horizon": 0, "dHat": [], "alphaHat": []}
        path = tmp_path / "f.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="dHat"):
            wio.load_forecast(path)

    def test_non_finite_rejected_on_load(self, tmp_path):
        path = tmp_path / "f.json"
        path.write_text('{"schemaVersion": 1, "horizon": 1, "dHat": [[NaN]], "alphaHat": [[1.0]]}')
        with pytest.raises(SchemaError, match="non-finite"):
            wio.load_forecast(path)

    def test_non_finite_rejected_on_save(self, tmp_path):
        from watermpc.forecast import ForecastSeries

        fs = ForecastSeries(d_hat=np.array([[1.0]]), alpha_hat=np.array([[1.0]]))
        fs.alpha_hat[0, 0] = np.inf
        with pytest.raises(ValueError):
            wio.save_forecast(fs, tmp_path / "f.json")

    def test_wrong_schema_version(self, tmp_path):
        path = tmp_path / "f.json"
        path.write_text('{"schemaVersion": 2, "horizon": 1, "dHat": [[1.0]], "alphaHat": [[1.0]]}')
        with pytest.raises(SchemaError, match="version"):
            wio.load_forecast(path)


class TestCrossValidation:
    def test_demand_dimension_mismatch_names_both(self, demo_dir):
        model = wio.load_network(demo_dir / "network.json")
        tree = wio.load_tree(demo_dir / "scenarioTree.json")
        tree.n_demand = 4
        problems = wio.cross_validate(model=model, tree=tree)
        assert any("4" in p and "1" in p for p in problems)

    def test_consistent_demo_set_clean(self, demo_dir):
        model = wio.load_network(demo_dir / "network.json")
        tree = wio.load_tree(demo_dir / "scenarioTree.json")
        forecast = wio.load_forecast(demo_dir / "forecaster.json")
        horizon, weights, _ = wio.load_controller_config(demo_dir / "controllerconfig.json")
        state = wio.load_state(demo_dir / "state.json")
        problems = wio.cross_validate(
            model=model, tree=tree, forecast=forecast, horizon=horizon,
            weights=weights, state=state,
        )
        assert problems == []
