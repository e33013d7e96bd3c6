"""JSON document contracts.

Five core documents drive the controller: ``network.json``,
``scenarioTree.json``, ``forecaster.json``, ``controllerconfig.json`` and
``controlOutput.json``. The simulator adds ``state.json``,
``realizations.json``, ``fan.json``, ``simlog.json`` and ``kpi.json``.
Every document carries ``"schemaVersion": 1``. Numbers are serialized as
JSON doubles with shortest round-trip formatting; NaN and infinities are
rejected in both directions, so load -> save -> load is value-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .forecast import ForecastSeries
from .network import NetworkModel
from .problem import CostWeights
from .simulate import SimulationLog
from .solver import SolverConfig, SolverResult
from .tree import ScenarioFan, ScenarioTree, validate_tree

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Malformed or inconsistent document; message carries a JSON pointer."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")


def _reject_constant(name: str):
    raise SchemaError("/", f"non-finite number {name!r} is not permitted")


def load_document(path: str | Path) -> dict:
    """Parse a JSON document; parse errors report the byte offset."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SchemaError("/", f"parse error at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("/", "top-level value must be an object")
    return doc


def save_document(doc: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _get(doc: dict, key: str, pointer: str = "") -> Any:
    if key not in doc:
        raise SchemaError(f"{pointer}/{key}", "missing required field")
    return doc[key]


def _number(doc: dict, key: str, pointer: str = "") -> float:
    val = _get(doc, key, pointer)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"{pointer}/{key}", f"expected a number, got {type(val).__name__}")
    if not np.isfinite(val):
        raise SchemaError(f"{pointer}/{key}", "number must be finite")
    return float(val)


def _integer(doc: dict, key: str, pointer: str = "") -> int:
    val = _get(doc, key, pointer)
    if isinstance(val, bool) or not isinstance(val, int):
        raise SchemaError(f"{pointer}/{key}", f"expected an integer, got {type(val).__name__}")
    return int(val)


def _vector(doc: dict, key: str, n: int | None = None, pointer: str = "") -> np.ndarray:
    val = _get(doc, key, pointer)
    ptr = f"{pointer}/{key}"
    if not isinstance(val, list):
        raise SchemaError(ptr, "expected an array")
    for i, item in enumerate(val):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise SchemaError(f"{ptr}/{i}", "expected a number")
        if not np.isfinite(item):
            raise SchemaError(f"{ptr}/{i}", "number must be finite")
    arr = np.asarray(val, float)
    if n is not None and arr.shape != (n,):
        raise SchemaError(ptr, f"expected {n} entries, got {arr.shape[0]}")
    return arr


def _matrix(
    doc: dict,
    key: str,
    rows: int | None = None,
    cols: int | None = None,
    pointer: str = "",
    allow_empty: bool = False,
) -> np.ndarray:
    val = _get(doc, key, pointer)
    ptr = f"{pointer}/{key}"
    if not isinstance(val, list):
        raise SchemaError(ptr, "expected an array of rows")
    if len(val) == 0:
        if not allow_empty:
            raise SchemaError(ptr, "array must not be empty")
        return np.zeros((0, cols if cols is not None else 0))
    widths = set()
    for r, row in enumerate(val):
        if not isinstance(row, list):
            raise SchemaError(f"{ptr}/{r}", "expected an array row")
        widths.add(len(row))
        for c, item in enumerate(row):
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise SchemaError(f"{ptr}/{r}/{c}", "expected a number")
            if not np.isfinite(item):
                raise SchemaError(f"{ptr}/{r}/{c}", "number must be finite")
    if len(widths) != 1:
        raise SchemaError(ptr, f"rows have inconsistent lengths {sorted(widths)}")
    arr = np.asarray(val, float)
    if rows is not None and arr.shape[0] != rows:
        raise SchemaError(ptr, f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise SchemaError(ptr, f"expected {cols} columns, got {arr.shape[1]}")
    return arr


def _check_version(doc: dict) -> None:
    version = _integer(doc, "schemaVersion")
    if version != SCHEMA_VERSION:
        raise SchemaError("/schemaVersion", f"unsupported schema version {version}")


# -- network.json -----------------------------------------------------------

def load_network(path: str | Path) -> NetworkModel:
    doc = load_document(path)
    _check_version(doc)
    A = _matrix(doc, "A")
    nt = A.shape[0]
    if A.shape[1] != nt:
        raise SchemaError("/A", f"must be square, got {A.shape}")
    B = _matrix(doc, "B", rows=nt)
    nu = B.shape[1]
    Gd = _matrix(doc, "Gd", rows=nt)
    nd = Gd.shape[1]
    E = _matrix(doc, "E", cols=nu, allow_empty=True)
    Ed = _matrix(doc, "Ed", rows=E.shape[0], cols=nd, allow_empty=True)
    model = NetworkModel(
        A=A,
        B=B,
        Gd=Gd,
        E=E,
        Ed=Ed,
        x_min=_vector(doc, "xmin", nt),
        x_max=_vector(doc, "xmax", nt),
        x_safe=_vector(doc, "xsafe", nt),
        u_min=_vector(doc, "umin", nu),
        u_max=_vector(doc, "umax", nu),
        alpha0=_vector(doc, "alpha0", nu),
        dt=_number(doc, "dt"),
        tank_names=tuple(doc.get("tankNames", ())),
        flow_names=tuple(doc.get("flowNames", ())),
    )
    try:
        model.validate()
        if np.any(model.x_min > model.x_safe) or np.any(model.x_safe > model.x_max):
            raise ValueError("require xmin <= xsafe <= xmax")
    except ValueError as exc:
        raise SchemaError("/", str(exc)) from exc
    return model


def save_network(model: NetworkModel, path: str | Path) -> None:
    doc = {
        "schemaVersion": SCHEMA_VERSION,
        "dt": model.dt,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "Gd": model.Gd.tolist(),
        "E": model.E.tolist(),
        "Ed": model.Ed.tolist(),
        "xmin": model.x_min.tolist(),
        "xmax": model.x_max.tolist(),
        "xsafe": model.x_safe.tolist(),
        "umin": model.u_min.tolist(),
        "umax": model.u_max.tolist(),
        "alpha0": model.alpha0.tolist(),
    }
    if model.tank_names:
        doc["tankNames"] = list(model.tank_names)
    if model.flow_names:
        doc["flowNames"] = list(model.flow_names)
    save_document(doc, path)


# -- scenarioTree.json -------------------------------------------------------

def load_tree(path: str | Path) -> ScenarioTree:
    doc = load_document(path)
    _check_version(doc)
    horizon = _integer(doc, "horizon")
    nd = _integer(doc, "nDemands")
    nu = _integer(doc, "nPrices")
    per_stage = _vector(doc, "nodesPerStage", horizon + 1)
    n_nodes = int(per_stage.sum())
    anc = _vector(doc, "ancestor", n_nodes).astype(int)
    prob = _vector(doc, "probability", n_nodes)
    stage = np.repeat(np.arange(horizon + 1), per_stage.astype(int))
    eps = demand = price = None
    if doc.get("errorValues") is not None:
        eps = _matrix(doc, "errorValues", rows=n_nodes, cols=nd + nu)
    if doc.get("demandValues") is not None or doc.get("priceValues") is not None:
        demand = _matrix(doc, "demandValues", rows=n_nodes, cols=nd)
        price = _matrix(doc, "priceValues", rows=n_nodes, cols=nu)
    if eps is None and demand is None:
        raise SchemaError(
            "/errorValues", "tree must carry errorValues or attached values"
        )
    tree = ScenarioTree(
        horizon=horizon,
        n_demand=nd,
        n_price=nu,
        stage=stage,
        anc=anc,
        prob=prob,
        eps=eps,
        demand=demand,
        price=price,
    )
    problems = validate_tree(tree)
    if problems:
        raise SchemaError("/", f"invalid scenario tree: {problems[0]}")
    return tree


def save_tree(tree: ScenarioTree, path: str | Path) -> None:
    doc = {
        "schemaVersion": SCHEMA_VERSION,
        "horizon": tree.horizon,
        "nDemands": tree.n_demand,
        "nPrices": tree.n_price,
        "nodesPerStage": [int(c) for c in tree.nodes_per_stage],
        "ancestor": [int(a) for a in tree.anc],
        "probability": tree.prob.tolist(),
        "errorValues": tree.eps.tolist() if tree.eps is not None else None,
        "demandValues": tree.demand.tolist() if tree.demand is not None else None,
        "priceValues": tree.price.tolist() if tree.price is not None else None,
    }
    save_document(doc, path)


# -- forecaster.json ---------------------------------------------------------

def load_forecast(path: str | Path) -> ForecastSeries:
    doc = load_document(path)
    _check_version(doc)
    horizon = _integer(doc, "horizon")
    d_hat = _matrix(doc, "dHat", rows=horizon)
    alpha_hat = _matrix(doc, "alphaHat", rows=horizon)
    try:
        return ForecastSeries(d_hat=d_hat, alpha_hat=alpha_hat)
    except ValueError as exc:
        raise SchemaError("/dHat", str(exc)) from exc


def save_forecast(series: ForecastSeries, path: str | Path) -> None:
    save_document(
        {
            "schemaVersion": SCHEMA_VERSION,
            "horizon": series.horizon,
            "dHat": series.d_hat.tolist(),
            "alphaHat": series.alpha_hat.tolist(),
        },
        path,
    )


# -- controllerconfig.json ---------------------------------------------------

def load_controller_config(path: str | Path) -> tuple[int, CostWeights, SolverConfig]:
    doc = load_document(path)
    _check_version(doc)
    horizon = _integer(doc, "horizon")
    wu_raw = _get(doc, "Wu")
    wu: float | np.ndarray
    if isinstance(wu_raw, (int, float)) and not isinstance(wu_raw, bool):
        wu = float(wu_raw)
    else:
        wu = _matrix(doc, "Wu")
    try:
        weights = CostWeights(
            w_alpha=_number(doc, "Walpha"),
            w_u=wu,
            w_s=_number(doc, "Ws"),
            w_x=_number(doc, "Wx"),
        )
    except ValueError as exc:
        raise SchemaError("/Wu", str(exc)) from exc
    gamma = None
    if doc.get("gamma") is not None:
        gamma = _number(doc, "gamma")
    try:
        solver = SolverConfig(
            max_iter=_integer(doc, "maxIter"),
            tol=_number(doc, "tol"),
            gamma=gamma,
        )
    except ValueError as exc:
        raise SchemaError("/maxIter", str(exc)) from exc
    return horizon, weights, solver


def save_controller_config(
    horizon: int,
    weights: CostWeights,
    solver: SolverConfig,
    path: str | Path,
) -> None:
    wu = weights.w_u
    doc = {
        "schemaVersion": SCHEMA_VERSION,
        "horizon": horizon,
        "Walpha": weights.w_alpha,
        "Wu": float(wu) if np.ndim(wu) == 0 else np.asarray(wu).tolist(),
        "Ws": weights.w_s,
        "Wx": weights.w_x,
        "maxIter": solver.max_iter,
        "tol": solver.tol,
        "gamma": solver.gamma,
    }
    save_document(doc, path)


# -- controlOutput.json ------------------------------------------------------

def load_control_output(path: str | Path) -> dict:
    doc = load_document(path)
    _check_version(doc)
    return {
        "u0": _vector(doc, "u0"),
        "iterations": _integer(doc, "iterations"),
        "terminationReason": str(_get(doc, "terminationReason")),
        "primalResidual": _number(doc, "primalResidual"),
        "dualChange": _number(doc, "dualChange"),
        "solveTimeMs": _number(doc, "solveTimeMs"),
    }


def save_control_output(result: SolverResult, path: str | Path) -> None:
    save_document(
        {
            "schemaVersion": SCHEMA_VERSION,
            "u0": result.u0.tolist(),
            "iterations": result.iterations,
            "terminationReason": result.termination,
            "primalResidual": result.primal_residual,
            "dualChange": result.dual_change,
            "solveTimeMs": result.solve_time_s * 1e3,
        },
        path,
    )


# -- state.json ---------------------------------------------------------------

def load_state(path: str | Path) -> tuple[np.ndarray, np.ndarray, int]:
    doc = load_document(path)
    _check_version(doc)
    k = _integer(doc, "k") if "k" in doc else 0
    return _vector(doc, "x"), _vector(doc, "uPrev"), k


def save_state(x: np.ndarray, u_prev: np.ndarray, k: int, path: str | Path) -> None:
    save_document(
        {
            "schemaVersion": SCHEMA_VERSION,
            "x": np.asarray(x, float).tolist(),
            "uPrev": np.asarray(u_prev, float).tolist(),
            "k": int(k),
        },
        path,
    )


# -- realizations.json ---------------------------------------------------------

def _tensor3(doc: dict, key: str, pointer: str = "") -> np.ndarray:
    raw = _get(doc, key, pointer)
    ptr = f"{pointer}/{key}"
    if not isinstance(raw, list) or not raw:
        raise SchemaError(ptr, "expected a non-empty array")
    try:
        arr = np.asarray(raw, float)
    except (ValueError, TypeError):
        raise SchemaError(ptr, "array is not rectangular or numeric") from None
    if arr.ndim != 3:
        raise SchemaError(ptr, f"expected a 3-d array, got {arr.ndim} dimensions")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(ptr, "numbers must be finite")
    return arr


def load_realizations(path: str | Path) -> dict:
    """Realized trajectories and the forecasts issued along the run.

    ``nominalDemand``/``nominalPrice`` give the time-invariant nominal
    pattern; the optional ``forecastDemand``/``forecastPrice`` tensors hold
    the full forecast issued at each step (steps x horizon x series), for
    forecasters that condition on observed history.
    """
    doc = load_document(path)
    _check_version(doc)
    demand = _matrix(doc, "demand")
    price = _matrix(doc, "price", rows=demand.shape[0])
    nominal_demand = _matrix(doc, "nominalDemand", cols=demand.shape[1])
    nominal_price = _matrix(
        doc, "nominalPrice", rows=nominal_demand.shape[0], cols=price.shape[1]
    )
    out = {
        "demand": demand,
        "price": price,
        "nominalDemand": nominal_demand,
        "nominalPrice": nominal_price,
        "forecastDemand": None,
        "forecastPrice": None,
    }
    if doc.get("forecastDemand") is not None:
        out["forecastDemand"] = _tensor3(doc, "forecastDemand")
        out["forecastPrice"] = _tensor3(doc, "forecastPrice")
    return out


def save_realizations(
    demand: np.ndarray,
    price: np.ndarray,
    nominal_demand: np.ndarray,
    nominal_price: np.ndarray,
    path: str | Path,
    forecast_demand: np.ndarray | None = None,
    forecast_price: np.ndarray | None = None,
) -> None:
    doc = {
        "schemaVersion": SCHEMA_VERSION,
        "demand": np.asarray(demand, float).tolist(),
        "price": np.asarray(price, float).tolist(),
        "nominalDemand": np.asarray(nominal_demand, float).tolist(),
        "nominalPrice": np.asarray(nominal_price, float).tolist(),
    }
    if forecast_demand is not None:
        doc["forecastDemand"] = np.asarray(forecast_demand, float).tolist()
        doc["forecastPrice"] = np.asarray(forecast_price, float).tolist()
    save_document(doc, path)


# -- fan.json -------------------------------------------------------------------

def load_fan(path: str | Path) -> ScenarioFan:
    doc = load_document(path)
    _check_version(doc)
    horizon = _integer(doc, "horizon")
    nd = _integer(doc, "nDemands")
    nu = _integer(doc, "nPrices")
    raw = _get(doc, "scenarios")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("/scenarios", "expected a non-empty array of scenarios")
    try:
        values = np.asarray(raw, float)
    except (ValueError, TypeError):
        raise SchemaError("/scenarios", "scenario array is not rectangular or numeric") from None
    if values.ndim != 3 or values.shape[1] != horizon or values.shape[2] != nd + nu:
        raise SchemaError(
            "/scenarios",
            f"expected shape (S, {horizon}, {nd + nu}), got {values.shape}",
        )
    if not np.all(np.isfinite(values)):
        raise SchemaError("/scenarios", "numbers must be finite")
    return ScenarioFan(values=values, n_demand=nd, n_price=nu)


def save_fan(fan: ScenarioFan, path: str | Path) -> None:
    save_document(
        {
            "schemaVersion": SCHEMA_VERSION,
            "horizon": fan.horizon,
            "nDemands": fan.n_demand,
            "nPrices": fan.n_price,
            "scenarios": fan.values.tolist(),
        },
        path,
    )


# -- simlog.json / kpi.json ------------------------------------------------------

def save_simlog(log: SimulationLog, path: str | Path) -> None:
    save_document(
        {
            "schemaVersion": SCHEMA_VERSION,
            "x": log.x.tolist(),
            "u": log.u.tolist(),
            "demand": log.demand.tolist(),
            "price": log.price.tolist(),
            "solveTimeS": log.solve_time_s.tolist(),
            "iterations": [int(i) for i in log.iterations],
            "primalResidual": log.primal_residual.tolist(),
            "couplingResidual": log.coupling_residual.tolist(),
            "alpha0": log.alpha0.tolist(),
            "xsafe": log.x_safe.tolist(),
        },
        path,
    )


def load_simlog(path: str | Path) -> SimulationLog:
    doc = load_document(path)
    _check_version(doc)
    u = _matrix(doc, "u")
    h = u.shape[0]
    return SimulationLog(
        x=_matrix(doc, "x", rows=h + 1),
        u=u,
        demand=_matrix(doc, "demand", rows=h),
        price=_matrix(doc, "price", rows=h),
        solve_time_s=_vector(doc, "solveTimeS", h),
        iterations=_vector(doc, "iterations", h).astype(int),
        primal_residual=_vector(doc, "primalResidual", h),
        alpha0=_vector(doc, "alpha0"),
        x_safe=_vector(doc, "xsafe"),
        coupling_residual=_vector(doc, "couplingResidual", h),
    )


def save_kpi(kpi_e: float, kpi_s: float, kpi_tau: float, path: str | Path) -> None:
    save_document(
        {
            "schemaVersion": SCHEMA_VERSION,
            "kpiE": float(kpi_e),
            "kpiS": float(kpi_s),
            "kpiTauSeconds": float(kpi_tau),
        },
        path,
    )


def load_kpi(path: str | Path) -> dict:
    doc = load_document(path)
    _check_version(doc)
    return {
        "kpiE": _number(doc, "kpiE"),
        "kpiS": _number(doc, "kpiS"),
        "kpiTauSeconds": _number(doc, "kpiTauSeconds"),
    }


# -- cross-document validation ----------------------------------------------------

def cross_validate(
    model: NetworkModel | None = None,
    tree: ScenarioTree | None = None,
    forecast: ForecastSeries | None = None,
    horizon: int | None = None,
    weights: CostWeights | None = None,
    state: tuple[np.ndarray, np.ndarray, int] | None = None,
) -> list[str]:
    """Dimension checks across loaded documents; returns diagnostics."""
    out: list[str] = []
    if model is not None and tree is not None:
        if tree.n_demand != model.n_demands:
            out.append(
                f"tree carries {tree.n_demand} demand components but the network "
                f"has {model.n_demands} demand sectors"
            )
        if tree.n_price != model.n_inputs:
            out.append(
                f"tree carries {tree.n_price} price components but the network "
                f"has {model.n_inputs} controlled flows"
            )
    if model is not None and forecast is not None:
        if forecast.n_demand != model.n_demands:
            out.append(
                f"forecast has {forecast.n_demand} demand series but the network "
                f"has {model.n_demands} demand sectors"
            )
        if forecast.n_price != model.n_inputs:
            out.append(
                f"forecast has {forecast.n_price} price series but the network "
                f"has {model.n_inputs} controlled flows"
            )
    if tree is not None and forecast is not None and forecast.horizon != tree.horizon:
        out.append(
            f"forecast horizon {forecast.horizon} does not match tree horizon "
            f"{tree.horizon}"
        )
    if horizon is not None and tree is not None and horizon != tree.horizon:
        out.append(
            f"controller horizon {horizon} does not match tree horizon {tree.horizon}"
        )
    if weights is not None and model is not None:
        try:
            weights.u_weight(model.n_inputs)
        except ValueError as exc:
            out.append(str(exc))
    if state is not None and model is not None:
        x, u_prev, _ = state
        if x.shape != (model.n_tanks,):
            out.append(
                f"state x has {x.shape[0]} entries but the network has "
                f"{model.n_tanks} tanks"
            )
        if u_prev.shape != (model.n_inputs,):
            out.append(
                f"state uPrev has {u_prev.shape[0]} entries but the network has "
                f"{model.n_inputs} controlled flows"
            )
    return out
