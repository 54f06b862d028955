"""Declarative experiment configs: parsing, validation, object building.

One YAML file describes an experiment end to end: data source, horizon,
objective, network, trainer, optional test set, and optional extra legs
(closed-form comparison, embedding check). Validation errors carry the
dotted field path so a typo is reported as e.g.
"horizon.w0: missing required field".

A config may carry a `full:` subtree with full-scale overrides; the
CLI merges it over the base tree when --full is passed.
"""

from __future__ import annotations

import importlib.resources
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .market import (
    HistoricalReturns,
    KouAssetParams,
    MarketModel,
    ReturnPathSet,
    load_path_set,
    load_returns_csv,
    simulate_paths,
    stationary_block_bootstrap,
)
from .objectives import ObjectiveKind, ObjectiveSpec
from .policy import NetTopology, PolicyNetwork, init_parameters
from .trainer import AdamParams, TrainConfig
from .wealth import InvestmentHorizon


class ConfigError(ValueError):
    pass


def _check_keys(d: dict, allowed: set[str], path: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown field")


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}: missing required field")
    return d[key]


def _as_number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: must be a number")
    return float(v)


def _as_int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: must be an integer")
    return v


def _as_str(v, path: str) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"{path}: must be a string")
    return v


def _as_bool(v, path: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: must be a boolean")
    return v


def _as_dict(v, path: str) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: must be a mapping")
    return v


def _as_list(v, path: str) -> list:
    if not isinstance(v, list):
        raise ConfigError(f"{path}: must be a list")
    return v


@dataclass(frozen=True)
class DataSpec:
    source: str  # simulate | bootstrap | load
    n_paths: int = 0
    seed: int = 0
    model: MarketModel | None = None
    history: str | None = None
    expected_block_months: float = 6.0
    months_per_period: int = 1
    path: str | None = None


@dataclass(frozen=True)
class ClosedFormSpec:
    n_paths: int
    n_steps: int
    seed: int


@dataclass(frozen=True)
class HeatmapSpec:
    n_t: int = 50
    n_w: int = 50
    w_max: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: DataSpec
    horizon: InvestmentHorizon
    objective: ObjectiveSpec
    hidden_layers: int
    hidden_width: int
    net_seed: int
    feature_scale: tuple[float, float] | None
    train: TrainConfig
    test_data: DataSpec | None = None
    closed_form: ClosedFormSpec | None = None
    embedding_rho: float | None = None
    heatmap: HeatmapSpec = HeatmapSpec()
    outputs: str | None = None


_OBJECTIVE_KINDS = {k.value.lower(): k for k in ObjectiveKind}


def _parse_asset(d: dict, path: str) -> tuple[KouAssetParams, bool]:
    d = _as_dict(d, path)
    _check_keys(
        d,
        {"label", "mu", "sigma", "jump_intensity", "up_prob", "zeta1", "zeta2", "risk_free"},
        path,
    )
    label = _as_str(_require(d, "label", path), f"{path}.label")
    risk_free = _as_bool(d.get("risk_free", False), f"{path}.risk_free")
    kwargs = {"label": label, "mu": _as_number(_require(d, "mu", path), f"{path}.mu")}
    for key in ("sigma", "jump_intensity", "up_prob", "zeta1", "zeta2"):
        if key in d:
            kwargs[key] = _as_number(d[key], f"{path}.{key}")
    try:
        asset = KouAssetParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return asset, risk_free


def _parse_model(d: dict, path: str) -> MarketModel:
    d = _as_dict(d, path)
    _check_keys(d, {"assets", "brownian_corr"}, path)
    entries = _as_list(_require(d, "assets", path), f"{path}.assets")
    if not entries:
        raise ConfigError(f"{path}.assets: must list at least one asset")
    parsed = [_parse_asset(a, f"{path}.assets[{i}]") for i, a in enumerate(entries)]
    assets = tuple(a for a, _ in parsed)
    flags = tuple(rf for _, rf in parsed)
    n = len(assets)
    if "brownian_corr" in d:
        rows = _as_list(d["brownian_corr"], f"{path}.brownian_corr")
        corr = np.array(
            [
                [_as_number(x, f"{path}.brownian_corr[{i}][{j}]") for j, x in enumerate(_as_list(row, f"{path}.brownian_corr[{i}]"))]
                for i, row in enumerate(rows)
            ]
        )
    else:
        corr = np.eye(n)
    try:
        return MarketModel(assets=assets, brownian_corr=corr, risk_free_flags=flags)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_data(d: dict, path: str, base_dir: str) -> DataSpec:
    d = _as_dict(d, path)
    source = _as_str(_require(d, "source", path), f"{path}.source")
    if source == "simulate":
        _check_keys(d, {"source", "n_paths", "seed", "model"}, path)
        return DataSpec(
            source=source,
            n_paths=_as_int(_require(d, "n_paths", path), f"{path}.n_paths"),
            seed=_as_int(_require(d, "seed", path), f"{path}.seed"),
            model=_parse_model(_require(d, "model", path), f"{path}.model"),
        )
    if source == "bootstrap":
        _check_keys(
            d,
            {"source", "n_paths", "seed", "history", "expected_block_months", "months_per_period"},
            path,
        )
        history = _as_str(_require(d, "history", path), f"{path}.history")
        if not history.startswith("@"):
            history = os.path.join(base_dir, history)
        return DataSpec(
            source=source,
            n_paths=_as_int(_require(d, "n_paths", path), f"{path}.n_paths"),
            seed=_as_int(_require(d, "seed", path), f"{path}.seed"),
            history=history,
            expected_block_months=_as_number(
                _require(d, "expected_block_months", path), f"{path}.expected_block_months"
            ),
            months_per_period=_as_int(
                _require(d, "months_per_period", path), f"{path}.months_per_period"
            ),
        )
    if source == "load":
        _check_keys(d, {"source", "path"}, path)
        return DataSpec(
            source=source,
            path=os.path.join(base_dir, _as_str(_require(d, "path", path), f"{path}.path")),
        )
    raise ConfigError(f"{path}.source: must be simulate, bootstrap or load")


def _parse_horizon(d: dict, path: str) -> InvestmentHorizon:
    d = _as_dict(d, path)
    _check_keys(d, {"T", "N_rb", "w0", "contribution", "contributions"}, path)
    if "contribution" in d and "contributions" in d:
        raise ConfigError(f"{path}: give either contribution or contributions, not both")
    if "contributions" in d:
        q = [
            _as_number(x, f"{path}.contributions[{i}]")
            for i, x in enumerate(_as_list(d["contributions"], f"{path}.contributions"))
        ]
    else:
        q = _as_number(d.get("contribution", 0.0), f"{path}.contribution")
    try:
        return InvestmentHorizon(
            T=_as_number(_require(d, "T", path), f"{path}.T"),
            N_rb=_as_int(_require(d, "N_rb", path), f"{path}.N_rb"),
            w0=_as_number(_require(d, "w0", path), f"{path}.w0"),
            contributions=np.asarray(q) if isinstance(q, list) else q,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_objective(d: dict, path: str) -> ObjectiveSpec:
    d = _as_dict(d, path)
    _check_keys(d, {"kind", "gamma", "rho", "alpha", "epsilon", "lambda_smooth"}, path)
    kind_raw = _as_str(_require(d, "kind", path), f"{path}.kind")
    kind = _OBJECTIVE_KINDS.get(kind_raw.lower())
    if kind is None:
        raise ConfigError(f"{path}.kind: unknown objective {kind_raw!r}")
    kwargs = {}
    for key in ("gamma", "rho", "alpha", "epsilon", "lambda_smooth"):
        if key in d:
            kwargs[key] = _as_number(d[key], f"{path}.{key}")
    try:
        return ObjectiveSpec(kind=kind, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_train(d: dict, path: str) -> TrainConfig:
    d = _as_dict(d, path)
    _check_keys(
        d,
        {
            "max_steps",
            "batch_size",
            "step_size",
            "beta1",
            "beta2",
            "eps_hat",
            "tail_average_start_fraction",
            "seed",
            "log_every",
        },
        path,
    )
    adam_kwargs = {}
    for key in ("step_size", "beta1", "beta2", "eps_hat"):
        if key in d:
            adam_kwargs[key] = _as_number(d[key], f"{path}.{key}")
    kwargs = {
        "max_steps": _as_int(_require(d, "max_steps", path), f"{path}.max_steps"),
        "batch_size": _as_int(_require(d, "batch_size", path), f"{path}.batch_size"),
        "adam": AdamParams(**adam_kwargs),
    }
    if "tail_average_start_fraction" in d:
        kwargs["tail_average_start_fraction"] = _as_number(
            d["tail_average_start_fraction"], f"{path}.tail_average_start_fraction"
        )
    if "seed" in d:
        kwargs["seed"] = _as_int(d["seed"], f"{path}.seed")
    if "log_every" in d:
        kwargs["log_every"] = _as_int(d["log_every"], f"{path}.log_every")
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str, full: bool = False) -> ExperimentConfig:
    """Read and validate a YAML experiment file."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    base_dir = os.path.dirname(os.path.abspath(path))
    default_name = os.path.splitext(os.path.basename(path))[0]
    return parse_config(raw, base_dir=base_dir, default_name=default_name, full=full)


def parse_config(
    raw: dict, base_dir: str = ".", default_name: str = "experiment", full: bool = False
) -> ExperimentConfig:
    raw = dict(raw)
    full_override = raw.pop("full", None)
    if full and full_override:
        raw = _deep_merge(raw, _as_dict(full_override, "full"))
    _check_keys(
        raw,
        {
            "name",
            "data",
            "test_data",
            "horizon",
            "objective",
            "net",
            "train",
            "closed_form",
            "embedding",
            "heatmap",
            "outputs",
        },
        "config",
    )
    horizon = _parse_horizon(_require(raw, "horizon", "config"), "horizon")
    data = _parse_data(_require(raw, "data", "config"), "data", base_dir)
    test_data = (
        _parse_data(raw["test_data"], "test_data", base_dir) if "test_data" in raw else None
    )
    objective = _parse_objective(_require(raw, "objective", "config"), "objective")
    net = _as_dict(_require(raw, "net", "config"), "net")
    _check_keys(net, {"hidden_layers", "hidden_width", "seed", "feature_scale"}, "net")
    hidden_layers = _as_int(_require(net, "hidden_layers", "net"), "net.hidden_layers")
    hidden_width = _as_int(_require(net, "hidden_width", "net"), "net.hidden_width")
    net_seed = _as_int(net.get("seed", 0), "net.seed")
    feature_scale = None
    if "feature_scale" in net:
        pair = _as_list(net["feature_scale"], "net.feature_scale")
        if len(pair) != 2:
            raise ConfigError("net.feature_scale: must be [t_scale, wealth_scale]")
        feature_scale = (
            _as_number(pair[0], "net.feature_scale[0]"),
            _as_number(pair[1], "net.feature_scale[1]"),
        )
    train = _parse_train(_require(raw, "train", "config"), "train")

    closed_form = None
    if "closed_form" in raw:
        cf = _as_dict(raw["closed_form"], "closed_form")
        _check_keys(cf, {"n_paths", "n_steps", "seed"}, "closed_form")
        closed_form = ClosedFormSpec(
            n_paths=_as_int(_require(cf, "n_paths", "closed_form"), "closed_form.n_paths"),
            n_steps=_as_int(_require(cf, "n_steps", "closed_form"), "closed_form.n_steps"),
            seed=_as_int(cf.get("seed", 0), "closed_form.seed"),
        )
        if objective.kind is not ObjectiveKind.DSQ:
            raise ConfigError("closed_form: only valid with a DSQ objective")

    embedding_rho = None
    if "embedding" in raw:
        emb = _as_dict(raw["embedding"], "embedding")
        _check_keys(emb, {"rho"}, "embedding")
        embedding_rho = _as_number(_require(emb, "rho", "embedding"), "embedding.rho")
        if embedding_rho <= 0:
            raise ConfigError("embedding.rho: must be > 0")
        if objective.kind is not ObjectiveKind.MV:
            raise ConfigError("embedding: requires objective.kind = MV")

    heatmap = HeatmapSpec()
    if "heatmap" in raw:
        hm = _as_dict(raw["heatmap"], "heatmap")
        _check_keys(hm, {"n_t", "n_w", "w_max"}, "heatmap")
        heatmap = HeatmapSpec(
            n_t=_as_int(hm.get("n_t", 50), "heatmap.n_t"),
            n_w=_as_int(hm.get("n_w", 50), "heatmap.n_w"),
            w_max=_as_number(hm["w_max"], "heatmap.w_max") if "w_max" in hm else None,
        )

    # Cross-field consistency.
    for label, spec in (("data", data), ("test_data", test_data)):
        if spec is None:
            continue
        if spec.source == "bootstrap":
            if abs(spec.months_per_period / 12.0 - horizon.dt) > 1e-9:
                raise ConfigError(
                    f"{label}.months_per_period: implies a period of "
                    f"{spec.months_per_period / 12.0} years but horizon.dt = {horizon.dt}"
                )
        if spec.source in ("simulate", "bootstrap") and spec.n_paths < 1:
            raise ConfigError(f"{label}.n_paths: must be >= 1")
    if data.source in ("simulate", "bootstrap") and train.batch_size > data.n_paths:
        raise ConfigError("train.batch_size: exceeds data.n_paths")

    name = _as_str(raw.get("name", default_name), "name")
    outputs = _as_str(raw["outputs"], "outputs") if "outputs" in raw else None
    return ExperimentConfig(
        name=name,
        data=data,
        horizon=horizon,
        objective=objective,
        hidden_layers=hidden_layers,
        hidden_width=hidden_width,
        net_seed=net_seed,
        feature_scale=feature_scale,
        train=train,
        test_data=test_data,
        closed_form=closed_form,
        embedding_rho=embedding_rho,
        heatmap=heatmap,
        outputs=outputs,
    )


def resolve_history(ref: str) -> HistoricalReturns:
    """Load a history CSV; "@name" refers to a packaged data file."""
    if ref.startswith("@"):
        resource = importlib.resources.files("folionet") / "data" / f"{ref[1:]}.csv"
        return load_returns_csv(str(resource))
    return load_returns_csv(ref)


def build_paths(spec: DataSpec, horizon: InvestmentHorizon) -> ReturnPathSet:
    """Materialize the ReturnPathSet a DataSpec describes."""
    if spec.source == "simulate":
        assert spec.model is not None
        return simulate_paths(spec.model, spec.n_paths, horizon.N_rb, horizon.dt, spec.seed)
    if spec.source == "bootstrap":
        assert spec.history is not None
        hist = resolve_history(spec.history)
        return stationary_block_bootstrap(
            hist,
            spec.expected_block_months,
            spec.n_paths,
            horizon.N_rb,
            spec.months_per_period,
            spec.seed,
        )
    assert spec.path is not None
    paths = load_path_set(spec.path)
    if paths.n_periods != horizon.N_rb:
        raise ConfigError(
            f"loaded path set has {paths.n_periods} periods, horizon expects {horizon.N_rb}"
        )
    if abs(paths.dt - horizon.dt) > 1e-9:
        raise ConfigError(f"loaded path set dt = {paths.dt}, horizon.dt = {horizon.dt}")
    return paths


def build_network(config: ExperimentConfig, n_assets: int) -> PolicyNetwork:
    """Seeded network with the configured (or default t/T, W/w0) scaling."""
    topology = NetTopology(
        hidden_layers=config.hidden_layers,
        hidden_width=config.hidden_width,
        n_assets=n_assets,
    )
    if config.feature_scale is not None:
        scale = np.array(config.feature_scale, dtype=float)
    else:
        scale = np.array([1.0 / config.horizon.T, 1.0 / config.horizon.w0])
    return init_parameters(topology, config.net_seed, feature_scale=scale)
