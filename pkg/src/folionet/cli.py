"""Batch experiment runner.

Verbs: generate-data, train, evaluate, heatmap, recipe. Each experiment
is one YAML file (see recipes/ for the built-in ones); `train` and
`recipe` run the full pipeline data -> train -> evaluate -> artifacts.
Artifacts are deterministic: rerunning the same config byte-identically
reproduces every CSV/JSON file.

Exit codes: 0 ok, 1 config/validation error, 2 numerical failure.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import json
import os
import sys

import click
import numpy as np
import yaml

from . import analytics
from .config import ConfigError, ExperimentConfig, build_network, build_paths, load_config
from .market import save_path_set
from .objectives import ObjectiveKind, empirical_cvar, evaluate, mean_cvar_report
from .policy import PolicyNetwork, forward, load_policy, save_policy
from .trainer import TrainingDivergedError, full_objective, train, training_log_csv
from .wealth import InvestmentHorizon, terminal_wealth_csv


def policy_heatmap(
    net: PolicyNetwork,
    horizon: InvestmentHorizon,
    grid: tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    """Asset weights on a (t, W) grid.

    grid is (t_values, w_values); returns shape (n_assets, n_w, n_t)
    with rows indexed by wealth and columns by time.
    """
    t_values, w_values = (np.asarray(g, dtype=float) for g in grid)
    if t_values.size == 0 or w_values.size == 0:
        raise ConfigError("heatmap grid must be nonempty")
    tt, ww = np.meshgrid(t_values, w_values)  # (n_w, n_t)
    weights, _ = forward(net, tt.ravel(), ww.ravel())
    n_assets = net.topology.n_assets
    return weights.T.reshape(n_assets, w_values.size, t_values.size)


def default_grid(
    config: ExperimentConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """50x50 (configurable) grid over [0,T] x [0, 4*gamma or 4*w0]."""
    hm = config.heatmap
    if hm.w_max is not None:
        w_max = hm.w_max
    elif config.objective.kind in (ObjectiveKind.DSQ, ObjectiveKind.OSQ):
        w_max = 4.0 * config.objective.gamma
    else:
        w_max = 4.0 * config.horizon.w0
    return (
        np.linspace(0.0, config.horizon.T, hm.n_t),
        np.linspace(0.0, w_max, hm.n_w),
    )


def _write_heatmap_tidy(
    path: str,
    labels: tuple[str, ...],
    t_values: np.ndarray,
    w_values: np.ndarray,
    weights: np.ndarray,
) -> None:
    with open(path, "w") as fh:
        fh.write("asset,t,wealth,weight\n")
        for i, label in enumerate(labels):
            for a, w in enumerate(w_values):
                for b, t in enumerate(t_values):
                    fh.write(f"{label},{t:.12g},{w:.12g},{weights[i, a, b]:.12g}\n")


def _write_heatmap_matrix(
    path: str, t_values: np.ndarray, w_values: np.ndarray, matrix: np.ndarray
) -> None:
    with open(path, "w") as fh:
        fh.write("wealth," + ",".join(f"t={t:.12g}" for t in t_values) + "\n")
        for a, w in enumerate(w_values):
            fh.write(f"{w:.12g}," + ",".join(f"{x:.12g}" for x in matrix[a]) + "\n")


def _json_dump(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _objective_report(config: ExperimentConfig, terminal: np.ndarray) -> dict:
    spec = config.objective
    if spec.kind is ObjectiveKind.MCV:
        return mean_cvar_report(terminal, spec.rho, spec.alpha)
    if spec.kind is ObjectiveKind.MV:
        mean = float(terminal.mean())
        var = float(((terminal - mean) ** 2).mean())
        return {"mean": mean, "variance": var, "scalarized": mean - spec.rho * var}
    if spec.kind is ObjectiveKind.MSEMIV:
        mean = float(terminal.mean())
        semi = float((np.minimum(terminal - mean, 0.0) ** 2).mean())
        return {"mean": mean, "semivariance": semi, "scalarized": mean - spec.rho * semi}
    cvar5, var5 = empirical_cvar(terminal, 0.05)
    return {"gamma": spec.gamma, "mean": float(terminal.mean()), "cvar5": cvar5, "var5": var5}


def run(config: ExperimentConfig, outputs: str | None = None) -> int:
    """Full pipeline; writes artifacts into the outputs directory."""
    out_dir = outputs or config.outputs or os.path.join("out", config.name)
    os.makedirs(out_dir, exist_ok=True)
    horizon = config.horizon
    paths = build_paths(config.data, horizon)
    net0 = build_network(config, paths.n_assets)
    result = train(net0, horizon, paths, config.objective, config.train)
    xi = result.xi_star if result.xi_star is not None else 0.0
    _, terminal_train = full_objective(result.net, horizon, paths, config.objective, xi)

    summary_rows = [("network_train", analytics.summarize(terminal_train))]
    summary = {
        "name": config.name,
        "objective": {
            "kind": config.objective.kind.value,
            "gamma": config.objective.gamma,
            "rho": config.objective.rho,
            "alpha": config.objective.alpha,
        },
        "final_objective": result.final_full_objective,
        "xi_star": result.xi_star,
        "train": analytics.summary_json_dict(summary_rows[0][1]),
        "train_report": _objective_report(config, terminal_train),
    }

    save_policy(result.net, os.path.join(out_dir, "policy.json"))
    training_log_csv(result.history, os.path.join(out_dir, "training_log.csv"))
    terminal_wealth_csv(terminal_train, os.path.join(out_dir, "terminal_wealth_train.csv"))

    if config.test_data is not None:
        test_paths = build_paths(config.test_data, horizon)
        _, terminal_test = full_objective(
            result.net, horizon, test_paths, config.objective, xi
        )
        s_test = analytics.summarize(terminal_test)
        summary_rows.append(("network_test", s_test))
        summary["test"] = analytics.summary_json_dict(s_test)
        summary["test_report"] = _objective_report(config, terminal_test)
        terminal_wealth_csv(terminal_test, os.path.join(out_dir, "terminal_wealth_test.csv"))

    if config.closed_form is not None:
        summary["closed_form"] = _closed_form_leg(config, out_dir, summary_rows)

    if config.embedding_rho is not None:
        summary["embedding"] = _embedding_leg(
            config, paths, result, terminal_train, out_dir, summary_rows
        )

    t_values, w_values = default_grid(config)
    weights = policy_heatmap(result.net, horizon, (t_values, w_values))
    _write_heatmap_tidy(
        os.path.join(out_dir, "heatmap.csv"), paths.asset_labels, t_values, w_values, weights
    )
    analytics.summary_csv(summary_rows, os.path.join(out_dir, "summary.csv"))
    _json_dump(summary, os.path.join(out_dir, "summary.json"))
    return 0


def _closed_form_leg(config: ExperimentConfig, out_dir: str, summary_rows: list) -> dict:
    """DSQ-only comparison against the fine-grid analytical control."""
    from .market import kou_jump_moments

    model = config.data.model
    if model is None or model.n_assets != 2 or sum(model.risk_free_flags) != 1:
        raise ConfigError(
            "closed_form: data.model must hold exactly one risk-free and one risky asset"
        )
    rf = model.risk_free_flags.index(True)
    risky = model.assets[1 - rf]
    _, kappa2 = kou_jump_moments(risky)
    params = analytics.ClosedFormDsqParams(
        r=model.assets[rf].mu,
        mu2=risky.mu,
        sigma2=risky.sigma,
        lambda2=risky.jump_intensity,
        kappa2_second=kappa2,
        gamma=config.objective.gamma,
        T=config.horizon.T,
        w0=config.horizon.w0,
    )
    cf = config.closed_form
    terminal = analytics.simulate_closed_form_dsq(
        params, model, cf.n_paths, cf.n_steps, cf.seed
    )
    s = analytics.summarize(terminal)
    summary_rows.append(("closed_form", s))
    terminal_wealth_csv(terminal, os.path.join(out_dir, "terminal_wealth_closed_form.csv"))
    return {
        "n_steps": cf.n_steps,
        "n_paths": cf.n_paths,
        "summary": analytics.summary_json_dict(s),
    }


def _embedding_leg(
    config: ExperimentConfig,
    paths,
    mv_result,
    terminal_mv: np.ndarray,
    out_dir: str,
    summary_rows: list,
) -> dict:
    """Train the quadratic-target twin of a mean-variance run."""
    from .objectives import ObjectiveSpec

    gamma_tilde = analytics.embedding_gamma(config.embedding_rho, float(terminal_mv.mean()))
    dsq_spec = ObjectiveSpec(kind=ObjectiveKind.DSQ, gamma=gamma_tilde)
    net0 = build_network(config, paths.n_assets)
    dsq_result = train(net0, config.horizon, paths, dsq_spec, config.train)
    _, terminal_dsq = full_objective(dsq_result.net, config.horizon, paths, dsq_spec, 0.0)
    s_dsq = analytics.summarize(terminal_dsq)
    summary_rows.append(("embedded_dsq_train", s_dsq))
    save_policy(dsq_result.net, os.path.join(out_dir, "policy_dsq.json"))
    out = {
        "rho": config.embedding_rho,
        "gamma_tilde": gamma_tilde,
        "dsq_train": analytics.summary_json_dict(s_dsq),
    }
    if config.test_data is not None:
        test_paths = build_paths(config.test_data, config.horizon)
        _, dsq_test = full_objective(dsq_result.net, config.horizon, test_paths, dsq_spec, 0.0)
        s_dsq_test = analytics.summarize(dsq_test)
        summary_rows.append(("embedded_dsq_test", s_dsq_test))
        out["dsq_test"] = analytics.summary_json_dict(s_dsq_test)
    return out


def _exit_for(exc: BaseException) -> int:
    if isinstance(exc, (TrainingDivergedError, ArithmeticError)):
        return 2
    return 1


def _run_guarded(fn) -> None:
    try:
        fn()
    except (TrainingDivergedError, ArithmeticError, ValueError, OSError, yaml.YAMLError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_for(exc))


@click.group()
def main() -> None:
    """Neural rebalancing policies on simulated or bootstrapped paths."""


@main.command("generate-data")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--full", is_flag=True, help="Apply the config's full-scale overrides.")
@click.option("--test", "use_test", is_flag=True, help="Build the test_data block instead.")
def generate_data_cmd(config_path: str, out: str, full: bool, use_test: bool) -> None:
    """Materialize the config's path set into a binary cache."""

    def go() -> None:
        config = load_config(config_path, full=full)
        spec = config.test_data if use_test else config.data
        if spec is None:
            raise ConfigError("config has no test_data block")
        paths = build_paths(spec, config.horizon)
        save_path_set(paths, out)
        click.echo(f"wrote {paths.n_paths} paths x {paths.n_periods} periods to {out}")

    _run_guarded(go)


@main.command("train")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--outputs", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@click.option("--full", is_flag=True, help="Apply the config's full-scale overrides.")
def train_cmd(config_path: str, outputs: str | None, seed: int | None, full: bool) -> None:
    """Run the full pipeline for one experiment config."""

    def go() -> None:
        config = load_config(config_path, full=full)
        if seed is not None:
            config = dataclasses.replace(
                config, train=dataclasses.replace(config.train, seed=seed)
            )
        run(config, outputs)
        click.echo(f"ok: artifacts in {outputs or config.outputs or os.path.join('out', config.name)}")

    _run_guarded(go)


@main.command("evaluate")
@click.argument("policy_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--outputs", type=click.Path(file_okay=False), required=True)
@click.option("--full", is_flag=True)
def evaluate_cmd(policy_path: str, config_path: str, outputs: str, full: bool) -> None:
    """Evaluate a saved policy on the config's test (or train) data."""

    def go() -> None:
        config = load_config(config_path, full=full)
        net = load_policy(policy_path)
        spec = config.test_data or config.data
        paths = build_paths(spec, config.horizon)
        if paths.n_assets != net.topology.n_assets:
            raise ConfigError("policy and data disagree on the number of assets")
        _, terminal = full_objective(net, config.horizon, paths, config.objective, 0.0)
        if config.objective.has_xi:
            # Without a trained xi, report the objective at the empirical
            # tail quantile, where the auxiliary form attains the CVaR.
            _, xi = empirical_cvar(terminal, config.objective.alpha)
            value = evaluate(config.objective, terminal, config.horizon.w0, xi).value
        else:
            value = evaluate(config.objective, terminal, config.horizon.w0, 0.0).value
        os.makedirs(outputs, exist_ok=True)
        s = analytics.summarize(terminal)
        _json_dump(
            {
                "objective_value": value,
                "summary": analytics.summary_json_dict(s),
                "report": _objective_report(config, terminal),
            },
            os.path.join(outputs, "summary.json"),
        )
        terminal_wealth_csv(terminal, os.path.join(outputs, "terminal_wealth_test.csv"))
        analytics.summary_csv([("evaluation", s)], os.path.join(outputs, "summary.csv"))
        click.echo(f"ok: artifacts in {outputs}")

    _run_guarded(go)


@main.command("heatmap")
@click.argument("policy_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--outputs", type=click.Path(file_okay=False), required=True)
def heatmap_cmd(policy_path: str, config_path: str, outputs: str) -> None:
    """Write per-asset weight matrices on the config's (t, W) grid."""

    def go() -> None:
        config = load_config(config_path)
        net = load_policy(policy_path)
        t_values, w_values = default_grid(config)
        weights = policy_heatmap(net, config.horizon, (t_values, w_values))
        os.makedirs(outputs, exist_ok=True)
        for i in range(net.topology.n_assets):
            _write_heatmap_matrix(
                os.path.join(outputs, f"heatmap_asset{i}.csv"), t_values, w_values, weights[i]
            )
        click.echo(f"ok: artifacts in {outputs}")

    _run_guarded(go)


def recipe_names() -> list[str]:
    root = importlib.resources.files("folionet") / "recipes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


@main.command("recipe")
@click.argument("name", required=False)
@click.option("--outputs", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@click.option("--full", is_flag=True, help="Full-scale path counts.")
@click.option("--rho", type=float, default=None, help="Override objective.rho.")
@click.option("--list", "list_only", is_flag=True, help="List available recipes.")
def recipe_cmd(
    name: str | None,
    outputs: str | None,
    seed: int | None,
    full: bool,
    rho: float | None,
    list_only: bool,
) -> None:
    """Run a packaged experiment recipe by name."""

    def go() -> None:
        if list_only or name is None:
            for n in recipe_names():
                click.echo(n)
            if name is None and not list_only:
                raise ConfigError("recipe name required (use --list to see choices)")
            return
        resource = importlib.resources.files("folionet") / "recipes" / f"{name}.yaml"
        if not resource.is_file():
            raise ConfigError(
                f"unknown recipe {name!r}; available: {', '.join(recipe_names())}"
            )
        config = load_config(str(resource), full=full)
        if rho is not None:
            config = dataclasses.replace(
                config, objective=dataclasses.replace(config.objective, rho=rho)
            )
            if config.embedding_rho is not None:
                config = dataclasses.replace(config, embedding_rho=rho)
        if seed is not None:
            config = dataclasses.replace(
                config, train=dataclasses.replace(config.train, seed=seed)
            )
        run(config, outputs)
        click.echo(
            f"ok: artifacts in {outputs or config.outputs or os.path.join('out', config.name)}"
        )

    _run_guarded(go)


if __name__ == "__main__":
    main()
