"""Asset return models and path-set plumbing.

Two generators produce the `ReturnPathSet` consumed by the wealth
simulator:

* `simulate_paths` draws per-period gross returns from a jump-diffusion
  with double-exponential (Kou) jumps, sampled exactly from the
  log-return decomposition of the SDE solution (no Euler stepping).
* `stationary_block_bootstrap` resamples joint monthly rows of a
  historical return matrix in circularly-wrapped blocks of geometric
  length, then compounds months into rebalancing periods.

Randomness is counter-based: paths are generated in fixed chunks of
``CHUNK_PATHS``, and chunk ``c`` draws from ``Philox(key=(seed, c))``.
A path's stream is therefore a pure function of (seed, its chunk), so
output never depends on how work might be sliced across workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

CHUNK_PATHS = 65536

# Eigenvalue tolerance when validating that a correlation matrix is PSD.
PSD_TOL = 1e-10

_MASK64 = (1 << 64) - 1


class MarketError(ValueError):
    pass


def _philox(seed: int, stream: int) -> np.random.Generator:
    """Generator for one fixed stream: pure function of (seed, stream)."""
    key = ((seed & _MASK64) << 64) | (stream & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class KouAssetParams:
    """Per-asset jump-diffusion parameters (annualized).

    mu: drift; sigma: diffusive volatility; jump_intensity: Poisson
    arrival rate lambda; up_prob: probability nu that a jump is upward;
    zeta1/zeta2: tail-decay rates of the up/down jump magnitudes
    (log-jump is +Exp(zeta1) w.p. nu, -Exp(zeta2) otherwise).
    """

    label: str
    mu: float
    sigma: float = 0.0
    jump_intensity: float = 0.0
    up_prob: float = 0.5
    zeta1: float = 10.0
    zeta2: float = 10.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu):
            raise MarketError(f"asset {self.label!r}: mu must be finite")
        if self.sigma < 0:
            raise MarketError(f"asset {self.label!r}: sigma must be >= 0")
        if self.jump_intensity < 0:
            raise MarketError(f"asset {self.label!r}: jump_intensity must be >= 0")
        if not 0.0 <= self.up_prob <= 1.0:
            raise MarketError(f"asset {self.label!r}: up_prob must be in [0, 1]")
        if self.zeta1 <= 1.0:
            raise MarketError(
                f"asset {self.label!r}: zeta1 must be > 1 (finite mean jump)"
            )
        if self.zeta2 <= 0.0:
            raise MarketError(f"asset {self.label!r}: zeta2 must be > 0")


def kou_jump_moments(p: KouAssetParams) -> tuple[float, float]:
    """First two central-ish jump moments (kappa1, kappa2).

    kappa1 = E[theta - 1], kappa2 = E[(theta - 1)^2] where theta is the
    multiplicative jump size. Requires zeta1 > 2 so the second moment of
    the up-jump exists.
    """
    if p.zeta1 <= 2.0:
        raise MarketError(
            f"asset {p.label!r}: second jump moment undefined (zeta1 <= 2)"
        )
    m1 = p.up_prob * p.zeta1 / (p.zeta1 - 1.0) + (1.0 - p.up_prob) * p.zeta2 / (
        p.zeta2 + 1.0
    )
    m2 = p.up_prob * p.zeta1 / (p.zeta1 - 2.0) + (1.0 - p.up_prob) * p.zeta2 / (
        p.zeta2 + 2.0
    )
    kappa1 = m1 - 1.0
    kappa2 = m2 - 2.0 * m1 + 1.0
    return kappa1, kappa2


def _kappa1(p: KouAssetParams) -> float:
    """E[theta - 1]; needs only zeta1 > 1, which the type guarantees."""
    m1 = p.up_prob * p.zeta1 / (p.zeta1 - 1.0) + (1.0 - p.up_prob) * p.zeta2 / (
        p.zeta2 + 1.0
    )
    return m1 - 1.0


@dataclass(frozen=True)
class MarketModel:
    """A joint market: Kou assets, Brownian correlation, risk-free flags.

    Jumps are independent across assets; only the diffusive shocks are
    correlated. A risk-free flag forces sigma = jump_intensity = 0 and
    the asset grows deterministically at exp(mu * dt) per period.
    """

    assets: tuple[KouAssetParams, ...]
    brownian_corr: np.ndarray
    risk_free_flags: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        assets = tuple(self.assets)
        object.__setattr__(self, "assets", assets)
        n = len(assets)
        if n == 0:
            raise MarketError("model must contain at least one asset")
        flags = tuple(self.risk_free_flags) or (False,) * n
        if len(flags) != n:
            raise MarketError("risk_free_flags length does not match assets")
        object.__setattr__(self, "risk_free_flags", flags)
        for a, rf in zip(assets, flags):
            if rf and (a.sigma != 0.0 or a.jump_intensity != 0.0):
                raise MarketError(
                    f"asset {a.label!r}: risk-free flag requires sigma = lambda = 0"
                )
        corr = np.asarray(self.brownian_corr, dtype=float)
        if corr.shape != (n, n):
            raise MarketError(f"brownian_corr must be {n}x{n}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise MarketError("brownian_corr must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise MarketError("brownian_corr must have unit diagonal")
        corr = 0.5 * (corr + corr.T)
        corr.flags.writeable = False
        object.__setattr__(self, "brownian_corr", corr)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def asset_labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.assets)


def _corr_factor(corr: np.ndarray) -> np.ndarray:
    """Symmetric square root of the correlation matrix.

    Validates positive semi-definiteness with eigenvalue tolerance
    PSD_TOL; raises "correlation not factorizable" otherwise.
    """
    w, v = np.linalg.eigh(corr)
    if w.min() < -PSD_TOL:
        raise MarketError("correlation not factorizable (not PSD)")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True)
class ReturnPathSet:
    """Immutable tensor of per-period gross returns.

    gross_returns has shape (n_paths, n_periods, n_assets), every entry
    finite and strictly positive. dt is the period length in years.
    provenance is one of {"simulated", "bootstrapped", "loaded"}.
    """

    gross_returns: np.ndarray
    dt: float
    asset_labels: tuple[str, ...]
    provenance: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.gross_returns, dtype=float)
        if arr.ndim != 3:
            raise MarketError("gross_returns must be (n_paths, n_periods, n_assets)")
        if not np.all(np.isfinite(arr)) or not np.all(arr > 0.0):
            raise MarketError("gross returns must be finite and strictly positive")
        if arr.shape[2] != len(self.asset_labels):
            raise MarketError("asset_labels length does not match returns")
        if self.provenance not in ("simulated", "bootstrapped", "loaded"):
            raise MarketError(f"unknown provenance {self.provenance!r}")
        if not self.dt > 0:
            raise MarketError("dt must be > 0")
        arr.flags.writeable = False
        object.__setattr__(self, "gross_returns", arr)
        object.__setattr__(self, "asset_labels", tuple(self.asset_labels))

    @property
    def n_paths(self) -> int:
        return self.gross_returns.shape[0]

    @property
    def n_periods(self) -> int:
        return self.gross_returns.shape[1]

    @property
    def n_assets(self) -> int:
        return self.gross_returns.shape[2]


def _compound_jump_log(
    rng: np.random.Generator, counts: np.ndarray, p: KouAssetParams
) -> np.ndarray:
    """Sum of `counts[i]` iid double-exponential log-jumps per cell."""
    flat = counts.ravel()
    n_jumps = int(flat.sum())
    if n_jumps == 0:
        return np.zeros(counts.shape)
    up = rng.random(n_jumps) < p.up_prob
    mag = rng.standard_exponential(n_jumps)
    logj = np.where(up, mag / p.zeta1, -mag / p.zeta2)
    cell = np.repeat(np.arange(flat.size), flat)
    total = np.bincount(cell, weights=logj, minlength=flat.size)
    return total.reshape(counts.shape)


def _sample_gross_returns(
    rng: np.random.Generator,
    model: MarketModel,
    corr_factor: np.ndarray,
    n_paths: int,
    n_periods: int,
    dt: float,
) -> np.ndarray:
    """Exact per-period gross returns, shape (n_paths, n_periods, n_assets).

    Draw order is fixed (normals for all assets, then per-asset Poisson
    counts and jump marks in asset order) so a given rng state maps to
    one output.
    """
    n_assets = model.n_assets
    z = rng.standard_normal((n_paths, n_periods, n_assets)) @ corr_factor.T
    log_ret = np.empty_like(z)
    for i, asset in enumerate(model.assets):
        drift = (
            asset.mu - asset.jump_intensity * _kappa1(asset) - 0.5 * asset.sigma**2
        ) * dt
        log_ret[:, :, i] = drift + (asset.sigma * np.sqrt(dt)) * z[:, :, i]
        if asset.jump_intensity > 0.0:
            counts = rng.poisson(asset.jump_intensity * dt, (n_paths, n_periods))
            log_ret[:, :, i] += _compound_jump_log(rng, counts, asset)
    return np.exp(log_ret)


def simulate_paths(
    model: MarketModel, n_paths: int, N_rb: int, dt: float, seed: int
) -> ReturnPathSet:
    """Simulate independent return paths of N_rb periods of length dt.

    Per period each asset's gross return is
    exp((mu - lambda*kappa1 - sigma^2/2) dt + sigma sqrt(dt) Z) * prod(theta_k)
    with Z correlated across assets and K ~ Poisson(lambda dt) jumps.
    Identical seeds give identical output.
    """
    if n_paths < 1 or N_rb < 1:
        raise MarketError("n_paths and N_rb must be >= 1")
    if not dt > 0:
        raise MarketError("dt must be > 0")
    factor = _corr_factor(model.brownian_corr)
    out = np.empty((n_paths, N_rb, model.n_assets))
    for start in range(0, n_paths, CHUNK_PATHS):
        stop = min(start + CHUNK_PATHS, n_paths)
        rng = _philox(seed, start // CHUNK_PATHS)
        out[start:stop] = _sample_gross_returns(
            rng, model, factor, stop - start, N_rb, dt
        )
    return ReturnPathSet(
        gross_returns=out,
        dt=dt,
        asset_labels=model.asset_labels,
        provenance="simulated",
    )


@dataclass(frozen=True)
class HistoricalReturns:
    """Monthly joint gross returns, one row per month."""

    monthly_gross_returns: np.ndarray
    asset_labels: tuple[str, ...]
    start_label: str = ""
    end_label: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.monthly_gross_returns, dtype=float)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise MarketError("monthly_gross_returns must be a nonempty 2-D matrix")
        if not np.all(np.isfinite(arr)) or not np.all(arr > 0.0):
            raise MarketError("historical gross returns must be finite and > 0")
        arr.flags.writeable = False
        object.__setattr__(self, "monthly_gross_returns", arr)
        object.__setattr__(self, "asset_labels", tuple(self.asset_labels))

    @property
    def n_months(self) -> int:
        return self.monthly_gross_returns.shape[0]


def stationary_block_bootstrap(
    hist: HistoricalReturns,
    expected_block_months: float,
    n_paths: int,
    N_rb: int,
    months_per_period: int,
    seed: int,
) -> ReturnPathSet:
    """Resample paths of N_rb periods from monthly history.

    Blocks start at a uniform month and have geometric length with mean
    expected_block_months, wrapping circularly at the history boundary;
    implemented as its memoryless equivalent (each month restarts a
    block with probability 1/expected_block_months, else continues from
    the next historical row). All assets take the same row each month;
    months within a period compound by product.
    """
    if N_rb * months_per_period == 0:
        raise MarketError("empty horizon")
    if expected_block_months < 1.0:
        raise MarketError("expected_block_months must be >= 1")
    if n_paths < 1 or months_per_period < 1:
        raise MarketError("n_paths and months_per_period must be >= 1")
    n_months = N_rb * months_per_period
    t_hist = hist.n_months
    p_restart = 1.0 / expected_block_months
    data = hist.monthly_gross_returns
    out = np.empty((n_paths, N_rb, data.shape[1]))
    for start in range(0, n_paths, CHUNK_PATHS):
        stop = min(start + CHUNK_PATHS, n_paths)
        m = stop - start
        rng = _philox(seed, start // CHUNK_PATHS)
        restart = rng.random((m, n_months)) < p_restart
        starts = rng.integers(0, t_hist, size=(m, n_months))
        idx = np.empty((m, n_months), dtype=np.int64)
        idx[:, 0] = starts[:, 0]
        for k in range(1, n_months):
            idx[:, k] = np.where(restart[:, k], starts[:, k], (idx[:, k - 1] + 1) % t_hist)
        monthly = data[idx]  # (m, n_months, n_assets), joint rows
        periods = monthly.reshape(m, N_rb, months_per_period, data.shape[1])
        out[start:stop] = periods.prod(axis=2)
    return ReturnPathSet(
        gross_returns=out,
        dt=months_per_period / 12.0,
        asset_labels=hist.asset_labels,
        provenance="bootstrapped",
    )


def load_returns_csv(path: str) -> HistoricalReturns:
    """Parse "YYYY-MM,r1,...,rNa" rows of simple monthly returns.

    The header row is a date column name followed by asset labels.
    Stores gross returns 1 + r; rejects ragged rows, non-numeric or
    non-positive gross returns. Lines starting with '#' are ignored.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [
        (lineno, row)
        for lineno, row in enumerate(rows, start=1)
        if row and not row[0].lstrip().startswith("#")
    ]
    if not rows:
        raise MarketError("no data rows")
    _, header = rows[0]
    labels = tuple(h.strip() for h in header[1:])
    if len(labels) == 0:
        raise MarketError("header must list at least one asset label")
    data_rows = rows[1:]
    if not data_rows:
        raise MarketError("no data rows")
    gross = np.empty((len(data_rows), len(labels)))
    dates = []
    for out_i, (lineno, row) in enumerate(data_rows):
        if len(row) != len(labels) + 1:
            raise MarketError(f"column count mismatch at line {lineno}")
        dates.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            try:
                g = 1.0 + float(cell)
            except ValueError:
                raise MarketError(f"invalid return at line {lineno}") from None
            if not np.isfinite(g) or g <= 0.0:
                raise MarketError(f"invalid return at line {lineno}")
            gross[out_i, j] = g
    return HistoricalReturns(
        monthly_gross_returns=gross,
        asset_labels=labels,
        start_label=dates[0],
        end_label=dates[-1],
    )


def write_returns_csv(hist: HistoricalReturns, path: str, dates: list[str] | None = None) -> None:
    """Inverse of load_returns_csv to 12 significant digits."""
    n = hist.n_months
    if dates is None:
        dates = [f"m{k:04d}" for k in range(n)]
    if len(dates) != n:
        raise MarketError("dates length does not match history")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *hist.asset_labels])
        for k in range(n):
            simple = hist.monthly_gross_returns[k] - 1.0
            writer.writerow([dates[k], *(f"{r:.12g}" for r in simple)])


def save_path_set(paths: ReturnPathSet, path: str) -> None:
    """Binary cache of a ReturnPathSet (numpy .npz container)."""
    np.savez(
        path,
        gross_returns=paths.gross_returns,
        dt=np.array(paths.dt),
        asset_labels=np.array(paths.asset_labels),
        provenance=np.array(paths.provenance),
    )


def load_path_set(path: str) -> ReturnPathSet:
    with np.load(path, allow_pickle=False) as data:
        return ReturnPathSet(
            gross_returns=data["gross_returns"],
            dt=float(data["dt"]),
            asset_labels=tuple(str(s) for s in data["asset_labels"]),
            provenance="loaded",
        )
