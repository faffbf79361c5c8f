"""Command line entry points.

Three subcommands: `simulate` runs the replication laboratory on a synthetic
setup, `analyze` runs one procedure on user data (direct replicate
observations or a location-by-time panel), and `fit-cov` fits the residual
covariance model alone. Every option can also be supplied through a
`--config key=value` file; explicit flags win over file entries.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .covmodel import (fit_covariance_mle, kernel_from_mapping,
                       kernel_matrix, kernel_to_mapping,
                       derive_stat_params)
from .errors import DataFormatError, FitError
from .gaussnum import std_normal_cdf
from .geometry import (SpatialDomain, adaptive_neighborhoods,
                       knn_neighborhoods, select_npeb_subset)
from .npeb import fit_gmle
from .simlab import PROCEDURES, SetupConfig, run_replications, _make_groups
from .statbuild import (build_regression_statistics, build_statistics,
                        read_direct_csv, read_panel_csv)
from .testing import (FdpEstimatorConfig, apply_rejections, bh_procedure,
                      decision_record, groupwise_pi0, one_d_threshold,
                      search_cutoffs_2d, storey_bh, weight_scheme,
                      write_rejections_csv)

_FAMILIES = ("exponential", "gaussian", "nugget-mix", "matern")
_POSITIVE_Q = click.FloatRange(0.0, 1.0, min_open=True, max_open=True)


def _read_kv(path):
    """key=value lines, '#' comments allowed."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(
                f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _load_config(ctx, param, value):
    if not value:
        return value
    ctx.default_map = {**(ctx.default_map or {}), **_read_kv(value)}
    return value


_CONFIG_OPT = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False),
    callback=_load_config, is_eager=True, expose_value=False,
    help="key=value file supplying defaults for any option.")


@click.group()
def main():
    """Spatial multiple testing with neighborhood-augmented statistics."""


@main.command()
@click.option("--setup", required=True,
              type=click.Choice(["I", "II", "III", "IV", "V", "ozone"]))
@click.option("--sparsity", default="medium",
              type=click.Choice(["sparse", "medium", "dense"]),
              show_default=True)
@click.option("--gamma", default=1.0, show_default=True,
              type=click.FloatRange(min=0, min_open=True),
              help="Signal strength multiplier.")
@click.option("--corr", default="medium", show_default=True,
              type=click.Choice(["weak", "medium", "strong"]),
              help="Noise correlation level.")
@click.option("--m", required=True, type=click.IntRange(min=10),
              help="Number of locations.")
@click.option("--reps", default=100, show_default=True,
              type=click.IntRange(min=1))
@click.option("--q", default=0.1, show_default=True, type=_POSITIVE_Q,
              help="Nominal false discovery rate.")
@click.option("--seed", required=True, type=int)
@click.option("--kappa", default=4, show_default=True,
              type=click.IntRange(1, 7), help="Neighborhood size.")
@click.option("--procedures", default="bh,st,2d-st", show_default=True,
              help="Comma-separated procedure names.")
@click.option("--beta0", default=0.3, show_default=True, type=float,
              help="Trend threshold for the regression setup.")
@click.option("--threads", default=1, show_default=True,
              type=click.IntRange(min=1))
@click.option("--out", default=".", show_default=True,
              type=click.Path(file_okay=False))
@_CONFIG_OPT
def simulate(setup, sparsity, gamma, corr, m, reps, q, seed, kappa,
             procedures, beta0, threads, out):
    """Run replicated synthetic experiments and write summary tables."""
    names = tuple(p.strip() for p in procedures.split(",") if p.strip())
    bad = [p for p in names if p not in PROCEDURES]
    if bad:
        raise click.UsageError(
            f"--procedures: unknown {', '.join(bad)}; "
            f"choose from {', '.join(PROCEDURES)}")
    cfg = SetupConfig(setup=setup, sparsity=sparsity, gamma=gamma,
                      noise=corr, m=m, reps=reps, seed=seed)
    try:
        summary, records = run_replications(
            cfg, names, q, kappa=kappa, beta0=beta0, threads=threads)
    except (FitError, RuntimeError, ValueError) as exc:
        raise click.ClickException(str(exc))
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary.to_csv(outdir / "summary.csv", index=False)
    records.to_csv(outdir / "replicates.csv", index=False)
    click.echo(summary.to_string(index=False))
    click.echo(f"wrote {outdir / 'summary.csv'} and "
               f"{outdir / 'replicates.csv'}")


def _domain_from_csv(path):
    try:
        return SpatialDomain.from_csv(path)
    except DataFormatError as exc:
        raise click.UsageError(f"--locations: {exc}")


def _run_method(method, stats, g, groups, cfg_kwargs, q):
    """Dispatch one procedure; returns (mask, record dict)."""
    p2 = std_normal_cdf(-stats.t2_hat)
    base = {"method": method, "q": float(q), "t1_star": None,
            "t2_star": None, "fdp_hat": None, "evaluations": None}
    if method == "bh":
        mask = bh_procedure(p2, q)
        return mask, {**base, "n_rejected": int(mask.sum())}
    if method == "st":
        mask = storey_bh(p2, q, lambda_p=0.5)
        return mask, {**base, "n_rejected": int(mask.sum())}
    if method in ("sabha", "gbh"):
        pi0_loc = groupwise_pi0(p2, groups, lambda_p=0.5)
        cfg = FdpEstimatorConfig(
            weights=weight_scheme(pi0_loc, method),
            pi0_local=pi0_loc if method == "sabha" else None,
            **cfg_kwargs)
        thr = one_d_threshold(stats, g, cfg, q)
        mask = apply_rejections(stats, float("inf"), thr, cfg)
        return mask, {**base, "t2_star": float(thr),
                      "n_rejected": int(mask.sum())}
    scheme = {"2d-st": None, "2d-sa": "sabha", "2d-gbh": "gbh"}[method]
    if scheme is None:
        cfg = FdpEstimatorConfig(**cfg_kwargs)
    else:
        pi0_loc = groupwise_pi0(p2, groups, lambda_p=0.5)
        cfg = FdpEstimatorConfig(
            weights=weight_scheme(pi0_loc, scheme),
            pi0_local=pi0_loc if scheme == "sabha" else None,
            **cfg_kwargs)
    res = search_cutoffs_2d(stats, g, cfg, q)
    return res.rejected_mask, decision_record(res, method, q)


@main.command()
@click.option("--locations", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns id,x[,y].")
@click.option("--observations", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns id,rep,value (direct) or "
                   "id,t,value (regression).")
@click.option("--mode", default="direct", show_default=True,
              type=click.Choice(["direct", "regression"]))
@click.option("--method", default="2d-st", show_default=True,
              type=click.Choice(list(PROCEDURES)))
@click.option("--q", default=0.1, show_default=True, type=_POSITIVE_Q)
@click.option("--kappa", default=4, show_default=True,
              type=click.IntRange(1, 7))
@click.option("--adaptive", is_flag=True,
              help="Pick neighborhood sizes from the data.")
@click.option("--storey-lambda", default=0.0, show_default=True, type=float,
              help="Censoring point for the null-fraction estimate.")
@click.option("--offset", default=None, type=click.FloatRange(min=0),
              help="Numerator offset; defaults to q.")
@click.option("--censor-tau", default=1.0, show_default=True,
              type=click.FloatRange(0.0, 1.0, min_open=True))
@click.option("--kernel", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="key=value file fixing the noise kernel instead of "
                   "fitting it.")
@click.option("--family", default="exponential", show_default=True,
              type=click.Choice(list(_FAMILIES)))
@click.option("--beta0", default=0.3, show_default=True, type=float,
              help="Trend threshold (regression mode).")
@click.option("--grid-size", default=400, show_default=True,
              type=click.IntRange(min=50),
              help="Support grid size for the mixing-distribution fit.")
@click.option("--out", default=".", show_default=True,
              type=click.Path(file_okay=False))
@_CONFIG_OPT
def analyze(locations, observations, mode, method, q, kappa, adaptive,
            storey_lambda, offset, censor_tau, kernel, family, beta0,
            grid_size, out):
    """Test one dataset and write rejections.csv plus decision.json."""
    domain = _domain_from_csv(locations)
    try:
        known = kernel_from_mapping(_read_kv(kernel)) if kernel else None
    except DataFormatError as exc:
        raise click.UsageError(f"--kernel: {exc}")
    try:
        if mode == "direct":
            obs = read_direct_csv(observations)
        else:
            obs = read_panel_csv(observations)
    except DataFormatError as exc:
        raise click.UsageError(f"--observations: {exc}")
    missing = [i for i in domain.ids if i not in obs.columns]
    if missing:
        raise click.UsageError(
            f"--observations: no values for location ids "
            f"{', '.join(missing[:5])}{'...' if len(missing) > 5 else ''}")
    obs = obs[list(domain.ids)]

    try:
        values = obs.to_numpy(dtype=float)
        nbhd = knn_neighborhoods(domain, kappa)
        if mode == "direct":
            if known is None:
                if values.shape[0] < 2:
                    raise click.UsageError(
                        "--observations: fitting a covariance model needs "
                        "at least 2 replicates; pass --kernel to fix one")
                known = fit_covariance_mle(values, domain, family=family)
            # covariance of the replicate mean
            cov = kernel_matrix(known, domain) / values.shape[0]
            stats = build_statistics(values.mean(axis=0),
                                     derive_stat_params(cov, domain, nbhd),
                                     nbhd, ids=domain.ids)
            if adaptive:
                nbhd = adaptive_neighborhoods(domain, stats.t2_hat)
                stats = build_statistics(
                    values.mean(axis=0),
                    derive_stat_params(cov, domain, nbhd),
                    nbhd, ids=domain.ids)
        else:
            stats, _, _ = build_regression_statistics(
                obs, domain, nbhd, beta0, family=family)
            if adaptive:
                nbhd = adaptive_neighborhoods(domain, stats.t2_hat)
                stats, _, _ = build_regression_statistics(
                    obs, domain, nbhd, beta0, family=family)
        subset = select_npeb_subset(domain, nbhd)
        g = fit_gmle(stats.t1_hat[subset.indices], grid_size=grid_size)
        groups = _make_groups(domain)
        cfg_kwargs = {"storey_lambda": storey_lambda, "offset": offset,
                      "censor_tau": censor_tau}
        mask, record = _run_method(method, stats, g, groups, cfg_kwargs, q)
    except click.UsageError:
        raise
    except (DataFormatError, ValueError) as exc:
        raise click.UsageError(str(exc))
    except (FitError, RuntimeError) as exc:
        raise click.ClickException(str(exc))

    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_rejections_csv(stats, mask, outdir / "rejections.csv")
    (outdir / "decision.json").write_text(json.dumps(record, indent=2))
    click.echo(f"{int(mask.sum())} of {stats.m} locations rejected "
               f"at q={q} ({method})")
    click.echo(f"wrote {outdir / 'rejections.csv'} and "
               f"{outdir / 'decision.json'}")


@main.command("fit-cov")
@click.option("--locations", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--observations", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns id,rep,value.")
@click.option("--family", default="exponential", show_default=True,
              type=click.Choice(list(_FAMILIES)))
@click.option("--out", default="kernel.txt", show_default=True,
              type=click.Path(dir_okay=False))
@_CONFIG_OPT
def fit_cov(locations, observations, family, out):
    """Fit the noise covariance model and write it as key=value lines."""
    domain = _domain_from_csv(locations)
    try:
        obs = read_direct_csv(observations)
    except DataFormatError as exc:
        raise click.UsageError(f"--observations: {exc}")
    missing = [i for i in domain.ids if i not in obs.columns]
    if missing:
        raise click.UsageError(
            f"--observations: no values for location ids "
            f"{', '.join(missing[:5])}")
    values = obs[list(domain.ids)].to_numpy(dtype=float)
    if values.shape[0] < 2:
        raise click.UsageError(
            "--observations: need at least 2 replicates to fit")
    try:
        spec = fit_covariance_mle(values, domain, family=family)
    except (FitError, ValueError) as exc:
        raise click.ClickException(str(exc))
    lines = [f"{k}={v}" for k, v in kernel_to_mapping(spec).items()]
    Path(out).write_text("\n".join(lines) + "\n")
    click.echo("\n".join(lines))
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
