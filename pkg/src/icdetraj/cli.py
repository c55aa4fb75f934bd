"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 provider error, 4 numerical error.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from . import store
from .bespoke import fit_bespoke_schedule
from .errors import ConfigError, NumericalError, ProtocolError, ProviderError
from .estimators import Constant, HistogramPrior, KdeConfig, PowerLaw, Silverman, de_trajectory
from .experiment import (
    PLOT_KINDS,
    PRESETS,
    EmbeddingSpec,
    ExperimentConfig,
    StageError,
    capture_session,
    emit_plot_data,
    joint_embedding,
    preset_config,
    replay_session,
    run_experiment,
)
from .inpca import METRICS, meta_inpca
from .prob import Grid, make_gaussian_target, make_uniform_target, sample
from .probe import ProviderSpec, SerializationConfig, icl_trajectory
from .randpdf import GpConfig, generate_random_pdf

EXIT_CONFIG, EXIT_PROVIDER, EXIT_NUMERICAL = 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, (ProviderError, ProtocolError, OSError)) and not isinstance(exc, FileNotFoundError):
        return EXIT_PROVIDER
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except (ConfigError, ValueError, KeyError, FileNotFoundError, NumericalError, ArithmeticError,
                ProviderError, ProtocolError, StageError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exit_code_for(exc))

    return wrapper


def parse_context_lengths(text: str) -> tuple[int, ...]:
    """``"0:201"`` (range, optional ``:step``) or ``"1,2,5,10"``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            return tuple(range(*parts))
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"cannot parse context lengths {text!r}") from None


def provider_from_options(provider: str, endpoint, replay, params) -> ProviderSpec:
    if provider == "http":
        return ProviderSpec("http", endpoint=endpoint)
    if provider == "replay":
        return ProviderSpec("replay", path=replay)
    return ProviderSpec("mock", preset=provider, params=tuple(params))


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose):
    """In-context density-estimation trajectories: generate, estimate, fit and embed."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("generate-target")
@click.option("--kind", type=click.Choice(["gaussian", "uniform", "gp-random"]), required=True)
@click.option("--mean", type=float, default=50.0, show_default=True, help="Gaussian mean (bin units).")
@click.option("--sigma", type=float, default=3.0, show_default=True, help="Gaussian std (bin units).")
@click.option("--lo", type=float, default=45.0, show_default=True)
@click.option("--hi", type=float, default=55.0, show_default=True)
@click.option("--length", type=float, default=0.1, show_default=True, help="GP correlation length.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--num-digits", type=int, default=2, show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def generate_target(kind, mean, sigma, lo, hi, length, seed, num_digits, out):
    """Write a target pdf as JSON."""
    grid = Grid(num_digits)
    if kind == "gaussian":
        pdf, spec = make_gaussian_target(mean, sigma, grid), {"kind": kind, "mean": mean, "sigma": sigma}
    elif kind == "uniform":
        pdf, spec = make_uniform_target(lo, hi, grid), {"kind": kind, "lo": lo, "hi": hi}
    else:
        pdf = generate_random_pdf(GpConfig(length, 2, seed), grid)
        spec = {"kind": kind, "correlation_length": length, "precision": 2, "seed": seed}
    store.write_json(out, store.pdf_to_dict(pdf, spec=spec))
    click.echo(out)


@main.command("sample")
@click.option("--target", "target_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-n", "--num-samples", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def sample_cmd(target_path, num_samples, seed, out):
    """Draw iid samples from a target pdf."""
    pdf = store.pdf_from_dict(store.read_json(target_path))
    store.write_json(out, store.samples_to_dict(sample(pdf, num_samples, seed)))
    click.echo(out)


def _load_samples(path):
    return store.samples_from_dict(store.read_json(path))


@main.command("estimate")
@click.option("--samples", "samples_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--estimator", type=click.Choice(["kde", "histogram", "provider"]), default="kde", show_default=True)
@click.option("--shape", type=float, default=2.0, show_default=True, help="Kernel shape s (inf for tophat).")
@click.option("--schedule", type=click.Choice(["power-law", "silverman", "constant"]), default="power-law",
              show_default=True)
@click.option("--C", "coef", type=float, default=1.0, show_default=True, help="Power-law prefactor.")
@click.option("--exponent", type=float, default=-0.2, show_default=True)
@click.option("--unit", type=click.Choice(["domain", "grid"]), default="domain", show_default=True)
@click.option("--bandwidth", type=float, default=1.0, show_default=True, help="Constant-schedule bandwidth.")
@click.option("--alpha", type=float, default=1.0, show_default=True, help="Histogram pseudo-count.")
@click.option("--provider", type=click.Choice(["http", "replay", "uniform", "delta", "kernel-mock", "seeded-random"]),
              default="uniform", show_default=True)
@click.option("--endpoint", default=None)
@click.option("--replay", "replay_path", type=click.Path(), default=None)
@click.option("--param", "params", multiple=True, help="Mock provider parameter (repeatable).")
@click.option("--context-lengths", default="0:201", show_default=True)
@click.option("--label", default=None)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def estimate(samples_path, estimator, shape, schedule, coef, exponent, unit, bandwidth, alpha, provider,
             endpoint, replay_path, params, context_lengths, label, out):
    """Compute a density-estimation trajectory over context lengths."""
    samples = _load_samples(samples_path)
    ns = parse_context_lengths(context_lengths)
    if estimator == "provider":
        ser = SerializationConfig(num_digits=samples.grid.num_digits)
        spec = provider_from_options(provider, endpoint, replay_path, params)
        traj = icl_trajectory(spec.build(ser), samples, ns, ser, label=label or f"icl-{provider}")
    else:
        if estimator == "histogram":
            cfg = HistogramPrior(alpha)
        else:
            sched = {"power-law": lambda: PowerLaw(coef, exponent, unit), "silverman": Silverman,
                     "constant": lambda: Constant(bandwidth)}[schedule]()
            cfg = KdeConfig(shape, sched)
        traj = de_trajectory(cfg, samples, ns, samples.grid, label or estimator)
    store.write_trajectories(out, [traj])
    click.echo(out)


@main.command("fit-bespoke")
@click.option("--trajectory", "traj_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--samples", "samples_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--no-warm-start", is_flag=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Schedule CSV.")
@click.option("--imitation", type=click.Path(dir_okay=False), default=None, help="Write the imitation trajectory.")
@handle_errors
def fit_bespoke(traj_path, samples_path, no_warm_start, out, imitation):
    """Fit a bespoke (h, s) kernel schedule to the first trajectory in a file."""
    traj = store.read_trajectories(traj_path)[0]
    sch, imit = fit_bespoke_schedule(traj, _load_samples(samples_path), warm_start=not no_warm_start)
    Path(out).write_text(sch.to_csv(), encoding="utf-8")
    if imitation:
        store.write_trajectories(imitation, [imit])
    click.echo(out)


def _all_trajectories(paths):
    out = []
    for p in paths:
        out.extend(store.read_trajectories(p))
    return out


@main.command("embed")
@click.option("--trajectories", "traj_paths", type=click.Path(exists=True, dir_okay=False), multiple=True,
              required=True)
@click.option("--target", "target_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Truth pdf; required for guide curves.")
@click.option("--metric", type=click.Choice(METRICS), default="hellinger-squared", show_default=True)
@click.option("--guides/--no-guides", default=True, show_default=True)
@click.option("--dims", type=int, default=2, show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Embedding CSV.")
@handle_errors
def embed(traj_paths, target_path, metric, guides, dims, out):
    """Jointly embed trajectory points (and guide curves) with InPCA."""
    trajs = _all_trajectories(traj_paths)
    if guides and not target_path:
        raise ConfigError("--guides needs --target")
    truth = store.pdf_from_dict(store.read_json(target_path)) if target_path else None
    emb, points = joint_embedding(trajs, truth, EmbeddingSpec(metric=metric, guides=guides, dims=dims))
    Path(out).write_text(emb.to_csv(dims), encoding="utf-8")
    click.echo(out)
    click.echo(f"explained variance (first {min(dims, emb.rank)} dims): {emb.explained[min(dims, emb.rank) - 1]:.4f}")


@main.command("meta-embed")
@click.option("--trajectories", "traj_paths", type=click.Path(exists=True, dir_okay=False), multiple=True,
              required=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def meta_embed(traj_paths, out):
    """Embed whole trajectories, one point each."""
    emb = meta_inpca(_all_trajectories(traj_paths))
    Path(out).write_text(emb.to_csv(), encoding="utf-8")
    click.echo(out)


@main.command("capture")
@click.option("--endpoint", default=None, help="HTTP endpoint; omit to use --mock.")
@click.option("--mock", type=click.Choice(["uniform", "delta", "kernel-mock", "seeded-random"]), default=None)
@click.option("--param", "params", multiple=True)
@click.option("--samples", "samples_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--context-lengths", default="0:201", show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True, help="Replay JSONL file.")
@click.option("--trajectory-out", type=click.Path(dir_okay=False), default=None)
@handle_errors
def capture(endpoint, mock, params, samples_path, context_lengths, out, trajectory_out):
    """Record every provider answer of an ICL run to a replay file."""
    if bool(endpoint) == bool(mock):
        raise ConfigError("give exactly one of --endpoint or --mock")
    spec = ProviderSpec("http", endpoint=endpoint) if endpoint else ProviderSpec("mock", preset=mock,
                                                                                 params=tuple(params))
    samples = _load_samples(samples_path)
    ser = SerializationConfig(num_digits=samples.grid.num_digits)
    traj, lines = capture_session(spec, samples, parse_context_lengths(context_lengths), out, ser)
    if trajectory_out:
        store.write_trajectories(trajectory_out, [traj])
    click.echo(f"{out}: {lines} responses")


@main.command("replay")
@click.option("--replay", "replay_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--samples", "samples_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--context-lengths", default="0:201", show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def replay(replay_path, samples_path, context_lengths, out):
    """Rebuild an ICL trajectory offline from a replay file."""
    samples = _load_samples(samples_path)
    ser = SerializationConfig(num_digits=samples.grid.num_digits)
    traj = replay_session(replay_path, samples, parse_context_lengths(context_lengths), ser)
    store.write_trajectories(out, [traj])
    click.echo(out)


@main.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--preset", type=click.Choice(PRESETS), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides the config).")
@click.option("--write-config", type=click.Path(dir_okay=False), default=None,
              help="Write the resolved config and exit.")
@handle_errors
def run(config_path, preset, out_dir, write_config):
    """Run a full experiment from a config file or named preset."""
    if bool(config_path) == bool(preset):
        raise ConfigError("give exactly one of --config or --preset")
    if preset:
        cfg = preset_config(preset, out_dir or f"runs/{preset}")
    else:
        cfg = ExperimentConfig.loads(Path(config_path).read_text(encoding="utf-8"))
        if out_dir:
            cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "output_dir": out_dir})
    if write_config:
        Path(write_config).write_text(cfg.dumps(), encoding="utf-8")
        click.echo(write_config)
        return
    manifest = run_experiment(cfg)
    click.echo(f"{manifest.output_dir}/manifest.json ({len(manifest.artifacts)} artifacts)")


@main.command("plot-data")
@click.option("--run", "run_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--kind", type=click.Choice(PLOT_KINDS), required=True)
@handle_errors
def plot_data(run_dir, kind):
    """Emit long-format CSV for a chart from a finished run."""
    click.echo(emit_plot_data(run_dir, kind))


if __name__ == "__main__":
    main()
