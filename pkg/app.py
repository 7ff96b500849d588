"""
Command line entry point
Runs solver experiments, verification checks and reference computations

Exit status: 0 success, 1 configuration or usage error, 2 divergence, 3 verification failure
"""

from dotenv import load_dotenv

# Load environment variables from .env file FIRST (before importing config)
load_dotenv()

import json
import logging
import sys
from typing import List, Optional, Sequence, Union

import click
from pydantic import ValidationError

from analysis import reference_minimizer, theorem_bound, theorem_constants
from config import Config
from datasets import Dataset, load_libsvm, synth_logistic
from errors import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    InvalidInputError,
    VerificationFailed,
)
from losses import LossModel, curvature
from models import FileSource, RunConfig, SyntheticSource
from sampling import RngStream
from solvers import (
    aggregate_traces,
    energy_kind,
    prepare_problem,
    run_detailed,
    run_seeds,
)
from trace_store import build_metadata, emit_csv, write_trace_file
from verification import (
    asymptotic_unbiasedness_check,
    bias_identity_suite,
    decay_check,
    freeze_epoch_start,
    gradient_accounting,
    lemma1_check,
    lemma2_check,
    lemma2_with_replacement_check,
    recursion_check,
    rr_advantage_check,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_VERIFICATION = 3


class ExperimentGroup(click.Group):
    """click group that maps domain errors onto the documented exit codes."""

    def main(self, args=None, prog_name=None, standalone_mode=True, **extra):
        try:
            result = super().main(args=args, prog_name=prog_name, standalone_mode=False, **extra)
            code = result if isinstance(result, int) else EXIT_OK
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_CONFIG
        except click.ClickException as e:
            e.show()
            code = EXIT_CONFIG
        except ValidationError as e:
            for error in e.errors():
                location = ".".join(str(part) for part in error["loc"])
                prefix = f"{location}: " if location else ""
                click.echo(f"Error: {prefix}{error['msg']}", err=True)
            code = EXIT_CONFIG
        except (ConfigError, InvalidInputError) as e:
            click.echo(f"Error: {e}", err=True)
            code = EXIT_CONFIG
        except (DivergenceError, ConvergenceError) as e:
            click.echo(f"Error: {e}", err=True)
            code = EXIT_DIVERGENCE
        except VerificationFailed as e:
            click.echo(f"Verification failed: {e}", err=True)
            code = EXIT_VERIFICATION
        if standalone_mode:
            sys.exit(code)
        return code


def _configure_logging(verbose: bool) -> None:
    level = logging.INFO if verbose else getattr(logging, Config.LOG_LEVEL, logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _parse_seeds(text: str) -> Union[int, List[int]]:
    try:
        if "," in text:
            return [int(part) for part in text.split(",") if part.strip()]
        return int(text)
    except ValueError:
        raise click.BadParameter(f"expected a count or a comma-separated seed list, got {text!r}")


def _parse_rho(text: str) -> Union[float, str]:
    if text == "1/N":
        return text
    try:
        return float(text)
    except ValueError:
        raise click.BadParameter(f"rho must be a number or '1/N', got {text!r}")


def _load_source(source: Union[SyntheticSource, FileSource]) -> Dataset:
    if isinstance(source, SyntheticSource):
        return synth_logistic(source.n, source.m, source.seed)
    return load_libsvm(source.path, normalize=source.normalize)


def _emit_report(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, indent=2, default=float)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    click.echo(text)


def _problem(n: int, m: int, data_seed: int, loss: str, rho: str):
    """Synthetic problem used by the verification commands."""
    dataset = synth_logistic(n, m, data_seed)
    rho_value = _parse_rho(rho)
    model = LossModel(loss, 1.0 / n if rho_value == "1/N" else rho_value)
    return dataset, model


def problem_options(default_n: int, default_m: int, default_loss: str = "logistic-l2"):
    """Shared options describing the synthetic problem of a verification command."""
    options = [
        click.option("--n", "n", type=click.IntRange(min=1), default=default_n, show_default=True, help="Number of samples N."),
        click.option("--m", "m", type=click.IntRange(min=1), default=default_m, show_default=True, help="Feature dimension M."),
        click.option("--data-seed", type=click.IntRange(min=0), default=0, show_default=True, help="Seed of the synthetic data."),
        click.option("--loss", type=click.Choice(["logistic-l2", "quadratic-l2"]), default=default_loss, show_default=True),
        click.option("--rho", default="1/N", show_default=True, help="Regularization weight or '1/N'."),
        click.option("--seed", type=click.IntRange(min=0), default=lambda: Config.DEFAULT_SEED, help="Base seed of the random streams (default: $VRR_SEED or 0)."),
        click.option("--out", type=click.Path(dir_okay=False, writable=True), default=None, help="Also write the JSON report here."),
    ]

    def decorator(f):
        for option in reversed(options):
            f = option(f)
        return f

    return decorator


@click.group(cls=ExperimentGroup)
@click.option("-v", "--verbose", is_flag=True, help="Log progress at INFO level.")
def cli(verbose: bool):
    """Variance-reduced solvers under random reshuffling: experiments and checks."""
    _configure_logging(verbose)


@cli.command("run")
@click.option("--solver", type=click.Choice(["sgd", "saga", "svrg", "avrg"]), required=True)
@click.option("--sampling", type=click.Choice(["rr", "uniform"]), default="rr", show_default=True)
@click.option("--mu", type=float, default=None, help="Step size.")
@click.option("--mu-frac", type=float, default=None, help="Step size as a fraction of the theorem bound.")
@click.option("--epochs", type=int, required=True, help="Number of epochs T.")
@click.option("--seeds", default="1", show_default=True, help="Seed count or comma-separated run indices.")
@click.option("--seed", "base_seed", type=click.IntRange(min=0), default=lambda: Config.DEFAULT_SEED, help="Base seed (default: $VRR_SEED or 0).")
@click.option("--diagnostic", is_flag=True, help="Retain inner iterates for a_sq, b_sq and energy.")
@click.option("--phi-convention", type=click.Choice(["post-step", "pre-step"]), default="post-step", show_default=True)
@click.option("--synthetic", nargs=2, type=click.IntRange(min=1), default=None, help="Synthetic logistic data: N M.")
@click.option("--synthetic-seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None, help="LIBSVM file.")
@click.option("--normalize/--no-normalize", default=True, show_default=True, help="Unit-normalize file features.")
@click.option("--loss", type=click.Choice(["logistic-l2", "quadratic-l2"]), default="logistic-l2", show_default=True)
@click.option("--rho", default="1/N", show_default=True, help="Regularization weight or '1/N'.")
@click.option("--gamma-variant", type=click.Choice(["derived", "printed"]), default="derived", show_default=True)
@click.option("--alpha-variant", type=click.Choice(["derived", "printed"]), default="derived", show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=lambda: Config.WORKERS, help="Process fan-out over seeds.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default=None, help="Trace CSV path (stdout if omitted).")
@click.option("--progress/--quiet", default=False, help="Show a progress bar over seeds.")
def run_command(solver, sampling, mu, mu_frac, epochs, seeds, base_seed, diagnostic, phi_convention,
                synthetic, synthetic_seed, data_path, normalize, loss, rho, gamma_variant,
                alpha_variant, workers, out, progress):
    """Run a solver over one or more seeds and emit the seed-averaged trace."""
    if (synthetic is None) == (data_path is None):
        raise click.UsageError("exactly one of --synthetic N M and --data PATH is required")
    if synthetic is not None:
        source = {"kind": "synthetic", "n": synthetic[0], "m": synthetic[1], "seed": synthetic_seed}
    else:
        source = {"kind": "file", "path": data_path, "normalize": normalize}

    config = RunConfig(
        solver=solver,
        sampling=sampling,
        mu=mu,
        mu_frac=mu_frac,
        epochs=epochs,
        seeds=_parse_seeds(seeds),
        base_seed=base_seed,
        diagnostic=diagnostic,
        phi_convention=phi_convention,
        source=source,
        loss=loss,
        rho=_parse_rho(rho),
        gamma_variant=gamma_variant,
        alpha_variant=alpha_variant,
    )
    dataset = _load_source(config.source)
    model, constants, step = prepare_problem(config, dataset)
    reference = reference_minimizer(model, dataset)

    kind = energy_kind(config.solver, config.sampling)
    theorem = None
    if kind is not None:
        theorem = theorem_constants(kind, step, constants, dataset.n, gamma_variant, alpha_variant)
    logger.info("delta=%.6g nu=%.6g mu=%.6g", constants.delta, constants.nu, step)

    traces = aggregate_traces(run_seeds(config, dataset, model, reference, workers, progress))
    metadata = build_metadata(config, constants, step, reference, theorem, dataset.n)
    if out:
        write_trace_file(out, traces, metadata)
    else:
        emit_csv(traces, click.get_text_stream("stdout"), metadata)


@cli.command("reference")
@click.option("--synthetic", nargs=2, type=click.IntRange(min=1), default=None, help="Synthetic logistic data: N M.")
@click.option("--synthetic-seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--normalize/--no-normalize", default=True, show_default=True)
@click.option("--loss", type=click.Choice(["logistic-l2", "quadratic-l2"]), default="logistic-l2", show_default=True)
@click.option("--rho", default="1/N", show_default=True)
@click.option("--tol", type=float, default=lambda: Config.REFERENCE_TOL, help="Gradient-norm tolerance.")
def reference_command(synthetic, synthetic_seed, data_path, normalize, loss, rho, tol):
    """Compute the reference minimizer w* and print its metadata."""
    if (synthetic is None) == (data_path is None):
        raise click.UsageError("exactly one of --synthetic N M and --data PATH is required")
    if synthetic is not None:
        dataset = synth_logistic(synthetic[0], synthetic[1], synthetic_seed)
    else:
        dataset = load_libsvm(data_path, normalize=normalize)
    rho_value = _parse_rho(rho)
    model = LossModel(loss, 1.0 / dataset.n if rho_value == "1/N" else rho_value)
    reference = reference_minimizer(model, dataset, tol)
    constants = curvature(model, dataset)
    _emit_report(
        {
            "n": dataset.n,
            "m": dataset.dim,
            "loss": loss,
            "rho": model.rho,
            "delta": constants.delta,
            "nu": constants.nu,
            "mu_max_saga_rr": theorem_bound("saga-rr", constants, dataset.n),
            "mu_max_avrg": theorem_bound("avrg", constants, dataset.n),
            "risk_star": reference.risk_star,
            "grad_norm": reference.grad_norm,
            "iterations": reference.iterations,
            "w_star": reference.w_star.tolist(),
        },
        None,
    )


@cli.command("accounting")
@problem_options(default_n=10, default_m=3)
@click.option("--mu-frac", type=float, default=1.0, show_default=True)
def accounting_command(n, m, data_seed, loss, rho, seed, out, mu_frac):
    """Measure gradient evaluations per epoch for every solver."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    mu = mu_frac * theorem_bound("saga-rr", curvature(model, dataset), n)
    rows = gradient_accounting(dataset, model, mu, seed)
    _emit_report({"n": n, "rows": [row.to_dict() for row in rows]}, out)

    expected = {("avrg", "post-step"): 2 * n, ("saga", "pre-step"): n, ("svrg", "post-step"): 3 * n}
    for row in rows:
        wanted = expected.get((row.solver, row.phi_convention))
        if wanted is not None and row.measured != wanted:
            raise VerificationFailed(f"{row.solver}/{row.sampling} used {row.measured} evaluations, expected {wanted}")


@cli.group("verify")
def verify():
    """Monte Carlo and exact checks of the convergence analysis."""


def _frozen(dataset, model, mu_frac, warm_epochs, seed, sampling):
    mu = mu_frac * theorem_bound("saga-rr", curvature(model, dataset), dataset.n)
    return freeze_epoch_start(dataset, model, mu, RngStream(seed).child(0), warm_epochs, sampling)


@verify.command("lemma1")
@problem_options(default_n=8, default_m=3)
@click.option("--i", "i", type=click.IntRange(min=0), default=3, show_default=True, help="Inner index.")
@click.option("--trials", type=int, default=20000, show_default=True)
@click.option("--warm-epochs", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--mu-frac", type=float, default=1.0, show_default=True)
def lemma1_command(n, m, data_seed, loss, rho, seed, out, i, trials, warm_epochs, mu_frac):
    """Uniformity of the previous-epoch iterate held by an unvisited history cell."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    frozen = _frozen(dataset, model, mu_frac, warm_epochs, seed, "rr")
    report = lemma1_check(frozen, i, trials, RngStream(seed).child(1))
    _emit_report(report.to_dict(), out)
    if not report.passed:
        raise VerificationFailed(f"chi-square p-value {report.p_value:.3e} <= {Config.CHI_SQUARE_THRESHOLD}")


@verify.command("lemma2")
@problem_options(default_n=8, default_m=3, default_loss="quadratic-l2")
@click.option("--i", "i", type=click.IntRange(min=0), default=4, show_default=True)
@click.option("--trials", type=int, default=50000, show_default=True)
@click.option("--warm-epochs", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--mu-frac", type=float, default=1.0, show_default=True)
@click.option("--tol", type=float, default=Config.MOMENT_REL_TOL, show_default=True)
def lemma2_command(n, m, data_seed, loss, rho, seed, out, i, trials, warm_epochs, mu_frac, tol):
    """Aggregate second moment of the history table under reshuffling."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    frozen = _frozen(dataset, model, mu_frac, warm_epochs, seed, "rr")
    report = lemma2_check(frozen, i, trials, RngStream(seed).child(1))
    _emit_report(report.to_dict(), out)
    if not report.within(tol):
        raise VerificationFailed(f"relative error {report.rel_err:.3e} > {tol}")


@verify.command("lemma2-wr")
@problem_options(default_n=6, default_m=3, default_loss="quadratic-l2")
@click.option("--i", "i", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--trials", type=int, default=50000, show_default=True)
@click.option("--warm-epochs", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--mu-frac", type=float, default=1.0, show_default=True)
@click.option("--tol", type=float, default=Config.MOMENT_REL_TOL, show_default=True)
def lemma2_wr_command(n, m, data_seed, loss, rho, seed, out, i, trials, warm_epochs, mu_frac, tol):
    """One-step moment recursion of the history table under uniform sampling."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    frozen = _frozen(dataset, model, mu_frac, warm_epochs, seed, "uniform")
    report = lemma2_with_replacement_check(frozen, i, trials, RngStream(seed).child(1))
    _emit_report(report.to_dict(), out)
    if not report.within(tol):
        raise VerificationFailed(f"relative error {report.rel_err:.3e} > {tol}")


@verify.command("bias")
@problem_options(default_n=8, default_m=3)
@click.option("--states", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--mu-frac", type=float, default=1.0, show_default=True)
def bias_command(n, m, data_seed, loss, rho, seed, out, states, mu_frac):
    """Exact conditional mean of the SAGA direction on random mid-epoch states."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    mu = mu_frac * theorem_bound("saga-rr", curvature(model, dataset), n)
    report = bias_identity_suite(dataset, model, mu, RngStream(seed), states)
    _emit_report(report.to_dict(), out)
    if not report.passed:
        raise VerificationFailed("enumerated conditional mean disagrees with the closed form")


@verify.command("unbiased")
@problem_options(default_n=20, default_m=3)
@click.option("--epochs", type=click.IntRange(min=2), default=600, show_default=True)
@click.option("--eps", type=float, default=1e-6, show_default=True)
@click.option("--mu-frac", type=float, default=10.0, show_default=True)
def unbiased_command(n, m, data_seed, loss, rho, seed, out, epochs, eps, mu_frac):
    """AVRG directions approach ∇J(w*) near the minimizer."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    config = RunConfig(
        solver="avrg",
        mu_frac=mu_frac,
        epochs=epochs,
        base_seed=seed,
        source={"kind": "synthetic", "n": n, "m": m, "seed": data_seed},
        loss=loss,
        rho=model.rho,
    )
    reference = reference_minimizer(model, dataset)
    transcript = run_detailed(config, dataset, model, reference, keep_records=True)
    report = asymptotic_unbiasedness_check(transcript, dataset, model, reference, eps)
    _emit_report(report.to_dict(), out)
    if report.status == "fail":
        raise VerificationFailed(f"direction error {report.max_error:.3e} exceeds 3*delta*eps = {report.bound:.3e}")


def _diagnostic_seed_traces(solver, n, m, data_seed, loss, rho, seed, seeds, epochs, mu_frac, workers, progress):
    dataset, model = _problem(n, m, data_seed, loss, rho)
    config = RunConfig(
        solver=solver,
        mu_frac=mu_frac,
        epochs=epochs,
        seeds=seeds,
        base_seed=seed,
        diagnostic=True,
        source={"kind": "synthetic", "n": n, "m": m, "seed": data_seed},
        loss=loss,
        rho=model.rho,
    )
    _, constants, step = prepare_problem(config, dataset)
    reference = reference_minimizer(model, dataset)
    seed_traces = run_seeds(config, dataset, model, reference, workers, progress)
    return constants, step, reference, seed_traces


DECAY_OPTIONS = [
    click.option("--solver", type=click.Choice(["saga", "avrg"]), default="saga", show_default=True),
    click.option("--seeds", type=click.IntRange(min=1), default=Config.DECAY_MIN_SEEDS, show_default=True),
    click.option("--epochs", type=click.IntRange(min=2), default=200, show_default=True),
    click.option("--mu-frac", type=float, default=1.0, show_default=True),
    click.option("--workers", type=click.IntRange(min=1), default=lambda: Config.WORKERS),
    click.option("--progress/--quiet", default=False),
]


def decay_options(f):
    for option in reversed(DECAY_OPTIONS):
        f = option(f)
    return f


@verify.command("decay")
@problem_options(default_n=50, default_m=5)
@decay_options
def decay_command(n, m, data_seed, loss, rho, seed, out, solver, seeds, epochs, mu_frac, workers, progress):
    """Per-epoch contraction of the energy function over many seeds."""
    constants, step, reference, seed_traces = _diagnostic_seed_traces(
        solver, n, m, data_seed, loss, rho, seed, seeds, epochs, mu_frac, workers, progress
    )
    kind = "saga-rr" if solver == "saga" else "avrg"
    theorem = theorem_constants(kind, step, constants, n)
    report = decay_check(seed_traces, theorem, reference, min_seeds=Config.DECAY_MIN_SEEDS)
    _emit_report(report.to_dict(), out)
    if report.status == "fail":
        raise VerificationFailed(
            f"max energy ratio {report.max_ratio:.6f} vs alpha {report.alpha:.6f} "
            f"(envelope {'ok' if report.envelope_ok else 'violated'})"
        )


@verify.command("recursion")
@problem_options(default_n=50, default_m=5)
@decay_options
def recursion_command(n, m, data_seed, loss, rho, seed, out, solver, seeds, epochs, mu_frac, workers, progress):
    """Epoch recursion of the mean-square error."""
    constants, step, reference, seed_traces = _diagnostic_seed_traces(
        solver, n, m, data_seed, loss, rho, seed, seeds, epochs, mu_frac, workers, progress
    )
    kind = "saga-rr" if solver == "saga" else "avrg"
    report = recursion_check(seed_traces, kind, step, constants, n, reference)
    _emit_report(report.to_dict(), out)
    if not report.passed:
        raise VerificationFailed(f"recursion ratio {report.max_ratio:.6f} exceeds {Config.DECAY_SLACK}")


@verify.command("rr-advantage")
@problem_options(default_n=200, default_m=10)
@click.option("--pairs", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--epochs", "target_epoch", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=lambda: Config.WORKERS)
def rr_advantage_command(n, m, data_seed, loss, rho, seed, out, pairs, target_epoch, workers):
    """Tuned SAGA under reshuffling against tuned SAGA with uniform sampling."""
    dataset, model = _problem(n, m, data_seed, loss, rho)
    reference = reference_minimizer(model, dataset)
    report = rr_advantage_check(dataset, model, reference, pairs, target_epoch, seed, workers=workers)
    _emit_report(report.to_dict(), out)
    if not report.passed:
        raise VerificationFailed(
            f"reshuffling won {report.wins}/{report.pairs} pairs, below {Config.RR_WIN_FRACTION:.0%}"
        )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit status."""
    return cli.main(args=list(argv) if argv is not None else None, prog_name="vrr", standalone_mode=False)


if __name__ == "__main__":
    sys.exit(main())
