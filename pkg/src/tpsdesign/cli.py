"""Command-line entry point: ``tpsdesign <command> [options]``.

Commands write CSV/JSON artifacts into the ``--out`` directory and a
``summary_<command>.json`` describing the run.  Exit codes: 0 success,
1 validation or domain error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunConfig, load_config
from .errors import InvalidInputError, MissingArtifactError, NumericalError, TPSError
from .surrogate import default_model_path, load_model, predict_batch, save_model
from .thermal import (
    MaterialProperties,
    analytic_slab_flux,
    enthalpy_balance,
    interface_series,
    solve_fd,
)
from .training import COMPONENTS, train, validate_against_fd
from .uq import (
    PARAM_NAMES,
    PosteriorEvaluator,
    SurrogateModel,
    cross_verify,
    mh_sample,
    reliability,
    smc_sample,
)

log = logging.getLogger("tpsdesign")

CHAIN_COLUMNS = ("rho", "k", "cp", "log_posterior", "T_interface")
MAX_FIELD_ROWS = 2000


def _fmt(v):
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_chain(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"chain file {path} not found; run `tpsdesign sample` first")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CHAIN_COLUMNS:
            raise InvalidInputError(f"{path}: expected columns {','.join(CHAIN_COLUMNS)}")
        rows = [[float(v) for v in row] for row in reader]
    return np.array(rows).reshape(-1, len(CHAIN_COLUMNS))


def write_field(path, field, values=None):
    """Field CSV: header ``t`` then node positions; at most MAX_FIELD_ROWS time rows."""
    values = field.values if values is None else values
    n = values.shape[1]
    stride = max(1, -(-n // MAX_FIELD_ROWS))
    steps = list(range(0, n, stride))
    if steps[-1] != n - 1:
        steps[-1] = n - 1
    write_csv(path, ["t", *[_fmt(x) for x in field.x]],
              ([field.times[j], *values[:, j]] for j in steps))


def nominal_props(config: RunConfig) -> MaterialProperties:
    return MaterialProperties(*config.prior().mean)


def _load_model(path):
    path = default_model_path() if str(path) == "builtin" else Path(path)
    if not path.exists():
        raise MissingArtifactError(f"model file {path} not found; run `tpsdesign train` first")
    return load_model(path)


class Run:
    """Book-keeping for one command: phase timers, metrics and artifacts."""

    def __init__(self, command, config: RunConfig, out: Path):
        self.command = command
        self.config = config
        self.out = out
        self.times = {}
        self.metrics = {}
        self.artifacts = []

    @contextmanager
    def phase(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = time.perf_counter() - start

    def path(self, name):
        p = self.out / name
        self.artifacts.append(str(p))
        return p

    def finish(self):
        summary = {
            "command": self.command,
            "version": __version__,
            "config_hash": self.config.hash(),
            "seed": self.config.seed,
            "wall_times": self.times,
            "metrics": self.metrics,
            "artifacts": self.artifacts,
        }
        (self.out / f"summary_{self.command}.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
        return summary


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def cmd_solve(config: RunConfig, out: Path, **_):
    run = Run("solve", config, out)
    scenario, props = config.scenario(), nominal_props(config)
    with run.phase("solve"):
        field = solve_fd(scenario, props, config.grid())
    series = interface_series(field)
    with run.phase("write"):
        write_field(run.path("field.csv"), field)
        write_csv(run.path("interface.csv"), ["t", "T_interface"], series)
    run.metrics.update(
        T_interface_at_eval=series.at_eval,
        T_interface_max=series.max_temp,
        enthalpy_error_at_eval=enthalpy_balance(field, props, scenario, scenario.t_eval),
    )
    return run.finish()


def cmd_analytic(config: RunConfig, out: Path, n_terms=100, **_):
    run = Run("analytic", config, out)
    scenario, props = config.scenario(), nominal_props(config)
    field = solve_fd(scenario, props, config.grid())
    with run.phase("analytic"):
        xx, tt = np.meshgrid(field.x, field.times, indexing="ij")
        exact = analytic_slab_flux(scenario, props, xx, tt, n_terms)
    write_field(run.path("analytic_field.csv"), field, exact)
    run.metrics.update(
        T_interface_at_eval=analytic_slab_flux(scenario, props, 0.0, scenario.t_eval, n_terms),
        max_abs_fd_error=float(np.max(np.abs(exact - field.values))),
        n_terms=n_terms,
    )
    return run.finish()


def cmd_train(config: RunConfig, out: Path, **_):
    run = Run("train", config, out)
    with run.phase("train"):
        params, report = train(config.architecture(), config.normalization(), config.weights(),
                               config.training(), config.scenario())
    save_model(run.path("model.json"), params, config.normalization(), report.to_dict())
    write_csv(run.path("training_history.csv"), ["step", "loss", *COMPONENTS],
              ([h["step"], h["loss"], *(h.get(c, float("nan")) for c in COMPONENTS)] for h in report.history))
    run.metrics.update(final_loss=report.final_loss, components=report.final_components,
                       training_wall_time=report.wall_time, steps=report.steps)
    return run.finish()


def cmd_validate(config: RunConfig, out: Path, model=None, n_samples=20, **_):
    run = Run("validate", config, out)
    params, norm, _ = _load_model(model or out / "model.json")
    scenario, prior = config.scenario(), config.prior()
    rng = np.random.default_rng(config.seed)
    samples = [nominal_props(config)] + [MaterialProperties(*q) for q in prior.sample(n_samples, rng)]
    with run.phase("validate"):
        report = validate_against_fd(params, norm, scenario, samples, config.grid())
    (run.path("validation.json")).write_text(json.dumps(report.to_dict(), indent=2))
    # data behind the surrogate-versus-solver comparison plot (nominal properties)
    q = samples[0]
    field = solve_fd(scenario, q, config.grid())
    n = field.step_index(scenario.t_eval)
    pts = np.column_stack([field.x, np.full(field.grid.nx, scenario.t_eval), np.tile([q.rho, q.k, q.cp], (field.grid.nx, 1))])
    write_csv(run.path("profile_t_eval.csv"), ["x", "T_fd", "T_surrogate"],
              zip(field.x, field.values[:, n], predict_batch(params, norm, pts)))
    run.metrics.update(
        poi_error_nominal=report.poi_error[0],
        worst_poi_error=report.worst_poi_error,
        worst_domain_error=report.worst_domain_error,
        n_samples=len(samples),
    )
    return run.finish()


def _evaluator(config, params, norm, threads, flat_prior=None):
    sampler = config.sampler
    flat = sampler["flat_prior"] if flat_prior is None else flat_prior
    model = SurrogateModel(params, norm, config.scenario(), threads=threads)
    return PosteriorEvaluator(model, config.prior(), config.likelihood(), flat_prior=flat)


def cmd_sample(config: RunConfig, out: Path, model=None, method=None, threads=1, **_):
    run = Run("sample", config, out)
    params, norm, _ = _load_model(model or out / "model.json")
    sampler = config.sampler
    method = method or sampler["method"]
    evaluator = _evaluator(config, params, norm, threads)
    prior = config.prior()
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if method == "mh":
        with run.phase("sample"):
            chain = mh_sample(evaluator, np.array(prior.mean),
                              sampler["proposal_scale"] * np.array(prior.std),
                              sampler["n_samples"], sampler["burn_in"], seed=seeds[0])
        q, logp, temps = chain.samples, chain.log_posterior, chain.temperatures
        run.metrics.update(acceptance_rate=chain.acceptance_rate, proposal_std=chain.proposal_std.tolist())
    elif method == "smc":
        with run.phase("sample"):
            ens = smc_sample(evaluator, sampler["n_particles"], sampler["ess_fraction"],
                             sampler["move_steps"], seed=seeds[1])
        q, temps = ens.particles, ens.temperatures
        logp = evaluator.log_posterior(q)
        run.metrics.update(ess_history=ens.ess_history, betas=ens.betas,
                           acceptance_history=ens.acceptance_history, model_calls=ens.model_calls)
    else:
        raise InvalidInputError(f"unknown sampling method {method!r}")
    write_csv(run.path("chain.csv"), CHAIN_COLUMNS, (list(row) for row in np.column_stack([q, logp, temps])))
    rel = reliability(q, evaluator.model, config.scenario().threshold)
    run.metrics.update(
        method=method,
        n=len(q),
        r_hat_surrogate=rel.r_hat,
        posterior_mean=dict(zip(PARAM_NAMES, np.mean(q, axis=0).tolist())),
        posterior_std=dict(zip(PARAM_NAMES, np.std(q, axis=0).tolist())),
    )
    return run.finish()


def cmd_verify(config: RunConfig, out: Path, chain=None, max_fd=None, **_):
    run = Run("verify", config, out)
    data = read_chain(chain or out / "chain.csv")
    if len(data) == 0:
        raise InvalidInputError("chain file has no samples")
    scenario = config.scenario()
    max_fd = max_fd or config.sampler["max_fd"]
    with run.phase("verify"):
        report = cross_verify(data[:, :3], scenario, config.grid(), scenario.threshold, max_fd, seed=config.seed)
    surrogate_temps = data[:, 4] if report.indices is None else data[report.indices, 4]
    rows = zip(*(data[:, :3] if report.indices is None else data[report.indices, :3]).T,
               surrogate_temps, report.temperatures)
    write_csv(run.path("verify.csv"), ["rho", "k", "cp", "T_surrogate", "T_fd"], rows)
    run.metrics.update(
        **report.to_dict(),
        chain_length=len(data),
        r_hat_surrogate_same_samples=100.0 * float(np.mean(surrogate_temps < scenario.threshold)),
        max_abs_surrogate_fd_difference=float(np.max(np.abs(surrogate_temps - report.temperatures))),
    )
    return run.finish()


def cmd_bench(config: RunConfig, out: Path, model=None, batch=1000, fd_repeats=3, **_):
    run = Run("bench", config, out)
    params, norm, _ = _load_model(model or out / "model.json")
    scenario, prior = config.scenario(), config.prior()
    q = prior.sample(batch, np.random.default_rng(config.seed))
    surrogate = SurrogateModel(params, norm, scenario)
    surrogate(q)  # warm-up
    repeats = 20
    start = time.perf_counter()
    for _ in range(repeats):
        surrogate(q)
    per_surrogate = (time.perf_counter() - start) / (repeats * batch)
    start = time.perf_counter()
    for row in q[:fd_repeats]:
        solve_fd(scenario, MaterialProperties(*row), config.grid())
    per_fd = (time.perf_counter() - start) / fd_repeats
    run.metrics.update(
        batch_size=batch,
        seconds_per_sample_surrogate=per_surrogate,
        seconds_per_sample_fd=per_fd,
        speedup=per_fd / per_surrogate,
    )
    (run.path("bench.json")).write_text(json.dumps(run.metrics, indent=2))
    return run.finish()


COMMANDS = {
    "solve": cmd_solve,
    "analytic": cmd_analytic,
    "train": cmd_train,
    "validate": cmd_validate,
    "sample": cmd_sample,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


MODEL_HELP = "model file (default: <out>/model.json; 'builtin' for the shipped default model)"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults if omitted)")
    common.add_argument("--out", default="run", help="output directory (default: ./run)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tpsdesign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="finite-difference solution at nominal properties")
    p = sub.add_parser("analytic", parents=[common], help="series solution on the solver grid")
    p.add_argument("--n-terms", type=int, default=100)
    sub.add_parser("train", parents=[common], help="train the surrogate")
    p = sub.add_parser("validate", parents=[common], help="compare surrogate against the solver")
    p.add_argument("--model", help=MODEL_HELP)
    p.add_argument("--n-samples", type=int, default=20)
    p = sub.add_parser("sample", parents=[common], help="draw posterior samples of (rho, k, cp)")
    p.add_argument("--model", help=MODEL_HELP)
    p.add_argument("--method", choices=("mh", "smc"))
    p = sub.add_parser("verify", parents=[common], help="recompute reliability with the solver")
    p.add_argument("--chain")
    p.add_argument("--max-fd", type=int)
    p = sub.add_parser("bench", parents=[common], help="time surrogate against solver evaluations")
    p.add_argument("--model", help=MODEL_HELP)
    p.add_argument("--batch", type=int, default=1000)
    return parser


def run_command(argv=None):
    """Parse ``argv`` and execute; returns the run summary (raises on failure)."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.threads < 1:
        raise InvalidInputError("--threads must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kwargs = {k: v for k, v in vars(args).items()
              if k not in ("command", "config", "out", "seed", "verbose") and v is not None}
    with threadpool_limits(limits=args.threads):
        return COMMANDS[args.command](config, out, **kwargs)


def main(argv=None):
    try:
        summary = run_command(argv)
    except TPSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    print(json.dumps(summary["metrics"], indent=2, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
