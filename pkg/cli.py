import json

import click

from src.blockchain.ledger import Chain, read_export, verify_export
from src.simulation.consensus_demo import run_consensus_demo
from src.simulation.report import emit_report
from src.simulation.scenario import load_trace, run_scenario
from src.trace.movielens import dump_trace
from src.utility.config import RESULTS_DB, read_config_file
from src.utility.db_ops import get_report_rows
from src.utility.errors import BcdnError, ConfigError, LedgerFormatError, TransactionRejected
from src.utility.logger import logger
from src.utility.models import ConsensusDemoRequest, Deployment, load_scenario_config

_ARCH_CHOICES = {
    "bcdn": [Deployment.BCDN],
    "conventional": [Deployment.CONVENTIONAL],
    "both": [Deployment.BCDN, Deployment.CONVENTIONAL],
}


def trace_options(command):
    """Options shared by every command that builds a ScenarioConfig."""
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Flat KEY=VALUE scenario file."),
        click.option("--dataset-dir", type=click.Path(file_okay=False), help="MovieLens directory (movies.csv, ratings.csv)."),
        click.option("--synthetic", is_flag=True, default=None, help="Use a generated Zipf trace instead of MovieLens."),
        click.option("--zipf-s", type=float, help="Zipf exponent of the synthetic trace."),
        click.option("--n-contents", type=int, help="Synthetic catalog size."),
        click.option("--n-requests", type=int, help="Synthetic request count."),
        click.option("--seed", type=int, help="Seed for every random draw."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _build_config(config_path=None, **flags):
    values = read_config_file(config_path) if config_path else {}
    values.update({key: value for key, value in flags.items() if value is not None})
    return load_scenario_config(values)


@click.group()
def cli():
    """B-CDN simulator: ledger, PBFT, handshake, contracts and feature-based edge caching."""


@cli.command()
@trace_options
@click.option("--z-sweep", help="Comma-separated cache sizes, e.g. 0,50,100.")
@click.option("--per-cp", type=int, help="Library size of every CP.")
@click.option("--tau-ratio", type=float, help="Backhaul to access delay ratio.")
@click.option("--arch", type=click.Choice(sorted(_ARCH_CHOICES)), help="Deployments to simulate.")
@click.option("--fast", is_flag=True, default=None, help="Batch-commit contracts without per-block PBFT.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="results", show_default=True)
@click.option("--db", "db_file", type=click.Path(dir_okay=False), default=None, help=f"Results store [default: {RESULTS_DB}].")
@click.option("--no-db", is_flag=True, help="Do not store rows in the results database.")
def run(config_path, dataset_dir, synthetic, zipf_s, n_contents, n_requests, seed,
        z_sweep, per_cp, tau_ratio, arch, fast, out_dir, db_file, no_db):
    """Run a scenario and write report tables to OUT_DIR."""
    try:
        config = _build_config(
            config_path,
            dataset_dir=dataset_dir,
            synthetic=synthetic,
            zipf_s=zipf_s,
            n_contents=n_contents,
            n_requests=n_requests,
            seed=seed,
            z_sweep=z_sweep,
            per_cp=per_cp,
            tau_ratio=tau_ratio,
            deployments=_ARCH_CHOICES[arch] if arch else None,
            fast=fast,
        )
        report = run_scenario(config, artifacts_dir=out_dir)
        written = emit_report(report, out_dir, db_file=None if no_db else (db_file or RESULTS_DB))
    except (BcdnError, FileNotFoundError) as e:
        logger.error(f"run failed: {e}")
        raise click.ClickException(str(e))
    for path in written:
        click.echo(str(path))
    click.echo(f"run {report.run_id}: ledger verified={report.ledger_verified} reconciled={report.ledger_reconciled}")


@cli.command("verify-chain")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def verify_chain(path):
    """Replay an exported ledger and check its integrity."""
    try:
        lines = read_export(path)
    except LedgerFormatError as e:
        click.echo(f"FAILED: {e}")
        raise SystemExit(1)
    if not verify_export(lines):
        click.echo("FAILED: digests or links do not verify")
        raise SystemExit(1)
    try:
        chain = Chain.from_lines(lines)
    except (BcdnError, TransactionRejected) as e:
        click.echo(f"FAILED: {e}")
        raise SystemExit(1)
    click.echo(f"OK: {len(chain)} blocks, {sum(1 for _ in chain.transactions())} transactions")


@cli.command("consensus-demo")
@click.option("--validators", type=int, default=4, show_default=True)
@click.option("--silent", type=int, multiple=True, help="Id of a validator that never speaks (repeatable).")
@click.option("--equivocating", type=int, multiple=True, help="Id of a validator that sends conflicting digests (repeatable).")
@click.option("--blocks", type=int, default=3, show_default=True)
@click.option("--timeout", type=int, default=50, show_default=True)
@click.option("--drop", "drop_probability", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--events", "events_path", type=click.Path(dir_okay=False), help="Write the consensus event log here.")
def consensus_demo(validators, silent, equivocating, blocks, timeout, drop_probability, seed, events_path):
    """Run the PBFT harness with fault flags and print the outcome."""
    try:
        result = run_consensus_demo(
            ConsensusDemoRequest(
                n_validators=validators,
                silent=list(silent),
                equivocating=list(equivocating),
                blocks=blocks,
                timeout=timeout,
                drop_probability=drop_probability,
                seed=seed,
            ),
            events_path=events_path,
        )
    except ConfigError as e:
        raise click.ClickException(str(e))
    click.echo(json.dumps(result.model_dump(), indent=2))


@cli.command()
@click.option("--run-id", help="Only rows of this run.")
@click.option("--db", "db_file", type=click.Path(dir_okay=False), default=None)
def reports(run_id, db_file):
    """List stored metrics rows."""
    rows = get_report_rows(run_id, db_file=db_file)
    if not rows:
        raise click.ClickException("No stored rows")
    for row in rows:
        click.echo(json.dumps(row))


@cli.command("dump-trace")
@trace_options
@click.argument("out", type=click.Path(dir_okay=False))
def dump_trace_command(config_path, dataset_dir, synthetic, zipf_s, n_contents, n_requests, seed, out):
    """Write the scenario's request trace as canonical line-delimited text."""
    try:
        config = _build_config(
            config_path,
            dataset_dir=dataset_dir,
            synthetic=synthetic,
            zipf_s=zipf_s,
            n_contents=n_contents,
            n_requests=n_requests,
            seed=seed,
        )
        _, trace = load_trace(config)
    except (BcdnError, FileNotFoundError) as e:
        raise click.ClickException(str(e))
    dump_trace(trace, out)
    click.echo(f"{len(trace)} requests written to {out}")


if __name__ == "__main__":
    cli()
