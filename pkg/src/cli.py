"""
Command Line Interface Module
Provides the CLI for building, classifying, simulating and benchmarking.
"""

import click
import json
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import logging
from tabulate import tabulate

from .accelerator_sim import AcceleratorConfig, simulate
from .benchmark_engine import ALL_TOGGLES, BenchmarkEngine
from .classification_engine import ClassificationEngine
from .config_loader import load_config
from .exceptions import (
    ClassBenchParseError,
    ClassifierError,
    TraceParseError,
    VerificationMismatch,
)
from .memory_layout import layout, load_image, memory_report, store_image
from .ruleset import (
    NO_MATCH,
    PROFILES,
    classify_linear,
    format_classbench,
    format_trace,
    gen_synthetic,
    gen_trace,
    parse_classbench,
    parse_trace,
)
from .tree_builder import BuildConfig, build, tree_stats

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

REPORT_SCHEMA = 'pcut-report/1'


def _banner(title: str):
    click.echo("=" * 70)
    click.echo(title)
    click.echo("=" * 70)


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n" if text else "")


def _report(command: str, config: Dict[str, Any], result: Dict[str, Any],
            build_seconds: Optional[float] = None) -> str:
    document = {'schema': REPORT_SCHEMA, 'command': command, 'config': config, 'result': result}
    if build_seconds is not None:
        document['build_seconds'] = round(build_seconds, 4)
    return json.dumps(document, indent=2)


def _read_text(path: str, error: type) -> str:
    """Read a UTF-8 text file, reporting undecodable bytes as a parse error."""
    data = Path(path).read_bytes()
    try:
        return data.decode('utf-8')
    except UnicodeDecodeError as e:
        line_no = data[:e.start].count(b'\n') + 1
        raise error(f"{path}: byte 0x{data[e.start]:02x} is not valid UTF-8", line_no)


def _fail(action: str, e: Exception):
    """Report an error and exit with the code of a toolchain error, or abort."""
    if isinstance(e, ClassifierError):
        logger.error(f"{action} failed: {e}")
        click.echo(f"Error: {e}", err=True)
        raise SystemExit(e.exit_code)
    logger.error(f"{action} failed: {e}", exc_info=True)
    click.echo(f"Error: {e}", err=True)
    raise click.Abort()


def _stats_table(stats: Dict[str, Any]) -> str:
    return tabulate([[key, value] for key, value in stats.items()],
                    headers=['Metric', 'Value'], tablefmt='grid')


@click.group()
@click.version_option(version='1.0.0')
@click.option('--config-dir', type=click.Path(file_okay=False), default=None,
              help='Directory holding config.yaml / config.local.yaml')
@click.option('--verbose', '-v', is_flag=True, help='Enable debug logging')
@click.pass_context
def cli(ctx: click.Context, config_dir: Optional[str], verbose: bool):
    """
    Packet Classifier Toolchain

    Builds pre-cut decision trees from ClassBench rulesets, lays them out as
    memory images, classifies traces and simulates the accelerator.
    """
    config = load_config(Path(config_dir) if config_dir else None)
    logging.getLogger().setLevel(logging.DEBUG if verbose else config.get_log_level())
    ctx.obj = config


@cli.command('build')
@click.option('--rules', '-r', type=click.Path(exists=True, dir_okay=False), required=True,
              help='ClassBench ruleset file')
@click.option('--out', '-o', type=click.Path(dir_okay=False), required=True,
              help='Output image file')
@click.option('--binth', type=int, default=None, help='Leaf rule threshold')
@click.option('--spfac', type=float, default=None, help='Space factor for cut selection')
@click.option('--index-bits', type=int, default=None, help='Cap on child index bits (1-15)')
@click.option('--no-merge', is_flag=True, help='Disable node merging')
@click.option('--no-overlap', is_flag=True, help='Disable rule-overlap pruning')
@click.option('--no-push', is_flag=True, help='Disable pushing common rules upward')
@click.option('--json', 'as_json', is_flag=True, help='Emit a JSON report')
@click.pass_obj
def build_cmd(config, rules: str, out: str, binth: Optional[int], spfac: Optional[float],
              index_bits: Optional[int], no_merge: bool, no_overlap: bool, no_push: bool,
              as_json: bool):
    """Build a decision tree and write its memory image."""
    try:
        base = config.get_build_config()
        build_config = BuildConfig(
            binth=base.binth if binth is None else binth,
            spfac=base.spfac if spfac is None else spfac,
            index_bit_cap=base.index_bit_cap if index_bits is None else index_bits,
            merge=base.merge and not no_merge,
            overlap=base.overlap and not no_overlap,
            push=base.push and not no_push,
            max_replication=base.max_replication,
        )

        ruleset = parse_classbench(_read_text(rules, ClassBenchParseError))
        start = time.perf_counter()
        tree = build(ruleset, build_config)
        build_seconds = time.perf_counter() - start
        image = layout(tree)
        store_image(image, Path(out))

        stats = tree_stats(tree)
        report = memory_report(image)

        if as_json:
            click.echo(_report('build', asdict(build_config),
                               {'tree': stats, 'memory': report}, build_seconds))
            return

        _banner("TREE STATISTICS")
        click.echo(_stats_table(stats))
        click.echo()
        _banner("MEMORY IMAGE")
        rows = [[kind, words] for kind, words in report['breakdown'].items()]
        rows.append(['TOTAL words', report['words']])
        rows.append(['TOTAL bytes', report['bytes']])
        click.echo(tabulate(rows, headers=['Word Kind', 'Count'], tablefmt='grid'))
        click.echo()
        click.echo(f"Image written to: {out} (built in {build_seconds:.2f}s)")

    except Exception as e:
        _fail("Build", e)


@cli.command('classify')
@click.option('--image', '-i', type=click.Path(exists=True, dir_okay=False), required=True,
              help='Memory image file')
@click.option('--trace', '-t', type=click.Path(exists=True, dir_okay=False), required=True,
              help='Packet trace file')
@click.option('--rules', '-r', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Ruleset for checking against linear search')
@click.option('--verify', is_flag=True, help='Fail on any disagreement with expected ids')
@click.option('--json', 'as_json', is_flag=True, help='Emit a JSON report')
def classify_cmd(image: str, trace: str, rules: Optional[str], verify: bool, as_json: bool):
    """Classify every packet of a trace; print one line per packet."""
    try:
        engine = ClassificationEngine(load_image(Path(image)))
        entries = parse_trace(_read_text(trace, TraceParseError))
        ruleset = parse_classbench(_read_text(rules, ClassBenchParseError)) if rules else None

        results = engine.batch_classify([entry.header for entry in entries])

        mismatches = checked = 0
        if verify:
            for entry, result in zip(entries, results):
                wanted = []
                if entry.expected is not None:
                    wanted.append(None if entry.expected == NO_MATCH else entry.expected)
                if ruleset is not None:
                    wanted.append(classify_linear(ruleset, entry.header))
                if wanted:
                    checked += 1
                    if any(result.matched != w for w in wanted):
                        mismatches += 1
                        logger.warning(f"Packet {entry.header}: got {result.matched}, want {wanted}")

        if as_json:
            click.echo(_report('classify', {'image': image, 'trace': trace, 'verify': verify}, {
                'matches': [r.matched for r in results],
                'memory_accesses': sum(r.memory_accesses for r in results),
                'checked': checked,
                'mismatches': mismatches,
            }))
        else:
            for index, result in enumerate(results):
                click.echo(f"{index}\t{'-' if result.matched is None else result.matched}")

        if mismatches:
            raise VerificationMismatch(mismatches, checked)
        if verify:
            logger.info(f"Verified {checked} packets")

    except Exception as e:
        _fail("Classification", e)


@cli.command('sim')
@click.option('--image', '-i', type=click.Path(exists=True, dir_okay=False), required=True,
              help='Memory image file')
@click.option('--trace', '-t', type=click.Path(exists=True, dir_okay=False), required=True,
              help='Packet trace file')
@click.option('--engines', type=int, default=None, help='Classification engines')
@click.option('--clock-mhz', type=float, default=None, help='Engine clock in MHz')
@click.option('--reorder', type=int, default=None, help='Reorder sorter depth')
@click.option('--json', 'as_json', is_flag=True, help='Emit a JSON report')
@click.pass_obj
def sim_cmd(config, image: str, trace: str, engines: Optional[int], clock_mhz: Optional[float],
            reorder: Optional[int], as_json: bool):
    """Simulate the accelerator on a trace."""
    try:
        base = config.get_accelerator_config()
        accel = AcceleratorConfig(
            engines=base.engines if engines is None else engines,
            reorder_depth=base.reorder_depth if reorder is None else reorder,
            clock_mhz=base.clock_mhz if clock_mhz is None else clock_mhz,
        )
        entries = parse_trace(_read_text(trace, TraceParseError))
        _, stats = simulate(load_image(Path(image)), [e.header for e in entries], accel)

        if as_json:
            click.echo(_report('sim', asdict(accel), stats.to_dict()))
            return

        _banner("ACCELERATOR SIMULATION")
        summary = stats.to_dict()
        busy = summary.pop('engine_busy')
        click.echo(_stats_table(summary))
        click.echo()
        click.echo(tabulate(
            [[n, f"{fraction:.1%}"] for n, fraction in enumerate(busy)],
            headers=['Engine', 'Busy'],
            tablefmt='grid'
        ))

    except Exception as e:
        _fail("Simulation", e)


@cli.command('gen')
@click.option('--rules', 'count', type=int, required=True, help='Number of rules')
@click.option('--profile', '-p', type=click.Choice(sorted(PROFILES)), default=None,
              help='Generation profile')
@click.option('--seed', '-s', type=int, default=None, help='Random seed')
@click.option('--out', '-o', type=click.Path(dir_okay=False), required=True,
              help='Output ruleset file')
@click.option('--trace', 'trace_len', type=int, default=None, help='Also generate M trace packets')
@click.option('--trace-out', type=click.Path(dir_okay=False), default=None,
              help='Trace file (default: <out> with .trace suffix)')
@click.pass_obj
def gen_cmd(config, count: int, profile: Optional[str], seed: Optional[int], out: str,
            trace_len: Optional[int], trace_out: Optional[str]):
    """Generate a synthetic ruleset and optionally a matching trace."""
    try:
        settings = config.get_generation_settings()
        profile = profile or settings.get('default_profile', 'acl-like')
        seed = settings.get('default_seed', 1) if seed is None else seed

        ruleset = gen_synthetic(seed, count, profile)
        out_path = Path(out)
        _write_text(out_path, format_classbench(ruleset))
        click.echo(f"Wrote {len(ruleset)} {profile} rules to: {out_path}")

        if trace_len is not None:
            trace_path = Path(trace_out) if trace_out else out_path.with_suffix('.trace')
            trace = gen_trace(ruleset, seed, trace_len)
            _write_text(trace_path, format_trace(trace))
            click.echo(f"Wrote {len(trace)} packets to: {trace_path}")

        if len(ruleset):
            summary = ruleset.profile_summary()
            click.echo(tabulate([[k, v] for k, v in summary.items()],
                                headers=['Field', 'Value'], tablefmt='grid'))

    except Exception as e:
        _fail("Generation", e)


@cli.command('bench')
@click.option('--profile', '-p', 'profiles', multiple=True, type=click.Choice(sorted(PROFILES)),
              help='Profiles to sweep (repeatable)')
@click.option('--size', '-n', 'sizes', multiple=True, type=int, help='Ruleset sizes (repeatable)')
@click.option('--seed', '-s', 'seeds', multiple=True, type=int, help='Seeds (repeatable)')
@click.option('--headers', type=int, default=None, help='Packets per trace')
@click.option('--all-toggles/--default-toggles', default=True,
              help='Sweep all 8 heuristic combinations or only the configured one')
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False), default=None,
              help='Write the full result table as CSV')
@click.pass_obj
def bench_cmd(config, profiles: Tuple[str, ...], sizes: Tuple[int, ...], seeds: Tuple[int, ...],
              headers: Optional[int], all_toggles: bool, csv_path: Optional[str]):
    """Compare memory and throughput across profiles, sizes and heuristics."""
    try:
        settings = config.get_bench_settings()
        build_config = config.get_build_config()
        toggles = ALL_TOGGLES if all_toggles else [
            (build_config.merge, build_config.overlap, build_config.push)
        ]
        engine = BenchmarkEngine(build_config, config.get_accelerator_config())
        df = engine.run(
            profiles=list(profiles) or settings['profiles'],
            sizes=list(sizes) or settings['sizes'],
            seeds=list(seeds) or settings['seeds'],
            toggles=toggles,
            headers=settings['headers'] if headers is None else headers,
        )

        _banner("BENCHMARK RESULTS")
        click.echo(tabulate(df, headers='keys', tablefmt='grid', showindex=False))
        click.echo()
        _banner("PROFILE SUMMARY")
        click.echo(tabulate(BenchmarkEngine.summarize(df), headers='keys', tablefmt='grid',
                            showindex=False))

        if csv_path:
            Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
            df.to_csv(csv_path, index=False)
            click.echo(f"Results written to: {csv_path}")

        mismatches = int(df['mismatches'].sum()) if not df.empty else 0
        if mismatches:
            raise VerificationMismatch(mismatches, len(df))

    except Exception as e:
        _fail("Benchmark", e)


@cli.command('show-config')
@click.pass_obj
def show_config(config):
    """Display the effective configuration."""
    click.echo(config.display_current_config())


if __name__ == '__main__':
    cli()
