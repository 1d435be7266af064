#!/usr/bin/env python3
"""
Packet Classifier Toolchain - Main Entry Point

End-to-end demo: generate a synthetic ruleset and trace, build the pre-cut
decision tree, lay it out as a memory image, classify the trace against the
linear-search oracle and simulate the accelerator.

Usage:
    python main.py                                   # Run the demo
    python -m src.cli gen --rules 1000 -o out/acl.rules --trace 10000
    python -m src.cli --help                         # Show all CLI options
"""

import sys
from pathlib import Path
import logging

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from src.accelerator_sim import simulate
from src.classification_engine import ClassificationEngine
from src.config_loader import load_config
from src.memory_layout import layout, memory_report, store_image
from src.ruleset import NO_MATCH, gen_synthetic, gen_trace
from src.tree_builder import build, tree_stats

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

DEMO_RULES = 1000
DEMO_PACKETS = 5000


def main():
    """Run the full pipeline on one generated ruleset and report the results."""
    print("=" * 80)
    print(" " * 25 + "PACKET CLASSIFIER TOOLCHAIN")
    print("=" * 80)
    print()

    try:
        logger.info("Loading configuration...")
        config = load_config()
        build_config = config.get_build_config()
        accel = config.get_accelerator_config()
        settings = config.get_generation_settings()
        profile = settings.get('default_profile', 'acl-like')
        seed = settings.get('default_seed', 1)

        print("Configuration Loaded:")
        print("-" * 80)
        print(f"  binth:           {build_config.binth}")
        print(f"  spfac:           {build_config.spfac}")
        print(f"  index bit cap:   {build_config.index_bit_cap}")
        print(f"  heuristics:      merge={build_config.merge} overlap={build_config.overlap} "
              f"push={build_config.push}")
        print(f"  accelerator:     {accel.engines} engines, {accel.clock_mhz} MHz, "
              f"sorter depth {accel.reorder_depth}")
        print("-" * 80)
        print()

        print(f"Generating {DEMO_RULES} {profile} rules (seed {seed})...")
        ruleset = gen_synthetic(seed, DEMO_RULES, profile)
        trace = gen_trace(ruleset, seed, DEMO_PACKETS)
        print(f"Generated {len(trace)} trace packets")
        print()

        print("Building decision tree...")
        tree = build(ruleset, build_config)
        stats = tree_stats(tree)
        image = layout(tree)
        report = memory_report(image)

        print("=" * 80)
        print(" " * 32 + "TREE SUMMARY")
        print("=" * 80)
        print(f"\nStored nodes:              {stats['internal'] + stats['leaves']}")
        print(f"Empty children:            {stats['empty']}")
        print(f"Maximum depth:             {stats['depth']}")
        print(f"Stored rule entries:       {stats['rules']} (replication {stats['replication']})")
        print(f"Oversized leaves:          {stats['oversized']}")
        print(f"Memory image:              {report['words']} words, {report['bytes']:,} bytes")
        print(f"Bytes per rule:            {report['bytes'] / DEMO_RULES:.1f}")
        for kind, words in report['breakdown'].items():
            print(f"  {kind:24} {words} words")

        print("\n" + "=" * 80)
        print(" " * 28 + "CLASSIFICATION CHECK")
        print("=" * 80)

        engine = ClassificationEngine(image)
        results = engine.batch_classify([entry.header for entry in trace])
        mismatches = sum(
            1 for entry, result in zip(trace, results)
            if result.matched != (None if entry.expected == NO_MATCH else entry.expected)
        )
        accesses = [r.memory_accesses for r in results]
        print(f"\nPackets classified:        {len(results)}")
        print(f"Oracle mismatches:         {mismatches}")
        print(f"Mean memory accesses:      {sum(accesses) / len(accesses):.2f}")
        print(f"Worst-case accesses:       {max(accesses)}")

        print("\n" + "=" * 80)
        print(" " * 28 + "ACCELERATOR SIMULATION")
        print("=" * 80)

        _, sim = simulate(image, [entry.header for entry in trace], accel)
        print(f"\nCycles:                    {sim.cycles}")
        print(f"Packets per cycle:         {sim.packets_per_cycle:.3f}")
        print(f"Throughput:                {sim.mpps:.1f} Mpps at {accel.clock_mhz} MHz")
        print(f"Mean / max latency:        {sim.mean_latency:.1f} / {sim.max_latency} cycles")
        print(f"Peak packets in flight:    {sim.max_in_flight}")

        output_image = Path('output/demo.img')
        store_image(image, output_image)
        print(f"\nImage saved to: {output_image}")

        print("\n" + "=" * 80)
        print(" " * 32 + "DEMO COMPLETE!")
        print("=" * 80)
        print("\nFor the full toolchain, use the CLI:")
        print("  python -m src.cli build -r rules.txt -o out.img")
        print("  python -m src.cli classify -i out.img -t rules.trace --verify")
        print("  python -m src.cli sim -i out.img -t rules.trace --json")
        print("  python -m src.cli bench -p acl-like -n 100")
        print()

        return 1 if mismatches else 0

    except Exception as e:
        logger.error(f"Demo failed: {e}", exc_info=True)
        print(f"\nError during demo: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
