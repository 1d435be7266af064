"""
Benchmark Engine
Memory and throughput comparison across ruleset profiles, sizes and
heuristic toggles, with an oracle check on every configuration.
"""

import dataclasses
import itertools
import logging
import time
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .accelerator_sim import AcceleratorConfig, AcceleratorSimulator
from .classification_engine import ClassificationEngine
from .memory_layout import layout
from .ruleset import NO_MATCH, PROFILES, Ruleset, TraceEntry, gen_synthetic, gen_trace
from .tree_builder import BuildConfig, build, tree_stats

logger = logging.getLogger(__name__)

Toggle = Tuple[bool, bool, bool]

# (merge, overlap, push)
ALL_TOGGLES: List[Toggle] = list(itertools.product((True, False), repeat=3))


def toggle_label(toggle: Toggle) -> str:
    names = [name for name, on in zip(('merge', 'overlap', 'push'), toggle) if on]
    return '+'.join(names) if names else 'none'


class BenchmarkEngine:
    """Sweep generated rulesets through build, layout, classification and simulation"""

    COLUMNS = [
        'profile', 'size', 'seed', 'toggles', 'nodes', 'stored_rules', 'replication',
        'max_depth', 'words', 'bytes', 'bytes_per_rule', 'build_seconds',
        'mean_accesses', 'mpps', 'mismatches',
    ]

    def __init__(self, build_config: Optional[BuildConfig] = None,
                 accelerator: Optional[AcceleratorConfig] = None):
        self.build_config = build_config or BuildConfig()
        self.accelerator = accelerator or AcceleratorConfig()

    def _config_for(self, toggle: Toggle) -> BuildConfig:
        merge, overlap, push = toggle
        return dataclasses.replace(self.build_config, merge=merge, overlap=overlap, push=push)

    def run_one(self, ruleset: Ruleset, trace: Sequence[TraceEntry], profile: str, seed: int,
                toggle: Toggle) -> Dict[str, object]:
        """Measure one toggle combination on a generated ruleset and its trace."""
        size = len(ruleset)
        start = time.perf_counter()
        tree = build(ruleset, self._config_for(toggle))
        build_seconds = time.perf_counter() - start
        stats = tree_stats(tree)
        image = layout(tree)

        engine = ClassificationEngine(image)
        packet_headers = [entry.header for entry in trace]
        results, sim = AcceleratorSimulator(engine, self.accelerator).run(packet_headers)

        mismatches = 0
        for entry, result in zip(trace, results):
            expected = None if entry.expected == NO_MATCH else entry.expected
            if result.matched != expected:
                mismatches += 1
        if mismatches:
            logger.warning(
                f"{mismatches} oracle mismatches for {profile} n={size} seed={seed} "
                f"toggles={toggle_label(toggle)}"
            )

        accesses = [r.memory_accesses for r in results]
        return {
            'profile': profile,
            'size': size,
            'seed': seed,
            'toggles': toggle_label(toggle),
            'nodes': stats['nodes'],
            'stored_rules': stats['rules'],
            'replication': stats['replication'],
            'max_depth': stats['depth'],
            'words': len(image.words),
            'bytes': image.size_bytes,
            'bytes_per_rule': image.size_bytes / size if size else 0.0,
            'build_seconds': round(build_seconds, 4),
            'mean_accesses': float(np.mean(accesses)) if accesses else 0.0,
            'mpps': sim.mpps,
            'mismatches': mismatches,
        }

    def run(self, profiles: Sequence[str], sizes: Sequence[int], seeds: Sequence[int],
            toggles: Iterable[Toggle] = ALL_TOGGLES, headers: int = 1000) -> pd.DataFrame:
        """
        Run the full sweep.

        Args:
            profiles: Generation profile names
            sizes: Ruleset sizes
            seeds: Generation seeds
            toggles: (merge, overlap, push) combinations
            headers: Packets per trace

        Returns:
            DataFrame with one row per (profile, size, seed, toggle)
        """
        for profile in profiles:
            if profile not in PROFILES:
                raise ValueError(f"Unknown profile '{profile}'. Valid: {', '.join(PROFILES)}")

        toggles = list(toggles)
        rows = []
        for profile, size, seed in itertools.product(profiles, sizes, seeds):
            logger.info(f"Benchmarking {profile} n={size} seed={seed}")
            ruleset = gen_synthetic(seed, size, profile)
            trace = gen_trace(ruleset, seed + 1, headers)
            for toggle in toggles:
                rows.append(self.run_one(ruleset, trace, profile, seed, toggle))
        return pd.DataFrame(rows, columns=self.COLUMNS)

    @staticmethod
    def summarize(df: pd.DataFrame) -> pd.DataFrame:
        """Per-profile mean bytes per rule and the toggle combination with the smallest image."""
        if df.empty:
            return pd.DataFrame(columns=['profile', 'mean_bytes_per_rule', 'best_toggles',
                                         'best_bytes', 'mismatches'])
        means = df.groupby('profile')['bytes_per_rule'].mean()
        per_toggle = df.groupby(['profile', 'toggles'])['bytes'].mean().reset_index()
        best = per_toggle.loc[per_toggle.groupby('profile')['bytes'].idxmin()].set_index('profile')
        mismatches = df.groupby('profile')['mismatches'].sum()
        return pd.DataFrame({
            'profile': means.index,
            'mean_bytes_per_rule': means.round(2).values,
            'best_toggles': best.loc[means.index, 'toggles'].values,
            'best_bytes': best.loc[means.index, 'bytes'].values,
            'mismatches': mismatches.loc[means.index].values,
        })
