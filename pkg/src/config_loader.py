"""
Configuration Loader Module
Loads and manages configuration for the packet classifier toolchain.

This module provides functionality to load configuration from YAML files,
including tree construction knobs, the accelerator shape, synthetic
generation defaults and benchmark sweeps.
"""

import yaml
from pathlib import Path
from typing import Optional, Dict, Any, List
import logging
from dataclasses import asdict

from .tree_builder import BuildConfig
from .accelerator_sim import AcceleratorConfig

logger = logging.getLogger(__name__)


class ConfigLoader:
    """
    Loads and manages configuration from YAML files.

    The configuration is loaded from YAML files with a cascading approach:
    1. Default configuration (built-in)
    2. Global configuration file (config/config.yaml)
    3. User-specific configuration (config/config.local.yaml)
    4. Runtime overrides (set_config_value, CLI flags)
    """

    DEFAULT_CONFIG_DIR = Path('config')
    DEFAULT_CONFIG_FILE = 'config.yaml'
    LOCAL_CONFIG_FILE = 'config.local.yaml'

    DEFAULT_BUILD = asdict(BuildConfig())
    DEFAULT_ACCELERATOR = asdict(AcceleratorConfig())

    DEFAULT_GENERATION = {
        'default_profile': 'acl-like',
        'default_seed': 1,
    }

    DEFAULT_BENCH = {
        'profiles': ['acl-like', 'fw-like', 'ipc-like'],
        'sizes': [100, 1000],
        'seeds': [1],
        'headers': 1000,
    }

    def __init__(self, config_dir: Optional[Path] = None):
        """
        Initialize the configuration loader.

        Args:
            config_dir: Directory containing configuration files.
                       Defaults to ./config
        """
        self.config_dir = Path(config_dir) if config_dir else self.DEFAULT_CONFIG_DIR
        self.config: Dict[str, Any] = {}
        self._load_configuration()

    def _load_configuration(self):
        """Load defaults, then config.yaml, then config.local.yaml."""
        self.config = {
            'build': self.DEFAULT_BUILD.copy(),
            'accelerator': self.DEFAULT_ACCELERATOR.copy(),
            'generation': self.DEFAULT_GENERATION.copy(),
            'bench': {k: (list(v) if isinstance(v, list) else v)
                      for k, v in self.DEFAULT_BENCH.items()},
            'logging': {'level': 'INFO'},
        }

        global_config_path = self.config_dir / self.DEFAULT_CONFIG_FILE
        if global_config_path.exists():
            self._merge_config_file(global_config_path)
            logger.info(f"Loaded global configuration from {global_config_path}")

        local_config_path = self.config_dir / self.LOCAL_CONFIG_FILE
        if local_config_path.exists():
            self._merge_config_file(local_config_path)
            logger.info(f"Loaded local configuration from {local_config_path}")

    def _merge_config_file(self, config_path: Path):
        """
        Load and merge configuration from a YAML file.

        Args:
            config_path: Path to the YAML configuration file
        """
        try:
            with open(config_path, 'r') as f:
                file_config = yaml.safe_load(f)

            if file_config:
                self._deep_merge(self.config, file_config)

        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML config file {config_path}: {e}")
            raise
        except Exception as e:
            logger.error(f"Error loading config file {config_path}: {e}")
            raise

    def _deep_merge(self, base: Dict, update: Dict):
        for key, value in update.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._deep_merge(base[key], value)
            else:
                base[key] = value

    def get_build_config(self) -> BuildConfig:
        """
        Get tree construction settings.

        Returns:
            BuildConfig with configured knobs

        Raises:
            ValueError: If a knob is out of range
        """
        build = self.config.get('build', self.DEFAULT_BUILD)
        return BuildConfig(
            binth=int(build.get('binth', 8)),
            spfac=float(build.get('spfac', 4.0)),
            index_bit_cap=int(build.get('index_bit_cap', 8)),
            merge=bool(build.get('merge', True)),
            overlap=bool(build.get('overlap', True)),
            push=bool(build.get('push', True)),
            max_replication=float(build.get('max_replication', 4.0)),
        )

    def get_accelerator_config(self) -> AcceleratorConfig:
        """
        Get the simulated accelerator shape.

        Raises:
            ValueError: If engines < 1, reorder_depth < engines or clock <= 0
        """
        accel = self.config.get('accelerator', self.DEFAULT_ACCELERATOR)
        config = AcceleratorConfig(
            engines=int(accel.get('engines', 4)),
            reorder_depth=int(accel.get('reorder_depth', 16)),
            clock_mhz=float(accel.get('clock_mhz', 110.0)),
        )
        if config.reorder_depth != 16:
            logger.warning(f"Reorder depth {config.reorder_depth} differs from the 16-register sorter")
        return config

    def get_generation_settings(self) -> Dict[str, Any]:
        return self.config.get('generation', self.DEFAULT_GENERATION)

    def get_bench_settings(self) -> Dict[str, List]:
        return self.config.get('bench', self.DEFAULT_BENCH)

    def get_log_level(self) -> int:
        level = str(self.get_config_value('logging.level', 'INFO')).upper()
        return getattr(logging, level, logging.INFO)

    def get_config_value(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value by key.

        Supports dot notation for nested keys (e.g., 'build.binth')

        Args:
            key: Configuration key (supports dot notation)
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def set_config_value(self, key: str, value: Any):
        """
        Set a configuration value at runtime.

        Supports dot notation for nested keys.
        """
        keys = key.split('.')
        config = self.config

        for k in keys[:-1]:
            if k not in config:
                config[k] = {}
            config = config[k]

        config[keys[-1]] = value

    def save_config(self, output_path: Optional[Path] = None):
        """
        Save current configuration to a YAML file.

        Args:
            output_path: Path to save configuration.
                        Defaults to config/config.local.yaml
        """
        if output_path is None:
            output_path = self.config_dir / self.LOCAL_CONFIG_FILE
        output_path = Path(output_path)

        output_path.parent.mkdir(parents=True, exist_ok=True)

        try:
            with open(output_path, 'w') as f:
                yaml.dump(self.config, f, default_flow_style=False, sort_keys=False)

            logger.info(f"Configuration saved to {output_path}")

        except Exception as e:
            logger.error(f"Error saving configuration to {output_path}: {e}")
            raise

    def display_current_config(self) -> str:
        """
        Get a formatted string of the current configuration.

        Returns:
            Formatted configuration string
        """
        lines = ["Current Configuration:", "=" * 60]

        lines.append("\nTree Construction:")
        for key, value in self.config.get('build', {}).items():
            lines.append(f"  {key:20} {value}")

        lines.append("\nAccelerator:")
        accel = self.config.get('accelerator', {})
        for key, value in accel.items():
            if key == 'clock_mhz':
                lines.append(f"  {key:20} {float(value):.1f} MHz")
            else:
                lines.append(f"  {key:20} {value}")

        lines.append("\nGeneration:")
        for key, value in self.config.get('generation', {}).items():
            lines.append(f"  {key:20} {value}")

        lines.append("\nBenchmark Sweep:")
        for key, value in self.config.get('bench', {}).items():
            lines.append(f"  {key:20} {value}")

        lines.append("=" * 60)

        return "\n".join(lines)


def load_config(config_path: Optional[Path] = None) -> ConfigLoader:
    """
    Convenience function to load configuration.

    Args:
        config_path: Optional path to configuration directory

    Returns:
        Configured ConfigLoader instance
    """
    return ConfigLoader(config_dir=config_path)
