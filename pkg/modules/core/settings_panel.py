"""Settings Panel - Numeric tolerances and run defaults for the lemon toolkit."""

import copy
import os
import yaml
from typing import Dict, Any, Optional

DEFAULT_YAML_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))), "yaml"
)

DEFAULT_SETTINGS: Dict[str, Dict[str, Any]] = {
    'geometry': {
        'residual_tol': 1e-12,
    },
    'billiard': {
        'corner_tol': 1e-9,
        'tangential_tol': 1e-9,
        'near_corner_warn': 1e-7,
    },
    'cfrac': {
        'near_singular': 1e-12,
        'circle_threshold': 1e12,
        'compare_rel': 1e-10,
    },
    'induced': {
        'eta_cap': 1000000,
        'converge_tol': 1e-10,
        'cf_depth': 2000,
    },
    'hyperbolicity': {
        'near_tie': 1e-12,
        'renorm_period': 32,
        'corner_eps': 0.05,
        'period2_tol': 1e-9,
        'chi_zero_tol': 1e-2,
        'lyapunov_batches': 20,
        'largeR_d1': 4.0,
    },
    'cli': {
        'workers': 1,
        'float_digits': 17,
        'default_seed': 7,
        'samples': 2000,
    },
}


def _is_tolerance(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and 0 < x <= 1e-3


def _is_positive_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x >= 1


class SettingsPanel:
    """Reads and updates settings_panel.yaml, falling back to DEFAULT_SETTINGS."""

    def __init__(self, yaml_dir: Optional[str] = None):
        """Initialize settings panel.

        Args:
            yaml_dir: Directory holding settings_panel.yaml. Defaults to the
                LEMON_YAML_DIR environment variable, then the repository yaml/ dir.
        """
        self.yaml_dir = yaml_dir or os.environ.get("LEMON_YAML_DIR") or DEFAULT_YAML_DIR
        self.settings_file = os.path.join(self.yaml_dir, "settings_panel.yaml")

        os.makedirs(self.yaml_dir, exist_ok=True)

        if not os.path.exists(self.settings_file):
            self._initialize_defaults()

    def _load_yaml(self, filepath: str) -> dict:
        """Load YAML file or return an empty structure."""
        if os.path.exists(filepath):
            with open(filepath, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        return {}

    def _save_yaml(self, filepath: str, data: dict) -> None:
        """Save data to YAML file."""
        with open(filepath, 'w', encoding='utf-8') as f:
            yaml.dump(data, f, default_flow_style=False, allow_unicode=True, sort_keys=False)

    def _initialize_defaults(self) -> None:
        """Write the default settings file."""
        self._save_yaml(self.settings_file, copy.deepcopy(DEFAULT_SETTINGS))

    def load_settings(self) -> Dict[str, Any]:
        """Load all settings, with defaults filled in for missing keys.

        Returns:
            Dictionary section -> {key: value}
        """
        merged = copy.deepcopy(DEFAULT_SETTINGS)
        for section, values in self._load_yaml(self.settings_file).items():
            if isinstance(values, dict):
                merged.setdefault(section, {}).update(values)
        return merged

    def get_setting(self, section: str, key: str) -> Any:
        """Get a specific setting value.

        Args:
            section: Settings section (e.g., 'billiard', 'cfrac')
            key: Setting key

        Returns:
            Setting value or None if not found
        """
        return self.load_settings().get(section, {}).get(key)

    def update_setting(self, section: str, key: str, value: Any) -> bool:
        """Update a specific setting after validation.

        Args:
            section: Settings section
            key: Setting key
            value: New value

        Returns:
            True if updated successfully, False if the value was rejected
        """
        return self.update_settings({section: {key: value}})

    def update_settings(self, updates: Dict[str, Dict[str, Any]]) -> bool:
        """Update multiple settings at once.

        Args:
            updates: Dictionary of section -> {key: value} updates

        Returns:
            True if every value validated and was written
        """
        for section, section_updates in updates.items():
            for key, value in section_updates.items():
                ok, _ = self.validate_setting(section, key, value)
                if not ok:
                    return False

        settings = self._load_yaml(self.settings_file)
        for section, section_updates in updates.items():
            settings.setdefault(section, {}).update(section_updates)
        self._save_yaml(self.settings_file, settings)
        return True

    def reset_to_defaults(self, section: Optional[str] = None) -> bool:
        """Reset settings to default values.

        Args:
            section: Optional section to reset. If None, resets all.

        Returns:
            True if reset successfully
        """
        if section is None:
            self._initialize_defaults()
            return True

        if section not in DEFAULT_SETTINGS:
            return False

        current = self._load_yaml(self.settings_file)
        current[section] = copy.deepcopy(DEFAULT_SETTINGS[section])
        self._save_yaml(self.settings_file, current)
        return True

    def validate_setting(self, section: str, key: str, value: Any) -> tuple[bool, str]:
        """Validate a setting value.

        Args:
            section: Settings section
            key: Setting key
            value: Value to validate

        Returns:
            Tuple of (is_valid, error_message)
        """
        validation_rules = {
            'geometry': {
                'residual_tol': _is_tolerance,
            },
            'billiard': {
                'corner_tol': _is_tolerance,
                'tangential_tol': _is_tolerance,
                'near_corner_warn': _is_tolerance,
            },
            'cfrac': {
                'near_singular': _is_tolerance,
                'compare_rel': _is_tolerance,
                'circle_threshold': lambda x: isinstance(x, (int, float)) and x >= 1,
            },
            'induced': {
                'eta_cap': _is_positive_int,
                'cf_depth': _is_positive_int,
                'converge_tol': _is_tolerance,
            },
            'hyperbolicity': {
                'near_tie': _is_tolerance,
                'period2_tol': _is_tolerance,
                'renorm_period': _is_positive_int,
                'lyapunov_batches': lambda x: isinstance(x, int) and x >= 2,
                'corner_eps': lambda x: isinstance(x, (int, float)) and 0 < x < 1,
                'chi_zero_tol': lambda x: isinstance(x, (int, float)) and x > 0,
                'largeR_d1': lambda x: isinstance(x, (int, float)) and x > 0,
            },
            'cli': {
                'workers': _is_positive_int,
                'samples': _is_positive_int,
                'float_digits': lambda x: isinstance(x, int) and 6 <= x <= 17,
                'default_seed': lambda x: isinstance(x, int) and x >= 0,
            },
        }

        if section in validation_rules and key in validation_rules[section]:
            validator = validation_rules[section][key]
            if not validator(value):
                return False, f"Invalid value for {section}.{key}"

        return True, ""


def load_settings(yaml_dir: Optional[str] = None) -> Dict[str, Any]:
    """Wrapper function to load settings."""
    return SettingsPanel(yaml_dir).load_settings()


def get_setting(section: str, key: str, yaml_dir: Optional[str] = None) -> Any:
    """Wrapper function to get a setting."""
    return SettingsPanel(yaml_dir).get_setting(section, key)
