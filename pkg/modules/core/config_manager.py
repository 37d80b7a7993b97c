"""Configuration Manager - Global access to toolkit settings."""

import os
from modules.core.settings_panel import SettingsPanel
from typing import Any, Dict, Optional


class ConfigManager:
    """Singleton-like manager for accessing toolkit configuration."""

    _instance = None
    _settings_panel = None
    _cache: Optional[Dict[str, Dict[str, Any]]] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(ConfigManager, cls).__new__(cls)
            cls._settings_panel = SettingsPanel()
            cls._cache = cls._settings_panel.load_settings()
        return cls._instance

    def get(self, section: str, key: str, default: Any = None) -> Any:
        """Get a configuration value.

        Args:
            section: Settings section (e.g., 'billiard', 'induced')
            key: Setting key
            default: Default value if not found

        Returns:
            Configuration value or default
        """
        if section == 'cli' and key == 'workers' and os.environ.get('LEMON_WORKERS'):
            return int(os.environ['LEMON_WORKERS'])
        value = self._cache.get(section, {}).get(key)
        return value if value is not None else default

    def get_all(self) -> Dict:
        """Get all configuration settings.

        Returns:
            Dictionary with all settings
        """
        return self._settings_panel.load_settings()

    def reload(self, yaml_dir: Optional[str] = None):
        """Reload settings from file.

        Args:
            yaml_dir: Optional directory to switch to
        """
        ConfigManager._settings_panel = SettingsPanel(yaml_dir)
        ConfigManager._cache = ConfigManager._settings_panel.load_settings()


# Global instance
config = ConfigManager()
