# core/preset_discovery.py

"""Preset discovery: experiment TOML files in the configured search locations."""
import logging
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence

from core.config import Config, preset_search_paths
from core.errors import ConfigError

logger = logging.getLogger(__name__)


class PresetInfo(NamedTuple):
    path: Path
    name: str
    experiment: Optional[str]
    valid: bool
    message: str = ''


class PresetDiscovery:
    """Discovers and describes experiment preset files."""

    def __init__(self, search_locations: Optional[Sequence[Path]] = None):
        self.search_locations = list(search_locations) if search_locations is not None else preset_search_paths()

    def discover_presets(self) -> List[Path]:
        """All *.toml files in the search locations and one level below, sorted by name."""
        presets = []
        for location in self.search_locations:
            try:
                location = Path(location)
                if not location.is_dir():
                    continue
                presets.extend(p for p in location.glob('*.toml') if p.is_file())
                for subdir in location.iterdir():
                    if subdir.is_dir():
                        presets.extend(p for p in subdir.glob('*.toml') if p.is_file())
            except OSError as e:
                logger.warning(f"[CONFIG] cannot scan {location}: {e}")
        return sorted(set(presets), key=lambda p: (p.stem, str(p)))

    def get_preset_info(self, path: Path) -> PresetInfo:
        """Loads and validates one preset; invalid files are reported, not raised."""
        try:
            config = Config(path).validate()
        except ConfigError as e:
            return PresetInfo(path, path.stem, None, False, str(e))
        return PresetInfo(path, path.stem, config.experiment, True)

    def find(self, name: str) -> Optional[Path]:
        """A preset by file stem, or None."""
        for path in self.discover_presets():
            if path.stem == name:
                return path
        return None
