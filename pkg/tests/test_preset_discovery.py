from pathlib import Path

from core.preset_discovery import PresetDiscovery

PRESETS = Path(__file__).resolve().parent.parent / 'presets'


def test_shipped_presets_are_valid():
    discovery = PresetDiscovery([PRESETS])
    presets = discovery.discover_presets()
    assert presets
    for path in presets:
        info = discovery.get_preset_info(path)
        assert info.valid, info.message


def test_invalid_presets_are_reported(tmp_path):
    (tmp_path / 'broken.toml').write_text('experiment = "stability"\n[grid]\nN = 9\n', encoding='utf-8')
    nested = tmp_path / 'more'
    nested.mkdir()
    (nested / 'nested.toml').write_text('experiment = "sharp-norm"\n', encoding='utf-8')
    discovery = PresetDiscovery([tmp_path, tmp_path / 'absent'])
    assert [path.stem for path in discovery.discover_presets()] == ['broken', 'nested']
    info = discovery.get_preset_info(tmp_path / 'broken.toml')
    assert not info.valid and 'grid.N' in info.message
    assert discovery.find('nested') == nested / 'nested.toml'
    assert discovery.find('missing') is None
