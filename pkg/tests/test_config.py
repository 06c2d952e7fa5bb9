import pytest

from core.config import Config, load_config, preset_search_paths
from core.errors import ConfigError


def _write(tmp_path, text):
    path = tmp_path / 'experiment.toml'
    path.write_text(text, encoding='utf-8')
    return path


BASE = '''
experiment = "sharp-norm"

[grid]
N = 16
'''


def test_defaults_fill_missing_sections(tmp_path):
    config = load_config(_write(tmp_path, BASE), environ={})
    assert config.experiment == 'sharp-norm'
    assert config.name == 'sharp-norm'
    assert config.grid.N == 16 and config.grid.n == 1
    assert config.sweep.h_list == tuple(2.0 ** -k for k in range(4, 11))
    assert config.output.format == 'both'


def test_unknown_top_level_key(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, BASE + '\n[extras]\nx = 1\n'), environ={})
    assert info.value.field == 'extras'


@pytest.mark.parametrize('text, field', [
    ('experiment = "sharp-norm"\n[grid]\nN = 15\n', 'grid.N'),
    ('experiment = "sharp-norm"\n[grid]\nn = 3\n', 'grid.n'),
    ('experiment = "stability"\n[sweep]\nr = 1.0\n', 'sweep.r'),
    ('experiment = "consistency"\n[sweep]\nh_list = [0.5, 0.25, 0.125]\n', 'sweep.h_list'),
    ('experiment = "convergence-rn"\n[sweep]\nN_list = [2, 4]\n', 'sweep.N_list'),
    ('experiment = "sharp-norm"\n[symbol]\nalpha = 1.5\n', 'symbol.alpha'),
    ('experiment = "sharp-norm"\n[output]\nformat = "xml"\n', 'output.format'),
    ('experiment = "pullback-residual"\n[pullback]\nkinds = ["shear"]\n', 'pullback.kinds[0]'),
    ('experiment = "sharp-norm"\n[grid]\nspacing = 0.1\n', 'grid.spacing'),
    ('experiment = "nothing"\n', 'experiment'),
    ('experiment = "convergence-manifold"\n[manifold]\nprofile = "cubic"\n', 'manifold.profile'),
    ('experiment = "convergence-manifold"\n[manifold]\nprofile = "dyadic"\n', 'manifold.alpha'),
    ('experiment = "convergence-manifold"\n[manifold]\nprofile = "dyadic"\nalpha = 0.5\nincrement = 0.3\n',
     'manifold.increment'),
])
def test_invalid_fields_are_named(tmp_path, text, field):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, text), environ={})
    assert info.value.field == field


def test_environment_and_overrides(tmp_path):
    path = _write(tmp_path, BASE)
    environ = {'MULTIPRODUCT_SEED': '7', 'MULTIPRODUCT_FORMAT': 'json'}
    config = load_config(path, environ=environ)
    assert config.seed == 7
    assert config.output.format == 'json'
    config = load_config(path, {'seed': 11, 'output.format': None}, environ=environ)
    assert config.seed == 11
    assert config.output.format == 'json'


def test_config_get_and_set():
    config = Config()
    assert config.get('grid.N') == 64
    assert config.get('grid.missing', 'fallback') == 'fallback'
    config.set('sweep.T', 0.25)
    assert config.get('sweep.T') == 0.25


def test_to_dict_is_plain_data(tmp_path):
    summary = load_config(_write(tmp_path, BASE), environ={}).to_dict()
    assert summary['grid']['N'] == 16
    assert isinstance(summary['sweep']['h_list'], list)


def test_manifold_profile_defaults_to_power(tmp_path):
    config = load_config(_write(tmp_path, BASE), environ={})
    assert config.manifold.profile == 'power'
    text = 'experiment = "convergence-manifold"\n[manifold]\nprofile = "dyadic"\nalpha = 0.5\nincrement = 0.25\n'
    assert load_config(_write(tmp_path, text), environ={}).manifold.profile == 'dyadic'


def test_extra_preset_directories(tmp_path):
    paths = preset_search_paths({'MULTIPRODUCT_PRESETS': str(tmp_path)})
    assert paths[0].name == 'presets'
    assert paths[-1] == tmp_path
