import json

from core.data_structures import CSV_COLUMNS, ExperimentResult, ResultRow
from utils.file_utils import emit, format_duration, read_csv, write_csv, write_json, write_timing


def _result(rows):
    return ExperimentResult('sharp-norm', 'demo', rows, [], [], {'passed': True, 'constant': float('nan')}, [])


def test_empty_rows_give_a_header_only_csv(tmp_path):
    path = write_csv([], tmp_path / 'results.csv')
    assert path.read_text(encoding='utf-8') == ','.join(CSV_COLUMNS) + '\n'
    assert read_csv(path) == []


def test_csv_rows_read_back(tmp_path):
    rows = [ResultRow(0.0625, 1.5e-3, 'final-time', 0.0, 0.5, 1.0, 1, 64)]
    assert read_csv(write_csv(rows, tmp_path / 'results.csv')) == rows


def test_json_is_deterministic_and_strict(tmp_path):
    first = write_json({'b': 1.0, 'a': float('inf')}, tmp_path / 'first.json').read_bytes()
    second = write_json({'a': float('inf'), 'b': 1.0}, tmp_path / 'second.json').read_bytes()
    assert first == second
    assert json.loads(first) == {'a': None, 'b': 1.0}


def test_emit_writes_the_requested_formats(tmp_path):
    rows = [ResultRow(0.5, 0.25, 'sharp-norm')]
    written = emit(_result(rows), tmp_path / 'out', 'json')
    assert [path.name for path in written] == ['summary.json']
    summary = json.loads(written[0].read_text(encoding='utf-8'))
    assert summary['constant'] is None
    assert summary['columns'] == list(CSV_COLUMNS)
    assert summary['rows'][0][:3] == [0.5, 0.25, 'sharp-norm']
    assert {path.name for path in emit(_result(rows), tmp_path / 'out')} == {'results.csv', 'summary.json'}


def test_timing_sidecar(tmp_path):
    timing = json.loads(write_timing(tmp_path, 1.23456, 'stability').read_text(encoding='utf-8'))
    assert timing == {'experiment': 'stability', 'wall_time_seconds': 1.235}


def test_format_duration():
    assert format_duration(12.0) == '12.0 s'
    assert format_duration(90.0) == '1.5 min'
    assert format_duration(5400.0) == '1.5 h'
