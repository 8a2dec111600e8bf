#!/usr/bin/env python3
"""
Тестовый скрипт для проверки конвейера: конфигурация, запуск команд, отчёты и коды выхода
"""

import asyncio
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from lab_config import config_from_dict, load_config
from lab_errors import EXIT_CONFIG, EXIT_OK, ConfigError
from lab_processor import LabProcessor
from lab_testing import run_suite, setup_test_logging
from report_writer import ReportWriter
import run_lab

logger = logging.getLogger(__name__)

BAD_BUMP = {'metric': {'bumps': [{'center': [0.0, 0.0], 'amplitude': 1.0, 'width': 0.5}], 'epsilon': 1.0}}


def run_command(command: str, out_dir, data: dict = None) -> dict:
    config = config_from_dict(data or {})
    config.output_dir = str(out_dir)
    config.threads = 2
    return asyncio.run(LabProcessor(config).run(command))


def test_config_schema():
    with pytest.raises(ConfigError):
        config_from_dict({'metric': {'foo': 1}})
    with pytest.raises(ConfigError):
        config_from_dict({'seed': 'x'})
    with pytest.raises(ConfigError):
        config_from_dict({'group': {'word_cap': 12}})
    with pytest.raises(ConfigError):
        config_from_dict({'experiments': {'ps': {'s_offset': 0.0}}})
    config = config_from_dict({'seed': 7, 'metric': {'epsilon': 0}})
    assert config.seed == 7
    assert config.metric.epsilon == 0.0
    assert config_from_dict({}).config_hash() == config_from_dict({'output_dir': 'elsewhere'}).config_hash()


def test_load_config_overrides():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'run.json'
        path.write_text(json.dumps({'seed': 3}), encoding='utf-8')
        config = load_config(path, seed='11', out=tmp, threads='2')
        assert config.seed == 11
        assert config.threads == 2
        assert config.output_dir == tmp
        with pytest.raises(ConfigError):
            load_config(Path(tmp) / 'missing.json')
        with pytest.raises(ConfigError):
            load_config(path, threads='0')


def test_certify_metric_run():
    with tempfile.TemporaryDirectory() as tmp:
        result = run_command('certify-metric', tmp)
        assert result['exit_code'] == EXIT_OK
        report = json.loads((Path(tmp) / 'report.json').read_text(encoding='utf-8'))
        assert report['passed']
        assert report['checks'] == {'curvature_negative': True}
        assert (Path(tmp) / 'timings.json').exists()


def test_report_is_deterministic():
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        run_command('certify-metric', first, {'seed': 5})
        run_command('certify-metric', second, {'seed': 5})
        a = (Path(first) / 'report.json').read_bytes()
        b = (Path(second) / 'report.json').read_bytes()
        assert a == b


def test_rejected_metric_exit_code():
    with tempfile.TemporaryDirectory() as tmp:
        result = run_command('certify-metric', tmp, BAD_BUMP)
        assert not result['success']
        assert result['exit_code'] == EXIT_CONFIG
        report = json.loads((Path(tmp) / 'report.json').read_text(encoding='utf-8'))
        assert report['error']['type'] == 'ConfigError'
        assert report['error']['stage'] == 'certify'


def test_unknown_command_rejected():
    config = config_from_dict({})
    with pytest.raises(ConfigError):
        asyncio.run(LabProcessor(config).run('render-video'))


def test_cli_exit_codes():
    with tempfile.TemporaryDirectory() as tmp:
        missing = str(Path(tmp) / 'missing.json')
        assert run_lab.main(['certify-metric', '--config', missing, '--out', tmp]) == EXIT_CONFIG
        path = Path(tmp) / 'bad.json'
        path.write_text(json.dumps(BAD_BUMP), encoding='utf-8')
        assert run_lab.main(['certify-metric', '--config', str(path), '--out', tmp]) == EXIT_CONFIG
        assert run_lab.main(['certify-metric', '--out', tmp, '--seed', '1']) == EXIT_OK


def write_artifacts(out_dir) -> ReportWriter:
    writer = ReportWriter(out_dir)
    rows = [{'s': 1.0 + off, 'mass': 1.0 / 3.0 + off, 'p': complex(0.1, -off),
             'max_dev': None if off else float('nan')} for off in (0.0, 0.05, 0.1)]
    writer.write_csv('ladder.csv', rows)
    writer.plot_series('ladder.svg', [r['s'] for r in rows], {'масса': [r['mass'] for r in rows]}, 's', 'ν',
                       'Лестница', logy=True)
    density = np.outer(np.arange(1.0, 9.0), np.arange(1.0, 9.0))
    density[3, 3] = np.nan
    writer.plot_heatmap('grid.svg', density, 'η', 'ξ', 'Сетка')
    return writer


def test_artifacts_are_byte_identical():
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        written = write_artifacts(first).written
        write_artifacts(second)
        assert written == ['ladder.csv', 'ladder.svg', 'grid.svg']
        for name in written:
            assert (Path(first) / name).read_bytes() == (Path(second) / name).read_bytes()
        text = (Path(first) / 'ladder.csv').read_text(encoding='utf-8')
        assert text.splitlines()[0] == 's,mass,p,max_dev'
        assert '"[0.1, -0.0]"' in text and 'nan' in text


def test_entropy_outputs_are_deterministic():
    data = {'seed': 2}
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        run_command('estimate-entropy', first, data)
        run_command('estimate-entropy', second, data)
        names = sorted(p.name for p in Path(first).iterdir() if p.name != 'timings.json')
        assert {'report.json', 'orbit_growth.csv', 'orbit_growth.svg'} <= set(names)
        for name in names:
            assert (Path(first) / name).read_bytes() == (Path(second) / name).read_bytes()


def test_shipped_configs():
    root = Path(__file__).parent / 'configs'
    perturbed = load_config(root / 'perturbed.json')
    assert perturbed.metric.epsilon > 0
    assert min(perturbed.experiments.morse.T_list) <= 10.0 and max(perturbed.experiments.morse.T_list) >= 40.0
    assert perturbed.experiments.bm.n_samples >= 100_000
    assert perturbed.experiments.equidistribution.n_samples >= 100_000
    assert perturbed.experiments.mixing.n_samples >= 100_000
    assert perturbed.experiments.mixing.contraction_pairs == 200
    smoke = load_config(root / 'smoke.json')
    assert smoke.metric_block() == perturbed.metric_block()
    assert smoke.experiments.bm.n_samples < smoke.experiments.bm.support_min_samples
    assert load_config(root / 'unperturbed.json').metric.epsilon == 0.0


def main():
    setup_test_logging('test_lab_pipeline.log')
    tests = [
        ("Схема конфигурации", test_config_schema),
        ("Переопределения флагами", test_load_config_overrides),
        ("Команда certify-metric", test_certify_metric_run),
        ("Детерминизм report.json", test_report_is_deterministic),
        ("Отклонённая метрика", test_rejected_metric_exit_code),
        ("Неизвестная команда", test_unknown_command_rejected),
        ("Коды выхода CLI", test_cli_exit_codes),
        ("Побайтный детерминизм CSV и SVG", test_artifacts_are_byte_identical),
        ("Детерминизм estimate-entropy", test_entropy_outputs_are_deterministic),
        ("Поставляемые конфигурации", test_shipped_configs),
    ]
    return run_suite("конвейер лаборатории", tests)


if __name__ == '__main__':
    sys.exit(main())
