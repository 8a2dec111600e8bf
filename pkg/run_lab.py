#!/usr/bin/env python3
"""
Скрипт для запуска экспериментов лаборатории геодезических потоков
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path

from lab_config import COMMANDS, env_defaults, load_config
from lab_errors import EXIT_CONFIG, EXIT_SOLVER, ConfigError
from lab_processor import LabProcessor


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Геодезические потоки на поверхности Больца и её возмущениях")
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help="JSON-файл конфигурации")
    parser.add_argument('--out', help="каталог результатов")
    parser.add_argument('--seed', type=int)
    parser.add_argument('--threads', type=int)
    parser.add_argument('--cache', help="каталог кэша шаров и мер")
    args = parser.parse_args(argv)

    env = env_defaults()
    for key in ('config', 'out', 'seed', 'threads', 'cache'):
        if getattr(args, key) is None and env[key] is not None:
            setattr(args, key, env[key])
    args.log_level = env['log_level']
    return args


def setup_logging(out_dir: Path, level: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(out_dir / 'lab.log', encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ]
    )


def main(argv=None) -> int:
    """Главная функция: код возврата 0/2/3/4"""
    args = parse_args(argv)
    logger = logging.getLogger(__name__)
    try:
        config = load_config(args.config, seed=args.seed, out=args.out, threads=args.threads, cache=args.cache)
    except ConfigError as e:
        setup_logging(Path(args.out or 'output'), args.log_level)
        logger.error(f"❌ Ошибка конфигурации: {e}")
        return EXIT_CONFIG

    setup_logging(Path(config.output_dir), args.log_level)
    logger.info(f"🚀 Запуск {args.command} → {config.output_dir}")
    try:
        result = asyncio.run(LabProcessor(config).run(args.command))
    except ConfigError as e:
        logger.error(f"❌ Ошибка конфигурации: {e}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        logger.info("Запуск остановлен пользователем")
        return EXIT_SOLVER
    except Exception as e:
        logger.error(f"❌ Критическая ошибка: {e}")
        return EXIT_SOLVER

    if result['success']:
        logger.info(f"✅ {args.command}: все проверки пройдены")
    elif result['error']:
        logger.error(f"❌ {args.command}: {result['error']}")
    return result['exit_code']


if __name__ == '__main__':
    sys.exit(main())
