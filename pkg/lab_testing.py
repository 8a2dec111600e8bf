"""
Запуск тестовых файлов как скриптов: тот же отчёт, что и у прогона под pytest
"""

import logging
import sys

logger = logging.getLogger(__name__)


def setup_test_logging(log_file: str):
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(log_file, encoding='utf-8')
        ]
    )


def run_suite(title: str, tests: list) -> int:
    """tests = [(имя, функция)]; код возврата 0, если всё пройдено"""
    logger.info(f"🚀 НАЧИНАЕМ ТЕСТИРОВАНИЕ: {title}")
    logger.info("=" * 60)

    results = {}
    for test_name, test_func in tests:
        logger.info(f"\n📋 Тест: {test_name}")
        logger.info("-" * 30)
        try:
            test_func()
            results[test_name] = True
            logger.info(f"✅ {test_name}: ПРОЙДЕН")
        except AssertionError as e:
            results[test_name] = False
            logger.warning(f"⚠️ {test_name}: НЕ ПРОЙДЕН {e}")
        except Exception as e:
            results[test_name] = False
            logger.error(f"❌ {test_name}: КРИТИЧЕСКАЯ ОШИБКА - {e}")

    logger.info("\n" + "=" * 60)
    logger.info("📊 ИТОГОВЫЙ ОТЧЕТ ТЕСТИРОВАНИЯ")
    logger.info("=" * 60)
    passed = sum(1 for ok in results.values() if ok)
    for test_name, ok in results.items():
        status = "✅ ПРОЙДЕН" if ok else "❌ НЕ ПРОЙДЕН"
        logger.info(f"   {test_name}: {status}")
    logger.info(f"\n📈 Результат: {passed}/{len(results)} тестов пройдено")
    if passed == len(results):
        logger.info("🎉 ВСЕ ТЕСТЫ ПРОЙДЕНЫ")
        return 0
    logger.warning("⚠️ Есть непройденные тесты, смотрите лог выше")
    return 1
