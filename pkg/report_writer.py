"""
Запись результатов: report.json, CSV по экспериментам, SVG-графики, timings.json
"""

import csv
import json
import logging
import math
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)

SVG_SALT = 'bolza-lab'
FLOAT_DIGITS = 12


def plain(value):
    """Приведение numpy/complex к JSON-совместимым типам"""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [plain(float(value.real)), plain(float(value.imag))]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value) or math.isinf(value):
            return str(value)
        return round(value, FLOAT_DIGITS)
    return value


class ReportWriter:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def _path(self, name: str) -> Path:
        path = self.out_dir / name
        self.written.append(name)
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        path = self._path(name)
        text = json.dumps(plain(payload), sort_keys=True, indent=2, ensure_ascii=False)
        path.write_text(text + "\n", encoding='utf-8')
        logger.info(f"💾 JSON записан: {path}")
        return path

    def write_csv(self, name: str, rows: list) -> Path:
        path = self._path(name)
        rows = [plain(r) for r in rows]
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in row.items()})
        logger.info(f"💾 CSV записан: {path} ({len(rows)} строк)")
        return path

    def plot_series(self, name: str, x, series: dict, xlabel: str, ylabel: str, title: str = None,
                    logy: bool = False) -> Path:
        """Линии series[label] = y по общей оси x; побайтно детерминированный SVG"""
        path = self._path(name)
        plt.rcParams['svg.hashsalt'] = SVG_SALT
        fig, ax = plt.subplots(figsize=(6, 4))
        for label in sorted(series):
            y = np.asarray(series[label], float)
            ax.plot(np.asarray(x, float)[:y.size], y, marker='o', markersize=3, label=label)
        if logy:
            ax.set_yscale('log')
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
        logger.info(f"📈 График записан: {path}")
        return path

    def plot_heatmap(self, name: str, matrix, xlabel: str, ylabel: str, title: str = None) -> Path:
        path = self._path(name)
        plt.rcParams['svg.hashsalt'] = SVG_SALT
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(np.nan_to_num(np.asarray(matrix, float), nan=0.0), origin='lower', cmap='viridis')
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
        logger.info(f"📈 Карта записана: {path}")
        return path

    def write_timings(self, timings: dict) -> Path:
        """Время стадий: отдельный файл, вне контракта воспроизводимости"""
        path = self.out_dir / 'timings.json'
        path.write_text(json.dumps(plain(timings), sort_keys=True, indent=2) + "\n", encoding='utf-8')
        return path
