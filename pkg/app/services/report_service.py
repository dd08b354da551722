"""
Report Service - JSON reports, text tables and CSV dumps

JSON is the machine contract (fractions in [0, 1], sorted keys). Text tables
render percentages with two decimals in the comparison / ablation layout.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

import pandas as pd

from app.db.models import OpenSetReport

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['TH', 'CCR', 'FPR']


def write_json(payload: Dict[str, Any], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def write_report(report: OpenSetReport, path) -> Path:
    """Write one OpenSetReport (curve included) as JSON."""
    return write_json(report.to_dict(), path)


def curve_frame(curve) -> pd.DataFrame:
    return pd.DataFrame(list(curve), columns=CURVE_COLUMNS)


def write_curve_csv(curve, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve_frame(curve).to_csv(path, index=False)
    return path


def write_embeddings_csv(frame: pd.DataFrame, path) -> Path:
    """Adapted embeddings as speaker, utt, tag, e0..e{D-1} rows for external plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} adapted embeddings to {path}")
    return path


def _pct(value: float) -> str:
    return f"{100.0 * value:.2f}"


def _pct_range(mean: float, low: float, high: float) -> str:
    return f"{_pct(mean)} [{_pct(low)}, {_pct(high)}]"


def summary_row(label: str, mean: OpenSetReport, ranges: Dict[str, tuple]) -> Dict[str, str]:
    return {
        'System': label,
        'AUC(%)': _pct_range(mean.auc, *ranges['auc']),
        'OSCR(%)': _pct_range(mean.oscr, *ranges['oscr']),
        'ACC(%)': _pct_range(mean.closed_acc, *ranges['closed_acc'])
    }


def comparison_table(rows: Sequence[Dict[str, str]], title: str) -> str:
    """
    Render the system comparison as text.

    Args:
        rows: summary_row() dicts, in display order
        title: Heading line (e.g. '10-way, 5 folds')

    Returns:
        Multi-line table: open-set AUC / OSCR, then closed-set ACC, mean [min, max] over folds
    """
    frame = pd.DataFrame(list(rows)).set_index('System')
    lines = [title, '=' * max(len(title), 40), frame.to_string(), '']
    return '\n'.join(lines)


def ablation_table(rows: List[Dict[str, Any]], title: str) -> str:
    """Ablation layout: variant, AUC(%), OSCR(%) and tuning cost in seconds."""
    frame = pd.DataFrame([
        {
            'Variant': row['label'],
            'AUC(%)': _pct(row['auc']),
            'OSCR(%)': _pct(row['oscr']),
            'Time(s)': f"{row['seconds']:.1f}"
        }
        for row in rows
    ]).set_index('Variant')
    return '\n'.join([title, '=' * max(len(title), 40), frame.to_string(), ''])


def write_text(text: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')
    return path
