"""
Result artifacts: sweep tables, JSON reports and their run manifests.
"""
import json
import logging
import math
import os
import traceback
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Optional

import pandas as pd

from version import __version__

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['protocol', 'alpha', 'metric', 'value', 'rho_bar', 'bisection_steps']


class OutputError(RuntimeError):
    """An artifact could not be written."""

    def __init__(self, message, path):
        super().__init__(message)
        self.path = path


@dataclass
class RunManifest:
    command: str
    protocol: str
    parameters: dict
    seed: Optional[int] = None
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))

    def to_dict(self, include_timestamp=True):
        data = asdict(self)
        if not include_timestamp:
            data.pop('timestamp')
        return data


def _clean(value):
    """JSON-safe scalar: NaN becomes null, floats keep 6 decimals."""
    if isinstance(value, float):
        return None if math.isnan(value) else round(value, 6)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, 'item'):
        return _clean(value.item())
    return value


def sweep_frame(rows):
    """Sweep rows sorted by (protocol, metric, alpha) with the fixed column order."""
    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    df['bisection_steps'] = df['bisection_steps'].astype(int)
    return df.sort_values(['protocol', 'metric', 'alpha'], kind='mergesort').reset_index(drop=True)


def write_manifest(manifest, artifact_path):
    path = f"{artifact_path}.manifest.json"
    _write_text(path, json.dumps(_clean(manifest.to_dict()), indent=2, sort_keys=True) + "\n")
    return path


def _write_text(path, text):
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        raise OutputError(f"Cannot write {path}: {e.strerror or e}", path) from e


def write_table_csv(df, file_path, manifest=None):
    """Write any result table with 6-decimal floats and '\\n' line endings."""
    try:
        _write_text(file_path, df.to_csv(index=False, float_format='%.6f', lineterminator='\n'))
        logger.info(f"Exported {len(df)} rows to {file_path}")
        if manifest is not None:
            write_manifest(manifest, file_path)
        return file_path
    except OutputError:
        raise
    except Exception as e:
        logger.error(f"Error exporting table to {file_path}: {str(e)}")
        logger.error(traceback.format_exc())
        raise


def write_sweep_csv(df, file_path, manifest=None):
    """
    Write a sweep table: header protocol,alpha,metric,value,rho_bar,bisection_steps,
    values with 6 decimals.
    """
    return write_table_csv(sweep_frame(df), file_path, manifest)


def json_text(payload, manifest=None):
    """Deterministic JSON; the embedded manifest leaves out its timestamp."""
    document = dict(payload)
    if manifest is not None:
        document['manifest'] = manifest.to_dict(include_timestamp=False)
    return json.dumps(_clean(document), indent=2, sort_keys=True) + "\n"


def write_json(payload, file_path, manifest=None):
    _write_text(file_path, json_text(payload, manifest))
    logger.info(f"Exported JSON report to {file_path}")
    if manifest is not None:
        write_manifest(manifest, file_path)
    return file_path


def write_sweep_json(df, file_path, manifest=None):
    rows = sweep_frame(df).to_dict(orient='records')
    return write_json({'rows': rows}, file_path, manifest)


def export_results_to_csv(frames, output_dir):
    """
    Export named DataFrames to <output_dir>/<name>.csv.
    """
    try:
        # Create output directory if it doesn't exist
        if not os.path.exists(output_dir):
            os.makedirs(output_dir)

        exported_files = {}

        for name, df in frames.items():
            if df is not None and len(df) > 0:
                file_path = os.path.join(output_dir, f"{name}.csv")
                _write_text(file_path, df.to_csv(index=False, float_format='%.6f', lineterminator='\n'))
                exported_files[name] = file_path
                logger.info(f"Exported {len(df)} rows to {file_path}")

        return exported_files
    except Exception as e:
        logger.error(f"Error exporting results to CSV: {str(e)}")
        logger.error(traceback.format_exc())
        raise
