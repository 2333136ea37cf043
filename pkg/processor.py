# processor.py
#  File formats: panels (CSV + JSON sidecar), contrast series, experiment
#  summaries and sample paths. Floats are written as shortest round-trip
#  decimals so a panel reloads bit for bit.
import logging
import os

import numpy as np
import pandas as pd

from config import CONFIG_VERSION
from model_core import ModelSpec, PanelData
from utils import PanelFormatError, ensure_parent_dir, format_float, read_json, write_json

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ["group", "replicate", "value"]
CONTRAST_COLUMNS = ["group", "contrast_index", "value"]
SUMMARY_COLUMNS = ["estimator", "n", "R", "mean", "bias", "variance", "mse", "se_mean", "crlb_ratio"]
PATH_COLUMNS = ["n", "naive", "recast"]


def sidecar_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".json"


def _write_frame(path, frame):
    ensure_parent_dir(path)
    frame.to_csv(path, index=False, lineterminator="\n")


# ================= PANELS =================

def write_panel(path, panel):
    """
    Writes `group,replicate,value` rows (1-based, group-major) and a JSON
    sidecar with the spec and seed. Returns (csv_path, sidecar_path).
    """
    m, n = panel.m, panel.n
    frame = pd.DataFrame({
        "group": np.repeat(np.arange(1, n + 1), m),
        "replicate": np.tile(np.arange(1, m + 1), n),
        "value": [format_float(v) for v in panel.values.T.reshape(-1)],
    })
    _write_frame(path, frame)
    meta = {
        "version": CONFIG_VERSION,
        "m": m,
        "n": n,
        "spec": panel.spec.to_dict() if panel.spec is not None else None,
        "seed": panel.seed,
    }
    side = sidecar_path(path)
    write_json(side, meta)
    logger.info("panel m=%d n=%d written to %s", m, n, path)
    return path, side


def _numeric_column(frame, column):
    raw = frame[column]
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna().to_numpy() | ~np.isfinite(parsed.to_numpy(dtype=float))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        # +2: header line, 1-based lines
        raise PanelFormatError(f"non-numeric value {raw.iloc[i]!r}", line=i + 2, column=column)
    return parsed.to_numpy(dtype=float)


def _index_column(frame, column):
    values = _numeric_column(frame, column)
    bad = (values < 1) | (values != np.floor(values))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise PanelFormatError(
            f"{column} index must be a positive integer, got {frame[column].iloc[i]!r}",
            line=i + 2, column=column,
        )
    return values.astype(int)


def read_panel(path):
    """
    Reads a panel CSV. When the JSON sidecar exists its spec and seed are
    attached; otherwise the panel is external (spec and seed None).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError as e:
        raise PanelFormatError("file is empty", line=1) from e
    except pd.errors.ParserError as e:
        raise PanelFormatError(f"cannot parse CSV: {e}") from e

    if list(frame.columns) != PANEL_COLUMNS:
        raise PanelFormatError(
            f"header must be '{','.join(PANEL_COLUMNS)}', got '{','.join(map(str, frame.columns))}'",
            line=1,
        )
    # trailing blank lines are not rows
    filled = frame.fillna("").apply(lambda col: col.str.strip() != "").any(axis=1).to_numpy()
    frame = frame.iloc[: int(np.flatnonzero(filled)[-1]) + 1 if filled.any() else 0]
    if frame.empty:
        raise PanelFormatError("panel has no rows", line=2)

    groups = _index_column(frame, "group")
    reps = _index_column(frame, "replicate")
    vals = _numeric_column(frame, "value")

    m, n = int(reps.max()), int(groups.max())
    values = np.full((m, n), np.nan)
    seen = np.zeros((m, n), dtype=bool)
    for row, (i, t) in enumerate(zip(reps - 1, groups - 1)):
        if seen[i, t]:
            raise PanelFormatError(f"duplicate cell (group={t + 1}, replicate={i + 1})", line=row + 2)
        seen[i, t] = True
        values[i, t] = vals[row]
    if not seen.all():
        i, t = np.argwhere(~seen)[0]
        raise PanelFormatError(f"missing cell (group={t + 1}, replicate={i + 1}); expected a full {m}x{n} grid")
    if m < 2:
        raise PanelFormatError(f"m must be >= 2, file has {m} replicate(s) per group")

    spec, seed = None, None
    side = sidecar_path(path)
    if os.path.exists(side):
        try:
            meta = read_json(side)
            if not isinstance(meta, dict):
                raise TypeError("expected a JSON object")
            if meta.get("spec"):
                spec = ModelSpec.from_dict(meta["spec"])
            seed = meta.get("seed")
            if seed is not None:
                seed = int(seed)
        except (KeyError, TypeError, ValueError) as e:
            raise PanelFormatError(f"bad sidecar {side}: {e}") from e
        if spec is not None and (spec.m, spec.n) != (m, n):
            raise PanelFormatError(
                f"sidecar spec (m={spec.m}, n={spec.n}) does not match the CSV grid (m={m}, n={n})"
            )
    return PanelData(values, spec=spec, seed=seed)


# ================= CONTRASTS =================

def write_contrasts(path, series):
    k, n = series.values.shape
    frame = pd.DataFrame({
        "group": np.repeat(np.arange(1, n + 1), k),
        "contrast_index": np.tile(np.arange(1, k + 1), n),
        "value": [format_float(v) for v in series.values.T.reshape(-1)],
    })
    _write_frame(path, frame)
    return path


# ================= EXPERIMENT RESULTS =================

def write_summaries(path, summaries):
    frame = pd.DataFrame(
        [
            [
                s.estimator_name,
                s.n,
                s.replications,
                format_float(s.mean),
                format_float(s.bias),
                format_float(s.variance),
                format_float(s.mse),
                format_float(s.std_error_of_mean),
                format_float(s.crlb_ratio),
            ]
            for s in summaries
        ],
        columns=SUMMARY_COLUMNS,
    )
    _write_frame(path, frame)
    return path


def write_sample_path(path, sample_path):
    frame = pd.DataFrame({
        "n": list(sample_path.n_points),
        "naive": [format_float(v) for v in sample_path.naive_estimates],
        "recast": [format_float(v) for v in sample_path.recast_estimates],
    })
    _write_frame(path, frame)
    return path


def write_report(path, report):
    write_json(path, report)
    return path
