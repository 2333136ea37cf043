# utils.py
import json
import math
import os

import config


class PanelFormatError(ValueError):
    """Malformed panel file. `line` is the 1-based line in the CSV file."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ConfigError(ValueError):
    pass


def resolve_output_path(path):
    """Joins relative paths onto NS_OUTPUT_DIR when that variable is set."""
    if config.OUTPUT_DIR and not os.path.isabs(path):
        return os.path.join(config.OUTPUT_DIR, path)
    return path


def ensure_parent_dir(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def write_json(path, data):
    ensure_parent_dir(path)
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def format_float(value):
    """Shortest round-trip decimal; empty string for a missing value."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def json_float(value):
    # json cannot carry inf / nan, keep them readable as strings
    if value is None:
        return None
    value = float(value)
    if math.isfinite(value):
        return value
    return repr(value)
