# src/utils/io.py
import os
import tempfile

import pandas as pd

FLOAT_FORMAT = "%.17g"


def atomic_write_text(path: str, text: str):
    """Write-temp-rename so readers never see a half-written file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_table(path: str, df: pd.DataFrame, config_hash: str, extra: dict = None):
    """
    Time-series table: one '#'-prefixed header line with the config hash
    and column names, then comma separated rows at 17 significant digits.
    """
    fields = [f"config_hash={config_hash}"]
    for key, val in (extra or {}).items():
        fields.append(f"{key}={val}")
    fields.append("columns=" + ",".join(str(c) for c in df.columns))
    header = "# " + " ".join(fields) + "\n"
    body = df.to_csv(index=False, header=False, float_format=FLOAT_FORMAT)
    atomic_write_text(path, header + body)


def read_table(path: str) -> pd.DataFrame:
    with open(path) as fh:
        header = fh.readline()
    columns = header.split("columns=", 1)[1].strip().split(",")
    return pd.read_csv(path, comment="#", header=None, names=columns)


def header_fields(path: str) -> dict:
    with open(path) as fh:
        header = fh.readline().lstrip("#").strip()
    out = {}
    for token in header.split(" "):
        if "=" in token:
            key, val = token.split("=", 1)
            out[key] = val
    return out
