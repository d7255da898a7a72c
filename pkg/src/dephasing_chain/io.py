"""Deterministic export: JSON lines, JSON documents, CSV and flat key-value configs.

Floats are written with 17 significant digits so complex values round-trip
bit-exactly; dictionaries keep insertion order so identical inputs give
identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

TOOL = "dephasing-chain"


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj) -> str:
    """Compact JSON with fixed float formatting."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return dumps([obj.real, obj.imag])
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def metadata(command: str, config: dict, wall_clock: float | None) -> dict:
    return {"tool": TOOL, "version": __version__, "command": command, "config": config,
            "wall_clock_s": wall_clock}


def write_jsonl(path, meta: dict, records) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps({"meta": meta}) + "\n")
        for r in records:
            fh.write(dumps(r) + "\n")
    return path


def read_jsonl(path) -> tuple[dict, list[dict]]:
    lines = [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
    if not lines or "meta" not in lines[0]:
        raise ValueError(f"{path}: missing metadata line")
    return lines[0]["meta"], lines[1:]


def write_json(path, meta: dict, payload: dict) -> Path:
    path = Path(path)
    path.write_text(dumps({"meta": meta, **payload}) + "\n", encoding="utf-8")
    return path


def write_csv(path, meta: dict, header: list[str], rows) -> Path:
    """CSV with the metadata as one leading comment line."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("# " + dumps(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata line")
        meta = json.loads(first[2:])
        return meta, list(csv.DictReader(fh))


# --- flat key-value configs --------------------------------------------------

def parse_config(text: str) -> dict[str, str]:
    """`key = value` per line; `#` starts a comment; keys use flag spelling."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ValueError(f"config line {n}: empty key")
        out[k.replace("-", "_")] = v
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(config: dict) -> str:
    lines = []
    for k, v in config.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(fmt_float(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = fmt_float(v)
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"


def write_config(path, config: dict) -> Path:
    path = Path(path)
    path.write_text(format_config(config), encoding="utf-8")
    return path
