"""`key = value` config files (comments with #, blank lines ignored)."""

from __future__ import annotations


def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def get_int(cfg, key, default):
    return int(cfg.get(key, default))


def get_float(cfg, key, default):
    return float(cfg.get(key, default))


def get_bool(cfg, key, default):
    v = cfg.get(key)
    if v is None:
        return default
    return v.lower() in ("1", "true", "yes", "on")


def get_str(cfg, key, default):
    return cfg.get(key, default)
