"""Flat ``section.key = value`` config format bound to (nested) dataclasses.

Example::

    # comments start with '#'
    seed = 3
    weighting.loss_factor = 1.7
    encoder.widths = 16, 32

Values are typed by the dataclass field annotations; tuples are comma separated,
``none`` means ``None`` and booleans are ``true``/``false``.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def _unwrap_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _parse_scalar(tp, raw):
    if tp is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if tp is str:
        return raw
    raise TypeError(f"unsupported config field type {tp!r}")


def parse_value(tp, raw):
    tp, optional = _unwrap_optional(tp)
    raw = raw.strip()
    if optional and raw.lower() == "none":
        return None
    if typing.get_origin(tp) is tuple:
        inner = typing.get_args(tp)[0]
        if raw == "":
            return ()
        return tuple(_parse_scalar(inner, p.strip()) for p in raw.split(","))
    return _parse_scalar(tp, raw)


def format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    return str(v)


def to_flat(obj, prefix=""):
    out = {}
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(hints[f.name]):
            out.update(to_flat(v, key + "."))
        else:
            out[key] = v
    return out


def dumps(obj) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in to_flat(obj).items())


def _tokenize(text, source):
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first at line {entries[key][1]})")
        entries[key] = (raw, lineno)
    return entries


def _build(cls, entries, prefix, source, used):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, entries, key + ".", source, used)
        elif key in entries:
            raw, lineno = entries[key]
            used.add(key)
            try:
                kwargs[f.name] = parse_value(tp, raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        lines = sorted(entries[k][1] for k in entries if k.startswith(prefix) and k in used)
        where = f"{source}:{lines[0]}" if lines else source
        raise ConfigError(f"{where}: invalid {prefix.rstrip('.') or 'config'}: {exc}") from None


def loads(cls, text, source="<config>", overrides=None):
    entries = _tokenize(text, source)
    for k, v in (overrides or {}).items():
        entries[k] = (format_value(v) if not isinstance(v, str) else v, 0)
    used = set()
    obj = _build(cls, entries, "", source, used)
    unknown = sorted(set(entries) - used)
    if unknown:
        raise ConfigError(f"{source}:{entries[unknown[0]][1]}: unknown key {unknown[0]!r}")
    return obj


def load(cls, path, overrides=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(cls, path.read_text(), str(path), overrides)


def to_dict(obj):
    return dataclasses.asdict(obj)


def from_dict(cls, data):
    """Inverse of :func:`dataclasses.asdict` for the config dataclasses (lists become tuples)."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        tp, _ = _unwrap_optional(hints[f.name])
        v = data[f.name]
        if dataclasses.is_dataclass(tp) and v is not None:
            v = from_dict(tp, v)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)
