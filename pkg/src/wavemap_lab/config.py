"""Experiment configuration files.

Grammar (one construct per line, UTF-8)::

    file     := { line }
    line     := blank | comment | header | entry
    comment  := ('#' | ';') any*
    header   := '[' name ']'
    entry    := key '=' value
    name/key := [A-Za-z_][A-Za-z0-9_]*
    value    := [ scalar { ',' scalar } ]

Leading and trailing whitespace is ignored everywhere.  Scalars are read as
booleans (``true``/``false``), integers, floats, or else bare strings.  A
comma makes the value a list.  An empty value is the empty string, which
only string keys accept.  Entries before the first header belong to
``[run]``.  A key may appear once per section.

Every key has a default in :data:`DEFAULTS`; :func:`load_config` returns
the fully materialised configuration, and :meth:`ExperimentConfig.dump`
writes it back in the same grammar so a run can be repeated from its saved
config alone.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .geometry import EquivarianceClass, make_metric

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_INT = re.compile(r"[+-]?\d+\Z")

DEFAULTS = {
    "run": {"out": "out", "seed": 0, "threads": 1},
    "metric": {"kind": "sphere", "a": 1.0, "path": "", "periodic": False,
               "phi_max": 10.0},
    "class": {"d": 3, "ell": 1},
    "analyze": {"basis_size": 20},
    "shoot": {"alpha_bracket": [0.1, 10.0], "widened_bracket": [0.01, 100.0],
              "n_scan": 24},
    "minimize": {"functional": "both", "alpha": "equator", "n_nodes": 801,
                 "tol": 1e-8, "max_iter": 20000, "ee_init": "ramp",
                 "eh_init": "ramp", "n_inits": 10, "amplitude": 0.3,
                 "certify_tol": 1e-6},
    "evolve": {"data": "equator", "dr": 0.01, "r_max": 4.0, "t0": 0.25,
               "t_end": 0.75, "blowup_time": 0.0, "R": 1.0, "cfl": 0.9,
               "dt": 0.0, "bump_center": 1.0, "bump_width": 0.5,
               "bump_height": 0.5, "stride": 1, "write_trajectory": True},
    "dossier": {"stages": ["analyze", "minimize", "shoot", "evolve"],
                "n_inits": 10, "evolve_dr": 0.005},
}

_CHOICES = {
    ("metric", "kind"): {"sphere", "ellipse", "tabulated"},
    ("minimize", "functional"): {"ee", "eh", "both"},
    ("minimize", "ee_init"): {"ramp", "equator"},
    ("minimize", "eh_init"): {"ramp", "equator", "perturbed"},
    ("evolve", "data"): {"equator", "self_similar", "bump", "linearized"},
}


def _scalar(text):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if _INT.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def _parse_value(text):
    if not text:
        return ""
    if "," in text:
        return [_scalar(p.strip()) for p in text.split(",")]
    return _scalar(text)


def parse_text(text, path=None):
    """Parse config text into ``{section: {key: (value, line, column)}}``.

    Raises :class:`ConfigError` with the 1-based line and column of the
    first offending character.
    """
    out: dict = {}
    section = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        indent = len(raw) - len(raw.lstrip())
        if line[0] == "[":
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno,
                                  indent + len(line) + 1, path)
            name = line[1:-1].strip()
            if not _NAME.match(name):
                raise ConfigError(f"bad section name {name!r}", lineno, indent + 2, path)
            section = name
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno, indent + 1, path)
        key, value = line.split("=", 1)
        key = key.strip()
        if not _NAME.match(key):
            raise ConfigError(f"bad key {key!r}", lineno, indent + 1, path)
        value = value.strip()
        eq = raw.index("=")
        after = raw[eq + 1:]
        vcol = eq + 2 + len(after) - len(after.lstrip())
        sec = out.setdefault(section, {})
        if key in sec:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno,
                              indent + 1, path)
        sec[key] = (_parse_value(value), lineno, vcol)
    return out


def _coerce(section, key, value, default, where):
    line, col, path = where
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(f"{section}.{key} must be finite", line, col, path)
            return value
    elif isinstance(default, list):
        items = value if isinstance(value, list) else [value]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in default):
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in items):
                if len(items) != len(default):
                    raise ConfigError(f"{section}.{key} needs {len(default)} numbers",
                                      line, col, path)
                return [float(v) for v in items]
        else:
            return [str(v) for v in items]
    elif isinstance(default, str):
        if section == "minimize" and key == "alpha" and isinstance(value, (int, float)):
            return float(value)
        value = str(value)
        allowed = _CHOICES.get((section, key))
        if allowed is not None and value.lower() not in allowed:
            raise ConfigError(f"{section}.{key} must be one of {sorted(allowed)}",
                              line, col, path)
        return value.lower() if allowed is not None else value
    raise ConfigError(f"{section}.{key}: cannot use {value!r} here "
                      f"(expected {type(default).__name__})", line, col, path)


@dataclass
class ExperimentConfig:
    """Resolved configuration with every default filled in."""

    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    source: str | None = None

    def __getitem__(self, name):
        return self.sections[name]

    @property
    def cls(self):
        c = self.sections["class"]
        return EquivarianceClass(c["d"], c["ell"])

    def metric(self):
        m = self.sections["metric"]
        if m["kind"] == "ellipse":
            return make_metric("ellipse", a=m["a"])
        if m["kind"] == "tabulated":
            return make_metric("tabulated", path=m["path"], periodic=m["periodic"],
                               phi_max=m["phi_max"])
        return make_metric("sphere")

    def copy(self):
        return ExperimentConfig(copy.deepcopy(self.sections), self.source)

    def set(self, section, key, value):
        self.sections[section][key] = value
        return self

    def to_dict(self):
        return copy.deepcopy(self.sections)

    def dumps(self):
        lines = []
        for sec, body in self.sections.items():
            lines.append(f"[{sec}]")
            for key, val in body.items():
                lines.append(f"{key} = {_format(val)}")
            lines.append("")
        return "\n".join(lines)

    def dump(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _format(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, list):
        return ", ".join(_format(v) for v in val)
    return str(val)


def config_from_text(text, path=None) -> ExperimentConfig:
    parsed = parse_text(text, path)
    cfg = ExperimentConfig(source=str(path) if path else None)
    for sec, body in parsed.items():
        if sec not in DEFAULTS:
            _, line, _ = next(iter(body.values()), (None, None, None))
            raise ConfigError(f"unknown section [{sec}]", line, 1, path)
        for key, (value, line, col) in body.items():
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", line, col, path)
            cfg.sections[sec][key] = _coerce(sec, key, value, DEFAULTS[sec][key],
                                             (line, col, path))
    if cfg["metric"]["kind"] == "tabulated" and not cfg["metric"]["path"]:
        raise ConfigError("tabulated metric needs metric.path", None, None, path)
    try:
        cfg.cls
    except ValueError as exc:
        raise ConfigError(str(exc), _where(parsed, "class"), 1, path) from None
    return cfg


def _where(parsed, sec):
    body = parsed.get(sec, {})
    return min((v[1] for v in body.values()), default=None)


def load_config(path) -> ExperimentConfig:
    """Read and resolve a config file; a missing path is a :class:`ConfigError`."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}", None, None, str(p)) from None
    return config_from_text(text, str(p))
