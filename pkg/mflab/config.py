""" Typed run configuration read from flat `key = value` files.

    [general]
    seed = 7
    threads = 2

    [minimize]
    casimir = quadratic

Sections map onto the dataclasses below; numeric bounds and allowed choices
live in the field metadata.
"""
import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from mflab.errors import (
    ConfigError,
    ConfigRangeError,
)


def _opt(default, lo=None, hi=None, choices=None):
    return field(default=default, metadata={'min': lo, 'max': hi, 'choices': choices})


@dataclass
class GeneralConfig:
    seed: int = _opt(0, 0, 2 ** 32 - 1)
    # 0 means all available cores
    threads: int = _opt(0, 0, 1024)


@dataclass
class MinimizeConfig:
    casimir: str = _opt('quadratic', choices=['quadratic', 'power', 'entropy', 'exp'])
    power: float = _opt(4.0, 1.0 + 1e-9, 64.0)
    fix_momentum: bool = _opt(False)
    max_iter: int = _opt(100000, 1, 10 ** 7)
    gap_tol: float = _opt(1e-8, 0.0, 1.0)
    energy_tol: float = _opt(1e-8, 0.0, 1.0)
    restarts: int = _opt(5, 0, 1000)


@dataclass
class ExcludeConfig:
    base: str = _opt('kolmogorov', choices=['kolmogorov', 'zero'])
    amplitude: float = _opt(1.0, 0.0, 1e6)
    mode: int = _opt(1, 1, 1024)
    delta: float = _opt(0.1, 0.0, 1e3)
    eps: float = _opt(1.0 / 32.0, 1e-300, 0.5)
    nx: int = _opt(256, 4, 1 << 16)
    ny: int = _opt(256, 4, 1 << 16)
    margin: float = _opt(0.05, 0.0, 1.0)
    smooth: bool = _opt(False)


@dataclass
class StathydroConfig:
    model: str = _opt('liouville', choices=['selective-decay', 'liouville', 'sinh-poisson', 'mrs'])
    beta: float = _opt(0.0, -1e6, 1e6)
    # 'none', 'auto' or a number
    target_energy: str = _opt('none')
    nr: int = _opt(2048, 4, 1 << 20)
    n: int = _opt(64, 4, 1 << 14)
    relaxation: float = _opt(0.5, 1e-6, 1.0)
    tol: float = _opt(1e-12, 0.0, 1.0)
    max_iter: int = _opt(10000, 1, 10 ** 7)


@dataclass
class SimulateConfig:
    n: int = _opt(128, 8, 1 << 14)
    dt: float = _opt(0.01, 1e-12, 10.0)
    t_end: float = _opt(10.0, 0.0, 1e9)
    fejer_n: int = _opt(32, 1, 1 << 13)
    record_every: int = _opt(10, 1, 10 ** 9)
    dealias: str = _opt('fejer', choices=['fejer', 'two-thirds', 'none'])
    datum: str = _opt('random', choices=['random', 'shear', 'mode', 'vortices'])
    amplitude: float = _opt(1.0, 0.0, 1e6)


SECTIONS = {
    'general': GeneralConfig,
    'minimize': MinimizeConfig,
    'exclude': ExcludeConfig,
    'stathydro': StathydroConfig,
    'simulate': SimulateConfig,
}


@dataclass
class RunConfig:
    general: GeneralConfig = field(default_factory=GeneralConfig)
    minimize: MinimizeConfig = field(default_factory=MinimizeConfig)
    exclude: ExcludeConfig = field(default_factory=ExcludeConfig)
    stathydro: StathydroConfig = field(default_factory=StathydroConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def as_dict(self) -> Dict[str, Dict[str, object]]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def render(self) -> str:
        lines: List[str] = []
        for section, values in self.as_dict().items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                lines.append(f"{key} = {_render_value(value)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode('utf-8')).hexdigest()

    def effective_threads(self) -> int:
        env = os.environ.get('MFLAB_THREADS')
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"MFLAB_THREADS must be an integer, got {env!r}")
        else:
            threads = self.general.threads
        if threads <= 0:
            threads = os.cpu_count() or 1
        return threads


def _render_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, kind, key: str, line: int):
    if kind is bool:
        lowered = raw.lower()
        if lowered in ('true', 'yes', 'on', '1'):
            return True
        if lowered in ('false', 'no', 'off', '0'):
            return False
        raise ConfigError(f"key '{key}' expects a boolean, got {raw!r}", line)
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key '{key}' expects an integer, got {raw!r}", line)
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key '{key}' expects a number, got {raw!r}", line)
    return raw


def _check(spec: dataclasses.Field, value, key: str, line: int):
    lo, hi, choices = spec.metadata['min'], spec.metadata['max'], spec.metadata['choices']
    if choices is not None and value not in choices:
        raise ConfigRangeError(f"key '{key}' must be one of {', '.join(choices)}; got {value!r}", line)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ConfigRangeError(f"key '{key}' = {value} outside bounds [{lo}, {hi}]", line)


def parse_config(text: str) -> RunConfig:
    config = RunConfig()
    section: Optional[str] = None
    seen = set()

    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if line.startswith('['):
            if not line.endswith(']'):
                raise ConfigError(f"malformed section header {raw_line.strip()!r}", number)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section '{section}'", number)
            continue
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", number)
        if section is None:
            raise ConfigError("key outside of a [section]", number)

        key, raw = (part.strip() for part in line.split('=', 1))
        key = key.replace('-', '_')
        target = getattr(config, section)
        specs = {f.name: f for f in dataclasses.fields(target)}
        if key not in specs:
            raise ConfigError(f"unknown key '{key}' in section [{section}]", number)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key '{key}' in section [{section}]", number)
        seen.add((section, key))

        spec = specs[key]
        value = _convert(raw, type(spec.default), key, number)
        _check(spec, value, key, number)
        setattr(target, key, value)

    return config


def load_config(path: Optional[str] = None) -> RunConfig:
    """ Loads a config file; `None` gives the defaults """
    if path is None:
        return RunConfig()
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_config(handle.read())


def apply_overrides(config: RunConfig, section: str, values: Dict[str, object]) -> RunConfig:
    """ Sets command-line values (None means not given) with the same checks as the file parser """
    target = getattr(config, section)
    specs = {f.name: f for f in dataclasses.fields(target)}
    for key, value in values.items():
        if value is None:
            continue
        if key not in specs:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")
        if not isinstance(value, type(specs[key].default)):
            value = _convert(str(value), type(specs[key].default), key, None)
        _check(specs[key], value, key, None)
        setattr(target, key, value)
    return config
