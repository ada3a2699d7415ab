from __future__ import annotations

import os
from pathlib import Path

import yaml
from pydantic import ValidationError

from .cache import cache
from .config import MigrasimConfig
from .errors import MissingConfigFile, ScenarioError
from .runner import RunOutput
from .scenario import Scenario, parse_scenario

CONFIG_FILENAMES = (
    ".migrasim",
    ".migrasim.yaml",
    ".migrasim.yml",
    "migrasim.yaml",
    "migrasim.yml",
)
DEFAULT_OUT_DIR = "out"

# Paths


class MigrasimPaths:
    """
    Locate the project config file. It is optional: without one, the built-in defaults apply.
    """

    def __init__(self, base: Path, config_filename: str | None = None, init_command: bool = False):
        self.base = base
        self._config_filename = config_filename
        self._init_command = init_command
        self.config: Path | None = self.discover_config()

    def discover_config(self) -> Path | None:
        """
        The rules used to discover the config file are:
        - if `--config` option is set (or the `MIGRASIM_CONFIG_FILENAME` environ variable), {base}/{config} must
        exist, otherwise this raises a MissingConfigFile error (except for `init`, that will create it).
        - otherwise, the first existing file among `.migrasim`, `.migrasim.yaml`, `.migrasim.yml`, `migrasim.yaml`
        and `migrasim.yml`.
        """
        if self._config_filename is not None:
            path = self.base / self._config_filename
            if path.exists() or self._init_command:
                return path
            raise MissingConfigFile((path,))
        return next((path for path in (self.base / fn for fn in CONFIG_FILENAMES) if path.exists()), None)

    @property
    def init_target(self) -> Path:
        return self.config or self.base / ".migrasim.yml"


# Config


def yaml_load[T](path: Path, default: T) -> T:
    if path.exists():
        with path.open("r", encoding="utf-8") as f:
            return yaml.safe_load(f) or default
    return default


def load_core_config(path: Path | None) -> MigrasimConfig:
    """
    Read the migrasim config file.
    """
    if path is None:
        return MigrasimConfig()
    raw = yaml_load(path, {})
    try:
        return MigrasimConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ScenarioError(f"{path}: {where}: {first['msg']}") from None


def init_cache(paths: MigrasimPaths):
    cache.paths = paths
    cache.config = load_core_config(paths.config)


def init_config(path: Path) -> bool:
    """
    Write a config file with the defaults spelled out. Returns False when the file already exists.
    """
    if path.exists():
        return False
    with path.open("wb+") as f:
        f.write(b"# migrasim project config. Scenario `set` directives still take precedence.\n")
        f.write(
            yaml.safe_dump(
                MigrasimConfig().model_dump(exclude_none=True),
                encoding="utf8",
                allow_unicode=True,
                width=120,
                sort_keys=False,
            )
        )
    return True


def resolve_out_dir(option: Path | None, config: MigrasimConfig) -> Path:
    """
    `--out-dir` beats the `MIGRASIM_OUT_DIR` environ variable, which beats the config `out_dir`, then `./out`.
    """
    if option is not None:
        return option
    return Path(os.getenv("MIGRASIM_OUT_DIR") or config.out_dir or DEFAULT_OUT_DIR)


# Scenario and outputs


def read_scenario(path: Path, config: MigrasimConfig | None = None) -> Scenario:
    try:
        text = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise ScenarioError(f"no such scenario file: {path}") from None
    except UnicodeDecodeError as e:
        raise ScenarioError(f"{path} is not UTF-8 text ({e.reason} at byte {e.start})") from None
    return parse_scenario(text, path.stem, (config or MigrasimConfig()).constants)


def write_outputs(output: RunOutput, out_dir: Path, trace: bool = False) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[tuple[str, str]] = [
        ("migrations.csv", output.migrations_csv),
        ("sessions.csv", output.sessions_csv),
        ("requests.csv", output.requests_csv),
    ]
    if trace:
        files.append(("trace.log", output.trace))

    written: list[Path] = []
    for filename, content in files:
        path = out_dir / filename
        # "\n" line endings on every platform
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write(content)
        written.append(path)
    return written
