from __future__ import annotations

from typing import TYPE_CHECKING, Any, Never, Self

if TYPE_CHECKING:
    from .config import MigrasimConfig, SimulationConstants
    from .loaders import MigrasimPaths


_unloaded: Any = object()


class UnloadedCacheAccess(Exception):
    pass


class Cache:
    """
    Process-wide state resolved once by the CLI root callback: the config file location and its content.
    Commands read from here instead of threading the config through every call.
    """

    instance: Self | None = None
    paths: MigrasimPaths = _unloaded
    config: MigrasimConfig = _unloaded

    def __new__(cls) -> Self:
        if cls.instance is None:
            cls.instance = super().__new__(cls)
        return cls.instance

    @property
    def constants(self) -> SimulationConstants:
        """Project-level defaults, before any scenario `set` directive."""
        return self.config.constants

    def __getattribute__(self, name: str) -> object:
        value = super().__getattribute__(name)
        if value is _unloaded:
            raise UnloadedCacheAccess(f"cache.{name} is read before init_cache() ran.")
        return value

    def __getattr__(self, name: str) -> Never:
        raise AttributeError(f"{name} is not held by the cache.")


cache = Cache()
