"""
Dependency injection container for artikin.
Wires configuration and pipeline services for the CLI.
"""
import inspect
from typing import Any, Callable, Dict, Type, TypeVar

from src.utils import ConfigurationError, setup_logger

T = TypeVar('T')
logger = setup_logger(__name__)


class Container:
    """Simple dependency injection container."""

    def __init__(self):
        self._services: Dict[Type, Any] = {}
        self._singletons: Dict[Type, Any] = {}
        self._factories: Dict[Type, Callable] = {}

    def register_singleton(self, interface: Type[T], implementation: Type[T] = None) -> None:
        """
        Register a singleton service.

        Args:
            interface: Type used for lookups
            implementation: Concrete class, defaults to the interface
        """
        impl = implementation or interface
        self._singletons[interface] = impl
        self._services.pop(interface, None)
        logger.debug(f"Registered singleton: {interface.__name__} -> {impl.__name__}")

    def register_factory(self, interface: Type[T], factory: Callable[[], T]) -> None:
        """Register a factory called on every resolve."""
        self._factories[interface] = factory
        logger.debug(f"Registered factory: {interface.__name__}")

    def register_instance(self, interface: Type[T], instance: T) -> None:
        """Register a pre-created instance."""
        self._services[interface] = instance
        self._singletons.pop(interface, None)
        logger.debug(f"Registered instance: {interface.__name__}")

    def is_registered(self, interface: Type) -> bool:
        return interface in self._factories or interface in self._singletons or interface in self._services

    def resolve(self, interface: Type[T]) -> T:
        """
        Resolve a service by its interface.

        Raises:
            ConfigurationError: If the service is not registered
        """
        if interface in self._factories:
            return self._factories[interface]()

        if interface in self._singletons:
            if interface not in self._services:
                self._services[interface] = self._create_instance(self._singletons[interface])
            return self._services[interface]

        if interface in self._services:
            return self._services[interface]

        raise ConfigurationError(f"Service {interface.__name__} is not registered")

    def reset(self) -> None:
        """Drop every registration (used between CLI invocations and in tests)."""
        self._services.clear()
        self._singletons.clear()
        self._factories.clear()

    def _create_instance(self, cls: Type[T]) -> T:
        """Instantiate cls, resolving annotated constructor parameters from the container."""
        sig = inspect.signature(cls.__init__)
        params = {}
        for name, param in sig.parameters.items():
            if name == 'self' or param.annotation is param.empty or isinstance(param.annotation, str):
                continue
            if self.is_registered(param.annotation):
                params[name] = self.resolve(param.annotation)
            elif param.default is param.empty:
                raise ConfigurationError(
                    f"Cannot resolve dependency {getattr(param.annotation, '__name__', param.annotation)} "
                    f"for {cls.__name__}")
        instance = cls(**params)
        logger.debug(f"Created instance: {cls.__name__}")
        return instance


# Global container instance
container = Container()
