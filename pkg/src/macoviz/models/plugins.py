"""Model descriptors: ``ref:<seed>[:<arch>]`` or ``plugin:<name>[:<path>]``.

Built-in plugins are ``reference`` (a MACOMDL1 file written by
:func:`save_network`) and ``zero`` (constant-output model). Third-party
loaders register through :func:`register_plugin` or the ``macoviz.models``
entry-point group; a loader takes the optional path string and returns a
:class:`ModelAdapter`.
"""

from __future__ import annotations

from importlib.metadata import entry_points

from ..errors import InvalidInputError, UnsupportedModelError
from .adapter import ModelAdapter, zero_model
from .nets import ARCHITECTURES, REFERENCE_ARCH, load_network, reference_model

ENTRY_POINT_GROUP = "macoviz.models"

_PLUGINS = {}


def register_plugin(name: str, loader) -> None:
    _PLUGINS[name] = loader


def _reference_file(path):
    if not path:
        raise InvalidInputError("plugin:reference needs a file path")
    return load_network(path)


register_plugin("reference", _reference_file)
register_plugin("zero", lambda path=None: zero_model())


def available_plugins() -> list[str]:
    names = set(_PLUGINS)
    names.update(ep.name for ep in entry_points(group=ENTRY_POINT_GROUP))
    return sorted(names)


def _find(name):
    if name in _PLUGINS:
        return _PLUGINS[name]
    for ep in entry_points(group=ENTRY_POINT_GROUP):
        if ep.name == name:
            return ep.load()
    raise UnsupportedModelError(f"no model plugin {name!r}; available: {', '.join(available_plugins())}")


def load_model(descriptor: str) -> ModelAdapter:
    """Resolve a model descriptor to an adapter."""
    kind, _, rest = descriptor.partition(":")
    if kind == "ref":
        seed, _, arch = rest.partition(":")
        arch = arch or REFERENCE_ARCH
        if arch not in ARCHITECTURES:
            raise UnsupportedModelError(f"unknown architecture {arch!r}; known: {', '.join(ARCHITECTURES)}")
        try:
            seed = int(seed or 0)
        except ValueError:
            raise UnsupportedModelError(f"bad seed in model descriptor {descriptor!r}") from None
        return reference_model(seed, arch)
    if kind == "plugin" and rest:
        name, _, path = rest.partition(":")
        model = _find(name)(path or None)
        if not isinstance(model, ModelAdapter):
            raise UnsupportedModelError(f"plugin {name!r} did not return a model adapter")
        return model
    raise UnsupportedModelError(
        f"unsupported model descriptor {descriptor!r}; use ref:<seed>[:<arch>] or plugin:<name>[:<path>] "
        f"(plugins: {', '.join(available_plugins())})"
    )
