"""Fairness-aware training experiments: metrics, objective, data and trainer."""

try:
    from ._fairbase import *  # noqa: F401,F403  (installed wheel layout)
    from ._fairbase import __version__  # noqa: F401
except ImportError:  # pragma: no cover - build-tree layout
    from _fairbase import *  # noqa: F401,F403
    from _fairbase import __version__  # noqa: F401
