"""Hessian-alignment toolkit for domain generalization."""

try:
    from ._hessalign import *  # noqa: F401,F403
    from ._hessalign import __version__  # noqa: F401
except ImportError:  # build-tree layout: extension next to the package dir
    from _hessalign import *  # noqa: F401,F403
    from _hessalign import __version__  # noqa: F401
