try:
    from . import _latemu
    from ._latemu import *  # noqa: F401,F403
except ImportError:
    import _latemu
    from _latemu import *  # noqa: F401,F403

__version__ = _latemu.__version__
