"""Particle-based first-order query answering over knowledge graphs."""

try:
    from q2p._q2p import *  # noqa: F401,F403  installed layout
except ImportError:  # in-tree use: the extension sits on sys.path from the build dir
    from _q2p import *  # noqa: F401,F403

from q2p._version import __version__  # noqa: F401
