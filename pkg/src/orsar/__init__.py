"""Object-centric operating-room activity recognition on synthetic scene graphs."""

__version__ = "0.1.0"
