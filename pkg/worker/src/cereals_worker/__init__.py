"""Reference worker for the cereals external-learner protocol."""

__version__ = "0.1.0"

PROTOCOL_VERSION = 1
