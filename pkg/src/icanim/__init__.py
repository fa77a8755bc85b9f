"""In-context character animation at desk scale."""

__version__ = "0.1.0"
