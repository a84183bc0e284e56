"""Change-driven autonomous exploration in a simulated 2D kitchen."""

__version__ = "0.1.0"
