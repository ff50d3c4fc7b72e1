"""Contract-driven multi-agent software production harness."""

__version__ = "0.1.0"
