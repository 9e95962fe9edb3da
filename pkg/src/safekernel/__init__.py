"""safekernel: learn a supervisor's safe set and supervise robots with it."""

__version__ = "0.1.0"
