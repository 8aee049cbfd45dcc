"""A miniature three-tier grid middleware: abstract jobs, a DAG engine, vsites, a gateway and a sweep broker."""

from __future__ import annotations

__version__ = "0.1.0"
