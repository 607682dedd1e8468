"""Publication-style figures from rpmag output files.

Renders sweep heatmaps, orientation yield profiles, static/driven/
controlled comparison panels, and single-run traces. Everything is
file-driven: the simulator is never imported, only its documented CSV
schemas and ``*.meta.json`` sidecars are consumed.
"""

__version__ = "0.1.0"

from .figures import (  # noqa: F401
    SchemaError,
    plot_comparison,
    plot_heatmap,
    plot_trace,
    plot_yield_profile,
)
