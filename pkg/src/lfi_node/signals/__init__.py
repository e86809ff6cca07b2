"""
Trajectory data model and the data pipeline.

``trajectory`` holds the types; ``processing`` and ``dataset`` hold the
operations and are imported explicitly by callers.
"""

from .trajectory import Dataset, InputSchedule, NormStats, Trajectory

__all__ = ["Dataset", "InputSchedule", "NormStats", "Trajectory"]
