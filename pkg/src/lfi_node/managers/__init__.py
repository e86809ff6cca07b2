"""
File-backed managers for lfi-node run artifacts.
"""

from .report_manager import ReportManager

__all__ = ["ReportManager"]
