"""Offline figure generation for polyfk run outputs (CSV + legacy VTK)."""

__version__ = "0.1.0"

from .convergence import plot_convergence
from .field import front_position, plot_field
from .readers import (SchemaError, read_activation_csv, read_convergence_csv,
                      read_series_csv, read_vtk_polydata)
from .series import plot_series
