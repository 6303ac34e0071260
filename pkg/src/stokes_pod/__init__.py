"""Projection finite elements and POD reduced-order models for unsteady Stokes flow.

The package is organised bottom-up:

- :mod:`stokes_pod.mesh`          structured SWNE triangulations of the unit square
- :mod:`stokes_pod.linalg`        CSR helpers, CG, Jacobi eigensolvers, dense LU
- :mod:`stokes_pod.fem`           P1 operators, loads, interpolation, error norms
- :mod:`stokes_pod.manufactured`  the manufactured test problem
- :mod:`stokes_pod.fom`           the stabilised projection time stepper
- :mod:`stokes_pod.pod`           snapshot sets and POD bases
- :mod:`stokes_pod.rom`           the reduced projection stepper
- :mod:`stokes_pod.io`, :mod:`stokes_pod.config`, :mod:`stokes_pod.harness`,
  :mod:`stokes_pod.cli`           files, configuration, studies and the CLI
"""

__version__ = "0.1.0"
