"""Measurement-driven uplink fractional power control.

Modules, in pipeline order: ``netmodel`` (synthetic network and UE drop),
``measurements`` (histogram statistics), ``optcore`` (the stochastic convex
program), ``solver_sl`` and ``solver_ce`` (its two solvers), ``baseline``
(fixed-alpha FPC), ``evaluate`` (rates and gains) and ``cli``.
"""

__version__ = "0.1.0"
