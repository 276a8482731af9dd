"""Staggered-grid Maxwell simulation with delayed absorbing boundary feedback.

Subpackages: geometry and materials (`domain`, `materials`), the boundary
law (`feedback`), the history line (`delay`), discrete operators
(`operators`), the time stepper (`solver`), energy and decay analysis
(`analysis`), stationary generator studies (`operator_lab`), and the CLI
(`config`, `cli`).
"""

__version__ = "0.1.0"
