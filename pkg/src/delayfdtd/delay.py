"""Boundary history of tangential traces as a fixed-capacity FIFO.

Slot j holds the trace pushed j steps ago, realizing the delayed trace on
the unit interval with nodes s_j = j/N and tau = N*dt exactly.  Advancing
the ring is the exact solution operator of the transport equation
tau dZ/dt + dZ/ds = 0 on that grid, so the delay tap Z|s=1 reproduces the
trace pushed exactly N steps earlier.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError

TANGENT_TOL = 1e-12


class DelayRing:
    """Per-sample circular array of N+1 tangential 3-vectors."""

    def __init__(self, n_slots: int, normals: np.ndarray):
        if n_slots < 1:
            raise ConfigError(f"history depth must be >= 1, got {n_slots}")
        self.N = int(n_slots)
        self.normals = np.asarray(normals, dtype=float)
        self.n_samples = self.normals.shape[0]
        self._buf = np.zeros((self.N + 1, self.n_samples, 3))
        self._cursor = 0  # physical index of logical slot 0

    # -- slot access --------------------------------------------------------

    def _phys(self, j) -> np.ndarray:
        return (self._cursor + np.atleast_1d(j)) % (self.N + 1)

    def slot(self, j: int) -> np.ndarray:
        """Logical slot j (s_j = j/N); 0 is the most recent push."""
        if not (0 <= j <= self.N):
            raise ContractError(f"slot index {j} outside 0..{self.N}")
        return self._buf[(self._cursor + j) % (self.N + 1)]

    def slots(self) -> np.ndarray:
        """(N+1, n_samples, 3) array in logical order."""
        return self._buf[self._phys(np.arange(self.N + 1))]

    # -- construction -------------------------------------------------------

    def _validate(self, traces: np.ndarray, what: str):
        dots = np.abs(np.einsum("...i,...i->...", traces, self.normals))
        scale = 1.0 + np.linalg.norm(traces, axis=-1)
        if np.any(dots > TANGENT_TOL * scale):
            raise ContractError(
                f"{what} is not tangential: max |v.nu| = {float(np.max(dots)):.3e}"
            )

    def fill(self, history) -> None:
        """Set slot j to history(s_j) for all samples.

        `history` is a callable s -> (n_samples, 3) array or a constant
        (n_samples, 3) array.
        """
        for j in range(self.N + 1):
            vals = history(j / self.N) if callable(history) else history
            vals = np.broadcast_to(np.asarray(vals, dtype=float), (self.n_samples, 3))
            self._validate(vals, f"history at s={j}/{self.N}")
            self._buf[(self._cursor + j) % (self.N + 1)] = vals

    # -- dynamics ------------------------------------------------------------

    def advance(self, new_trace: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Shift the FIFO by one slot and write the new trace into slot 0.

        Returns (Z|s=0, Z|s=1) after the shift.
        """
        new_trace = np.asarray(new_trace, dtype=float)
        self._validate(new_trace, "pushed trace")
        self._cursor = (self._cursor - 1) % (self.N + 1)
        self._buf[self._cursor] = new_trace
        return self.slot(0), self.slot(self.N)

    # -- quadrature ----------------------------------------------------------

    def s_quadrature(self) -> np.ndarray:
        """Trapezoid rule for the inner integral of |Z|^2 over s, per sample."""
        Z = self.slots()
        sq = np.einsum("jsi,jsi->js", Z, Z)
        return (0.5 * sq[0] + sq[1:-1].sum(axis=0) + 0.5 * sq[-1]) / self.N

    def s_energy(self) -> np.ndarray:
        """Midpoint rule on adjacent-slot averages, per sample.

        This is the quadrature whose shift telescoping matches the
        time-centered boundary work term exactly, so the discrete energy
        balance holds to round-off.
        """
        Z = self.slots()
        mid = 0.5 * (Z[:-1] + Z[1:])
        return np.einsum("jsi,jsi->s", mid, mid) / self.N


def init_history(kind: str, n_slots: int, normals: np.ndarray, *, value=None, initial_trace=None) -> DelayRing:
    """Build a ring holding one of the preset histories.

    kind "zero": all slots zero; "constant": every slot equals `value`
    (rejected unless tangential at every sample); "replay": every slot
    equals the initial boundary trace `initial_trace`.
    """
    ring = DelayRing(n_slots, normals)
    if kind == "zero":
        return ring
    if kind == "constant":
        if value is None:
            raise ConfigError("constant history needs a value")
        vals = np.broadcast_to(np.asarray(value, dtype=float), (ring.n_samples, 3))
        ring.fill(vals)
        return ring
    if kind == "replay":
        if initial_trace is None:
            raise ConfigError("replay history needs the initial trace")
        ring.fill(np.asarray(initial_trace, dtype=float))
        return ring
    raise ConfigError(f"unknown history kind {kind!r}")


def load_history_csv(path, n_slots: int, normals: np.ndarray) -> DelayRing:
    """Read a `step,sample_id,s_index,vx,vy,vz` dump into a fresh ring."""
    ring = DelayRing(n_slots, normals)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    vals = np.zeros((n_slots + 1, ring.n_samples, 3))
    for row in data:
        _, sid, j = (int(v) for v in row[:3])
        if not (0 <= j <= n_slots and 0 <= sid < ring.n_samples):
            raise ConfigError(f"{path}: slot ({sid},{j}) out of range")
        vals[j, sid] = row[3:6]
    ring.fill(lambda s: vals[round(s * n_slots)])
    return ring


def transport_residual(snapshots: list[np.ndarray], dt: float, tau: float) -> float:
    """Residual of tau dZ/dt + dZ/ds = 0 across consecutive ring snapshots.

    Each snapshot is a (N+1, n_samples, 3) logical-slot array.  With the
    shift convention (slot j at step n+1 equals slot j-1 at step n) the
    residual vanishes identically; a corrupted slot shows up localized.
    """
    if len(snapshots) < 2:
        raise ContractError("need at least two consecutive snapshots")
    N = snapshots[0].shape[0] - 1
    worst = 0.0
    for prev, cur in zip(snapshots[:-1], snapshots[1:]):
        dt_term = tau * (cur[1:] - prev[1:]) / dt
        ds_term = (prev[1:] - prev[:-1]) * N
        worst = max(worst, float(np.max(np.abs(dt_term + ds_term))))
    return worst
