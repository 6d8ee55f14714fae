"""Binary snapshots of the Elsasser state and the label residuals.

Layout (little endian): a header ``<4sIIdddI`` holding the magic ``ALFV``,
format version, n, L, mu, t and the field count, followed by float64
samples of z+ (3 components), z- (3), phi+ (3) and phi- (3), each stored
with x1 varying fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .characteristics import LabelFields, compute_weights
from .errors import SnapshotError
from .solver import ElsasserState
from .spectral import Grid

MAGIC = b"ALFV"
VERSION = 1
N_FIELDS = 12
HEADER = struct.Struct("<4sIIdddI")


@dataclass(frozen=True)
class Snapshot:
    n: int
    L: float
    mu: float
    t: float
    z_plus: np.ndarray
    z_minus: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray

    @classmethod
    def from_run(cls, state: ElsasserState, labels: LabelFields, mu: float) -> "Snapshot":
        g = state.grid
        return cls(g.n, g.L, mu, state.t, state.z_plus, state.z_minus,
                   labels.phi_plus, labels.phi_minus)

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.L)

    def state(self) -> ElsasserState:
        return ElsasserState(self.grid, self.t, self.z_plus, self.z_minus)

    def labels(self, R: float = 100.0) -> LabelFields:
        return compute_weights(LabelFields(self.grid, self.t, self.phi_plus, self.phi_minus, R))

    def fields(self) -> list[np.ndarray]:
        return [*self.z_plus, *self.z_minus, *self.phi_plus, *self.phi_minus]


def to_bytes(snap: Snapshot) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, snap.n, snap.L, snap.mu, snap.t, N_FIELDS)]
    for f in snap.fields():
        parts.append(np.asarray(f, dtype="<f8").ravel(order="F").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> Snapshot:
    if len(data) < HEADER.size:
        raise SnapshotError("file shorter than the snapshot header")
    magic, version, n, L, mu, t, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if count != N_FIELDS:
        raise SnapshotError(f"expected {N_FIELDS} fields, header says {count}")
    expected = HEADER.size + count * n**3 * 8
    if len(data) != expected:
        raise SnapshotError(f"payload length {len(data)} differs from header-implied {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=HEADER.size).astype(np.float64)
    cube = flat.reshape(count, n**3)
    fields = [c.reshape((n, n, n), order="F") for c in cube]
    return Snapshot(n, L, mu, t, np.array(fields[0:3]), np.array(fields[3:6]),
                    np.array(fields[6:9]), np.array(fields[9:12]))


def write_snapshot(path, snap: Snapshot) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(snap))


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
