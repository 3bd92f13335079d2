"""Qubit layouts and the periodic schedule of 2-qubit gate positions."""

from __future__ import annotations

from dataclasses import dataclass, field


class InvalidLayoutError(ValueError):
    pass


@dataclass(frozen=True)
class QubitLayout:
    """A set of qubits plus a periodic schedule of 2-qubit gate positions.

    ``layers[t]`` lists the qubit pairs acted on in layer ``t`` of the
    schedule; the schedule repeats with period ``p = len(layers)``.
    Pairs within a layer are disjoint, so their gates commute.
    """

    n: int
    dimension: int
    layers: tuple[tuple[tuple[int, int], ...], ...]
    shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.n < 2:
            raise InvalidLayoutError(f"need at least 2 qubits, got {self.n}")
        if len(self.layers) < 1:
            raise InvalidLayoutError("schedule needs at least one layer")
        for t, layer in enumerate(self.layers):
            seen = set()
            for a, b in layer:
                if not (0 <= a < self.n and 0 <= b < self.n) or a == b:
                    raise InvalidLayoutError(f"bad pair ({a},{b}) in layer {t}")
                if a in seen or b in seen:
                    raise InvalidLayoutError(f"qubit reused within layer {t}")
                seen.update((a, b))

    @property
    def period(self) -> int:
        return len(self.layers)

    @property
    def n_gates(self) -> int:
        """Total number of 2-qubit gates in one schedule period."""
        return sum(len(layer) for layer in self.layers)

    def layer(self, t: int) -> tuple[tuple[int, int], ...]:
        """Gate positions of circuit layer ``t`` (1-based depth index)."""
        return self.layers[(t - 1) % self.period]

    def all_pairs(self) -> list[tuple[int, int]]:
        """Every gate position of one period, in schedule order."""
        return [pair for layer in self.layers for pair in layer]


def build_chain(n: int) -> QubitLayout:
    """Open 1-D chain with period-2 brickwork: even bonds, then odd bonds."""
    if n < 2:
        raise InvalidLayoutError(f"chain needs n >= 2, got {n}")
    even = tuple((i, i + 1) for i in range(0, n - 1, 2))
    odd = tuple((i, i + 1) for i in range(1, n - 1, 2))
    return QubitLayout(n=n, dimension=1, layers=(even, odd), shape=(n,))


def build_grid(rows: int, cols: int) -> QubitLayout:
    """Open 2-D grid with period-4 staggered brickwork.

    Layers 0/1 are horizontal bonds and layers 2/3 vertical bonds, each
    orientation split by the checkerboard parity of the bond's (row, col)
    anchor so that no qubit is touched twice within a layer.
    """
    if rows < 2 or cols < 2:
        raise InvalidLayoutError(f"grid needs rows, cols >= 2, got {rows}x{cols}")

    def q(r, c):
        return r * cols + c

    horiz = [[], []]
    for r in range(rows):
        for c in range(cols - 1):
            horiz[(r + c) % 2].append((q(r, c), q(r, c + 1)))
    vert = [[], []]
    for r in range(rows - 1):
        for c in range(cols):
            vert[(r + c) % 2].append((q(r, c), q(r + 1, c)))
    layers = tuple(tuple(layer) for layer in (horiz[0], horiz[1], vert[0], vert[1]))
    return QubitLayout(n=rows * cols, dimension=2, layers=layers, shape=(rows, cols))


def recommended_max_depth(n: int, dimension: int) -> int:
    """Depth budget of roughly ten times the lattice's linear size."""
    if n < 1:
        raise InvalidLayoutError(f"need n >= 1, got {n}")
    if dimension not in (1, 2):
        raise InvalidLayoutError(f"dimension must be 1 or 2, got {dimension}")
    return int(round(10.0 * n ** (1.0 / dimension)))
