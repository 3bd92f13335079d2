"""Dressed-iSWAP gate set: random dressings, matrices, and inverse decompositions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_W = (PAULI_X + PAULI_Y) / np.sqrt(2)

ISWAP = np.array(
    [[1, 0, 0, 0],
     [0, 0, -1j, 0],
     [0, -1j, 0, 0],
     [0, 0, 0, 1]],
    dtype=complex,
)

DRESSING_LABELS = ("sqrtX", "sqrtY", "sqrtW")
INVERSE_LABELS = ("sqrtXdagZ", "sqrtYdagZ", "sqrtWdagZ")
ONE_QUBIT_LABELS = DRESSING_LABELS + INVERSE_LABELS


def _principal_sqrt(op: np.ndarray) -> np.ndarray:
    # Hermitian involutions only; eigenphase convention: sqrt of the -1
    # eigenvalue is +i, fixing the branch identically on every platform.
    w, v = np.linalg.eigh(op)
    return (v * np.sqrt(w.astype(complex))) @ v.conj().T


_SQRT = {
    "sqrtX": _principal_sqrt(PAULI_X),
    "sqrtY": _principal_sqrt(PAULI_Y),
    "sqrtW": _principal_sqrt(PAULI_W),
}
_GATES = dict(_SQRT)
for _base, _lab in zip(DRESSING_LABELS, INVERSE_LABELS):
    _GATES[_lab] = _SQRT[_base].conj().T @ PAULI_Z


def single_qubit_gate(label: str) -> np.ndarray:
    """2x2 unitary for one of the six 1-qubit gate labels."""
    try:
        return _GATES[label].copy()
    except KeyError:
        raise ValueError(f"unknown 1-qubit gate label: {label!r}") from None


@dataclass(frozen=True)
class GateDraw:
    """One randomly dressed iSWAP: layer index, qubit pair, two dressing labels."""

    t: int
    pair: tuple[int, int]
    dressing_a: str
    dressing_b: str

    def __post_init__(self):
        for lab in (self.dressing_a, self.dressing_b):
            if lab not in DRESSING_LABELS:
                raise ValueError(f"unknown dressing label: {lab!r}")


@dataclass(frozen=True)
class ElementaryGate:
    """A single hardware gate: label, target qubits, unitary matrix."""

    label: str
    qubits: tuple[int, ...]
    matrix: np.ndarray


def dressed_iswap(draw: GateDraw) -> np.ndarray:
    """4x4 unitary: iSWAP preceded by the two dressing gates.

    The first tensor factor is the first qubit of ``draw.pair``.
    """
    g_a = _GATES[draw.dressing_a]
    g_b = _GATES[draw.dressing_b]
    return ISWAP @ np.kron(g_a, g_b)


def inverse_decomposition(draw: GateDraw) -> list[ElementaryGate]:
    """Elementary-gate sequence whose ordered product is ``dressed_iswap(draw)``†.

    Exploits iSWAP† = iSWAP (Z x Z): an iSWAP on the pair followed by the
    matching dagger-Z gate on each qubit.
    """
    a, b = draw.pair
    lab_a = INVERSE_LABELS[DRESSING_LABELS.index(draw.dressing_a)]
    lab_b = INVERSE_LABELS[DRESSING_LABELS.index(draw.dressing_b)]
    return [
        ElementaryGate("iSWAP", (a, b), ISWAP.copy()),
        ElementaryGate(lab_a, (a,), _GATES[lab_a].copy()),
        ElementaryGate(lab_b, (b,), _GATES[lab_b].copy()),
    ]


def sample_layer(layout, t: int, rng: np.random.Generator) -> list[GateDraw]:
    """Draw one layer of gates: a uniform, independent dressing pair per position."""
    if t < 1:
        raise ValueError(f"layer index must be >= 1, got {t}")
    pairs = layout.layer(t)
    idx = rng.integers(0, 3, size=(len(pairs), 2))
    return [
        GateDraw(t, pair, DRESSING_LABELS[ia], DRESSING_LABELS[ib])
        for pair, (ia, ib) in zip(pairs, idx)
    ]
