"""Kraus-form noise channels: random generation, fidelities, equal-trace rotation.

All channels use the uniform-weight convention: a channel with operators
``K_1..K_m`` acts as ``rho -> (1/m) sum_k K_k rho K_k^dag``, so Monte-Carlo
sampling a channel is a uniform draw of the operator index.  Weighted Kraus
sets are folded into this convention by rescaling each operator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import product as iproduct
from pathlib import Path

import numpy as np

from .gates import ISWAP, ONE_QUBIT_LABELS, PAULI_I, PAULI_X, PAULI_Y, PAULI_Z
from .geometry import QubitLayout

COMPLETENESS_ATOL = 1e-10


class ChannelError(ValueError):
    pass


class NoRotationTargetError(ChannelError):
    """Raised when a channel is all-traceless and has no equal-trace basis."""


@dataclass(frozen=True)
class KrausChannel:
    """Trace-preserving map in uniform-weight Kraus form.

    ``kraus`` has shape (n_k, d, d); the channel is the uniform average of
    the n_k conjugations.  Completeness (1/n_k) sum K^dag K = I is checked
    on construction.
    """

    dim: int
    kraus: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kraus, dtype=complex)
        if k.ndim != 3 or k.shape[1:] != (self.dim, self.dim) or k.shape[0] < 1:
            raise ChannelError(f"kraus array has shape {k.shape}, expected (n, {self.dim}, {self.dim})")
        object.__setattr__(self, "kraus", k)
        ident = np.einsum("kij,kil->jl", k.conj(), k) / k.shape[0]
        err = np.abs(ident - np.eye(self.dim)).max()
        if err > COMPLETENESS_ATOL:
            raise ChannelError(f"completeness violated by {err:.3e}")

    @property
    def n_kraus(self) -> int:
        return self.kraus.shape[0]

    def traces(self) -> np.ndarray:
        return np.einsum("kii->k", self.kraus)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return np.einsum("kij,jl,kml->im", self.kraus, rho, self.kraus.conj()) / self.n_kraus

    def dagger_ops(self) -> np.ndarray:
        """Stacked K^dag, as applied to the backward wavefunction."""
        return self.kraus.conj().transpose(0, 2, 1)


def identity_channel(dim: int) -> KrausChannel:
    return KrausChannel(dim, np.eye(dim, dtype=complex)[None, :, :])


def unitary_channel(u: np.ndarray) -> KrausChannel:
    return KrausChannel(u.shape[0], np.asarray(u, dtype=complex)[None, :, :])


def _pauli_basis(n_qubits: int) -> list[np.ndarray]:
    singles = [PAULI_I, PAULI_X, PAULI_Y, PAULI_Z]
    ops = []
    for combo in iproduct(singles, repeat=n_qubits):
        m = combo[0]
        for factor in combo[1:]:
            m = np.kron(m, factor)
        ops.append(m)
    return ops


def depolarizing_channel(dim: int, fidelity: float) -> KrausChannel:
    """Pauli channel with entanglement fidelity ``fidelity``, uniform on errors."""
    if dim not in (2, 4):
        raise ChannelError("depolarizing_channel supports 1 or 2 qubits")
    if not 0.0 <= fidelity <= 1.0:
        raise ChannelError(f"fidelity must lie in [0, 1], got {fidelity}")
    paulis = _pauli_basis(1 if dim == 2 else 2)
    d2 = dim * dim
    weights = np.full(d2, (1.0 - fidelity) / (d2 - 1))
    weights[0] = fidelity
    ops = np.stack([np.sqrt(d2 * w) * p for w, p in zip(weights, paulis)])
    return KrausChannel(dim, ops)


def mix_channels(pairs: list[tuple[float, KrausChannel]]) -> KrausChannel:
    """Convex combination of channels, folded into one uniform-weight Kraus list."""
    weights = np.array([w for w, _ in pairs])
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ChannelError("mixture weights must be nonnegative and sum to 1")
    dim = pairs[0][1].dim
    n_tot = sum(ch.n_kraus for _, ch in pairs)
    ops = [np.sqrt(n_tot * w / ch.n_kraus) * ch.kraus for w, ch in pairs]
    return KrausChannel(dim, np.concatenate(ops, axis=0))


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from the QR factorization of a Ginibre matrix."""
    if dim < 1:
        raise ChannelError(f"dim must be >= 1, got {dim}")
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_channel_m(dim: int, m: int, rng: np.random.Generator) -> KrausChannel:
    """Random channel from a Haar m*dim x dim semi-unitary, sliced into m operators."""
    if not 1 <= m <= dim * dim:
        raise ChannelError(f"Kraus count m must lie in [1, {dim * dim}], got {m}")
    semi = haar_unitary(m * dim, rng)[:, :dim]
    ops = np.sqrt(m) * semi.reshape(m, dim, dim)
    return KrausChannel(dim, ops)


def random_mixed_channel(dim: int, rng: np.random.Generator) -> KrausChannel:
    """Equal-weight average over the m = 1 .. dim^2 random channels.

    Single-m draws concentrate near the depolarizing channel as m grows, so
    the average gives a broader yet still generic channel distribution.
    """
    d2 = dim * dim
    parts = [(1.0 / d2, random_channel_m(dim, m, rng)) for m in range(1, d2 + 1)]
    return mix_channels(parts)


def coherent_unitary(dim: int, p: float, rng: np.random.Generator, gauss_scale: float = 1.0) -> np.ndarray:
    """Random coherent error exp(i sqrt(p/(dim-1)) H), infidelity roughly p.

    H is the Hermitization (G + G^dag)/2 of a matrix with unit-variance real
    and imaginary Gaussian entries; ``gauss_scale`` rescales that variance.
    """
    if p < 0:
        raise ChannelError(f"infidelity scale p must be >= 0, got {p}")
    g = gauss_scale * (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
    h = (g + g.conj().T) / 2
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * np.sqrt(p / (dim - 1)) * w)) @ v.conj().T


def noise_channel(dim: int, p: float, rng: np.random.Generator) -> KrausChannel:
    """Generic random noise channel with entanglement fidelity roughly 1 - p.

    A coherent error U wraps a mixture of the identity and a broad random
    channel; the two strengths p', p'' are drawn uniformly from
    [p/sqrt(2), sqrt(2) p].  p is capped at 0.1, beyond which the 1 - p
    fidelity statement degrades.
    """
    if not 0.0 <= p <= 0.1:
        raise ChannelError(f"p must lie in [0, 0.1], got {p}")
    if p == 0.0:
        return identity_channel(dim)
    p_mix, p_coh = rng.uniform(p / np.sqrt(2), np.sqrt(2) * p, size=2)
    broad = random_mixed_channel(dim, rng)
    mixed = mix_channels([(1.0 - p_mix / 2, identity_channel(dim)), (p_mix / 2, broad)])
    u = coherent_unitary(dim, p_coh / 2, rng)
    return KrausChannel(dim, np.einsum("ij,kjl->kil", u, mixed.kraus))


def entanglement_fidelity(ch: KrausChannel) -> float:
    """Overlap-with-identity fidelity (1/n_k) sum_k |tr K_k|^2 / d^2."""
    tr = ch.traces()
    return float((np.abs(tr) ** 2).mean() / ch.dim**2)


def equal_trace_basis(ch: KrausChannel) -> KrausChannel:
    """Remix the Kraus list so every operator has the same (real, nonnegative) trace.

    A global phase aligns the trace vector with the uniform direction, then a
    Householder reflection maps it there exactly; the superoperator is
    unchanged and each operator ends up with trace d*sqrt(f).
    """
    v = ch.traces()
    norm = np.linalg.norm(v)
    if norm <= 0.0 or not np.isfinite(norm):
        raise NoRotationTargetError("all Kraus operators are traceless; no equal-trace basis")
    m = ch.n_kraus
    u = np.full(m, 1.0 / np.sqrt(m))
    phase = u @ v
    theta = -np.angle(phase) if abs(phase) > 0 else 0.0
    v_rot = np.exp(1j * theta) * v
    w = norm * u
    z = v_rot - w
    zz = np.vdot(z, z).real
    if zz < 1e-24 * norm**2:
        mix = np.exp(1j * theta) * np.eye(m)
    else:
        householder = np.eye(m, dtype=complex) - 2.0 * np.outer(z, z.conj()) / zz
        mix = householder * np.exp(1j * theta)
    return KrausChannel(ch.dim, np.tensordot(mix, ch.kraus, axes=(1, 0)))


# ---------------------------------------------------------------------------
# Superoperators
# ---------------------------------------------------------------------------

MAX_SUPEROP_DIM = 16  # dense d^2 x d^2 representation; desk-scale guard


def kraus_superoperator(ch: KrausChannel) -> np.ndarray:
    """Dense matrix acting on row-major vectorized density matrices."""
    return np.einsum("kij,klm->iljm", ch.kraus, ch.kraus.conj()).reshape(ch.dim**2, ch.dim**2) / ch.n_kraus


def unitary_superoperator(u: np.ndarray) -> np.ndarray:
    return np.kron(u, u.conj())


def embed_operator(m: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Expand an operator on ``qubits`` to the full 2^n space.

    Qubit 0 is the least significant bit of the basis index; the first entry
    of ``qubits`` is the most significant axis of ``m``.
    """
    k = len(qubits)
    if m.shape != (2**k, 2**k):
        raise ChannelError(f"operator shape {m.shape} does not match {k} qubits")
    if len(set(qubits)) != k or any(not 0 <= q < n for q in qubits):
        raise ChannelError(f"bad qubit tuple {qubits} for n={n}")
    order = list(qubits) + [q for q in range(n) if q not in qubits]
    big = m
    for _ in range(n - k):
        big = np.kron(big, np.eye(2))
    # big's basis ordering is MSB-first in `order`; map to the bit convention
    perm = np.zeros(2**n, dtype=np.intp)
    for x in range(2**n):
        y = 0
        for j, q in enumerate(order):
            y |= ((x >> q) & 1) << (n - 1 - j)
        perm[x] = y
    return big[np.ix_(perm, perm)]


def compose_superoperator(ops: list[tuple], n_qubits: int) -> np.ndarray:
    """Superoperator of a sequence of unitaries and channels, in application order.

    Each entry is ``(op, qubits)`` where ``op`` is a unitary matrix or a
    KrausChannel acting on the given qubit tuple.
    """
    dim = 2**n_qubits
    if dim > MAX_SUPEROP_DIM:
        raise ChannelError(f"dense superoperator limited to {MAX_SUPEROP_DIM}-dim Hilbert space, got 2^{n_qubits}")
    total = np.eye(dim * dim, dtype=complex)
    for op, qubits in ops:
        if isinstance(op, KrausChannel):
            if op.dim != 2 ** len(qubits):
                raise ChannelError(f"channel dim {op.dim} does not match qubits {qubits}")
            embedded = np.stack([embed_operator(k, tuple(qubits), n_qubits) for k in op.kraus])
            s = np.einsum("kij,klm->iljm", embedded, embedded.conj()).reshape(dim**2, dim**2) / op.n_kraus
        else:
            full = embed_operator(np.asarray(op, dtype=complex), tuple(qubits), n_qubits)
            s = unitary_superoperator(full)
        total = s @ total
    return total


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Per-position and per-(qubit, gate-label) noise channels for a layout.

    ``two_qubit`` holds the channel fired after each iSWAP; ``one_qubit``
    holds one channel per (qubit, label) for all six 1-qubit gate labels.
    ``two_qubit_back`` optionally overrides the iSWAP channel on the
    backward leg (default: same channel both legs).  SPAM ensembles default
    to the ideal zero state.
    """

    layout: QubitLayout
    two_qubit: dict
    one_qubit: dict
    p2: float
    p1: float
    two_qubit_back: dict | None = None
    spam_init: object | None = None
    spam_fin: object | None = None
    seed: int | None = None
    equal_trace: bool = False

    def __post_init__(self):
        for pair in self.layout.all_pairs():
            if pair not in self.two_qubit:
                raise ChannelError(f"missing 2-qubit channel for position {pair}")
            if self.two_qubit_back is not None and pair not in self.two_qubit_back:
                raise ChannelError(f"missing backward 2-qubit channel for position {pair}")
        for q in range(self.layout.n):
            for lab in ONE_QUBIT_LABELS:
                if (q, lab) not in self.one_qubit:
                    raise ChannelError(f"missing 1-qubit channel for qubit {q}, label {lab}")

    def backward_two_qubit(self, pair) -> KrausChannel:
        if self.two_qubit_back is not None:
            return self.two_qubit_back[pair]
        return self.two_qubit[pair]


def build_noise_model(
    layout: QubitLayout,
    p2: float,
    seed: int,
    *,
    equal_trace: bool = True,
) -> NoiseModel:
    """Draw the full random noise model for a layout, deterministically from ``seed``.

    One fresh 2-qubit channel per lattice pair and one fresh 1-qubit channel
    per (qubit, label), with p1 = 0.1 p2.  Channels are rotated to the
    equal-trace Kraus basis unless ``equal_trace`` is False.
    """
    if not 0.0 <= p2 <= 0.1:
        raise ChannelError(f"p2 must lie in [0, 0.1], got {p2}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    p1 = 0.1 * p2
    two = {pair: noise_channel(4, p2, rng) for pair in layout.all_pairs()}
    one = {
        (q, lab): noise_channel(2, p1, rng)
        for q in range(layout.n)
        for lab in ONE_QUBIT_LABELS
    }
    model = NoiseModel(layout=layout, two_qubit=two, one_qubit=one, p2=p2, p1=p1, seed=seed)
    return equal_trace_model(model) if equal_trace else model


def _rotate(ch: KrausChannel) -> KrausChannel:
    try:
        return equal_trace_basis(ch)
    except NoRotationTargetError:
        return ch


def equal_trace_model(model: NoiseModel) -> NoiseModel:
    """Rotate every channel of a model to the equal-trace basis."""
    back = None
    if model.two_qubit_back is not None:
        back = {pair: _rotate(ch) for pair, ch in model.two_qubit_back.items()}
    return replace(
        model,
        two_qubit={pair: _rotate(ch) for pair, ch in model.two_qubit.items()},
        one_qubit={key: _rotate(ch) for key, ch in model.one_qubit.items()},
        two_qubit_back=back,
        equal_trace=True,
    )


# ---------------------------------------------------------------------------
# Persistence (versioned, text-only JSON)
# ---------------------------------------------------------------------------

_FORMAT = "echosim-noise-model/1"


def _channel_to_json(ch: KrausChannel) -> dict:
    entries = np.stack([ch.kraus.real, ch.kraus.imag], axis=-1)
    return {"dim": ch.dim, "kraus": entries.tolist()}


def _channel_from_json(obj: dict) -> KrausChannel:
    arr = np.asarray(obj["kraus"], dtype=float)
    return KrausChannel(int(obj["dim"]), arr[..., 0] + 1j * arr[..., 1])


def save_noise_model(model: NoiseModel, path: str | Path) -> None:
    spam_q = []
    for ens in (model.spam_init, model.spam_fin):
        if ens is None:
            spam_q.append(None)
        else:
            q = getattr(ens, "flip_probability", None)
            if q is None:
                raise ChannelError("only default product-flip SPAM ensembles are persistable")
            spam_q.append(q)
    doc = {
        "format": _FORMAT,
        "p2": model.p2,
        "p1": model.p1,
        "seed": model.seed,
        "equal_trace": model.equal_trace,
        "spam_q": spam_q,
        "layout": {
            "n": model.layout.n,
            "dimension": model.layout.dimension,
            "shape": list(model.layout.shape),
            "layers": [[list(p) for p in layer] for layer in model.layout.layers],
        },
        "two_qubit": [
            {"pair": list(pair), **_channel_to_json(ch)} for pair, ch in sorted(model.two_qubit.items())
        ],
        "two_qubit_back": None
        if model.two_qubit_back is None
        else [{"pair": list(pair), **_channel_to_json(ch)} for pair, ch in sorted(model.two_qubit_back.items())],
        "one_qubit": [
            {"qubit": q, "label": lab, **_channel_to_json(ch)}
            for (q, lab), ch in sorted(model.one_qubit.items())
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_noise_model(path: str | Path) -> NoiseModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != _FORMAT:
        raise ChannelError(f"unrecognized noise-model format: {doc.get('format')!r}")
    lay = doc["layout"]
    layout = QubitLayout(
        n=lay["n"],
        dimension=lay["dimension"],
        layers=tuple(tuple(tuple(p) for p in layer) for layer in lay["layers"]),
        shape=tuple(lay["shape"]),
    )
    two = {tuple(item["pair"]): _channel_from_json(item) for item in doc["two_qubit"]}
    back = None
    if doc.get("two_qubit_back") is not None:
        back = {tuple(item["pair"]): _channel_from_json(item) for item in doc["two_qubit_back"]}
    one = {(item["qubit"], item["label"]): _channel_from_json(item) for item in doc["one_qubit"]}
    spam = [None, None]
    for i, q in enumerate(doc.get("spam_q", [None, None])):
        if q is not None:
            from .statevec import default_spam

            spam[i] = default_spam(layout.n, q)[i]
    return NoiseModel(
        layout=layout,
        two_qubit=two,
        one_qubit=one,
        p2=doc["p2"],
        p1=doc["p1"],
        two_qubit_back=back,
        spam_init=spam[0],
        spam_fin=spam[1],
        seed=doc.get("seed"),
        equal_trace=bool(doc.get("equal_trace", False)),
    )
