"""Dense statevector Monte Carlo for the random-circuit echo.

Each trajectory evolves two wavefunctions: psi through the noisy forward
circuit and psi' through the daggered Kraus operators of the noisy backward
circuit, recording F_d = |<psi'|psi>|^2 after every depth.  All randomness
for a trajectory is drawn up front into a TrajectoryPlan so the MPS engine
can replay identical trajectories.

Bit convention: qubit 0 is the least significant bit of the amplitude index.
Multi-qubit operator matrices put the first-listed qubit on the most
significant axis (kron order).
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import NoiseModel
from .gates import DRESSING_LABELS, INVERSE_LABELS, ISWAP, PAULI_Z, _GATES
from .geometry import QubitLayout

MAX_QUBITS = 26
_STATE_BYTE_BUDGET = 64 << 20
_PLAN_BYTE_BUDGET = 96 << 20


class TrajectoryError(RuntimeError):
    """A trajectory produced non-finite amplitudes."""


class CampaignResourceError(RuntimeError):
    """The requested campaign exceeds the dense-statevector desk-scale guard."""


# ---------------------------------------------------------------------------
# States and SPAM ensembles
# ---------------------------------------------------------------------------


def zero_state(n: int) -> np.ndarray:
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = 1.0
    return amps


def apply_operator(state: np.ndarray, m: np.ndarray, qubits: tuple[int, ...]) -> np.ndarray:
    """Contract a 2^k x 2^k operator into a statevector on the given qubits."""
    n = int(np.log2(state.size))
    k = len(qubits)
    if len(set(qubits)) != k or any(not 0 <= q < n for q in qubits):
        raise ValueError(f"bad qubit tuple {qubits} for n={n}")
    if m.shape != (2**k, 2**k):
        raise ValueError(f"operator shape {m.shape} does not match {k} qubits")
    tens = state.reshape((2,) * n)
    axes = [n - 1 - q for q in qubits]
    moved = np.moveaxis(tens, axes, range(k))
    block = m @ moved.reshape(2**k, -1)
    out = np.moveaxis(block.reshape((2,) * n), range(k), axes)
    return np.ascontiguousarray(out).reshape(-1)


@dataclass(frozen=True)
class ProductFlipEnsemble:
    """Per-qubit two-member ensemble sqrt(1-q)|0> +/- sqrt(q)|1>.

    The uniform mixture is (1-q)|0><0| + q|1><1| per qubit, and every member
    has the same overlap with |0>, as equal-overlap sampling requires.  The
    global n-qubit ensemble is the product, sampled factorwise.
    """

    n: int
    flip_probability: float

    def __post_init__(self):
        if not 0.0 <= self.flip_probability < 0.5:
            raise ValueError(f"flip probability must lie in [0, 0.5), got {self.flip_probability}")

    @property
    def n_members(self) -> int:
        return 1 if self.flip_probability == 0.0 else 2

    def qubit_members(self) -> np.ndarray:
        q = self.flip_probability
        if q == 0.0:
            return np.array([[1.0, 0.0]], dtype=complex)
        a, b = np.sqrt(1.0 - q), np.sqrt(q)
        return np.array([[a, b], [a, -b]], dtype=complex)

    def zero_overlap(self) -> float:
        return (1.0 - self.flip_probability) ** (self.n / 2)

    def qubit_density(self) -> np.ndarray:
        q = self.flip_probability
        return np.array([[1.0 - q, 0.0], [0.0, q]], dtype=complex)

    def statevector(self, choices: np.ndarray) -> np.ndarray:
        """Dense member for per-qubit member ``choices`` (indexed by qubit)."""
        members = self.qubit_members()
        amps = np.ones(1, dtype=complex)
        for q in range(self.n - 1, -1, -1):
            amps = np.kron(amps, members[choices[q] % self.n_members])
        return amps


def default_spam(n: int, q: float) -> tuple[ProductFlipEnsemble, ProductFlipEnsemble]:
    """Initial and final SPAM ensembles for a per-qubit flip probability q."""
    return ProductFlipEnsemble(n, q), ProductFlipEnsemble(n, q)


def spam_overlap(spam_init, spam_fin, n: int) -> float:
    """tr(rho_fin rho_init) for product SPAM ensembles (ideal state if None)."""
    rho_i = spam_init.qubit_density() if spam_init is not None else np.diag([1.0, 0.0])
    rho_f = spam_fin.qubit_density() if spam_fin is not None else np.diag([1.0, 0.0])
    per_qubit = np.trace(rho_f @ rho_i).real
    return float(per_qubit**n)


# ---------------------------------------------------------------------------
# Trajectory plans: all randomness, drawn up front
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryPlan:
    """Every random draw of one trajectory, in a fixed documented order.

    Generator consumption order: init-SPAM member indices (n ints in {0,1}),
    final-SPAM member indices, dressing indices for all gates of all layers
    (row-major in depth then layer position), then six uniforms per gate:
    forward 1q Kraus on each pair qubit, forward 2q Kraus, backward 1q Kraus
    on each pair qubit, backward 2q Kraus.  Kraus indices are
    floor(u * n_kraus), so the stream does not depend on channel sizes.
    """

    d_max: int
    spam_init_choice: np.ndarray
    spam_fin_choice: np.ndarray
    dressings: np.ndarray  # (total_gates, 2) in 0..2
    kraus_u: np.ndarray  # (total_gates, 6) uniforms in [0, 1)


def layer_offsets(layout: QubitLayout, d_max: int) -> np.ndarray:
    """Cumulative gate counts: gates of depth t occupy [offsets[t-1], offsets[t])."""
    sizes = [len(layout.layer(t)) for t in range(1, d_max + 1)]
    return np.concatenate([[0], np.cumsum(sizes)])


def sample_plan(layout: QubitLayout, d_max: int, rng: np.random.Generator) -> TrajectoryPlan:
    total = int(layer_offsets(layout, d_max)[-1])
    return TrajectoryPlan(
        d_max=d_max,
        spam_init_choice=rng.integers(0, 2, size=layout.n),
        spam_fin_choice=rng.integers(0, 2, size=layout.n),
        dressings=rng.integers(0, 3, size=(total, 2)).astype(np.int8),
        kraus_u=rng.random((total, 6)),
    )


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index``, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# Compiled model: ideal gates folded into per-position Kraus tables
# ---------------------------------------------------------------------------

_SWAP_PERM = np.array([0, 2, 1, 3])  # exchanges the two qubits of a 4-dim basis


@dataclass
class _GateSpec:
    pair: tuple[int, int]
    lo: int  # least-significant in-frame bit of the pair (adjacent path)
    swap_kron: bool  # True when pair[0] sits on the low bit
    general: bool  # fall back to the any-position kernel
    table_fw: np.ndarray = None
    table_bw: np.ndarray = None


@dataclass
class _LayerSpec:
    frame: int
    gates: list[_GateSpec]


class CompiledModel:
    """Operator tables and layer plans for the batched trajectory engine.

    Per gate and leg everything collapses to one 4x4 operator:
    forward (K2 U_iswap)(K1a g_a (x) K1b g_b), backward
    (U_iswap^dag K2'^dag)((Z g_a) K1a'^dag (x) (Z g_b) K1b'^dag), where the
    primed channels belong to the dagger-Z labels of the inverse
    decomposition.  Backward tables are stored complex-conjugated: the
    engine evolves conj(psi') so the depth-d overlap is a plain dot product.
    2-qubit tables are stored in the basis matching each pair's in-frame bit
    order.

    On 2-D grids the vertical-bond layers run in a transposed frame
    (row-major -> column-major relabeling) so that every pair is bit-adjacent.
    """

    def __init__(self, model: NoiseModel):
        self.model = model
        layout = model.layout
        n = layout.n
        self.n = n

        self.fw1: list = []
        self.bw1: list = []
        for q in range(n):
            fw_tables, bw_tables = [], []
            for fwd_label, inv_label in zip(DRESSING_LABELS, INVERSE_LABELS):
                g = _GATES[fwd_label]
                fw_tables.append(model.one_qubit[(q, fwd_label)].kraus @ g)
                zg = PAULI_Z @ g
                k_bwd_dag = model.one_qubit[(q, inv_label)].dagger_ops()
                bw_tables.append(np.einsum("ij,kjl->kil", zg, k_bwd_dag).conj())
            self.fw1.append(self._stack(fw_tables))
            self.bw1.append(self._stack(bw_tables))

        frames = self._frame_maps(layout)
        self.frame_perms = self._frame_perms(frames, n)
        self.layer_specs: list[_LayerSpec] = []
        for layer in layout.layers:
            frame_id = self._pick_frame(layer, frames)
            gates = []
            for pair in layer:
                qa, qb = pair
                fwd = model.two_qubit[pair].kraus @ ISWAP
                bwd = np.einsum(
                    "ij,kjl->kil", ISWAP.conj().T, model.backward_two_qubit(pair).dagger_ops()
                ).conj()
                if frame_id is None:
                    spec = _GateSpec(pair, lo=0, swap_kron=False, general=True)
                else:
                    ia, ib = frames[frame_id][qa], frames[frame_id][qb]
                    swap = ia < ib
                    if swap:
                        # pair[0] on the low bit: reindex tables to hi-first basis
                        fwd = fwd[:, _SWAP_PERM][:, :, _SWAP_PERM]
                        bwd = bwd[:, _SWAP_PERM][:, :, _SWAP_PERM]
                    spec = _GateSpec(pair, lo=int(min(ia, ib)), swap_kron=swap, general=False)
                spec.table_fw = np.ascontiguousarray(fwd)
                spec.table_bw = np.ascontiguousarray(bwd)
                gates.append(spec)
            self.layer_specs.append(_LayerSpec(frame=0 if frame_id is None else frame_id, gates=gates))

    @staticmethod
    def _stack(tables: list[np.ndarray]):
        # equal Kraus counts let one fancy-index pick (label, k) per batch row
        if len({t.shape[0] for t in tables}) == 1:
            return np.stack(tables)
        return tables

    @staticmethod
    def _frame_maps(layout: QubitLayout) -> list[np.ndarray]:
        n = layout.n
        identity = np.arange(n)
        frames = [identity]
        if layout.dimension == 2 and len(layout.shape) == 2:
            rows, cols = layout.shape
            transposed = np.empty(n, dtype=np.intp)
            for r in range(rows):
                for c in range(cols):
                    transposed[r * cols + c] = c * rows + r
            frames.append(transposed)
        return frames

    @staticmethod
    def _frame_perms(frames: list[np.ndarray], n: int) -> dict:
        perms = {}
        size = 2**n
        ar = np.arange(size)
        for fid in range(1, len(frames)):
            to_frame = np.zeros(size, dtype=np.intp)
            qubit_of_bit = np.argsort(frames[fid])  # in-frame bit j holds this qubit
            for j in range(n):
                to_frame |= ((ar >> int(qubit_of_bit[j])) & 1) << j
            # amps_frame = amps0[gather]; gather[y] = original index of frame index y
            gather = np.argsort(to_frame)
            perms[(0, fid)] = gather
            perms[(fid, 0)] = to_frame
        return perms

    @staticmethod
    def _pick_frame(layer, frames) -> int | None:
        if not layer:
            return 0
        for fid, fmap in enumerate(frames):
            if all(abs(int(fmap[a]) - int(fmap[b])) == 1 for a, b in layer):
                return fid
        return None

    def table_1q(self, q: int, forward: bool) -> list[np.ndarray]:
        return self.fw1[q] if forward else self.bw1[q]


def _gather_1q(tables, labels: np.ndarray, u: np.ndarray) -> np.ndarray:
    if isinstance(tables, np.ndarray):
        n_k = tables.shape[1]
        k = np.minimum((u * n_k).astype(np.intp), n_k - 1)
        return tables[labels, k]
    out = np.empty((labels.size, 2, 2), dtype=complex)
    for lab in range(3):
        sel = labels == lab
        if sel.any():
            n_k = tables[lab].shape[0]
            k = np.minimum((u[sel] * n_k).astype(np.intp), n_k - 1)
            out[sel] = tables[lab][k]
    return out


def _gather_2q(table: np.ndarray, u: np.ndarray) -> np.ndarray:
    n_k = table.shape[0]
    k = np.minimum((u * n_k).astype(np.intp), n_k - 1)
    return table[k]


def _kron_batch(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    b = hi.shape[0]
    return np.einsum("bij,bkl->bikjl", hi, lo).reshape(b, 4, 4)


def _apply_adjacent(amps: np.ndarray, mats: np.ndarray, lo: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    left = 2 ** (n - 2 - lo)
    right = 2**lo
    if right == 1:
        a = amps.reshape(b, left, 4)
        out = np.matmul(a, mats.transpose(0, 2, 1))
        return out.reshape(b, -1)
    if right < 8:
        # short trailing axis: shuffle it into the row dimension for the gemm
        a = np.ascontiguousarray(amps.reshape(b, left, 4, right).transpose(0, 1, 3, 2))
        out = np.matmul(a.reshape(b, left * right, 4), mats.transpose(0, 2, 1))
        back = out.reshape(b, left, right, 4).transpose(0, 1, 3, 2)
        return np.ascontiguousarray(back).reshape(b, -1)
    a = amps.reshape(b, left, 4, right)
    return np.matmul(mats[:, None], a).reshape(b, -1)


def _apply_general(amps: np.ndarray, mats: np.ndarray, qa: int, qb: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    tens = amps.reshape((b,) + (2,) * n)
    axes = (1 + n - 1 - qa, 1 + n - 1 - qb)
    moved = np.moveaxis(tens, axes, (1, 2))
    block = np.matmul(mats, moved.reshape(b, 4, -1))
    out = np.moveaxis(block.reshape((b, 2, 2) + (2,) * (n - 2)), (1, 2), axes)
    return np.ascontiguousarray(out).reshape(b, -1)


# ---------------------------------------------------------------------------
# Trajectory engine
# ---------------------------------------------------------------------------


def _spam_batch(ens, choices: np.ndarray, n: int) -> np.ndarray:
    b = choices.shape[0]
    if ens is None:
        amps = np.zeros((b, 2**n), dtype=complex)
        amps[:, 0] = 1.0
        return amps
    members = ens.qubit_members()
    amps = np.ones((b, 1), dtype=complex)
    for q in range(n - 1, -1, -1):
        vecs = members[choices[:, q] % ens.n_members]
        amps = np.einsum("bi,bj->bij", amps, vecs).reshape(b, -1)
    return amps


def _run_batch(compiled: CompiledModel, d_max: int, plans: list[TrajectoryPlan]) -> np.ndarray:
    """Fidelity rows (B, d_max + 1) for a batch of pre-drawn trajectory plans."""
    model = compiled.model
    layout = model.layout
    n = layout.n
    b = len(plans)
    dress = np.stack([p.dressings for p in plans])
    kraus_u = np.stack([p.kraus_u for p in plans])

    psi = _spam_batch(model.spam_init, np.stack([p.spam_init_choice for p in plans]), n)
    phi_c = _spam_batch(model.spam_fin, np.stack([p.spam_fin_choice for p in plans]), n).conj()
    # forward and conjugated-backward wavefunctions share every kernel call
    stacked = np.concatenate([psi, phi_c], axis=0)

    fid = np.empty((b, d_max + 1))
    fid[:, 0] = np.abs(np.einsum("bi,bi->b", stacked[b:], stacked[:b])) ** 2

    offsets = layer_offsets(layout, d_max)
    frame = 0
    for t in range(1, d_max + 1):
        spec = compiled.layer_specs[(t - 1) % layout.period]
        if spec.frame != frame:
            stacked = stacked[:, compiled.frame_perms[(frame, spec.frame)]]
            frame = spec.frame
        col = int(offsets[t - 1])
        for g in spec.gates:
            qa, qb = g.pair
            da, db = dress[:, col, 0], dress[:, col, 1]
            u = kraus_u[:, col]
            m_a = _gather_1q(compiled.fw1[qa], da, u[:, 0])
            m_b = _gather_1q(compiled.fw1[qb], db, u[:, 1])
            m2 = _gather_2q(g.table_fw, u[:, 2])
            n_a = _gather_1q(compiled.bw1[qa], da, u[:, 3])
            n_b = _gather_1q(compiled.bw1[qb], db, u[:, 4])
            n2 = _gather_2q(g.table_bw, u[:, 5])
            if g.swap_kron:
                fwd = np.matmul(m2, _kron_batch(m_b, m_a))
                bwd = np.matmul(n2, _kron_batch(n_b, n_a))
            else:
                fwd = np.matmul(m2, _kron_batch(m_a, m_b))
                bwd = np.matmul(n2, _kron_batch(n_a, n_b))
            mats = np.concatenate([fwd, bwd], axis=0)
            if g.general:
                stacked = _apply_general(stacked, mats, qa, qb, n)
            else:
                stacked = _apply_adjacent(stacked, mats, g.lo, n)
            col += 1
        fid[:, t] = np.abs(np.einsum("bi,bi->b", stacked[b:], stacked[:b])) ** 2
    if not np.isfinite(fid).all():
        bad = np.argwhere(~np.isfinite(fid))[0]
        raise TrajectoryError(f"non-finite fidelity at batch row {bad[0]}, depth {bad[1]}")
    return fid


def run_trajectory(
    layout: QubitLayout,
    noise_model: NoiseModel,
    d_max: int,
    rng: np.random.Generator,
    plan: TrajectoryPlan | None = None,
) -> np.ndarray:
    """One echo trajectory; returns F_d for d = 0 .. d_max."""
    if plan is None:
        plan = sample_plan(layout, d_max, rng)
    return _run_batch(CompiledModel(noise_model), d_max, [plan])[0]


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


@dataclass
class FidelityRecord:
    """Per-depth tallies of echo fidelity samples; merge is entrywise addition."""

    d_max: int
    counts: np.ndarray
    sum_f: np.ndarray
    sum_f2: np.ndarray
    master_seed: int
    config_digest: str
    n_qubits: int
    sum_trunc: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def merge(self, other: "FidelityRecord") -> "FidelityRecord":
        if self.config_digest != other.config_digest or self.d_max != other.d_max:
            raise ValueError("records come from different configurations")
        if (self.sum_trunc is None) != (other.sum_trunc is None):
            raise ValueError("cannot merge records with and without truncation tallies")
        trunc = None if self.sum_trunc is None else self.sum_trunc + other.sum_trunc
        return FidelityRecord(
            d_max=self.d_max,
            counts=self.counts + other.counts,
            sum_f=self.sum_f + other.sum_f,
            sum_f2=self.sum_f2 + other.sum_f2,
            master_seed=self.master_seed,
            config_digest=self.config_digest,
            n_qubits=self.n_qubits,
            sum_trunc=trunc,
            meta=dict(self.meta),
        )


def model_digest(model: NoiseModel) -> str:
    h = hashlib.sha256()
    h.update(repr((model.p2, model.p1, model.seed, model.equal_trace)).encode())
    h.update(repr(model.layout.layers).encode())
    for pair in sorted(model.two_qubit):
        h.update(model.two_qubit[pair].kraus.tobytes())
        h.update(model.backward_two_qubit(pair).kraus.tobytes())
    for key in sorted(model.one_qubit):
        h.update(model.one_qubit[key].kraus.tobytes())
    for ens in (model.spam_init, model.spam_fin):
        h.update(repr(None if ens is None else getattr(ens, "flip_probability", "custom")).encode())
    return h.hexdigest()[:16]


def campaign_digest(model: NoiseModel, d_max: int, master_seed: int, engine: str, chi: int | None = None) -> str:
    h = hashlib.sha256()
    h.update(repr((model_digest(model), d_max, master_seed, engine, chi)).encode())
    return h.hexdigest()[:16]


def default_batch_size(n: int, total_gates: int = 0) -> int:
    """Batch size as a pure function of the problem shape (never worker count).

    Capped so the two stacked wavefunction blocks stay cache-resident, which
    is where the batched 4x4 kernels run fastest.
    """
    per_traj_state = 2 * (2**n) * 16
    per_traj_plan = max(1, total_gates) * 50
    return int(
        min(
            1024,
            max(1, _STATE_BYTE_BUDGET // per_traj_state),
            max(1, _PLAN_BYTE_BUDGET // per_traj_plan),
        )
    )


_WORKER_STATE: dict = {}


def _init_worker(model: NoiseModel, master_seed: int):
    _WORKER_STATE["compiled"] = CompiledModel(model)
    _WORKER_STATE["master_seed"] = master_seed


def _batch_worker(args):
    d_max, start, count = args
    compiled = _WORKER_STATE["compiled"]
    layout = compiled.model.layout
    master_seed = _WORKER_STATE["master_seed"]
    plans = [sample_plan(layout, d_max, trajectory_rng(master_seed, start + j)) for j in range(count)]
    fid = _run_batch(compiled, d_max, plans)
    return fid.sum(axis=0), np.square(fid).sum(axis=0)


def run_campaign(
    layout: QubitLayout,
    noise_model: NoiseModel,
    d_max: int,
    n_traj: int,
    master_seed: int,
    workers: int | None = None,
    start_index: int = 0,
) -> FidelityRecord:
    """Merge ``n_traj`` trajectories seeded independently from the master seed.

    Trajectory j uses the stream derived from (master_seed, start_index + j)
    and batch boundaries depend only on the configuration, so tallies are
    identical for any worker count.
    """
    if layout.n > MAX_QUBITS:
        per_state = (2**layout.n) * 16 / 2**30
        raise CampaignResourceError(
            f"n={layout.n} needs {per_state:.1f} GiB per wavefunction; "
            f"the dense engine is capped at n={MAX_QUBITS}"
        )
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    total_gates = int(layer_offsets(layout, d_max)[-1])
    batch = default_batch_size(layout.n, total_gates)
    tasks = [
        (d_max, start_index + off, min(batch, n_traj - off))
        for off in range(0, n_traj, batch)
    ]
    counts = np.zeros(d_max + 1, dtype=np.int64)
    sum_f = np.zeros(d_max + 1)
    sum_f2 = np.zeros(d_max + 1)
    if workers is not None and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(noise_model, master_seed)
        ) as pool:
            for (_, _, cnt), (s1, s2) in zip(tasks, pool.map(_batch_worker, tasks)):
                counts += cnt
                sum_f += s1
                sum_f2 += s2
    else:
        _init_worker(noise_model, master_seed)
        for task in tasks:
            s1, s2 = _batch_worker(task)
            counts += task[2]
            sum_f += s1
            sum_f2 += s2
    return FidelityRecord(
        d_max=d_max,
        counts=counts,
        sum_f=sum_f,
        sum_f2=sum_f2,
        master_seed=master_seed,
        config_digest=campaign_digest(noise_model, d_max, master_seed, "statevec"),
        n_qubits=layout.n,
        meta={"engine": "statevec", "n_traj": n_traj, "start_index": start_index},
    )
