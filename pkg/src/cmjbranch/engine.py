"""Event-driven growth of one CMJ tree per replica.

The birth loop pops individuals in birth-time order (ties broken by insertion
order) from a calendar queue, draws their offspring and books every
parent-child edge (s, s') into difference arrays over a fixed time grid: the
child belongs to the coming generation at every grid time t with s <= t < s'.
That yields Nerman's martingale W_t, the squared-weight sum Q_t and the
frontier size without ever materializing the frontier.

Per-replica random streams are ``PCG64(SeedSequence(master_seed,
spawn_key=(replica_index,)))``, i.e. exactly the streams that
``SeedSequence(master_seed).spawn(n)`` would hand out, so replicas are
independent of scheduling and worker count.
"""

from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import NoTiltedSampler, PreconditionError
from .malthusian import ModelConstants
from .reproduction import ReproductionLaw, _fill_offspring, sample_offspring

log = logging.getLogger(__name__)

DEFAULT_MAX_BIRTHS = 10_000_000
TRUNCATION_BOUND = 1e-9

_NO_GEN = np.iinfo(np.int64).max


def replica_rng(master_seed: int, replica_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replica_index),))
    return np.random.Generator(np.random.PCG64(ss))


def truncation_bias_bound(law: ReproductionLaw, alpha: float, age_cap: float) -> float:
    """Discounted offspring mass dropped per individual by the age cap."""
    if not age_cap > 0:
        raise PreconditionError("age_cap must be positive")
    if age_cap >= law.max_age:
        return 0.0
    return law.tail_mass(alpha, age_cap)


def auto_age_cap(law: ReproductionLaw, alpha: float, bound: float = TRUNCATION_BOUND) -> float:
    """Smallest convenient cap with ``truncation_bias_bound < bound``.

    Bounded-age laws get their maximal age (no truncation at all).
    """
    if math.isfinite(law.max_age):
        return float(law.max_age)
    hi = 1.0
    while truncation_bias_bound(law, alpha, hi) >= bound:
        hi *= 2.0
    lo = hi / 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if truncation_bias_bound(law, alpha, mid) >= bound:
            lo = mid
        else:
            hi = mid
    # round up so the cap reads well in manifests
    return math.ceil(hi * 100.0) / 100.0


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class SimConfig:
    law: ReproductionLaw
    horizon_T: float
    grid: tuple[float, ...]
    age_cap: float
    max_births: int = DEFAULT_MAX_BIRTHS
    seed: int = 0
    replica_index: int = 0

    def __post_init__(self):
        grid = tuple(float(t) for t in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise PreconditionError("grid must be nonempty")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise PreconditionError("grid must be sorted")
        if grid[0] < 0 or grid[-1] > self.horizon_T:
            raise PreconditionError("grid must lie inside [0, horizon_T]")
        if not self.age_cap > 0:
            raise PreconditionError("age_cap must be positive")
        if self.max_births < 1:
            raise PreconditionError("max_births must be positive")


@dataclass(frozen=True)
class CharacteristicSpec:
    """A counting characteristic from the fixed catalog.

    ``born``: the indicator of having been born, so the process is N_t.
    ``discounted_frontier``: each frontier child u at time t contributes
    exp(-2 alpha S(u)) f(t - S(u)); the stored values are this discounted sum,
    and ``exp(2 alpha t)`` times it is the characteristic-counted process.
    ``f`` is either ``constant`` (f = 1) or ``shifted_variance``
    (f(x) = v(delta + x) for a variance curve v, zero at negative arguments).
    """

    tag: str
    f: str = "constant"
    delta: float = 0.0
    curve_t: tuple[float, ...] = ()
    curve_v: tuple[float, ...] = ()

    def __post_init__(self):
        if self.tag not in ("born", "discounted_frontier"):
            raise ValueError(f"unknown characteristic {self.tag!r}")
        if self.f not in ("constant", "shifted_variance"):
            raise ValueError(f"unknown characteristic function {self.f!r}")
        if self.f == "shifted_variance" and len(self.curve_t) < 2:
            raise ValueError("shifted_variance needs a variance curve")

    @property
    def key(self) -> str:
        if self.tag == "born":
            return "born"
        if self.f == "constant":
            return "discounted_frontier"
        return f"discounted_frontier[v;delta={self.delta!r}]"


BORN = CharacteristicSpec("born")
DISCOUNTED_FRONTIER = CharacteristicSpec("discounted_frontier")


@dataclass
class ReplicaPath:
    replica_index: int
    seed: int
    grid: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    N: np.ndarray
    frontier: np.ndarray
    Z: np.ndarray
    n_complete: int
    extinct: bool
    guard_tripped: bool
    births: int
    characteristics: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, ReplicaPath):
            return NotImplemented
        scalars = ("replica_index", "seed", "n_complete", "extinct", "guard_tripped", "births")
        arrays = ("grid", "W", "Q", "N", "frontier", "Z")
        return (
            all(getattr(self, k) == getattr(other, k) for k in scalars)
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in arrays)
            and self.characteristics.keys() == other.characteristics.keys()
            and all(np.array_equal(v, other.characteristics[k]) for k, v in self.characteristics.items())
        )


# ---------------------------------------------------------------------------
# jitted kernel


@numba.njit(inline="always")
def _heap_push(ht, hs, hw, hg, size, t, sq, w, g):
    i = size
    while i > 0:
        p = (i - 1) >> 1
        if t < ht[p] or (t == ht[p] and sq < hs[p]):
            ht[i] = ht[p]
            hs[i] = hs[p]
            hw[i] = hw[p]
            hg[i] = hg[p]
            i = p
        else:
            break
    ht[i] = t
    hs[i] = sq
    hw[i] = w
    hg[i] = g


@numba.njit(inline="always")
def _heap_pop_fix(ht, hs, hw, hg, size):
    """Move entry ``size`` (the old last one) into the root hole and sift it down."""
    lt, ls, lw, lg = ht[size], hs[size], hw[size], hg[size]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and (ht[c + 1] < ht[c] or (ht[c + 1] == ht[c] and hs[c + 1] < hs[c])):
            c += 1
        if ht[c] < lt or (ht[c] == lt and hs[c] < ls):
            ht[i] = ht[c]
            hs[i] = hs[c]
            hw[i] = hw[c]
            hg[i] = hg[c]
            i = c
        else:
            break
    ht[i] = lt
    hs[i] = ls
    hw[i] = lw
    hg[i] = lg


@numba.njit(cache=True)
def _interp_curve(x, ct, cv):
    if x < 0.0:
        return 0.0
    return np.interp(x, ct, cv)


_OK, _FULL_BUF, _FULL_POOL, _FULL_HEAP, _FULL_GEN = 0, 1, 2, 3, 4


@numba.njit(cache=True)
def _grow(
    kind, params, atoms, alpha, horizon, grid, cap, max_births, rng, ct, cv, delta, want_curve,
    buf, head, nxt, pt, ps, pw, pg, ht, hs, hw, hg, Z, dW, dQ, dC, dF, dN, curve, out,
):
    """Birth loop over a calendar queue; returns a status code.

    Pending births sit in per-bucket linked lists (``head``/``nxt`` over the
    pool ``pt, ps, pw, pg``); the bucket being processed is drained into a
    small binary heap ordered by (time, seq). Bucket index is monotone in
    time, so pops come out in exact (time, seq) order. No array is ever
    reallocated here: when a buffer is full the function returns a nonzero
    status and the caller retries the replica with larger buffers.
    ``out`` receives (top_gen, late_gen, births, guard).
    """
    nb = head.size
    inv = (nb - 1) / horizon
    head[:] = -1
    Z[:] = 0.0
    free = -1
    used = 0
    pending = 0
    cur = 0
    ht[0] = 0.0
    hs[0] = 0
    hw[0] = 1.0
    hg[0] = 0
    size = 1
    seq = 1
    Z[0] = 1.0
    top_gen = 0
    late_gen = _NO_GEN
    births = 0
    guard = 0

    while True:
        if size == 0:
            if pending == 0:
                break
            cur += 1
            while head[cur] < 0:
                cur += 1
            e = head[cur]
            head[cur] = -1
            while e >= 0:
                if size == ht.size:
                    return _FULL_HEAP
                _heap_push(ht, hs, hw, hg, size, pt[e], ps[e], pw[e], pg[e])
                size += 1
                pending -= 1
                nx = nxt[e]
                nxt[e] = free
                free = e
                e = nx
            continue

        s = ht[0]
        w = hw[0]
        g = hg[0]
        size -= 1
        if size > 0:
            _heap_pop_fix(ht, hs, hw, hg, size)

        births += 1
        if births > max_births:
            guard = 1
            births -= 1
            break
        i0 = np.searchsorted(grid, s)
        dN[i0] += 1

        n = _fill_offspring(kind, params, atoms, cap, rng, buf)
        if n > buf.size:
            return _FULL_BUF
        for k in range(n):
            x = buf[k]
            s2 = s + x
            w2 = w * math.exp(-alpha * x)
            q2 = w2 * w2
            i1 = np.searchsorted(grid, s2)
            if i1 > i0:
                dW[i0] += w2
                dW[i1] -= w2
                dQ[i0] += q2
                dQ[i1] -= q2
                dF[i0] += 1
                dF[i1] -= 1
                dC[i0] += q2
                dC[i1] -= q2
                if want_curve:
                    for j in range(i0, i1):
                        curve[j] += q2 * _interp_curve(delta + grid[j] - s2, ct, cv)
            g2 = g + 1
            if g2 >= Z.size:
                return _FULL_GEN
            Z[g2] += w2
            if g2 > top_gen:
                top_gen = g2
            if s2 <= horizon:
                b = int(s2 * inv)
                if b <= cur:
                    if size == ht.size:
                        return _FULL_HEAP
                    _heap_push(ht, hs, hw, hg, size, s2, seq, w2, g2)
                    size += 1
                else:
                    if free >= 0:
                        e = free
                        free = nxt[e]
                    elif used < pt.size:
                        e = used
                        used += 1
                    else:
                        return _FULL_POOL
                    pt[e] = s2
                    ps[e] = seq
                    pw[e] = w2
                    pg[e] = g2
                    nxt[e] = head[b]
                    head[b] = e
                    pending += 1
                seq += 1
            elif g2 < late_gen:
                late_gen = g2

    out[0] = top_gen
    out[1] = late_gen
    out[2] = births
    out[3] = guard
    return _OK


N_BUCKETS = 1 << 17


class Workspace:
    """Reusable buffers for :func:`run_replica`; they grow on demand."""

    def __init__(self, buf=64, pool=1 << 12, heap=1 << 10, gens=256):
        self.buf = np.empty(buf)
        self.head = np.empty(N_BUCKETS, dtype=np.int64)
        self.pool = pool
        self.nxt = np.empty(pool, dtype=np.int64)
        self.pt = np.empty(pool)
        self.ps = np.empty(pool, dtype=np.int64)
        self.pw = np.empty(pool)
        self.pg = np.empty(pool, dtype=np.int64)
        self.ht = np.empty(heap)
        self.hs = np.empty(heap, dtype=np.int64)
        self.hw = np.empty(heap)
        self.hg = np.empty(heap, dtype=np.int64)
        self.Z = np.empty(gens)

    def enlarge(self, status: int) -> None:
        if status == _FULL_BUF:
            self.buf = np.empty(4 * self.buf.size)
        elif status == _FULL_POOL:
            k = 4 * self.pt.size
            self.nxt = np.empty(k, dtype=np.int64)
            self.pt = np.empty(k)
            self.ps = np.empty(k, dtype=np.int64)
            self.pw = np.empty(k)
            self.pg = np.empty(k, dtype=np.int64)
        elif status == _FULL_HEAP:
            k = 4 * self.ht.size
            self.ht = np.empty(k)
            self.hs = np.empty(k, dtype=np.int64)
            self.hw = np.empty(k)
            self.hg = np.empty(k, dtype=np.int64)
        elif status == _FULL_GEN:
            self.Z = np.empty(4 * self.Z.size)
        else:
            raise ValueError(f"unknown status {status}")


def run_replica(
    config: SimConfig,
    constants: ModelConstants,
    characteristics: tuple[CharacteristicSpec, ...] = (),
    workspace: Workspace | None = None,
) -> ReplicaPath:
    """Grow one tree up to ``config.horizon_T`` and record it on the grid."""
    law = config.law
    alpha = constants.alpha
    bias = truncation_bias_bound(law, alpha, config.age_cap)
    if bias >= TRUNCATION_BOUND:
        raise PreconditionError(f"age_cap {config.age_cap} drops discounted mass {bias:g} >= {TRUNCATION_BOUND:g}")
    curves = [c for c in characteristics if c.f == "shifted_variance"]
    if len(curves) > 1:
        raise PreconditionError("at most one shifted_variance characteristic per run")
    if curves:
        ct = np.asarray(curves[0].curve_t, dtype=np.float64)
        cv = np.asarray(curves[0].curve_v, dtype=np.float64)
        delta = float(curves[0].delta)
    else:
        ct = cv = np.zeros(2)
        delta = 0.0

    grid = np.asarray(config.grid, dtype=np.float64)
    G = grid.size
    kind, params, atoms = law._encode()
    ws = workspace if workspace is not None else Workspace()
    while True:
        rng = replica_rng(config.seed, config.replica_index)
        dW, dQ, dC = np.zeros(G + 1), np.zeros(G + 1), np.zeros(G + 1)
        dF, dN = np.zeros(G + 1, dtype=np.int64), np.zeros(G + 1, dtype=np.int64)
        curve = np.zeros(G)
        out = np.zeros(4, dtype=np.int64)
        status = _grow(
            kind, params, atoms, alpha, float(config.horizon_T), grid, float(config.age_cap),
            int(config.max_births), rng, ct, cv, delta, bool(curves),
            ws.buf, ws.head, ws.nxt, ws.pt, ws.ps, ws.pw, ws.pg, ws.ht, ws.hs, ws.hw, ws.hg, ws.Z,
            dW, dQ, dC, dF, dN, curve, out,
        )
        if status == _OK:
            break
        ws.enlarge(status)
    top_gen, late_gen, births, guard = (int(v) for v in out)

    frontier = np.cumsum(dF[:G])
    empty = frontier == 0
    W = np.cumsum(dW[:G])
    Q = np.cumsum(dQ[:G])
    # an empty coming generation carries exactly zero weight
    W[empty] = 0.0
    Q[empty] = 0.0
    N = np.cumsum(dN[:G])

    extinct = (not guard) and late_gen == _NO_GEN
    if extinct:
        # one trailing generation of weight zero
        n_complete = top_gen + 1
        Z = np.concatenate([ws.Z[: top_gen + 1], [0.0]])
    else:
        n_complete = min(late_gen, top_gen)
        Z = ws.Z[: top_gen + 1].copy()

    chars = {}
    for spec in characteristics:
        if spec.tag == "born":
            chars[spec.key] = N.astype(np.float64)
        elif spec.f == "constant":
            c = np.cumsum(dC[:G])
            c[empty] = 0.0
            chars[spec.key] = c
        else:
            chars[spec.key] = curve
    return ReplicaPath(
        replica_index=config.replica_index,
        seed=config.seed,
        grid=grid,
        W=W,
        Q=Q,
        N=N,
        frontier=frontier,
        Z=Z,
        n_complete=n_complete,
        extinct=bool(extinct),
        guard_tripped=bool(guard),
        births=births,
        characteristics=chars,
    )


def characteristic_process(path: ReplicaPath, spec: CharacteristicSpec, constants: ModelConstants) -> np.ndarray:
    """Characteristic-counted process on the grid, undiscounted.

    The characteristic must have been passed to :func:`run_replica` so it was accumulated
    in the same birth loop.
    """
    values = path.characteristics[spec.key]
    if spec.tag == "born":
        return values
    return np.exp(2.0 * constants.alpha * path.grid) * values


# ---------------------------------------------------------------------------
# slow reference tree (small trees only)


@dataclass
class ReferenceTree:
    """Every individual of a small tree, kept explicitly.

    Built with the same pop order and random stream as :func:`run_replica`;
    weights are recomputed as exp(-alpha S(u)) rather than multiplied along
    lineages.
    """

    alpha: float
    horizon: float
    birth: list[float]
    parent: list[int]
    generation: list[int]
    children: list[list[int]]

    def weight(self, u: int) -> float:
        return math.exp(-self.alpha * self.birth[u])

    def frontier(self, t: float) -> list[int]:
        return [u for u in range(1, len(self.birth)) if self.birth[self.parent[u]] <= t < self.birth[u]]

    def W(self, t: float) -> float:
        return math.fsum(self.weight(u) for u in self.frontier(t))

    def Q(self, t: float) -> float:
        return math.fsum(self.weight(u) ** 2 for u in self.frontier(t))

    def N(self, t: float) -> int:
        return sum(1 for s in self.birth if s <= t)

    def Z(self, n: int) -> float:
        return math.fsum(self.weight(u) for u, g in enumerate(self.generation) if g == n)

    def subtree_W(self, u: int, r: float) -> float:
        """Nerman's martingale of the subtree rooted at ``u`` at relative time ``r``."""
        if r < 0:
            return 1.0
        base = self.birth[u]
        total = []
        stack = [u]
        while stack:
            v = stack.pop()
            for c in self.children[v]:
                if self.birth[v] - base <= r < self.birth[c] - base:
                    total.append(math.exp(-self.alpha * (self.birth[c] - base)))
                elif self.birth[c] - base <= r:
                    stack.append(c)
        return math.fsum(total)


def grow_reference_tree(config: SimConfig, constants: ModelConstants, max_individuals: int = 200_000) -> ReferenceTree:
    rng = replica_rng(config.seed, config.replica_index)
    tree = ReferenceTree(constants.alpha, config.horizon_T, [0.0], [-1], [0], [[]])
    heap = [(0.0, 0, 0)]
    seq = 1
    while heap:
        s, _, u = heapq.heappop(heap)
        sample = sample_offspring(config.law, config.age_cap, rng)
        for x in sample.ages:
            c = len(tree.birth)
            if c >= max_individuals:
                raise PreconditionError("reference tree too large")
            tree.birth.append(s + float(x))
            tree.parent.append(u)
            tree.generation.append(tree.generation[u] + 1)
            tree.children.append([])
            tree.children[u].append(c)
            if s + x <= config.horizon_T:
                heapq.heappush(heap, (s + float(x), seq, c))
                seq += 1
    return tree


# ---------------------------------------------------------------------------
# ensembles


def _run_chunk(args):
    law, constants, horizon, grid, age_cap, max_births, seed, indices, characteristics = args
    ws = Workspace()
    out = []
    for i in indices:
        cfg = SimConfig(law, horizon, grid, age_cap, max_births, seed, i)
        out.append(run_replica(cfg, constants, characteristics, ws))
    return out


def simulate_paths(
    law: ReproductionLaw,
    constants: ModelConstants,
    horizon: float,
    grid,
    replicas: int,
    seed: int,
    age_cap: float | None = None,
    max_births: int = DEFAULT_MAX_BIRTHS,
    jobs: int = 1,
    characteristics: tuple[CharacteristicSpec, ...] = (),
    first_index: int = 0,
) -> list[ReplicaPath]:
    """Run ``replicas`` independent replicas; the result is ordered by replica index."""
    if age_cap is None:
        age_cap = auto_age_cap(law, constants.alpha)
    grid = tuple(float(t) for t in grid)
    indices = list(range(first_index, first_index + replicas))
    if jobs <= 1:
        return _run_chunk((law, constants, horizon, grid, age_cap, max_births, seed, indices, characteristics))
    chunks = [indices[k::jobs] for k in range(jobs)]
    chunks = [c for c in chunks if c]
    tasks = [(law, constants, horizon, grid, age_cap, max_births, seed, c, characteristics) for c in chunks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_run_chunk, tasks))
    paths = [p for chunk in results for p in chunk]
    paths.sort(key=lambda p: p.replica_index)
    return paths


@dataclass
class Ensemble:
    """Replica paths stacked into (replica, grid) arrays."""

    grid: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    N: np.ndarray
    frontier: np.ndarray
    extinct: np.ndarray
    guard_tripped: np.ndarray
    births: np.ndarray
    replica_index: np.ndarray
    seed: int
    Z: list = field(default_factory=list)
    n_complete: np.ndarray | None = None
    characteristics: dict = field(default_factory=dict)

    @classmethod
    def from_paths(cls, paths: list[ReplicaPath]) -> "Ensemble":
        if not paths:
            raise PreconditionError("empty ensemble")
        grid = paths[0].grid
        for p in paths:
            if not np.array_equal(p.grid, grid):
                raise PreconditionError("replicas do not share a grid")
        keys = paths[0].characteristics.keys()
        return cls(
            grid=grid,
            W=np.vstack([p.W for p in paths]),
            Q=np.vstack([p.Q for p in paths]),
            N=np.vstack([p.N for p in paths]),
            frontier=np.vstack([p.frontier for p in paths]),
            extinct=np.array([p.extinct for p in paths]),
            guard_tripped=np.array([p.guard_tripped for p in paths]),
            births=np.array([p.births for p in paths]),
            replica_index=np.array([p.replica_index for p in paths]),
            seed=paths[0].seed,
            Z=[p.Z for p in paths],
            n_complete=np.array([p.n_complete for p in paths]),
            characteristics={k: np.vstack([p.characteristics[k] for p in paths]) for k in keys},
        )

    def __len__(self):
        return self.W.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """Replicas usable for statistics (guard not tripped)."""
        return ~self.guard_tripped

    def column(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.grid - t)))
        if not math.isclose(self.grid[idx], t, rel_tol=1e-12, abs_tol=1e-12):
            raise PreconditionError(f"time {t} is not on the ensemble grid")
        return idx

    def select(self, mask: np.ndarray) -> "Ensemble":
        mask = np.asarray(mask, dtype=bool)
        return Ensemble(
            grid=self.grid,
            W=self.W[mask],
            Q=self.Q[mask],
            N=self.N[mask],
            frontier=self.frontier[mask],
            extinct=self.extinct[mask],
            guard_tripped=self.guard_tripped[mask],
            births=self.births[mask],
            replica_index=self.replica_index[mask],
            seed=self.seed,
            Z=[z for z, keep in zip(self.Z, mask) if keep],
            n_complete=None if self.n_complete is None else self.n_complete[mask],
            characteristics={k: v[mask] for k, v in self.characteristics.items()},
        )

    def permuted(self, order) -> "Ensemble":
        order = np.asarray(order)
        e = self.select(np.ones(len(self), dtype=bool))
        for name in ("W", "Q", "N", "frontier", "extinct", "guard_tripped", "births", "replica_index"):
            setattr(e, name, getattr(self, name)[order])
        e.Z = [self.Z[i] for i in order]
        if self.n_complete is not None:
            e.n_complete = self.n_complete[order]
        e.characteristics = {k: v[order] for k, v in self.characteristics.items()}
        return e

    # CSV round trip ---------------------------------------------------------

    PATH_HEADER = "replica,t,W_t,Q_t,N_t,frontier_count,extinct,guard_tripped"
    GEN_HEADER = "replica,n,Z_n,complete"

    def write_csv(self, path_csv: Path, gen_csv: Path) -> None:
        with open(path_csv, "w", newline="\n") as fh:
            fh.write(self.PATH_HEADER + "\n")
            grid_s = [repr(float(t)) for t in self.grid]
            for r in range(len(self)):
                rid = int(self.replica_index[r])
                ext = int(self.extinct[r])
                grd = int(self.guard_tripped[r])
                Wr, Qr, Nr, Fr = self.W[r], self.Q[r], self.N[r], self.frontier[r]
                fh.writelines(
                    f"{rid},{grid_s[j]},{float(Wr[j])!r},{float(Qr[j])!r},{int(Nr[j])},{int(Fr[j])},{ext},{grd}\n"
                    for j in range(self.grid.size)
                )
        with open(gen_csv, "w", newline="\n") as fh:
            fh.write(self.GEN_HEADER + "\n")
            for r in range(len(self)):
                rid = int(self.replica_index[r])
                nc = int(self.n_complete[r]) if self.n_complete is not None else -1
                fh.writelines(
                    f"{rid},{n},{float(z)!r},{int(n <= nc)}\n" for n, z in enumerate(self.Z[r])
                )

    @classmethod
    def read_csv(cls, path_csv: Path, gen_csv: Path | None = None, seed: int = 0) -> "Ensemble":
        data = np.genfromtxt(path_csv, delimiter=",", names=True, dtype=None, encoding="ascii")
        replicas = np.unique(data["replica"])
        grid = np.unique(data["t"])
        R, G = replicas.size, grid.size
        if data.size != R * G:
            raise PreconditionError("path CSV is not a full replica x grid table")
        order = np.lexsort((data["t"], data["replica"]))
        data = data[order]

        def table(name, dtype):
            return np.asarray(data[name], dtype=dtype).reshape(R, G)

        Z, n_complete = [[] for _ in range(R)], np.full(R, -1)
        if gen_csv is not None and Path(gen_csv).exists():
            pos = {int(r): k for k, r in enumerate(replicas)}
            with open(gen_csv) as fh:
                next(fh)
                for line in fh:
                    rid, n, z, complete = line.strip().split(",")
                    k = pos[int(rid)]
                    Z[k].append(float(z))
                    if int(complete):
                        n_complete[k] = int(n)
            Z = [np.array(z) for z in Z]
        return cls(
            grid=grid.astype(np.float64),
            W=table("W_t", np.float64),
            Q=table("Q_t", np.float64),
            N=table("N_t", np.int64),
            frontier=table("frontier_count", np.int64),
            extinct=table("extinct", np.int64)[:, 0].astype(bool),
            guard_tripped=table("guard_tripped", np.int64)[:, 0].astype(bool),
            births=np.zeros(R, dtype=np.int64),
            replica_index=replicas.astype(np.int64),
            seed=seed,
            Z=Z,
            n_complete=n_complete,
        )


def run_ensemble(law, constants, horizon, grid, replicas, seed, **kwargs) -> Ensemble:
    return Ensemble.from_paths(simulate_paths(law, constants, horizon, grid, replicas, seed, **kwargs))


# ---------------------------------------------------------------------------
# many-to-one oracle


def many_to_one_mean_Nt(
    law: ReproductionLaw,
    constants: ModelConstants,
    t: float,
    n_walks: int,
    rng: np.random.Generator,
    t_max: float = 50.0,
) -> tuple[float, float]:
    """E[N_t] from a single tilted random walk, with its standard error.

    Each generation contributes E[sum_{|u|=n} 1{S(u) <= t}] =
    E[exp(alpha S_n) 1{S_n <= t}] where S is a zero-delayed random walk with
    increment law exp(-alpha x) mu(dx); the n = 0 term is the ancestor.
    """
    if not 0 <= t <= t_max:
        raise PreconditionError(f"t must lie in [0, {t_max}]")
    alpha = constants.alpha
    try:
        law.tilted_increments(alpha, rng, 0)
    except NotImplementedError as exc:
        raise NoTiltedSampler(type(law).__name__) from exc
    pos = np.zeros(n_walks)
    total = np.ones(n_walks)
    alive = np.arange(n_walks)
    while alive.size:
        pos[alive] += law.tilted_increments(alpha, rng, alive.size)
        alive = alive[pos[alive] <= t]
        total[alive] += np.exp(alpha * pos[alive])
    return float(total.mean()), float(total.std(ddof=1) / math.sqrt(n_walks))
