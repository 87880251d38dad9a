"""Simulated coordinator/worker execution of the regression pipelines.

k logical machines each hold a disjoint set of rows of Mbar = [M, -b]; a
server coordinates.  Every message goes through :class:`Network`, which
appends one entry per send to the :class:`CommLedger` (1 word = one 64-bit
number).  Machines regenerate the shared sketch and the per-row sampling
coins from the common master seed, so a run is equal to the centralized run
with the same seed (bit-exact for k = 1).

Message sizes, per machine:

* norm upload / broadcast:      1 word each way
* sketch upload:                m * d
* R broadcast:                  d * d
* normalizer upload:            1 (local sum of leverage scores)
* normalizer broadcast:         2 (global sum, sample target t)
* sampled-row upload:           1 + rows * (d + 2)   (count; index, d values, weight)
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conditioning, regression, sampling
from .errors import ConfigError, RankDeficient
from .linalg import as_csr, qr_thin, vec_pnorm
from .randsource import SeedSpec
from .regression import PipelineParams, RegressionProblem, RegressionResult
from .sketch import Mode, apply_sketch, build_sketch, target_dim

SERVER = "server"


@dataclass
class MachineState:
    machine_id: int
    rows: np.ndarray
    shard: sp.csr_matrix

    @property
    def name(self):
        return f"machine{self.machine_id}"


def partition_rows(M_bar, k, scheme="contiguous") -> list[MachineState]:
    A = as_csr(M_bar)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    if scheme == "contiguous":
        parts = np.array_split(np.arange(n), k)
    elif scheme == "round_robin":
        parts = [np.arange(i, n, k) for i in range(k)]
    else:
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    return [MachineState(i, rows.astype(np.int64), A[rows]) for i, rows in enumerate(parts)]


@dataclass
class LedgerEntry:
    round: int
    step: str
    sender: str
    receiver: str
    tag: str
    words: int


@dataclass
class CommLedger:
    entries: list = field(default_factory=list)

    def record(self, round_, step, sender, receiver, tag, words):
        self.entries.append(LedgerEntry(round_, step, sender, receiver, tag, int(words)))

    @property
    def total(self):
        return sum(e.words for e in self.entries)

    @property
    def up(self):
        return sum(e.words for e in self.entries if e.receiver == SERVER)

    @property
    def down(self):
        return sum(e.words for e in self.entries if e.sender == SERVER)

    def by_tag(self) -> dict:
        out = {}
        for e in self.entries:
            out[e.tag] = out.get(e.tag, 0) + e.words
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["round", "step", "sender", "receiver", "tag", "words"])
        for e in self.entries:
            w.writerow([e.round, e.step, e.sender, e.receiver, e.tag, e.words])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_trace(self) -> list:
        return [e.__dict__.copy() for e in self.entries]


class Network:
    """FIFO channels between named parties; every send is ledgered."""

    def __init__(self):
        self.ledger = CommLedger()
        self.inbox: dict[str, deque] = {}
        self.round = 0
        self.step = ""

    def barrier(self, step):
        self.round += 1
        self.step = step

    def send(self, sender, receiver, tag, payload, words):
        self.ledger.record(self.round, self.step, sender, receiver, tag, words)
        self.inbox.setdefault(receiver, deque()).append((sender, tag, payload))

    def recv(self, receiver, tag):
        sender, got, payload = self.inbox[receiver].popleft()
        if got != tag:
            raise RuntimeError(f"{receiver} expected {tag!r}, got {got!r} from {sender}")
        return sender, payload

    def gather(self, machines, tag):
        """Server receives one message per machine, returned in machine-id order."""
        got = {}
        for _ in machines:
            sender, payload = self.recv(SERVER, tag)
            got[sender] = payload
        return [got[m.name] for m in machines]

    def broadcast(self, machines, tag, payload, words):
        for m in machines:
            self.send(SERVER, m.name, tag, payload, words)


def _rows_words(n_rows, d):
    return 1 + n_rows * (d + 2)


class _Protocol:
    """State shared by both protocols: the network, the seed and the machines."""

    def __init__(self, shards, p, eps, seed, params: PipelineParams):
        if not shards:
            raise ConfigError("need at least one machine")
        self.shards = sorted(shards, key=lambda s: s.machine_id)
        self.n = sum(s.shard.shape[0] for s in self.shards)
        self.d = self.shards[0].shard.shape[1]
        self.p, self.eps, self.params = p, eps, params
        self.seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), "regress")
        self.net = Network()
        all_rows = np.concatenate([s.rows for s in self.shards])
        if np.unique(all_rows).size != self.n or all_rows.min() != 0 or all_rows.max() != self.n - 1:
            raise ConfigError("machine row sets must partition [n]")

    def share_norm(self):
        self.net.barrier("norm")
        for m in self.shards:
            self.net.send(m.name, SERVER, "norm", vec_pnorm(m.shard.data, self.p), 1)
        parts = self.net.gather(self.shards, "norm")
        total = sum(v ** self.p for v in parts) ** (1.0 / self.p)
        self.net.broadcast(self.shards, "norm", total, 1)
        for m in self.shards:
            self.net.recv(m.name, "norm")
        return total

    def share_sketch(self, mode):
        self.net.barrier("sketch")
        op = build_sketch(mode, self.p, self.n, self.d, self.seed.child("sketch"), self.params.sketch)
        for m in self.shards:
            local = apply_sketch(op, m.shard, row_ids=m.rows)
            self.net.send(m.name, SERVER, "sketch", local, local.size)
        PM = np.zeros((op.m, self.d))
        for part in self.net.gather(self.shards, "sketch"):
            PM += part
        return op, PM

    def broadcast_r(self, R, tag):
        self.net.barrier(tag)
        self.net.broadcast(self.shards, tag, R, R.size)
        return {m.name: self.net.recv(m.name, tag)[1] for m in self.shards}

    def sample_round(self, R_local, t, seed: SeedSpec, label, full=False):
        """Leverage-score sample drawn locally on every machine, assembled by the server.

        Returns the sampled rows in global row order as a dense array.
        """
        self.net.barrier(f"{label}.normalizer")
        scores = {}
        for m in self.shards:
            scores[m.name] = sampling.leverage_scores(m.shard, R_local[m.name], self.p)
            self.net.send(m.name, SERVER, "normalizer", float(np.sum(scores[m.name])), 1)
        total = 0.0
        for part in self.net.gather(self.shards, "normalizer"):
            total += part
        for attempt in range(self.params.max_retries + 1):
            self.net.broadcast(self.shards, "normalizer", (total, t), 2)
            self.net.barrier(f"{label}.rows")
            s = seed if attempt == 0 else seed.child(f"retry{attempt}")
            for m in self.shards:
                tot, t_recv = self.net.recv(m.name, "normalizer")[1]
                probs = sampling.probs_from_scores(scores[m.name], t_recv, tot)
                sig = sampling.draw_sampling(probs, self.p, s, row_ids=m.rows, n_total=self.n)
                local = np.searchsorted(m.rows, sig.source_rows) if np.all(np.diff(m.rows) > 0) \
                    else np.array([int(np.flatnonzero(m.rows == r)[0]) for r in sig.source_rows], dtype=np.int64)
                rows = sampling.apply_sampling(sig, m.shard, local_ids=local).toarray()
                self.net.send(m.name, SERVER, "rows", (sig.source_rows, rows, sig.weights),
                              _rows_words(len(sig), self.d))
            parts = self.net.gather(self.shards, "rows")
            idx = np.concatenate([q[0] for q in parts])
            block = np.vstack([q[1] for q in parts]) if parts else np.zeros((0, self.d))
            order = np.argsort(idx, kind="stable")
            sub = block[order]
            if regression.sample_is_usable(sub, self.d, full):
                return sub, t, int(idx.size)
            t *= 2
        raise RankDeficient("sampled subproblem stayed rank deficient after retries")

    def finish(self, prob, x, diag, t0):
        diag["seconds"] = time.perf_counter() - t0
        diag["ledger"] = {"total": self.net.ledger.total, "up": self.net.ledger.up,
                          "down": self.net.ledger.down, "by_tag": self.net.ledger.by_tag()}
        cost = regression.residual_cost(prob.M, prob.b, x, prob.p) if prob is not None else math.nan
        eps = self.eps
        return RegressionResult(np.asarray(x, dtype=float), cost, (1 + eps) / (1 - eps), diag)

    def exact_fit(self, prob, PM, diag, t0):
        res = regression._exact_fit_result(prob, PM, diag, t0)
        return self.finish(prob, res.x_hat, res.diagnostics, t0)


def _evaluation_problem(shards, p, eps):
    """Reassemble the global problem only to report the final cost (not part of the protocol)."""
    n = sum(s.shard.shape[0] for s in shards)
    A = sp.lil_matrix((n, shards[0].shard.shape[1]))
    for s in shards:
        A[s.rows] = s.shard
    A = as_csr(A)
    return RegressionProblem(A[:, :-1], -A[:, -1].toarray().ravel(), p, eps)


def dist_regress_high(shards, p, eps, seed=0, params: PipelineParams = PipelineParams()):
    """Distributed p > 2 protocol; returns (RegressionResult, CommLedger)."""
    if not p > 2:
        raise ConfigError("dist_regress_high needs p > 2")
    t0 = time.perf_counter()
    proto = _Protocol(shards, p, eps, seed, params)
    prob = _evaluation_problem(proto.shards, p, eps)
    d = proto.d
    norm = proto.share_norm()
    op, PM = proto.share_sketch(Mode.HIGH_P)
    diag = {"m": op.m, "k": len(proto.shards), "norm": norm, "exact_fit": False}
    if regression.sketch_is_deficient(PM):
        return proto.exact_fit(prob, PM, diag, t0), proto.net.ledger
    cert, alphabeta = regression.high_conditioning(PM, d, p, params)
    R_local = proto.broadcast_r(cert.R, "R")
    t = regression.target_rows(alphabeta, d, p, eps, params)
    sub, t, rows = proto.sample_round(R_local, t, proto.seed.child("sampling.1"), "sampling.1")
    x, info = regression.solve_sampled(sub, p, params)
    diag.update(alphabeta_claimed=alphabeta, t=t, rows_sampled=rows, mvee=cert.info,
                solver={"converged": info.converged, "stages": info.stages, "iterations": info.iterations})
    return proto.finish(prob, x, diag, t0), proto.net.ledger


def dist_regress_low(shards, p, eps, seed=0, params: PipelineParams = PipelineParams()):
    """Distributed 1 <= p < 2 protocol; returns (RegressionResult, CommLedger)."""
    if not 1 <= p < 2:
        raise ConfigError("dist_regress_low needs 1 <= p < 2")
    t0 = time.perf_counter()
    proto = _Protocol(shards, p, eps, seed, params)
    prob = _evaluation_problem(proto.shards, p, eps)
    d = proto.d
    norm = proto.share_norm()
    op, PM = proto.share_sketch(Mode.LOW_P)
    diag = {"m": op.m, "k": len(proto.shards), "norm": norm, "exact_fit": False}
    if regression.sketch_is_deficient(PM):
        return proto.exact_fit(prob, PM, diag, t0), proto.net.ledger
    mu1, mu2 = regression.sketch_mu(d, p, params.mu_c)
    cert = conditioning.qr_conditioner(PM, mu1, mu2, p)
    R_local = proto.broadcast_r(cert.R, "R")
    t1 = regression.target_rows(cert.alphabeta_bound, d, p, 0.5, params)
    sub1, t1, n1 = proto.sample_round(R_local, t1, proto.seed.child("sampling.1"), "sampling.1", full=True)
    t2 = target_dim(Mode.DENSE_PSTABLE, p, max(d, 2), d, params.sketch)
    op2 = build_sketch(Mode.DENSE_PSTABLE, p, sub1.shape[0], d, proto.seed.child("dense"), params.sketch, m=t2)
    P3M = apply_sketch(op2, sub1)
    _, R1 = qr_thin(P3M)
    R1_local = proto.broadcast_r(R1, "R1")
    ab1 = regression.second_stage_alphabeta(d, p, t2, params)
    t3 = regression.target_rows(ab1, d, p, 0.5, params)
    sub4, t3, n3 = proto.sample_round(R1_local, t3, proto.seed.child("sampling.4"), "sampling.4", full=True)
    ab1_measured = regression.measured_alphabeta(sub4, R1, p, params, proto.seed)
    R2, ab2, cond_info = regression.final_conditioning(sub4, d, p, params, proto.seed)
    R2_local = proto.broadcast_r(R2, "R2")
    t4 = regression.target_rows(ab2, d, p, eps, params)
    sub5, t4, n4 = proto.sample_round(R2_local, t4, proto.seed.child("sampling.5"), "sampling.5")
    x, info = regression.solve_sampled(sub5, p, params)
    diag.update({
        "t1": t1, "t2": t2, "t3": t3, "t4": t4, "rows_sampled": [n1, int(P3M.shape[0]), n3, n4],
        "alphabeta_claimed": [cert.alphabeta_bound, ab1, ab2],
        "alphabeta_R1_measured": ab1_measured, "conditioning": cond_info,
        "solver": {"converged": info.converged, "stages": info.stages, "iterations": info.iterations},
    })
    return proto.finish(prob, x, diag, t0), proto.net.ledger


def dist_regress(shards, p, eps, seed=0, params: PipelineParams = PipelineParams()):
    if p > 2:
        return dist_regress_high(shards, p, eps, seed, params)
    if p < 2:
        return dist_regress_low(shards, p, eps, seed, params)
    raise ConfigError("p = 2 needs no sketching; use a direct least-squares solve")


def ledger_json(ledger: CommLedger) -> str:
    return json.dumps({"total": ledger.total, "up": ledger.up, "down": ledger.down,
                       "entries": ledger.to_trace()})
