"""Federated simulation engine for FedTOP-ADMM and its baselines.

One engine runs every variant. Each global iteration does the following:

1. Server step: ``y = -tau grad_h(w) + zeta w``. FedTOP-ADMM I does this
   every iteration. FedTOP-ADMM II does it only between communication events.
2. At a communication event (``i % J == 0``), the server caches ``u_m`` from
   the clients of the round that just ended. It then draws the next active set.
3. Aggregation: ``w = prox_{nu g}(nu (sum_m v_m + y))`` with
   ``nu = 1 / (sum_m rho_m + zeta)``.
4. At an event, newly selected clients receive ``w``. Every active client
   then takes one inexact local step.

Clients that are not active keep their state unchanged.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import objectives as obj
from .config import ExperimentConfig
from .numkit import RngStream, rng_uniform_subset
from .prox import ZERO, Regularizer, prox

ADMM_FAMILY = ("fedtop1", "fedtop2", "fedadmm", "fedadmm_modified", "fedadmm_vc")
GRADIENT_FAMILY = ("fedprox", "fedavg")


# -- hyperparameter recipes ---------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Decaying sequence ``b(i+1) = b(0) / (1 + i * mu_prime * b(i))``."""

    beta0: float
    mu_prime: float = 10.0

    def __post_init__(self):
        if self.beta0 < 0:
            raise ValueError("beta0 must be non-negative")
        if self.mu_prime < 0:
            raise ValueError("mu_prime must be non-negative")

    def values(self, count: int, monotone: bool = True) -> np.ndarray:
        """First ``count`` terms; ``monotone`` keeps a running minimum."""
        out = np.empty(count)
        b = self.beta0
        for i in range(count):
            out[i] = b
            nxt = schedule_next(self, i, b)
            b = min(b, nxt) if monotone else nxt
        return out


def schedule_next(s: Schedule, i: int, beta_i: float) -> float:
    if beta_i < 0:
        raise ValueError("schedule values must be non-negative")
    return s.beta0 / (1.0 + i * s.mu_prime * beta_i)


def rho_from_a(a: float, M: int, d_m: int, alpha_m: float, r_m: float, J: int) -> float:
    """Penalty recipe ``a log(M d_m) alpha_m r_m / log(2 + J)``."""
    if M * d_m <= 1:
        raise ValueError("need M * d_m > 1")
    if J < 1:
        raise ValueError("J must be at least 1")
    return a * math.log(M * d_m) * alpha_m * r_m / math.log(2 + J)


def comm_round(i: int, J: int) -> int:
    if J < 1:
        raise ValueError("J must be at least 1")
    return i // J


# -- state --------------------------------------------------------------------

@dataclass
class ClientState:
    w: np.ndarray
    lam: np.ndarray
    u: np.ndarray
    rho: float
    alpha: float
    r: float
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int, rho: float = 0.0, alpha: float = 0.0, r: float = 0.0) -> "ClientState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), rho, alpha, r, np.zeros(n))


@dataclass
class ServerState:
    w: np.ndarray
    y: np.ndarray
    v: list
    nu: float
    tau: float
    zeta: float
    iteration: int = 0


@dataclass
class MetricRow:
    round: int
    iteration: int
    objective: float
    test_accuracy: float
    primal_residual: float
    dual_residual: float
    wall_ms: float = 0.0


COLUMNS = ("round", "iteration", "objective", "test_accuracy", "primal_residual", "dual_residual", "wall_ms")


# -- single steps -------------------------------------------------------------

def server_intermediate(w, grad_h, tau: float, zeta: float) -> np.ndarray:
    """``-tau grad_h + zeta w``."""
    return -tau * np.asarray(grad_h, dtype=float) + zeta * np.asarray(w, dtype=float)


def aggregate(v: Sequence[np.ndarray], y, nu: float, g: Regularizer = ZERO, literal: bool = False) -> np.ndarray:
    """Global update ``prox_{nu g}(nu (sum_m v_m + y))``.

    ``literal=True`` scales by ``1/nu`` instead of ``nu``.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    total = np.array(y, dtype=float, copy=True)
    for vm in v:  # fixed ascending order keeps the sum reproducible
        total += vm
    point = total / nu if literal else nu * total
    return point if g.is_zero else prox(g, nu, point)


def client_local_step(c: ClientState, v, shard: obj.LogisticShard, gamma: float) -> ClientState:
    """One linearized solve of the client subproblem with ``Q_m = r_m I``."""
    denom = c.alpha * c.r + c.rho
    if denom == 0:
        raise ZeroDivisionError("alpha_m * r_m + rho_m is zero")
    v = np.asarray(v, dtype=float)
    dz = c.rho * (c.w - v) + c.alpha * obj.gradient(shard, c.w) + c.lam
    w = c.w - dz / denom
    lam = c.lam + gamma * c.rho * (w - v)
    return replace(c, w=w, lam=lam, u=c.rho * w + lam, v=v)


def fedavg_or_fedprox_step(c: ClientState, v, shard: obj.LogisticShard, eta: float, mu: float) -> ClientState:
    """Gradient step on ``f_m + (mu/2)||. - v||^2``; ``mu = 0`` is FedAvg."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    v = np.asarray(v, dtype=float)
    w = c.w - eta * (obj.gradient(shard, c.w) + mu * (c.w - v))
    return replace(c, w=w, u=w.copy(), v=v)


# -- federation setup ---------------------------------------------------------

@dataclass
class Federation:
    """Client shards, the optional server shard, and a test shard."""

    clients: list
    server: Optional[obj.LogisticShard] = None
    test: Optional[obj.LogisticShard] = None

    @property
    def n_features(self) -> int:
        return self.clients[0].n_features


def fedadmm_vc_setup(clients: Sequence[obj.LogisticShard], server: Optional[obj.LogisticShard]) -> list:
    """Append the server shard as an always-active virtual client."""
    if server is None or server.n_examples == 0:
        raise ValueError("a virtual client needs a non-empty server shard")
    return [*clients, server]


def client_weights(shards: Sequence[obj.LogisticShard]) -> np.ndarray:
    """``alpha_m = 1 / (M d_m)``, so that ``sum_m alpha_m d_m = 1``."""
    M = len(shards)
    return np.array([1.0 / (M * s.n_examples) for s in shards])


def init_clients(shards: Sequence[obj.LogisticShard], cfg: ExperimentConfig) -> list:
    n = shards[0].n_features
    if cfg.algorithm in GRADIENT_FAMILY:
        return [ClientState.zeros(n) for _ in shards]
    M = len(shards)
    alphas = client_weights(shards)
    rs = [obj.smoothness_surrogate(s) for s in shards]
    if cfg.curvature == "per_example":
        # curvature of the averaged loss: the recipe divided by d_m
        rs = [r / s.n_examples for r, s in zip(rs, shards)]
    base = [rho_from_a(1.0, M, s.n_examples, al, r, cfg.J) for s, al, r in zip(shards, alphas, rs)]
    a = cfg.a if cfg.a is not None else cfg.rho_mean / float(np.mean(base))
    return [ClientState.zeros(n, rho=a * b, alpha=al, r=r) for b, al, r in zip(base, alphas, rs)]


# -- the engine ---------------------------------------------------------------

@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    clients: list = field(default_factory=list)
    server: Optional[ServerState] = None


def _validate(cfg: ExperimentConfig, fed: Federation):
    cfg.validate()
    if len(fed.clients) != cfg.M:
        raise ValueError(f"config says M={cfg.M} but federation has {len(fed.clients)} clients")
    uses_h = cfg.algorithm in ("fedtop1", "fedtop2") and cfg.tau0 > 0
    if (uses_h or cfg.algorithm == "fedadmm_vc") and (fed.server is None or fed.server.n_examples == 0):
        raise ValueError(f"{cfg.algorithm} needs a non-empty server shard")


def run(cfg: ExperimentConfig, fed: Federation, workers: int = 1,
        on_iteration: Optional[Callable[[int, ServerState, list], None]] = None,
        timing: bool = False) -> RunResult:
    """Run ``cfg.I`` global iterations and collect per-round metrics.

    Rows are recorded after aggregation at every communication event, or at
    every iteration with ``cfg.per_iteration_metrics``. When ``J`` divides
    ``I`` one closing event at ``i = I`` collects the final window, so a run
    with ``I > 0`` yields ``I // J + 1`` rows. ``on_iteration`` is
    called after each iteration with the server state and client states.
    Results do not depend on ``workers``.
    """
    _validate(cfg, fed)
    algo = cfg.algorithm
    admm = algo in ADMM_FAMILY
    n = fed.n_features

    shards = list(fed.clients)
    vc_index = None
    if algo == "fedadmm_vc":
        shards = fedadmm_vc_setup(shards, fed.server)
        vc_index = len(shards) - 1
    clients = init_clients(shards, cfg)

    # reporting weights cover the real clients only
    report_alpha = client_weights(fed.clients)
    g = Regularizer.l1(cfg.upsilon) if cfg.upsilon > 0 and algo in ("fedtop1", "fedtop2", "fedadmm_modified") else ZERO
    gamma = cfg.gamma if algo in ("fedtop1", "fedtop2") else 1.0
    server_step = algo in ("fedtop1", "fedtop2")
    tau_schedule = Schedule(cfg.tau0 if server_step else 0.0, cfg.mu_prime)
    zeta_schedule = Schedule(cfg.zeta0 if server_step else 0.0, cfg.mu_prime)
    # when J divides I a closing event at i = I ingests the last window
    n_steps = cfg.I + (1 if cfg.I > 0 and cfg.I % cfg.J == 0 else 0)
    taus = tau_schedule.values(n_steps, monotone=cfg.schedule_clamp)
    zetas = zeta_schedule.values(n_steps, monotone=cfg.schedule_clamp)
    sum_rho = float(sum(c.rho for c in clients))

    selector = RngStream(cfg.seed, "client-selection")
    server = ServerState(
        w=np.zeros(n), y=np.zeros(n), v=[c.u.copy() for c in clients],
        nu=(1.0 / (sum_rho + zetas[0])) if admm and cfg.I > 0 else float("nan"),
        tau=taus[0] if cfg.I else 0.0, zeta=zetas[0] if cfg.I else 0.0,
    )
    active = list(range(len(clients)))  # every client counts as active before round 0
    reported = active
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    result = RunResult(server=server)
    t0 = time.perf_counter()

    def local(m):
        c = clients[m]
        if admm:
            return client_local_step(c, c.v, shards[m], gamma)
        return fedavg_or_fedprox_step(c, c.v, shards[m], cfg.eta, cfg.mu if algo == "fedprox" else 0.0)

    try:
        for i in range(n_steps):
            event = i % cfg.J == 0
            closing = i == cfg.I
            tau, zeta = float(taus[i]), float(zetas[i])
            server.tau, server.zeta, server.iteration = tau, zeta, i

            if server_step and (algo == "fedtop1" or not event):
                grad_h = obj.gradient(fed.server, server.w) if tau > 0 else np.zeros(n)
                server.y = server_intermediate(server.w, grad_h, tau, zeta)

            if event:
                for m in active:
                    server.v[m] = clients[m].u.copy()
                reported = active
                if closing:
                    active = []
                else:
                    active = rng_uniform_subset(selector, cfg.M, cfg.S)
                    if vc_index is not None:
                        active = [*active, vc_index]

            w_prev = server.w
            if admm:
                server.nu = 1.0 / (sum_rho + zeta)
                server.w = aggregate(server.v, server.y, server.nu, g, literal=cfg.aggregate_literal)
            elif event:
                server.w = np.mean([server.v[m] for m in reported], axis=0) if reported else w_prev.copy()

            if event:
                for m in active:
                    clients[m] = replace(clients[m], v=server.w.copy())
                    if not admm:
                        # gradient-family clients restart from the global model
                        clients[m] = replace(clients[m], w=server.w.copy(), u=server.w.copy())

            if event or cfg.per_iteration_metrics:
                watched = reported if event else active
                result.rows.append(MetricRow(
                    round=comm_round(i, cfg.J),
                    iteration=i,
                    objective=_objective(fed, report_alpha, server.w, cfg),
                    test_accuracy=obj.accuracy(fed.test, server.w) if fed.test is not None else float("nan"),
                    primal_residual=_mean_primal(clients, watched, server.w),
                    dual_residual=float(np.linalg.norm(server.w - w_prev)),
                    wall_ms=(time.perf_counter() - t0) * 1e3 if timing else 0.0,
                ))

            if pool is None:
                stepped = [local(m) for m in active]
            else:
                stepped = list(pool.map(local, active))
            for m, c in zip(active, stepped):
                clients[m] = c

            if on_iteration is not None:
                on_iteration(i, server, clients)
    finally:
        if pool is not None:
            pool.shutdown()

    result.clients = clients
    return result


def _objective(fed: Federation, alphas, w, cfg: ExperimentConfig) -> float:
    total = 0.0
    for alpha, shard in zip(alphas, fed.clients):
        total += alpha * obj.loss(shard, w)
    if cfg.upsilon > 0:
        total += obj.l1_term(w, cfg.upsilon)
    if cfg.beta > 0 and fed.server is not None:
        total += cfg.beta * obj.loss(fed.server, w)
    return total


def _mean_primal(clients, members, w) -> float:
    if not members:
        return float("nan")
    return float(np.mean([np.linalg.norm(clients[m].w - w) for m in members]))
