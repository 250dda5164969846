"""Synchronous rounds of the push-sum ratio protocols, in per-agent form.

Per agent i, transition k -> k+1 (all agents update simultaneously from
round-k values; an agent's own state enters noise-free):

baseline push-sum:
    x_i <- p_ii * x_i + sum_{j in IN(i)} (p_ij * x_j + noise_x_ij)
    y_i <- p_ii * y_i + sum_{j in IN(i)} (p_ij * y_j + noise_y_ij)

noise-resilient variant (mixing weight beta_k, re-injection weight theta_k):
    alpha_i = (1 - beta_k * (1 - p_ii)) / p_ii
    x_i <- alpha_i * p_ii * x_i
           + beta_k * sum_{j in IN(i)} (p_ij * x_j + noise_x_ij)
           + theta_k * x_i(0)
    y_i <- likewise with y_i(0) = 1

and in both cases z_i <- x_i / y_i is the running estimate of the average
of the initial values.  Schedules are consumed at the k -> k+1 transition.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .graph import DirectedNetwork, WeightMatrix
from .noise import NoiseModel, RoundNoise, RoundSampler, effective_delta
from .schedules import BetaSchedule, ThetaSchedule, dominance_margin

EPS_Y = 1e-12
TRACE_FORMAT_VERSION = 1


class ProtocolInvariantError(RuntimeError):
    """A state positivity guarantee was violated during a run."""


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Network, weights and initial values of one averaging problem."""

    net: DirectedNetwork
    weights: WeightMatrix
    u: np.ndarray  # (n, p)

    def __post_init__(self) -> None:
        if self.weights.net is not self.net and self.weights.net != self.net:
            raise ValueError("weight matrix belongs to a different network")
        u = np.array(self.u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if u.ndim != 2 or u.shape[0] != self.net.n:
            raise ValueError(f"initial values shape {u.shape} incompatible with n={self.net.n}")
        u.flags.writeable = False
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.net.n

    @property
    def p(self) -> int:
        return self.u.shape[1]

    @cached_property
    def u_bar(self) -> np.ndarray:
        """Exact arithmetic mean of the initial values, shape (p,)."""
        bar = self.u.mean(axis=0)
        bar.flags.writeable = False
        return bar


def make_instance(net: DirectedNetwork, weights: WeightMatrix, u) -> ProblemInstance:
    return ProblemInstance(net, weights, np.asarray(u, dtype=float))


@dataclass(eq=False)
class SimulationState:
    k: int
    x: np.ndarray  # (n, p)
    y: np.ndarray  # (n,)
    z: np.ndarray  # (n, p)
    alpha: np.ndarray | None = None


def initial_state(inst: ProblemInstance) -> SimulationState:
    """x(0) = u, y(0) = 1, z(0) = x(0) / y(0)."""
    x = inst.u.astype(float).copy()
    return SimulationState(k=0, x=x, y=np.ones(inst.n), z=x.copy())


def consensus_error(z: np.ndarray, u_bar: np.ndarray) -> float:
    """sum_i ||z_i - u_bar||^2 (NaN when any estimate is undefined)."""
    d = z - np.asarray(u_bar)[None, :]
    return float(np.sum(d * d))


def nrps_alpha(weights: WeightMatrix, beta_k: float) -> np.ndarray:
    """Self-mixing gains alpha_i = (1 - beta_k*(1 - p_ii)) / p_ii.

    With these gains diag(alpha_i * p_ii) + beta_k * (off-diagonal part)
    is column stochastic for any beta_k in [0, 1].
    """
    if not (0.0 <= beta_k <= 1.0):
        raise ValueError(f"beta_k must lie in [0, 1], got {beta_k}")
    diag = weights.diagonal
    if np.any(diag <= 0.0):
        raise ValueError("alpha requires strictly positive self-weights p_ii")
    return (1.0 - beta_k * (1.0 - diag)) / diag


def _receiver_sums(
    recv: np.ndarray,
    send: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    eta_x: np.ndarray,
    eta_y: np.ndarray,
    n: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Each agent's sum of received messages p_ij * state_j + noise_ij."""
    msgs_x = w[:, None] * x[send] + eta_x
    p = x.shape[1]
    sum_x = np.empty((n, p))
    for c in range(p):
        sum_x[:, c] = np.bincount(recv, weights=msgs_x[:, c], minlength=n)
    sum_y = np.bincount(recv, weights=w * y[send] + eta_y, minlength=n)
    return sum_x, sum_y


def _ratio(x1: np.ndarray, y1: np.ndarray, eps_y: float) -> tuple[np.ndarray, np.ndarray]:
    """z = x / y with rows |y_i| < eps_y left as NaN sentinels."""
    bad = np.abs(y1) < eps_y
    if bad.any():
        z = np.full_like(x1, np.nan)
        ok = ~bad
        z[ok] = x1[ok] / y1[ok][:, None]
        return z, bad
    return x1 / y1[:, None], bad


def pushsum_round(
    inst: ProblemInstance,
    state: SimulationState,
    noise: RoundNoise,
    eps_y: float = EPS_Y,
) -> SimulationState:
    """One baseline round.  Near-zero denominators are recorded as NaN
    estimates rather than raising: under link noise the baseline is
    expected to break down."""
    net = inst.net
    diag = inst.weights.diagonal
    sum_x, sum_y = _receiver_sums(
        net.receivers, net.senders, inst.weights.edge_weights,
        state.x, state.y, noise.eta_x, noise.eta_y, inst.n,
    )
    x1 = diag[:, None] * state.x + sum_x
    y1 = diag * state.y + sum_y
    z1, _ = _ratio(x1, y1, eps_y)
    return SimulationState(k=state.k + 1, x=x1, y=y1, z=z1, alpha=None)


def nrps_round(
    inst: ProblemInstance,
    state: SimulationState,
    beta_k: float,
    theta_k: float,
    noise: RoundNoise,
    eps_y: float = EPS_Y,
    require_positive_y: bool = False,
) -> SimulationState:
    """One noise-resilient round.

    With ``require_positive_y`` (set by drivers when the schedule provably
    dominates the noise bound) a denominator at or below eps_y raises
    ProtocolInvariantError naming the round and agent.
    """
    if theta_k < 0.0:
        raise ValueError(f"theta_k must be >= 0, got {theta_k}")
    net = inst.net
    diag = inst.weights.diagonal
    alpha = nrps_alpha(inst.weights, beta_k)
    sum_x, sum_y = _receiver_sums(
        net.receivers, net.senders, inst.weights.edge_weights,
        state.x, state.y, noise.eta_x, noise.eta_y, inst.n,
    )
    gain = alpha * diag
    x1 = gain[:, None] * state.x + beta_k * sum_x + theta_k * inst.u
    y1 = gain * state.y + beta_k * sum_y + theta_k
    if require_positive_y and np.any(y1 <= eps_y):
        i = int(np.argmin(y1))
        raise ProtocolInvariantError(
            f"denominator positivity violated at round {state.k + 1}: "
            f"y[{i}] = {y1[i]:.6e} <= {eps_y} (agent {i + 1}, 1-based)"
        )
    z1, _ = _ratio(x1, y1, eps_y)
    return SimulationState(k=state.k + 1, x=x1, y=y1, z=z1, alpha=alpha)


@dataclass(eq=False)
class TraceSnapshot:
    k: int
    z: np.ndarray
    error: float
    sum_x: np.ndarray
    sum_y: float
    min_y: float
    breakdown: bool
    x: np.ndarray | None = None
    y: np.ndarray | None = None


@dataclass(eq=False)
class RunTrace:
    """Time-indexed record of one run, serializable to JSON lines.

    ``wall_clock`` and ``error_series`` are in-memory diagnostics and are
    deliberately not serialized, so rewriting a trace with identical
    configuration reproduces identical bytes.
    """

    name: str
    algorithm: str
    seed: int
    n: int
    p: int
    u: np.ndarray
    u_bar: np.ndarray
    rounds: int
    record_stride: int
    record_xy: bool
    eps_y: float
    soft_bound: bool
    positivity_guaranteed: bool
    config_hash: str | None = None
    config: dict | None = None
    snapshots: list[TraceSnapshot] = field(default_factory=list)
    min_y_overall: float = float("inf")
    min_abs_y_overall: float = float("inf")
    breakdown_rounds: int = 0
    error_series: np.ndarray | None = None
    wall_clock: float | None = None

    def ks(self) -> np.ndarray:
        return np.array([s.k for s in self.snapshots], dtype=np.int64)

    def errors(self) -> np.ndarray:
        return np.array([s.error for s in self.snapshots])

    def snapshot_at(self, k: int) -> TraceSnapshot:
        for s in self.snapshots:
            if s.k == k:
                return s
        raise KeyError(f"no snapshot recorded at round {k}")

    @property
    def final(self) -> TraceSnapshot:
        return self.snapshots[-1]

    def header_dict(self) -> dict:
        return {
            "kind": "header",
            "format_version": TRACE_FORMAT_VERSION,
            "name": self.name,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "n": self.n,
            "p": self.p,
            "u": self.u.tolist(),
            "u_bar": self.u_bar.tolist(),
            "rounds": self.rounds,
            "record_stride": self.record_stride,
            "record_xy": self.record_xy,
            "eps_y": self.eps_y,
            "soft_bound": self.soft_bound,
            "positivity_guaranteed": self.positivity_guaranteed,
            "config_hash": self.config_hash,
            "config": self.config,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header_dict(), sort_keys=True)]
        for s in self.snapshots:
            doc = {
                "kind": "snap",
                "k": s.k,
                "z": s.z.tolist(),
                "error": s.error,
                "sum_x": s.sum_x.tolist(),
                "sum_y": s.sum_y,
                "min_y": s.min_y,
                "breakdown": s.breakdown,
            }
            if s.x is not None:
                doc["x"] = s.x.tolist()
                doc["y"] = s.y.tolist()
            lines.append(json.dumps(doc, sort_keys=True))
        lines.append(
            json.dumps(
                {
                    "kind": "end",
                    "min_y_overall": self.min_y_overall,
                    "min_abs_y_overall": self.min_abs_y_overall,
                    "breakdown_rounds": self.breakdown_rounds,
                    "final_error": self.snapshots[-1].error if self.snapshots else None,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        data = self.to_jsonl().encode("utf-8")
        path = str(path)
        if path.endswith(".gz"):
            with open(path, "wb") as raw:
                # fixed mtime and empty name keep the bytes reproducible
                with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                    gz.write(data)
        else:
            with open(path, "wb") as fh:
                fh.write(data)

    @classmethod
    def read(cls, path) -> "RunTrace":
        path = str(path)
        if path.endswith(".gz"):
            with gzip.open(path, "rt", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        else:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        if not lines:
            raise ValueError(f"empty trace file: {path}")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ValueError(f"malformed trace file (no header line): {path}")
        if header.get("format_version") != TRACE_FORMAT_VERSION:
            raise ValueError(
                f"unsupported trace format_version {header.get('format_version')}"
            )
        trace = cls(
            name=header["name"],
            algorithm=header["algorithm"],
            seed=header["seed"],
            n=header["n"],
            p=header["p"],
            u=np.array(header["u"], dtype=float),
            u_bar=np.array(header["u_bar"], dtype=float),
            rounds=header["rounds"],
            record_stride=header["record_stride"],
            record_xy=header["record_xy"],
            eps_y=header["eps_y"],
            soft_bound=header["soft_bound"],
            positivity_guaranteed=header["positivity_guaranteed"],
            config_hash=header.get("config_hash"),
            config=header.get("config"),
        )
        for line in lines[1:]:
            doc = json.loads(line)
            if doc.get("kind") == "snap":
                trace.snapshots.append(
                    TraceSnapshot(
                        k=doc["k"],
                        z=np.array(doc["z"], dtype=float),
                        error=doc["error"],
                        sum_x=np.array(doc["sum_x"], dtype=float),
                        sum_y=doc["sum_y"],
                        min_y=doc["min_y"],
                        breakdown=doc["breakdown"],
                        x=np.array(doc["x"], dtype=float) if "x" in doc else None,
                        y=np.array(doc["y"], dtype=float) if "y" in doc else None,
                    )
                )
            elif doc.get("kind") == "end":
                trace.min_y_overall = doc["min_y_overall"]
                trace.min_abs_y_overall = doc["min_abs_y_overall"]
                trace.breakdown_rounds = doc["breakdown_rounds"]
        return trace


def positivity_is_guaranteed(
    inst: ProblemInstance,
    noise_model: NoiseModel,
    beta: BetaSchedule | None,
    theta: ThetaSchedule | None,
    rounds: int,
) -> bool:
    """Whether denominator positivity is provably guaranteed for this run.

    True when the channel is noiseless, or when the noise is hard-bounded
    with no burst excursions and the re-injection weights dominate the
    worst-case per-agent noise sum at every round of the run.
    """
    if beta is None or theta is None:
        return False
    if noise_model.dist == "zero":
        return True
    if not noise_model.is_bounded or noise_model.has_burst:
        return False
    delta = effective_delta(noise_model)
    if delta == 0.0:
        return True
    bound = float(np.max(inst.net.in_degrees)) * delta
    ks = np.arange(rounds, dtype=np.int64)
    return dominance_margin(theta, beta, bound, ks) > 0.0


def run(
    inst: ProblemInstance,
    algorithm: str,
    noise_model: NoiseModel,
    *,
    beta: BetaSchedule | None = None,
    theta: ThetaSchedule | None = None,
    rounds: int,
    record_stride: int = 1,
    record_xy: bool = False,
    eps_y: float = EPS_Y,
    name: str = "",
    config: dict | None = None,
    config_hash: str | None = None,
    keep_error_series: bool = False,
) -> RunTrace:
    """Drive round k = 0 .. rounds-1, sampling noise per round and recording
    snapshots at every ``record_stride`` rounds (k = 0 and the final round
    are always recorded).  Deterministic given the configuration."""
    import time

    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1, got {record_stride}")
    if algorithm not in ("pushsum", "nrps"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "nrps" and (beta is None or theta is None):
        raise ValueError("the noise-resilient algorithm needs beta and theta schedules")

    net = inst.net
    n, p = inst.n, inst.p
    recv, send = net.receivers, net.senders
    w = inst.weights.edge_weights
    diag = inst.weights.diagonal
    sampler = RoundSampler(noise_model, net, p)
    guaranteed = algorithm == "nrps" and positivity_is_guaranteed(
        inst, noise_model, beta, theta, rounds
    )

    x = inst.u.astype(float).copy()
    y = np.ones(n)
    x0 = inst.u
    u_bar = inst.u_bar

    trace = RunTrace(
        name=name,
        algorithm=algorithm,
        seed=noise_model.seed,
        n=n,
        p=p,
        u=inst.u,
        u_bar=u_bar,
        rounds=rounds,
        record_stride=record_stride,
        record_xy=record_xy,
        eps_y=eps_y,
        soft_bound=noise_model.soft_bound,
        positivity_guaranteed=guaranteed,
        config_hash=config_hash,
        config=config,
    )
    if keep_error_series:
        trace.error_series = np.empty(rounds + 1)

    def record(k: int, x: np.ndarray, y: np.ndarray, z: np.ndarray, bad: bool) -> None:
        trace.snapshots.append(
            TraceSnapshot(
                k=k,
                z=z.copy(),
                error=consensus_error(z, u_bar),
                sum_x=x.sum(axis=0),
                sum_y=float(y.sum()),
                min_y=float(y.min()),
                breakdown=bad,
                x=x.copy() if record_xy else None,
                y=y.copy() if record_xy else None,
            )
        )

    t0 = time.monotonic()
    z = x / y[:, None]
    trace.min_y_overall = float(y.min())
    trace.min_abs_y_overall = float(np.abs(y).min())
    record(0, x, y, z, False)
    if keep_error_series:
        trace.error_series[0] = trace.snapshots[0].error

    for k in range(rounds):
        rn = sampler(k)
        sum_x, sum_y = _receiver_sums(recv, send, w, x, y, rn.eta_x, rn.eta_y, n)
        if algorithm == "pushsum":
            x = diag[:, None] * x + sum_x
            y = diag * y + sum_y
        else:
            beta_k = beta(k)
            theta_k = theta(k)
            alpha = (1.0 - beta_k * (1.0 - diag)) / diag
            gain = alpha * diag
            x = gain[:, None] * x + beta_k * sum_x + theta_k * x0
            y = gain * y + beta_k * sum_y + theta_k

        ymin = float(y.min())
        yabs = float(np.abs(y).min())
        if ymin < trace.min_y_overall:
            trace.min_y_overall = ymin
        if yabs < trace.min_abs_y_overall:
            trace.min_abs_y_overall = yabs
        bad_round = yabs < eps_y
        if bad_round:
            trace.breakdown_rounds += 1
            if guaranteed and ymin <= eps_y:
                i = int(np.argmin(y))
                raise ProtocolInvariantError(
                    f"denominator positivity violated at round {k + 1}: "
                    f"y[{i}] = {y[i]:.6e} <= {eps_y} (agent {i + 1}, 1-based)"
                )

        want_snapshot = ((k + 1) % record_stride == 0) or (k + 1) == rounds
        if want_snapshot or keep_error_series:
            z, bad = _ratio(x, y, eps_y)
            if keep_error_series:
                trace.error_series[k + 1] = consensus_error(z, u_bar)
            if want_snapshot:
                record(k + 1, x, y, z, bool(bad.any()))

    trace.wall_clock = time.monotonic() - t0
    return trace
