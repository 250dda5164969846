"""Per-round, per-edge additive link noise with replayable counter-based streams.

Every round owns a disjoint slice of a Philox counter space: the key encodes
(seed, channel) and the 256-bit counter starts at ``round << 128``.  Within a
round, draws run over the canonical sorted edge list, components innermost.
Sampling round k is therefore a pure function of (seed, k, edge, channel,
component): replaying any round, in any order, regenerates identical noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .graph import DirectedNetwork

_X_CHANNEL = 0
_Y_CHANNEL = 1
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseModel:
    """Additive channel noise description.

    dist: "zero", "uniform" (lo, hi) or "normal" (mean, std).  Normal noise
    is unbounded; its working bound must be declared via ``soft_delta`` and
    is flagged as soft.  ``burst_period``/``burst_scale`` multiply the drawn
    samples by ``burst_scale`` at every round k = period, 2*period, ...
    ``link_scale`` optionally scales individual edges' samples; the design
    bound collapses to the maximum over links.
    """

    dist: str = "zero"
    lo: float = 0.0
    hi: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    soft_delta: float | None = None
    burst_period: int | None = None
    burst_scale: float = 1.0
    link_scale: tuple[tuple[int, int, float], ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dist not in ("zero", "uniform", "normal"):
            raise ValueError(f"unknown noise distribution {self.dist!r}")
        if self.dist == "uniform" and self.lo > self.hi:
            raise ValueError(f"uniform noise needs lo <= hi, got ({self.lo}, {self.hi})")
        if self.dist == "normal" and self.std < 0.0:
            raise ValueError(f"normal noise needs std >= 0, got {self.std}")
        if self.burst_period is not None and self.burst_period < 1:
            raise ValueError(f"burst period must be >= 1, got {self.burst_period}")

    def with_seed(self, seed: int) -> "NoiseModel":
        from dataclasses import replace

        return replace(self, seed=int(seed))

    @property
    def soft_bound(self) -> bool:
        """True when the declared bound is not rigorous (normal noise)."""
        return self.dist == "normal"

    @property
    def is_bounded(self) -> bool:
        return self.dist in ("zero", "uniform")

    @property
    def has_burst(self) -> bool:
        return self.burst_period is not None and self.burst_scale != 1.0

    @cached_property
    def _max_link_scale(self) -> float:
        if not self.link_scale:
            return 1.0
        return max(s for _, _, s in self.link_scale)


def effective_delta(model: NoiseModel) -> float:
    """The per-link bound used to size schedules and the consensus band.

    Exact for zero/uniform noise.  For normal noise it is the declared soft
    bound (``model.soft_bound`` is then True); burst excursions are not
    included, by design.
    """
    if model.dist == "zero":
        return 0.0
    if model.dist == "uniform":
        return max(abs(model.lo), abs(model.hi)) * model._max_link_scale
    if model.soft_delta is None:
        raise ValueError("normal noise needs a declared soft_delta to expose a bound")
    return float(model.soft_delta) * model._max_link_scale


@dataclass(eq=False)
class RoundNoise:
    """Noise realization for one round, aligned with the canonical edge order."""

    k: int
    receivers: np.ndarray
    senders: np.ndarray
    eta_x: np.ndarray  # (m, p)
    eta_y: np.ndarray  # (m,)

    def x_for_edge(self, i: int, j: int) -> np.ndarray:
        return self.eta_x[self._edge_index[(i, j)]]

    def y_for_edge(self, i: int, j: int) -> float:
        return float(self.eta_y[self._edge_index[(i, j)]])

    @cached_property
    def _edge_index(self) -> dict:
        return {
            (int(i), int(j)): e
            for e, (i, j) in enumerate(zip(self.receivers, self.senders))
        }

    def aggregate(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-agent sums over in-edges: (n, p) for x and (n,) for y."""
        p = self.eta_x.shape[1]
        agg_x = np.empty((n, p))
        for c in range(p):
            agg_x[:, c] = np.bincount(self.receivers, weights=self.eta_x[:, c], minlength=n)
        agg_y = np.bincount(self.receivers, weights=self.eta_y, minlength=n)
        return agg_x, agg_y


class RoundSampler:
    """Reusable sampler bound to (model, network, state dimension).

    Keeps one Philox stream per channel and rewinds its counter to
    ``k << 128`` before each round, which is bit-identical to constructing
    fresh generators per round but much cheaper in the simulation loop.
    """

    def __init__(self, model: NoiseModel, net: DirectedNetwork, p: int = 1):
        if p < 1:
            raise ValueError(f"state dimension must be >= 1, got {p}")
        self.model = model
        self.net = net
        self.p = p
        self._m = net.m
        if model.dist != "zero":
            self._bitgens = []
            self._gens = []
            for channel in (_X_CHANNEL, _Y_CHANNEL):
                key = np.array(
                    [model.seed & _MASK64, channel + 1], dtype=np.uint64
                )
                bg = np.random.Philox(key=key)
                self._bitgens.append(bg)
                self._gens.append(np.random.Generator(bg))
        if model.link_scale:
            scale_map = {(i, j): s for i, j, s in model.link_scale}
            self._edge_scale = np.array(
                [scale_map.get((int(i), int(j)), 1.0) for i, j in net.edges]
            )
        else:
            self._edge_scale = None

    def _rewind(self, channel: int, k: int) -> np.random.Generator:
        bg = self._bitgens[channel]
        st = bg.state
        counter = st["state"]["counter"]
        counter[:] = 0
        counter[2] = k  # position k << 128 in the 256-bit counter
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        bg.state = st
        return self._gens[channel]

    def _draw(self, channel: int, k: int, shape) -> np.ndarray:
        gen = self._rewind(channel, k)
        if self.model.dist == "uniform":
            return gen.uniform(self.model.lo, self.model.hi, shape)
        return gen.normal(self.model.mean, self.model.std, shape)

    def __call__(self, k: int) -> RoundNoise:
        if k < 0:
            raise ValueError(f"round index must be >= 0, got {k}")
        m = self._m
        if self.model.dist == "zero":
            eta_x = np.zeros((m, self.p))
            eta_y = np.zeros(m)
        else:
            eta_x = self._draw(_X_CHANNEL, k, (m, self.p))
            eta_y = self._draw(_Y_CHANNEL, k, m)
            model = self.model
            if (
                model.burst_period is not None
                and k > 0
                and k % model.burst_period == 0
            ):
                eta_x *= model.burst_scale
                eta_y *= model.burst_scale
            if self._edge_scale is not None:
                eta_x *= self._edge_scale[:, None]
                eta_y *= self._edge_scale
        return RoundNoise(
            k=k,
            receivers=self.net.receivers,
            senders=self.net.senders,
            eta_x=eta_x,
            eta_y=eta_y,
        )


def sample_round(model: NoiseModel, net: DirectedNetwork, k: int, p: int = 1) -> RoundNoise:
    """One round's noise for every edge; independent of any prior sampling."""
    return RoundSampler(model, net, p)(k)
