"""Joint training loop: mini-batch gradient descent over the event-level loss
plus the epsilon-weighted network-scale constraint, with checkpointing and a
finite-difference gradient verifier.
"""

from __future__ import annotations

import math
import struct
import sys
from dataclasses import dataclass, field

import numpy as np

from . import macro as macro_mod
from .graph import MacroSeries, TemporalNetwork, compute_macro_series, snapshot_arrays
from .micro import AttentionParams, NegativeTable, draw_event_negatives
from .micrograd import EventBatch, batch_loss_and_grads
from .util import substream

CHECKPOINT_MAGIC = b"M2DNE\x00"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    dim: int = 128
    history: int = 5
    negatives: int = 5
    epsilon: float = 0.3
    epochs: int = 30
    batch_size: int = 512
    learning_rate: float = 0.01
    seed: int = 42
    deterministic: bool = True
    clamp_bound: float = 50.0
    grad_clip: float = 30.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.history < 1:
            raise ValueError("history must be >= 1")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class ModelState:
    embeddings: np.ndarray
    attention: AttentionParams
    macro: macro_mod.MacroParams

    @property
    def node_count(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def copy(self) -> "ModelState":
        return ModelState(self.embeddings.copy(), self.attention.copy(),
                          self.macro.copy())

    def param_groups(self) -> dict:
        """Name -> live array, or plain float for the scalar groups (write
        scalars back through :meth:`set_scalar`)."""
        return {
            "embeddings": self.embeddings,
            "att_vector": self.attention.att_vector,
            "local_weight": self.attention.local_weight,
            "s_weight": self.attention.s_weight,
            "s_bias": self.attention.s_bias,
            "decay_raw": self.attention.decay_raw,
            "zeta_raw": self.macro.zeta_raw,
            "gamma": self.macro.gamma,
            "theta": self.macro.theta,
        }

    def set_scalar(self, name: str, value: float) -> None:
        if name == "s_bias":
            self.attention.s_bias = float(value)
        elif name == "zeta_raw":
            self.macro.zeta_raw = float(value)
        elif name == "gamma":
            self.macro.gamma = float(value)
        elif name == "theta":
            self.macro.theta = float(value)
        else:
            raise KeyError(name)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(val))
                   for val in self.param_groups().values())


def init_state(node_count: int, config: TrainConfig,
               rng: np.random.Generator) -> ModelState:
    """Uniform init: embeddings in +-0.5/d, attention maps at Glorot bounds,
    zero bias, softplus(0) decay, and (softplus(0), 1, 1) growth parameters.
    """
    if node_count < 2:
        raise ValueError("need at least 2 nodes")
    d = config.dim
    U = rng.uniform(-0.5 / d, 0.5 / d, size=(node_count, d))
    att = rng.uniform(-math.sqrt(6.0 / (2 * d + 1)),
                      math.sqrt(6.0 / (2 * d + 1)), size=2 * d)
    W = rng.uniform(-math.sqrt(6.0 / (2 * d)),
                    math.sqrt(6.0 / (2 * d)), size=(d, d))
    sw = rng.uniform(-math.sqrt(6.0 / (d + 1)),
                     math.sqrt(6.0 / (d + 1)), size=d)
    attention = AttentionParams(att_vector=att, local_weight=W, s_weight=sw,
                                s_bias=0.0, decay_raw=np.zeros(node_count))
    return ModelState(embeddings=U, attention=attention,
                      macro=macro_mod.MacroParams())


class TrainData:
    """Pre-extracted arrays shared by every step: history snapshots, the
    negative-sampling table, the weight table for batch draws, the growth
    series and the edge endpoints feeding the rate numerator."""

    def __init__(self, net: TemporalNetwork, history: int):
        self.net = net
        self.snapshots = snapshot_arrays(net, history)
        self.table = NegativeTable(net.degrees(),
                                   order=net.first_appearance_order())
        self.series: MacroSeries = compute_macro_series(net)
        self.edge_src = net.src
        self.edge_dst = net.dst
        cum = np.cumsum(net.weight)
        self.sample_cum = cum / cum[-1]


def sample_batch(data: TrainData, batch_size: int,
                 rng: np.random.Generator) -> EventBatch:
    """Draw events with replacement, proportional to their weights, paired
    with their pre-event history snapshots."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.searchsorted(data.sample_cum, rng.random(batch_size), side="right")
    idx = np.minimum(idx, len(data.net) - 1)
    net, snaps = data.net, data.snapshots
    return EventBatch(
        src=net.src[idx], dst=net.dst[idx], t=net.time[idx],
        src_hist_nodes=snaps.src_nodes[idx], src_hist_times=snaps.src_times[idx],
        src_len=snaps.src_len[idx],
        dst_hist_nodes=snaps.dst_nodes[idx], dst_hist_times=snaps.dst_times[idx],
        dst_len=snaps.dst_len[idx])


def joint_loss(state: ModelState, batch: EventBatch, data: TrainData,
               config: TrainConfig, rng: np.random.Generator) -> float:
    """Sampled event loss plus epsilon times the scale-constraint loss."""
    neg_src, neg_dst = draw_event_negatives(batch.src, batch.dst, data.table,
                                            config.negatives, rng)
    micro, _, _ = batch_loss_and_grads(batch, neg_src, neg_dst,
                                       state.embeddings, state.attention,
                                       want_grads=False,
                                       clamp_bound=config.clamp_bound)
    if config.epsilon == 0.0:
        return micro
    ma = macro_mod.macro_loss(data.series, state.embeddings, data.edge_src,
                              data.edge_dst, state.macro)
    return micro + config.epsilon * ma


@dataclass
class StepResult:
    micro_loss: float
    macro_loss: float
    total_loss: float
    range_hits: int


def _joint_grads(state: ModelState, batch: EventBatch, neg_src, neg_dst,
                 data: TrainData, config: TrainConfig):
    micro, grads, stats = batch_loss_and_grads(
        batch, neg_src, neg_dst, state.embeddings, state.attention,
        clamp_bound=config.clamp_bound)
    grads["zeta_raw"] = 0.0
    grads["gamma"] = 0.0
    grads["theta"] = 0.0
    ma = 0.0
    if config.epsilon > 0.0:
        ma, dU, dz, dg, dt = macro_mod.macro_loss_and_grads(
            data.series, state.embeddings, data.edge_src, data.edge_dst,
            state.macro)
        eps = config.epsilon
        grads["embeddings"] += eps * dU
        grads["zeta_raw"] = eps * dz
        grads["gamma"] = eps * dg
        grads["theta"] = eps * dt
    total = micro + config.epsilon * ma
    return total, micro, ma, grads, stats


# During fit, the three growth scalars are excluded from the per-batch steps
# and refreshed at epoch boundaries instead (see fit); their full-series
# gradients are orders of magnitude steeper than the event-level ones, so
# sharing the configured rate would only produce clip-bounded oscillation.
_EPOCH_FITTED_GROUPS = {"zeta_raw": 0.0, "gamma": 0.0, "theta": 0.0}
_MACRO_REFIT_ITERS = 5000


def step(state: ModelState, batch: EventBatch, data: TrainData,
         config: TrainConfig, rng: np.random.Generator,
         rate_scales: dict | None = None) -> StepResult:
    """One descent update over every parameter group, in place.

    Per-group gradients exceeding ``grad_clip`` in L2 norm are rescaled to
    the clip so a single mis-scaled group cannot blow up the state; gradients
    must be finite or the step aborts naming the offending group.
    ``rate_scales`` optionally multiplies individual groups' rates (fit uses
    it to hand the growth scalars to the epoch-boundary refit).
    """
    neg_src, neg_dst = draw_event_negatives(batch.src, batch.dst, data.table,
                                            config.negatives, rng)
    total, micro, ma, grads, stats = _joint_grads(state, batch, neg_src,
                                                  neg_dst, data, config)
    lr = config.learning_rate
    for name in ("embeddings", "att_vector", "local_weight", "s_weight",
                 "s_bias", "decay_raw", "zeta_raw", "gamma", "theta"):
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in group {name!r}")
        if rate_scales is not None:
            g = g * rate_scales.get(name, 1.0)
        norm = float(np.linalg.norm(g))
        if config.grad_clip > 0 and norm > config.grad_clip:
            g = g * (config.grad_clip / norm)
        if g.ndim == 0:
            current = state.param_groups()[name]
            state.set_scalar(name, float(current) - lr * float(g))
        else:
            state.param_groups()[name] -= lr * g
    return StepResult(micro_loss=micro, macro_loss=ma, total_loss=total,
                      range_hits=stats["range_hits"])


@dataclass
class LossTrace:
    epoch: list = field(default_factory=list)
    micro: list = field(default_factory=list)
    macro: list = field(default_factory=list)
    total: list = field(default_factory=list)
    range_hits: int = 0

    def append(self, epoch, micro, macro, total):
        self.epoch.append(int(epoch))
        self.micro.append(float(micro))
        self.macro.append(float(macro))
        self.total.append(float(total))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,micro_loss,macro_loss,total_loss\n")
            for row in zip(self.epoch, self.micro, self.macro, self.total):
                fh.write("%d,%.12g,%.12g,%.12g\n" % row)


def fit(net: TemporalNetwork, config: TrainConfig, progress: bool = False,
        initial_state: ModelState | None = None) -> tuple[ModelState, LossTrace]:
    """Train on the full event stream of ``net``.

    Runs epochs x ceil(E / batch_size) update steps on the embeddings and
    attention parameters; the event-level and scale objectives evolve
    alternately: every batch couples the scale residuals into the embedding
    gradient, while the three growth scalars themselves are re-fit to the
    full training series at epoch boundaries (their curvature is far too
    steep to share the event-level rate).

    The per-epoch trace records the mean batch event loss, the scale loss on
    the full training series, and their epsilon-weighted sum. With
    epsilon = 0 the scale loss is not part of the objective; its column
    echoes the initial value.
    """
    if net.epoch_count < 2:
        raise ValueError("training needs a network spanning at least 2 epochs")
    if initial_state is None:
        state = init_state(net.node_count, config, substream(config.seed, "init"))
    else:
        if initial_state.node_count != net.node_count:
            raise ValueError("initial state does not match the network size")
        state = initial_state.copy()
    data = TrainData(net, config.history)
    batch_rng = substream(config.seed, "batch")
    neg_rng = substream(config.seed, "negatives")
    steps_per_epoch = max(1, math.ceil(len(net) / config.batch_size))
    trace = LossTrace()
    frozen_macro = None
    rate_scales = None
    if config.epsilon == 0.0:
        frozen_macro = macro_mod.macro_loss(data.series, state.embeddings,
                                            data.edge_src, data.edge_dst,
                                            state.macro)
    else:
        rate_scales = _EPOCH_FITTED_GROUPS
        state.macro = macro_mod.fit_params(data.series, state.embeddings,
                                           data.edge_src, data.edge_dst,
                                           init=state.macro,
                                           max_iter=_MACRO_REFIT_ITERS)
    for epoch in range(1, config.epochs + 1):
        micro_sum = 0.0
        for _ in range(steps_per_epoch):
            batch = sample_batch(data, config.batch_size, batch_rng)
            res = step(state, batch, data, config, neg_rng, rate_scales)
            micro_sum += res.micro_loss
            trace.range_hits += res.range_hits
        micro_mean = micro_sum / steps_per_epoch
        if config.epsilon > 0.0:
            state.macro = macro_mod.fit_params(data.series, state.embeddings,
                                               data.edge_src, data.edge_dst,
                                               init=state.macro,
                                               max_iter=_MACRO_REFIT_ITERS)
            ma = macro_mod.macro_loss(data.series, state.embeddings,
                                      data.edge_src, data.edge_dst, state.macro)
        else:
            ma = frozen_macro
        trace.append(epoch, micro_mean, ma, micro_mean + config.epsilon * ma)
        if progress:
            print(f"epoch {epoch}/{config.epochs} micro={micro_mean:.4f} "
                  f"macro={ma:.4f}", file=sys.stderr)
    if not state.all_finite():
        raise FloatingPointError("non-finite parameters after training")
    return state, trace


# ---------------------------------------------------------------------------
# gradient verification

@dataclass
class GradCheckReport:
    max_rel_err: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.max_rel_err.values())

    def worst(self) -> float:
        return max(self.max_rel_err.values())


def compare_grads(analytic: dict, numeric: dict, tolerance: float,
                  floor: float = 1e-3) -> GradCheckReport:
    """Per-group max of |a - n| / max(|a|, |n|, floor)."""
    out = {}
    for name, a in analytic.items():
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        out[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    return GradCheckReport(max_rel_err=out, tolerance=tolerance)


def gradient_check(state: ModelState, net: TemporalNetwork,
                   config: TrainConfig, tolerance: float = 1e-4,
                   fd_step: float = 1e-5) -> GradCheckReport:
    """Compare analytic joint-loss gradients against central differences.

    The batch is the full event stream with negatives drawn once from the
    seeded stream, so the loss is a deterministic function of the parameters.
    Sized for small diagnostics (finite differences sweep every entry).
    """
    data = TrainData(net, config.history)
    idx = np.arange(len(net))
    snaps = data.snapshots
    batch = EventBatch(
        src=net.src[idx], dst=net.dst[idx], t=net.time[idx],
        src_hist_nodes=snaps.src_nodes[idx], src_hist_times=snaps.src_times[idx],
        src_len=snaps.src_len[idx],
        dst_hist_nodes=snaps.dst_nodes[idx], dst_hist_times=snaps.dst_times[idx],
        dst_len=snaps.dst_len[idx])
    neg_rng = substream(config.seed, "negatives")
    neg_src, neg_dst = draw_event_negatives(batch.src, batch.dst, data.table,
                                            config.negatives, neg_rng)

    work = state.copy()
    _, _, _, analytic, _ = _joint_grads(work, batch, neg_src, neg_dst, data,
                                        config)

    def loss_at(st: ModelState) -> float:
        total, _, _, _, _ = _joint_grads(st, batch, neg_src, neg_dst, data,
                                         config)
        return total

    numeric = {}
    for name, ref in work.param_groups().items():
        if np.isscalar(ref) or np.ndim(ref) == 0:
            orig = float(ref)
            work.set_scalar(name, orig + fd_step)
            up = loss_at(work)
            work.set_scalar(name, orig - fd_step)
            down = loss_at(work)
            work.set_scalar(name, orig)
            numeric[name] = (up - down) / (2 * fd_step)
        else:
            arr = ref
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for pos in range(flat.shape[0]):
                orig = flat[pos]
                flat[pos] = orig + fd_step
                up = loss_at(work)
                flat[pos] = orig - fd_step
                down = loss_at(work)
                flat[pos] = orig
                gflat[pos] = (up - down) / (2 * fd_step)
            numeric[name] = g
    return compare_grads(analytic, numeric, tolerance)


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(state: ModelState, path) -> None:
    """Little-endian binary: magic, version, dims, then float64 blocks in
    declared order (embeddings, att_vector, local_weight, s_weight, s_bias,
    decay_raw, zeta_raw, gamma, theta)."""
    V, d = state.embeddings.shape
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<QQ", V, d))
        att = state.attention
        for block in (state.embeddings, att.att_vector, att.local_weight,
                      att.s_weight, np.float64(att.s_bias), att.decay_raw,
                      np.float64(state.macro.zeta_raw),
                      np.float64(state.macro.gamma),
                      np.float64(state.macro.theta)):
            fh.write(np.asarray(block, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = len(CHECKPOINT_MAGIC)
    if blob[:head] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, head)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    V, d = struct.unpack_from("<QQ", blob, head + 4)
    offset = head + 4 + 16
    counts = (V * d, 2 * d, d * d, d, 1, V, 1, 1, 1)
    expected = offset + 8 * sum(counts)
    if len(blob) != expected:
        raise ValueError(f"truncated or oversized checkpoint: "
                         f"{len(blob)} bytes, expected {expected}")
    blocks = []
    for count in counts:
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        offset += 8 * count
        blocks.append(arr)
    emb, att, W, sw, sb, draw, zr, ga, th = blocks
    attention = AttentionParams(att_vector=att, local_weight=W.reshape(d, d),
                                s_weight=sw, s_bias=float(sb[0]),
                                decay_raw=draw)
    state = ModelState(embeddings=emb.reshape(V, d), attention=attention,
                       macro=macro_mod.MacroParams(float(zr[0]), float(ga[0]),
                                                   float(th[0])))
    if not state.all_finite():
        raise ValueError("checkpoint contains non-finite parameters")
    return state
