"""Deep-unfolded solver: the PGD iteration as a learnable layered network.

Each layer reproduces one aux-refresh + ascent + projection round, but the
fixed step sizes are replaced by learned scalars: an environment projection
(phi_env . w) sets the overall step scale per beam, and per-direction eta
coefficients reweight the own-stream, cross-interference and penalty pulls.
Training minimizes a layer-weighted regret against oracle WSR labels with
reverse-mode gradients propagated through the whole unrolled graph
(including the projections).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import backends
from .model import LN2, BeamformerSet, ProblemInstance, RateAllocation
from .pgd import StepSizes, init_beamformers, project_beamformers

PARAMS_FORMAT = "rsma-du-params"
PARAMS_VERSION = 1

#: substream tag separating the shuffle RNG from forward-init seeds
_SHUFFLE_STREAM = 104729


@dataclass
class EnvVector:
    """Conditioning input [f_1..f_U, p0, power_budget] of the learned scales."""

    phi_env: np.ndarray


def env_vector(inst: ProblemInstance) -> EnvVector:
    return EnvVector(
        np.concatenate(
            [inst.weights, [inst.p0, inst.power_budget]]
        ).astype(np.float64)
    )


@dataclass
class LayerParams:
    """Learnables of one layer.

    w0  : (U+2,)   env projection scaling the common-beam step
    w   : (U, U+2) env projections scaling each private-beam step
    eta : (U, U+1) per user: [own-stream, cross terms in ascending other-user
          order, penalty] direction coefficients
    """

    w0: np.ndarray
    w: np.ndarray
    eta: np.ndarray

    @property
    def num_users(self) -> int:
        return self.w.shape[0]

    def validate(self) -> None:
        u = self.num_users
        if self.w0.shape != (u + 2,) or self.w.shape != (u, u + 2):
            raise ValueError("w0/w shapes inconsistent")
        if self.eta.shape != (u, u + 1):
            raise ValueError("eta must have shape (U, U+1)")
        for arr in (self.w0, self.w, self.eta):
            if not np.all(np.isfinite(arr)):
                raise ValueError("layer parameters must be finite")

    def copy(self) -> "LayerParams":
        return LayerParams(self.w0.copy(), self.w.copy(), self.eta.copy())


@dataclass
class NetworkParams:
    layers: list[LayerParams]
    lam: float = 1.0

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_users(self) -> int:
        return self.layers[0].num_users

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("need at least one layer")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        u = self.num_users
        for layer in self.layers:
            layer.validate()
            if layer.num_users != u:
                raise ValueError("all layers must share the same U")

    def copy(self) -> "NetworkParams":
        return NetworkParams([l.copy() for l in self.layers], self.lam)

    def as_arrays(self):
        """Stacked (w0, w, eta) arrays of shape (N, ...) for the kernels."""
        w0 = np.ascontiguousarray([l.w0 for l in self.layers], dtype=np.float64)
        w = np.ascontiguousarray([l.w for l in self.layers], dtype=np.float64)
        eta = np.ascontiguousarray([l.eta for l in self.layers], dtype=np.float64)
        return w0, w, eta


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    grad_mode: str = "reverse"
    z_backprop: bool = True

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.grad_mode not in ("reverse", "finite_diff"):
            raise ValueError("grad_mode must be 'reverse' or 'finite_diff'")


@dataclass
class ForwardTrace:
    """Per-layer states of one forward pass (index 0 = after layer 1)."""

    beams: list[BeamformerSet]
    rc: list[RateAllocation]
    wsr_hat: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.beams)

    def final(self):
        return self.beams[-1], self.rc[-1], float(self.wsr_hat[-1])


def init_params(
    num_users: int,
    num_layers: int,
    seed: int,
    scheme: str = "random_small",
    steps: Optional[StepSizes] = None,
    lam: float = 1.0,
) -> NetworkParams:
    """Fresh parameters.

    random_small: every entry i.i.d. Normal(0, 0.01^2).
    pgd_mimic: closed-form construction making each layer equal one plain
    PGD ascent step with the given StepSizes; relies on sum(f) = 1 so the
    env projection picks the scale out of the weight block for every
    instance at once.
    """
    u, n = num_users, num_layers
    if u < 1 or n < 1:
        raise ValueError("need num_users >= 1 and num_layers >= 1")
    layers = []
    if scheme == "random_small":
        rng = np.random.default_rng(seed)
        for _ in range(n):
            layers.append(
                LayerParams(
                    rng.normal(0.0, 0.01, u + 2),
                    rng.normal(0.0, 0.01, (u, u + 2)),
                    rng.normal(0.0, 0.01, (u, u + 1)),
                )
            )
    elif scheme == "pgd_mimic":
        if steps is None:
            steps = StepSizes.uniform(u)
        steps.validate()
        if lam <= 0:
            raise ValueError("lam must be positive")
        for _ in range(n):
            w0 = np.zeros(u + 2)
            w0[:u] = lam * steps.alpha_v0 / LN2
            w = np.zeros((u, u + 2))
            w[:, :u] = 1.0 / LN2
            eta = np.empty((u, u + 1))
            eta[:, :u] = steps.alpha_v[:, None]
            eta[:, u] = steps.alpha_v * lam
            layers.append(LayerParams(w0, w, eta))
    else:
        raise ValueError("scheme must be 'random_small' or 'pgd_mimic'")
    params = NetworkParams(layers, lam)
    params.validate()
    return params


def _instance_arrays(inst: ProblemInstance):
    return (
        np.ascontiguousarray(inst.channels, dtype=np.complex128),
        np.ascontiguousarray(inst.weights, dtype=np.float64),
        np.ascontiguousarray(inst.noise_var, dtype=np.float64),
        int(inst.ref_user),
        float(inst.p0),
        float(inst.power_budget),
    )


def _forward_raw(inst: ProblemInstance, params: NetworkParams, v_init: np.ndarray):
    kern = backends.get_backend()
    h, f, nv, ref, p0, budget = _instance_arrays(inst)
    w0, w, eta = params.as_arrays()
    phi = env_vector(inst).phi_env
    return kern.du_forward(
        h, f, nv, ref, p0, budget, float(params.lam), v_init, w0, w, eta, phi
    )


def layer_forward(
    state,
    theta: LayerParams,
    inst: ProblemInstance,
    lam: float = 1.0,
):
    """Apply a single unfolded layer to a (beams, rc) state."""
    beams, _ = state
    single = NetworkParams([theta], lam)
    v_states, _, _, rc_states, _, _ = _forward_raw(
        inst, single, np.ascontiguousarray(beams.stacked())
    )
    return (
        BeamformerSet.from_stacked(v_states[1]),
        RateAllocation(rc_states[0].copy()),
    )


def _traced_forward(
    inst: ProblemInstance, params: NetworkParams, arrs, seed: int
) -> ForwardTrace:
    """network_forward body with validation and array stacking hoisted out.

    ``arrs`` is ``params.as_arrays()`` computed by the caller — evaluation
    loops reuse it across records instead of restacking per call.  The rc
    half of the usual feasible init is skipped because every layer recomputes
    its own allocation; the beam draw and projection are unchanged.
    """
    rng = np.random.default_rng(seed)
    shape = (inst.num_users + 1, inst.num_antennas)
    raw = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(
        2.0
    )
    beams0 = project_beamformers(
        BeamformerSet.from_stacked(raw), inst.power_budget, inst.p0
    )
    kern = backends.get_backend()
    h, f, nv, ref, p0, budget = _instance_arrays(inst)
    w0, w, eta = arrs
    phi = env_vector(inst).phi_env
    v_states, _, _, rc_states, wsr_hat, _ = kern.du_forward(
        h,
        f,
        nv,
        ref,
        p0,
        budget,
        float(params.lam),
        np.ascontiguousarray(beams0.stacked()),
        w0,
        w,
        eta,
        phi,
    )
    n = params.num_layers
    return ForwardTrace(
        [BeamformerSet.from_stacked(v_states[i + 1]) for i in range(n)],
        [RateAllocation(rc_states[i].copy()) for i in range(n)],
        wsr_hat.copy(),
    )


def network_forward(
    inst: ProblemInstance, params: NetworkParams, seed: int
) -> ForwardTrace:
    """Random feasible init (seeded) followed by all N layers."""
    params.validate()
    return _traced_forward(inst, params, params.as_arrays(), seed)


def layer_weights(num_layers: int) -> np.ndarray:
    """Loss weights log2(n+1), n = 1..N; deeper layers count more."""
    return np.log2(np.arange(2, num_layers + 2, dtype=np.float64))


def batch_loss(traces: Sequence[ForwardTrace], labels: Sequence[float]) -> float:
    """(1/(Q N)) sum_q sum_n log2(n+1) (wsr_star_q - wsr_hat_{q,n}).

    Positive when the network undershoots its labels; minimizing it pushes
    every layer's WSR toward the oracle value, with deeper layers weighted
    more heavily.
    """
    if len(traces) == 0:
        raise ValueError("empty batch")
    if len(traces) != len(labels):
        raise ValueError("batch/label length mismatch")
    n = traces[0].num_layers
    wl = layer_weights(n)
    acc = 0.0
    for tr, star in zip(traces, labels):
        if tr.num_layers != n:
            raise ValueError("traces disagree on layer count")
        acc += float(wl @ (float(star) - tr.wsr_hat))
    return acc / (len(traces) * n)


@dataclass
class GradientReport:
    """Batch-mean parameter gradients plus forward bookkeeping."""

    layers: list[LayerParams]
    loss: float
    wsr_hat: np.ndarray  # (Q, N)


def _loss_from_hat(wsr_hat: np.ndarray, labels: np.ndarray) -> float:
    q, n = wsr_hat.shape
    wl = layer_weights(n)
    return float(np.sum((labels[:, None] - wsr_hat) @ wl)) / (q * n)


def param_gradients(
    samples: Sequence[tuple],
    params: NetworkParams,
    config: TrainConfig,
) -> GradientReport:
    """Gradient of batch_loss w.r.t. every layer parameter.

    ``samples`` holds (instance, wsr_star, init_seed) triples; the seed
    fixes the random initial beamformers of that sample's forward pass.
    grad_mode 'reverse' differentiates through the unrolled graph;
    'finite_diff' is the slow central-difference fallback used to validate
    it.
    """
    params.validate()
    config.validate()
    if not samples:
        raise ValueError("empty batch")
    if config.grad_mode == "finite_diff":
        return _param_gradients_fd(samples, params, config)

    kern = backends.get_backend()
    n = params.num_layers
    q = len(samples)
    w0, w, eta = params.as_arrays()
    gw0 = np.zeros_like(w0)
    gw = np.zeros_like(w)
    geta = np.zeros_like(eta)
    sbar = -layer_weights(n) / (q * n)
    hat = np.empty((q, n))
    labels = np.empty(q)
    for i, (inst, star, init_seed) in enumerate(samples):
        h, f, nv, ref, p0, budget = _instance_arrays(inst)
        rng = np.random.default_rng(init_seed)
        beams0, _ = init_beamformers(inst, rng)
        v_states, v_tilde, t_states, _, wsr_hat, min_idx = kern.du_forward(
            h, f, nv, ref, p0, budget, float(params.lam),
            np.ascontiguousarray(beams0.stacked()),
            w0, w, eta, env_vector(inst).phi_env,
        )
        hat[i] = wsr_hat
        labels[i] = float(star)
        dw0, dw, deta = kern.du_backward(
            h, f, nv, ref, p0, budget, float(params.lam),
            w0, w, eta, env_vector(inst).phi_env,
            v_states, v_tilde, t_states, min_idx, sbar,
            1 if config.z_backprop else 0,
        )
        gw0 += dw0
        gw += dw
        geta += deta
    layers = [LayerParams(gw0[i], gw[i], geta[i]) for i in range(n)]
    return GradientReport(layers, _loss_from_hat(hat, labels), hat)


def _batch_hat(samples, params: NetworkParams) -> np.ndarray:
    """(Q, N) per-layer WSR of forward passes only."""
    out = np.empty((len(samples), params.num_layers))
    for i, (inst, _star, init_seed) in enumerate(samples):
        rng = np.random.default_rng(init_seed)
        beams0, _ = init_beamformers(inst, rng)
        out[i] = _forward_raw(
            inst, params, np.ascontiguousarray(beams0.stacked())
        )[4]
    return out


def _param_gradients_fd(
    samples, params: NetworkParams, config: TrainConfig, step: float = 1e-5
) -> GradientReport:
    labels = np.array([float(s[1]) for s in samples])
    base_hat = _batch_hat(samples, params)
    grads = [
        LayerParams(
            np.zeros_like(l.w0), np.zeros_like(l.w), np.zeros_like(l.eta)
        )
        for l in params.layers
    ]
    work = params.copy()
    for li in range(params.num_layers):
        for name in ("w0", "w", "eta"):
            arr = getattr(work.layers[li], name)
            out = getattr(grads[li], name)
            flat = arr.reshape(-1)
            gflat = out.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                hi = _loss_from_hat(_batch_hat(samples, work), labels)
                flat[j] = orig - step
                lo = _loss_from_hat(_batch_hat(samples, work), labels)
                flat[j] = orig
                gflat[j] = (hi - lo) / (2.0 * step)
    return GradientReport(grads, _loss_from_hat(base_hat, labels), base_hat)


def init_seed_for(seed: int, epoch: int, record_index: int) -> int:
    """Stable per-(epoch, record) forward-init seed used by training."""
    ss = np.random.SeedSequence((seed, epoch, record_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class _Adam:
    """Adaptive-moment optimizer over a list of parameter arrays."""

    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(dataset, params_init: NetworkParams, config: TrainConfig):
    """Minibatch Adam on batch_loss over a labeled dataset.

    ``dataset`` is a sequence of records carrying .instance and .wsr_star
    (or bare (instance, wsr_star) pairs).  Shuffling, init seeds and
    reduction order are all derived from config.seed, so reruns are
    bit-identical.  Returns the trained params and a per-epoch history of
    mean loss and train ASR (final-layer WSR over label, averaged).
    """
    config.validate()
    records = []
    for rec in dataset:
        if hasattr(rec, "instance"):
            records.append((rec.instance, float(rec.wsr_star)))
        else:
            inst, star = rec
            records.append((inst, float(star)))
    if not records:
        raise ValueError("empty dataset")
    for _inst, star in records:
        if star <= 0:
            raise ValueError("labels must be positive")

    params = params_init.copy()
    params.validate()
    arrays = []
    for layer in params.layers:
        arrays.extend([layer.w0, layer.w, layer.eta])
    opt = _Adam(arrays, config.learning_rate)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _SHUFFLE_STREAM))
    )
    history = []
    q = len(records)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(q)
        loss_sum = 0.0
        ratio_sum = 0.0
        seen = 0
        for start in range(0, q, config.batch_size):
            idx = order[start : start + config.batch_size]
            samples = [
                (
                    records[i][0],
                    records[i][1],
                    init_seed_for(config.seed, epoch, int(i)),
                )
                for i in idx
            ]
            report = param_gradients(samples, params, config)
            gradient_arrays = []
            for layer in report.layers:
                gradient_arrays.extend([layer.w0, layer.w, layer.eta])
            opt.step(arrays, gradient_arrays)
            loss_sum += report.loss * len(idx)
            stars = np.array([s[1] for s in samples])
            ratio_sum += float(np.sum(report.wsr_hat[:, -1] / stars))
            seen += len(idx)
        history.append(
            {
                "epoch": epoch,
                "mean_loss": loss_sum / seen,
                "train_asr": ratio_sum / seen,
            }
        )
    return params, history


def history_to_csv(history) -> str:
    buf = io.StringIO()
    buf.write("epoch,mean_loss,train_asr\n")
    for row in history:
        buf.write(
            "%d,%r,%r\n" % (row["epoch"], row["mean_loss"], row["train_asr"])
        )
    return buf.getvalue()


def params_to_json(params: NetworkParams) -> str:
    params.validate()
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "num_users": params.num_users,
        "num_layers": params.num_layers,
        "lambda": params.lam,
        "layers": [
            {
                "w0": layer.w0.tolist(),
                "w": layer.w.tolist(),
                "eta": layer.eta.tolist(),
            }
            for layer in params.layers
        ],
    }
    return json.dumps(doc, indent=1)


def params_from_json(text: str) -> NetworkParams:
    doc = json.loads(text)
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError("not a network-parameter document")
    if doc.get("version") != PARAMS_VERSION:
        raise ValueError(
            "unsupported parameter version %r" % (doc.get("version"),)
        )
    layers = [
        LayerParams(
            np.asarray(ld["w0"], dtype=np.float64),
            np.asarray(ld["w"], dtype=np.float64),
            np.asarray(ld["eta"], dtype=np.float64),
        )
        for ld in doc["layers"]
    ]
    params = NetworkParams(layers, float(doc["lambda"]))
    params.validate()
    if params.num_layers != doc["num_layers"] or params.num_users != doc["num_users"]:
        raise ValueError("parameter document shape metadata mismatch")
    return params
