"""Generator/discriminator architectures, adversarial losses, training loop.

Both networks are stacks of causal dilated convolutions. The generator maps
a (length + p) x noise_dim block of iid N(0,1) draws to a univariate path of
the requested length, where p is the receptive field of the stack; the
discriminator scores a path through tapped conv layers, adaptive max pooling
and dense layers.

Two objectives are provided. The default trains the discriminator on

    L_D = mean[D(fake) - D(real)] + lambda * mean[(||grad_x D(x_mix)||_2 - 1)^2]

with one interpolation coefficient a ~ U(0,1) per sample pair, and the
generator on L_G = mean[-D(fake)]. The input-gradient inside the penalty is
itself an expression graph, so L_D differentiates cleanly with respect to
the discriminator weights. The alternative 'basic-gan' objective uses the
classic log losses with a sigmoid on the discriminator output.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from . import tensor as T

__all__ = [
    "GanConfig",
    "TraceRow",
    "TrainingTrace",
    "TrainingError",
    "receptive_field",
    "gen_param_shapes",
    "disc_param_shapes",
    "init_gan_params",
    "generator_graph",
    "discriminator_graph",
    "generate",
    "generate_batch",
    "discriminate",
    "wgan_discriminator_loss",
    "wgan_generator_loss",
    "basic_gan_losses",
    "train",
    "save_gan_checkpoint",
    "load_gan_checkpoint",
]


def receptive_field(dilations, kernel_size: int = 2) -> int:
    """Number of past steps one output step can see: sum of (k-1)*dilation."""
    if not dilations:
        raise ValueError("receptive_field: empty dilation list")
    return int((kernel_size - 1) * sum(dilations))


@dataclass(frozen=True)
class GanConfig:
    """Architecture and training hyperparameters for both networks."""

    noise_dim: int = 256
    gen_filters: tuple = (128, 64, 32, 32, 16, 1)
    disc_filters: tuple = (8, 16, 32, 32, 64, 64)
    dilations: tuple = (1, 2, 4, 8, 16, 32)
    kernel_size: int = 2
    pool_taps: tuple = (1, 2, 6)  # 1-based conv layers feeding the pooled feature
    pool_bins: int = 16
    fc_widths: tuple = (128, 128)
    leaky_slope: float = 0.01
    weight_sd: float = 0.02
    objective: str = "wgan-gp"
    lr_d: float = 0.00025
    lr_g: float = 0.00025
    grad_penalty: float = 20.0
    batch_size: int = 64
    n_init: int = 50
    n_disc: int = 5
    n_gen: int = 1
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    total_steps: int = 5000

    def __post_init__(self):
        if len(self.gen_filters) != len(self.dilations):
            raise ValueError("gen_filters and dilations must have equal length")
        if len(self.disc_filters) != len(self.dilations):
            raise ValueError("disc_filters and dilations must have equal length")
        if self.gen_filters[-1] != 1:
            raise ValueError("generator's last conv layer must have 1 filter")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")
        if self.grad_penalty < 0:
            raise ValueError("grad_penalty must be >= 0")
        if self.objective not in ("wgan-gp", "basic-gan"):
            raise ValueError(f"unknown objective '{self.objective}'")
        bad = [t for t in self.pool_taps if not 1 <= t <= len(self.disc_filters)]
        if bad:
            raise ValueError(f"pool_taps out of range: {bad}")

    @property
    def window(self) -> int:
        return receptive_field(self.dilations, self.kernel_size) + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown GanConfig keys: {sorted(unknown)}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# parameter shapes


def gen_param_shapes(cfg: GanConfig) -> dict:
    shapes = {}
    cin = cfg.noise_dim
    for i, cout in enumerate(cfg.gen_filters, 1):
        shapes |= nn.conv_param_shapes(f"gen_conv{i}", cin, cout, cfg.kernel_size)
        cin = cout
    return shapes


def disc_param_shapes(cfg: GanConfig) -> dict:
    shapes = {}
    cin = 1
    for i, cout in enumerate(cfg.disc_filters, 1):
        shapes |= nn.conv_param_shapes(f"disc_conv{i}", cin, cout, cfg.kernel_size)
        cin = cout
    feat = cfg.pool_bins * len(cfg.pool_taps)
    for j, width in enumerate(cfg.fc_widths, 1):
        shapes |= nn.dense_param_shapes(f"disc_fc{j}", feat, width)
        feat = width
    shapes |= nn.dense_param_shapes("disc_out", feat, 1)
    return shapes


def init_gan_params(cfg: GanConfig, rng: np.random.Generator):
    """Initialise (gen_params, disc_params); generator weights drawn first."""
    gen = nn.init_params(gen_param_shapes(cfg), rng, cfg.weight_sd)
    disc = nn.init_params(disc_param_shapes(cfg), rng, cfg.weight_sd)
    return gen, disc


# ---------------------------------------------------------------------------
# graph builders


def generator_graph(cfg: GanConfig, batch: int, length: int, noise_name: str = "noise") -> T.Expr:
    """Expression mapping a noise leaf (batch, length+p, noise_dim) to paths.

    The conv stack runs once over the whole noise block; the first p output
    steps see zero padding, so only the last `length` steps (each with a full
    noise window behind it) are returned, shaped (batch, length).
    """
    p = receptive_field(cfg.dilations, cfg.kernel_size)
    x = T.leaf(noise_name, (batch, length + p, cfg.noise_dim))
    n_layers = len(cfg.gen_filters)
    for i, (cout, dil) in enumerate(zip(cfg.gen_filters, cfg.dilations), 1):
        w = T.leaf(f"gen_conv{i}_w", (cfg.kernel_size * x.shape[2], cout))
        b = T.leaf(f"gen_conv{i}_b", (cout,))
        x = nn.causal_dilated_conv(x, w, b, dil, cfg.kernel_size)
        if i < n_layers:
            x = T.tanh(x)
    out = T.slice_axis(x, axis=1, start=p, stop=p + length)
    return T.reshape(out, (batch, length))


def discriminator_graph(cfg: GanConfig, x: T.Expr) -> T.Expr:
    """Score expression for a (batch, length) path input; output (batch,).

    Conv activations at the tapped layers are flattened over (time, channel)
    and max-pooled to pool_bins values each, so the concatenated feature has
    a fixed size regardless of path length. Final unit is linear.
    """
    batch, length = x.shape
    h = T.reshape(x, (batch, length, 1))
    taps = []
    for i, (cout, dil) in enumerate(zip(cfg.disc_filters, cfg.dilations), 1):
        w = T.leaf(f"disc_conv{i}_w", (cfg.kernel_size * h.shape[2], cout))
        b = T.leaf(f"disc_conv{i}_b", (cout,))
        h = T.leaky_relu(
            nn.causal_dilated_conv(h, w, b, dil, cfg.kernel_size), cfg.leaky_slope
        )
        if i in cfg.pool_taps:
            flat = T.reshape(h, (batch, length * cout))
            taps.append(nn.adaptive_max_pool(flat, cfg.pool_bins))
    feat = T.concat(taps, axis=1)
    for j, width in enumerate(cfg.fc_widths, 1):
        w = T.leaf(f"disc_fc{j}_w", (feat.shape[1], width))
        b = T.leaf(f"disc_fc{j}_b", (width,))
        feat = T.leaky_relu(nn.dense(feat, w, b), cfg.leaky_slope)
    w = T.leaf("disc_out_w", (feat.shape[1], 1))
    b = T.leaf("disc_out_b", (1,))
    return T.reshape(nn.dense(feat, w, b), (batch,))


# ---------------------------------------------------------------------------
# forward passes

_GEN_RUNNERS: dict = {}


def _gen_runner(cfg: GanConfig, batch: int, length: int) -> T.CompiledGraph:
    key = (cfg, batch, length)
    if key not in _GEN_RUNNERS:
        _GEN_RUNNERS[key] = T.CompiledGraph([generator_graph(cfg, batch, length)])
    return _GEN_RUNNERS[key]


def generate_batch(gen_params: dict, noise: np.ndarray, cfg: GanConfig) -> np.ndarray:
    """Map (m, b+p, noise_dim) noise blocks to (m, b) sample paths."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 3 or noise.shape[2] != cfg.noise_dim:
        raise T.GraphError(
            f"noise must be (m, length+p, {cfg.noise_dim}), got {noise.shape}"
        )
    p = receptive_field(cfg.dilations, cfg.kernel_size)
    length = noise.shape[1] - p
    if length < 1:
        raise T.GraphError(
            f"noise has {noise.shape[1]} rows; need > receptive field {p}"
        )
    runner = _gen_runner(cfg, noise.shape[0], length)
    return runner.run({"noise": noise, **gen_params})[0]


def generate(gen_params: dict, noise: np.ndarray, cfg: GanConfig) -> np.ndarray:
    """One (b+p, noise_dim) noise block -> one path of length b."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 2:
        raise T.GraphError(f"noise must be 2-d, got shape {noise.shape}")
    return generate_batch(gen_params, noise[None], cfg)[0]


def discriminate(disc_params: dict, path: np.ndarray, cfg: GanConfig) -> float:
    """Scalar score of a single path."""
    path = np.asarray(path, dtype=np.float64)
    if path.ndim != 1:
        raise T.GraphError(f"path must be 1-d, got shape {path.shape}")
    x = T.leaf("x", (1, path.shape[0]))
    score = discriminator_graph(cfg, x)
    return float(T.evaluate(score, {"x": path[None], **disc_params})[0])


# ---------------------------------------------------------------------------
# losses


def _disc_loss_graph(cfg: GanConfig, batch: int, length: int, lam: float):
    """(loss, penalty) expressions over leaves x_real, x_fake, x_mix, theta_D.

    The interpolates x_mix enter as a leaf so their input-gradient is itself
    a graph over the discriminator weights, which makes the penalty term
    differentiable in theta_D (gradients of gradients).
    """
    x_real = T.leaf("x_real", (batch, length))
    x_fake = T.leaf("x_fake", (batch, length))
    # real and fake share one discriminator pass (rows stacked); the mix
    # keeps its own pass so the penalty's double backprop only runs over
    # `batch` rows rather than all three groups
    s_both = discriminator_graph(cfg, T.concat([x_real, x_fake], axis=0))
    s_real = T.slice_axis(s_both, 0, 0, batch)
    s_fake = T.slice_axis(s_both, 0, batch, 2 * batch)
    s_mix = discriminator_graph(cfg, T.leaf("x_mix", (batch, length)))
    wass = T.sub(T.reduce_mean(s_fake), T.reduce_mean(s_real))
    # each score depends only on its own row, so the gradient of the batch
    # sum recovers every per-sample input-gradient in one pass
    (gmix,) = T.gradient(T.reduce_sum(s_mix), ["x_mix"])
    norms = T.l2_norm(gmix, axis=1)
    penalty = T.reduce_mean(T.square(T.sub(norms, T.const(1.0))))
    return T.add(wass, T.scale(penalty, lam)), penalty


def mix_interpolates(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """a*real + (1-a)*fake with one a ~ U(0,1) per sample pair."""
    a = rng.uniform(size=(real.shape[0], 1))
    return a * real + (1.0 - a) * fake


def wgan_discriminator_loss(
    disc_params: dict,
    real_batch: np.ndarray,
    fake_batch: np.ndarray,
    lam: float,
    rng: np.random.Generator,
    cfg: GanConfig,
):
    """Batch discriminator loss with gradient penalty.

    Returns (expr, data) where expr is a scalar expression differentiable in
    the discriminator weight leaves and data binds the real/fake batches and
    the freshly drawn interpolates. Evaluate with {**data, **disc_params}.
    """
    real = np.asarray(real_batch, dtype=np.float64)
    fake = np.asarray(fake_batch, dtype=np.float64)
    if real.shape != fake.shape:
        raise T.GraphError(
            f"real batch {real.shape} and fake batch {fake.shape} differ"
        )
    loss, _ = _disc_loss_graph(cfg, real.shape[0], real.shape[1], lam)
    data = {"x_real": real, "x_fake": fake, "x_mix": mix_interpolates(real, fake, rng)}
    return loss, data


def wgan_generator_loss(cfg: GanConfig, batch: int, length: int):
    """Batch generator loss mean[-D(G(z))] over a noise leaf (batch, length+p, noise_dim).

    The expression contains both parameter sets as leaves; generator updates
    differentiate it with respect to the gen_* leaves only, which holds the
    discriminator fixed.
    """
    fake = generator_graph(cfg, batch, length)
    score = discriminator_graph(cfg, fake)
    return T.scale(T.reduce_mean(score), -1.0)


def basic_gan_losses(cfg: GanConfig, batch: int, length: int):
    """Classic log losses (L_D, L_G) with a sigmoid on the score.

    L_D = mean[log D(real) + log(1 - D(fake_d))] is the quantity the
    discriminator *ascends*; callers descend -L_D. L_G = mean[log(1 -
    D(G(z)))] is descended directly. Probabilities are clamped to
    [1e-7, 1 - 1e-7] before the log. Leaves: x_real, x_fake (values for the
    discriminator side), noise (generator side), and both parameter sets.
    """

    def prob(x):
        return T.clamp(T.sigmoid(discriminator_graph(cfg, x)), 1e-7, 1.0 - 1e-7)

    p_real = prob(T.leaf("x_real", (batch, length)))
    p_fake = prob(T.leaf("x_fake", (batch, length)))
    loss_d = T.add(
        T.reduce_mean(T.log(p_real)),
        T.reduce_mean(T.log(T.sub(T.const(1.0), p_fake))),
    )
    p_gen = prob(generator_graph(cfg, batch, length))
    loss_g = T.reduce_mean(T.log(T.sub(T.const(1.0), p_gen)))
    return loss_d, loss_g


# ---------------------------------------------------------------------------
# training


@dataclass
class TraceRow:
    step: int
    loss_d: float
    loss_g: float
    penalty: float
    grad_norm_d: float
    grad_norm_g: float
    wall_ms: float


@dataclass
class TrainingTrace:
    rows: list = field(default_factory=list)

    def write_csv(self, path, provenance: str | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if provenance is not None:
                fh.write(f"# {provenance}\n")
            fh.write("step,loss_d,loss_g,penalty,wall_ms\n")
            for r in self.rows:
                fh.write(
                    f"{r.step},{r.loss_d!r},{r.loss_g!r},{r.penalty!r},{r.wall_ms:.3f}\n"
                )


class TrainingError(Exception):
    """Raised when a training run produces non-finite values; carries the trace."""

    def __init__(self, message: str, trace: TrainingTrace):
        super().__init__(message)
        self.trace = trace


def _global_norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def train(cfg: GanConfig, batch_supplier, block_length: int, rng: np.random.Generator):
    """Adversarial training; returns (gen_params, disc_params, trace).

    batch_supplier(rng) must return a (batch_size, block_length) array of
    real blocks. The run performs cfg.n_init discriminator-only updates,
    then cfg.total_steps outer iterations of cfg.n_disc discriminator
    updates (fresh noise, real batch, and interpolates each) followed by
    cfg.n_gen generator updates. Everything is deterministic given the rng
    state; a non-finite loss or gradient aborts with the trace attached.
    """
    n_b = cfg.batch_size
    p = receptive_field(cfg.dilations, cfg.kernel_size)
    gen_params, disc_params = init_gan_params(cfg, rng)
    gen_names = sorted(gen_params)
    disc_names = sorted(disc_params)

    gen_fwd_cache: dict = {}

    def gen_fwd(count: int) -> T.CompiledGraph:
        """Forward graph producing `count` fake batches in one pass."""
        if count not in gen_fwd_cache:
            gen_fwd_cache[count] = T.CompiledGraph(
                [generator_graph(cfg, count * n_b, block_length)]
            )
        return gen_fwd_cache[count]

    if cfg.objective == "wgan-gp":
        d_loss, d_pen = _disc_loss_graph(cfg, n_b, block_length, cfg.grad_penalty)
        g_loss = wgan_generator_loss(cfg, n_b, block_length)
    else:
        bd, bg = basic_gan_losses(cfg, n_b, block_length)
        d_loss, d_pen = T.scale(bd, -1.0), T.const(0.0)  # descend -L_D
        g_loss = bg
    d_graph = T.CompiledGraph([d_loss, d_pen] + T.gradient(d_loss, disc_names))
    g_graph = T.CompiledGraph([g_loss] + T.gradient(g_loss, gen_names))

    opt_d = nn.AdamState.for_params(disc_params)
    opt_g = nn.AdamState.for_params(gen_params)
    trace = TrainingTrace()

    def disc_round(count: int, label):
        """`count` consecutive discriminator updates.

        Each update draws fresh noise, a fresh real batch, and fresh
        interpolation weights, in that order. The generator is frozen for the
        whole round, so all fake batches come from a single forward pass;
        the draws still happen strictly per update, keeping the random
        stream identical to updating one batch at a time.
        """
        noises, reals, alphas = [], [], []
        for _ in range(count):
            noises.append(rng.standard_normal((n_b, block_length + p, cfg.noise_dim)))
            real = np.asarray(batch_supplier(rng), dtype=np.float64)
            if real.shape != (n_b, block_length):
                raise T.GraphError(
                    f"batch supplier returned {real.shape}, expected {(n_b, block_length)}"
                )
            reals.append(real)
            alphas.append(rng.uniform(size=(n_b, 1)))
        stacked = gen_fwd(count).run(
            {"noise": np.concatenate(noises), **gen_params}
        )[0]
        fakes = stacked.reshape(count, n_b, block_length)

        loss = pen = gnorm = 0.0
        for real, fake, a in zip(reals, fakes, alphas):
            mix = a * real + (1.0 - a) * fake
            out = d_graph.run(
                {"x_real": real, "x_fake": fake, "x_mix": mix, **disc_params}
            )
            loss, pen, grads = out[0], out[1], out[2:]
            nn.adam_step(
                disc_params,
                dict(zip(disc_names, grads)),
                opt_d,
                cfg.lr_d,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )
            gnorm = _global_norm(grads)
            check(label, "discriminator loss", float(loss))
        return float(loss), float(pen), gnorm

    def gen_update():
        z = rng.standard_normal((n_b, block_length + p, cfg.noise_dim))
        out = g_graph.run({"noise": z, **gen_params, **disc_params})
        loss, grads = out[0], out[1:]
        nn.adam_step(
            gen_params,
            dict(zip(gen_names, grads)),
            opt_g,
            cfg.lr_g,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        )
        return float(loss), _global_norm(grads)

    def check(step, what, value):
        if not np.isfinite(value):
            raise TrainingError(f"non-finite {what} at step {step}", trace)

    try:
        done = 0
        while done < cfg.n_init:
            group = min(max(cfg.n_disc, 1), cfg.n_init - done)
            disc_round(group, f"init-{done + group}")
            done += group
        for step in range(1, cfg.total_steps + 1):
            t0 = time.perf_counter()
            loss_d = pen = gnorm_d = 0.0
            if cfg.n_disc > 0:
                loss_d, pen, gnorm_d = disc_round(cfg.n_disc, step)
            loss_g = gnorm_g = 0.0
            for _ in range(cfg.n_gen):
                loss_g, gnorm_g = gen_update()
                check(step, "generator loss", loss_g)
            trace.rows.append(
                TraceRow(
                    step,
                    loss_d,
                    loss_g,
                    pen,
                    gnorm_d,
                    gnorm_g,
                    (time.perf_counter() - t0) * 1e3,
                )
            )
    except T.GraphError as exc:
        raise TrainingError(str(exc), trace) from exc
    return gen_params, disc_params, trace


# ---------------------------------------------------------------------------
# persistence


def save_gan_checkpoint(path, gen_params, disc_params, cfg: GanConfig, rng=None) -> None:
    meta = {"kind": "gan", "config": cfg.to_dict()}
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    nn.save_checkpoint(path, {**gen_params, **disc_params}, meta)


def load_gan_checkpoint(path):
    """Returns (gen_params, disc_params, cfg, rng_state_or_None)."""
    params, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "gan":
        raise ValueError(f"{path}: not a GAN checkpoint")
    cfg = GanConfig.from_dict(meta["config"])
    gen = {k: v for k, v in params.items() if k.startswith("gen_")}
    disc = {k: v for k, v in params.items() if k.startswith("disc_")}
    return gen, disc, cfg, meta.get("rng_state")
