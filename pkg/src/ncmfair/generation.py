"""Stage 1: train a counterfactual generator from observational triplets.

Two networks are learned.  The *mechanism* maps (a, noise) to x and is fit so
that, conditioned on each observed a, its output distribution matches the
data (``loss_gen``).  The *abductor* maps (x, a, pushforward-noise) to the
exogenous variable u and is fit so the joint (x, a, u) it induces over the
data matches the joint the mechanism induces from prior noise (``loss_pos``).

Two further losses shape the counterfactuals themselves.  ``loss_ctf``
enforces the marginal law of counterfactuals: synthesizing evidence from the
model, abducting it, and re-intervening with a target a must reproduce the
conditional distribution at that target; this is the consistency condition
that estimation error in the abductor would otherwise silently break.
``loss_reg`` biases the generator toward near-world counterfactuals by
penalizing the pointwise Euclidean distance between counterfactual samples
and the factual observations they were abducted from.

All kernel embeddings are expanded through IMQ kernel evaluations; nothing
ever materializes a feature map.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .errors import ArgumentError, ConfigError, NumericsError, TrainingError
from .kernels import (
    Kernel,
    grouped_mmd2_mean_vs_point,
    grouped_mmd2_mean_vs_mean,
    median_heuristic,
)
from .nn import Mlp, write_json_atomic
from .optim import adam_init, adam_step
from .rng import RngStream


class MechanismModel:
    """Generator x = f(a, eta) with eta ~ N(0, I); wraps an MLP."""

    def __init__(self, net: Mlp, d_a: int, d_u: int):
        if net.d_in != d_a + d_u:
            raise ConfigError(f"mechanism net input {net.d_in} != d_a + d_u = {d_a + d_u}")
        self.net = net
        self.d_a = d_a
        self.d_u = d_u
        self.d_x = net.d_out

    @classmethod
    def build(cls, d_a: int, d_x: int, d_u: int, rng: RngStream,
              hidden=(32, 32), activation: str = "tanh") -> "MechanismModel":
        net = Mlp([d_a + d_u, *hidden, d_x], activation, rng=rng)
        return cls(net, d_a, d_u)

    def forward_t(self, inp) -> Tensor:
        return self.net.forward(inp if isinstance(inp, Tensor) else Tensor(inp))

    def predict(self, inp: np.ndarray) -> np.ndarray:
        return self.net.predict(inp)

    def parameters(self):
        return self.net.parameters()

    def set_trainable(self, trainable: bool) -> None:
        self.net.set_trainable(trainable)


class AbductorModel:
    """Posterior sampler u = g(x, a, noise); not assumed invertible."""

    def __init__(self, net: Mlp, d_x: int, d_a: int, d_noise: int):
        if net.d_in != d_x + d_a + d_noise:
            raise ConfigError(
                f"abductor net input {net.d_in} != d_x + d_a + d_noise = {d_x + d_a + d_noise}"
            )
        self.net = net
        self.d_x = d_x
        self.d_a = d_a
        self.d_noise = d_noise
        self.d_u = net.d_out

    @classmethod
    def build(cls, d_x: int, d_a: int, d_u: int, rng: RngStream, d_noise: int | None = None,
              hidden=(32, 32), activation: str = "tanh") -> "AbductorModel":
        d_noise = d_u if d_noise is None else d_noise
        net = Mlp([d_x + d_a + d_noise, *hidden, d_u], activation, rng=rng)
        return cls(net, d_x, d_a, d_noise)

    def forward_t(self, inp) -> Tensor:
        return self.net.forward(inp if isinstance(inp, Tensor) else Tensor(inp))

    def predict(self, inp: np.ndarray) -> np.ndarray:
        return self.net.predict(inp)

    def parameters(self):
        return self.net.parameters()

    def set_trainable(self, trainable: bool) -> None:
        self.net.set_trainable(trainable)


@dataclass
class GenTrainConfig:
    """Stage-1 hyperparameters; every count is a per-step minibatch size."""

    lambda_gen: float = 1.0
    lambda_pos: float = 1.0
    lambda_ctf: float = 1.0
    lambda_reg: float = 0.1
    n_gen: int = 256
    q_gen: int = 32
    n_pos: int = 256
    q_pos: int = 4
    n_ctf: int = 64
    q_ctf: int = 4
    n_reg: int = 64
    steps: int = 200          # per phase in phased mode
    lr: float = 1e-3
    rho_gen: float | str = "median"
    rho_pos: float | str = "median"
    rho_ctf: float | str = "median"
    mode: str = "phased"
    pos_use_model_samples: bool = False

    def validate(self) -> None:
        for name in ("lambda_gen", "lambda_pos", "lambda_ctf", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("n_gen", "q_gen", "n_pos", "q_pos", "n_ctf", "q_ctf", "n_reg", "steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.mode not in ("joint", "phased"):
            raise ConfigError(f"mode must be 'joint' or 'phased', got {self.mode!r}")
        for name in ("rho_gen", "rho_pos", "rho_ctf"):
            value = getattr(self, name)
            if isinstance(value, str):
                if value != "median":
                    raise ConfigError(f"{name} must be a positive float or 'median'")
            elif value <= 0:
                raise ConfigError(f"{name} must be positive")


def _check_batch(a: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if x.ndim == 1:
        x = x[:, None]
    if a.ndim != 2 or x.ndim != 2 or a.shape[0] != x.shape[0] or a.shape[0] < 1:
        raise ArgumentError(f"batch blocks misaligned: a {a.shape}, x {x.shape}")
    return a, x


def loss_gen(mech: MechanismModel, a, x, q_gen: int, kernel: Kernel,
             rng: RngStream) -> Tensor:
    """Conditional-distribution match: per datum, the mean embedding of
    q_gen mechanism samples at a_i must land on the embedding of x_i."""
    a, x = _check_batch(a, x)
    if q_gen < 1:
        raise ArgumentError("q_gen must be >= 1")
    n = a.shape[0]
    eta = rng.standard_normal((n, q_gen, mech.d_u))
    a_rep = np.broadcast_to(a[:, None, :], (n, q_gen, a.shape[1]))
    inp = np.concatenate([a_rep, eta], axis=-1).reshape(n * q_gen, -1)
    samples = ad.reshape(mech.forward_t(inp), (n, q_gen, mech.d_x))
    return ad.relu(grouped_mmd2_mean_vs_point(samples, x, kernel.rho))


def loss_pos(mech: MechanismModel, abd: AbductorModel, a, x, q_pos: int,
             kernel: Kernel, rng: RngStream,
             use_model_samples: bool = False) -> Tensor:
    """Joint-distribution match between (mechanism output, a, prior noise)
    and (data x, a, abducted u), embedding the concatenated triples."""
    a, x = _check_batch(a, x)
    if q_pos < 1:
        raise ArgumentError("q_pos must be >= 1")
    if abd.d_u != mech.d_u:
        raise ArgumentError("abductor output dimension must equal mechanism noise dimension")
    n = a.shape[0]
    d_a = a.shape[1]
    eta = rng.standard_normal((n, q_pos, mech.d_u)).reshape(n * q_pos, mech.d_u)
    eta_bar = rng.standard_normal((n, q_pos, abd.d_noise)).reshape(n * q_pos, abd.d_noise)
    a_rep = np.broadcast_to(a[:, None, :], (n, q_pos, d_a)).reshape(n * q_pos, d_a)
    x_rep = np.broadcast_to(x[:, None, :], (n, q_pos, x.shape[1])).reshape(n * q_pos, -1)

    x_model = mech.forward_t(np.concatenate([a_rep, eta], axis=1))
    side_a = ad.concat([x_model, Tensor(a_rep), Tensor(eta)], axis=1)

    if use_model_samples:
        eta2 = rng.standard_normal((n * q_pos, mech.d_u))
        x_b = mech.forward_t(np.concatenate([a_rep, eta2], axis=1))
        abd_in = ad.concat([x_b, Tensor(a_rep), Tensor(eta_bar)], axis=1)
    else:
        x_b = Tensor(x_rep)
        abd_in = np.concatenate([x_rep, a_rep, eta_bar], axis=1)
    u = abd.forward_t(abd_in)
    side_b = ad.concat([x_b, Tensor(a_rep), u], axis=1)

    d = side_a.data.shape[1]
    a3 = ad.reshape(side_a, (1, n * q_pos, d))
    b3 = ad.reshape(side_b, (1, n * q_pos, d))
    return ad.relu(grouped_mmd2_mean_vs_mean(a3, b3, kernel.rho))


def loss_ctf(mech: MechanismModel, abd: AbductorModel, a, x, q_ctf: int,
             kernel: Kernel, rng: RngStream) -> Tensor:
    """Counterfactual-consistency loss.

    For each target a_i, evidence is synthesized from the model under every
    batch value a_j, abducted, and re-intervened with a_i; the evidence-mixed
    mean embedding must reproduce the conditional at a_i (represented by the
    embeddings of the observed x_i).  Costs O(n² q) network evaluations.
    """
    a, x = _check_batch(a, x)
    if q_ctf < 1:
        raise ArgumentError("q_ctf must be >= 1")
    if abd.d_u != mech.d_u:
        raise ArgumentError("abductor output dimension must equal mechanism noise dimension")
    n = a.shape[0]
    d_a = a.shape[1]
    big = n * n * q_ctf
    eta = rng.standard_normal((n, n, q_ctf, mech.d_u)).reshape(big, mech.d_u)
    eta_bar = rng.standard_normal((n, n, q_ctf, abd.d_noise)).reshape(big, abd.d_noise)
    a_target = np.broadcast_to(a[:, None, None, :], (n, n, q_ctf, d_a)).reshape(big, d_a)
    a_evidence = np.broadcast_to(a[None, :, None, :], (n, n, q_ctf, d_a)).reshape(big, d_a)

    x_synth = mech.forward_t(np.concatenate([a_evidence, eta], axis=1))
    u = abd.forward_t(ad.concat([x_synth, Tensor(a_evidence), Tensor(eta_bar)], axis=1))
    ctf = mech.forward_t(ad.concat([Tensor(a_target), u], axis=1))
    groups = ad.reshape(ctf, (n, n * q_ctf, mech.d_x))
    return ad.relu(grouped_mmd2_mean_vs_point(groups, x, kernel.rho))


def loss_reg(mech: MechanismModel, abd: AbductorModel, a, x,
             rng: RngStream) -> Tensor:
    """Near-world regularizer: counterfactuals of x_j under every batch
    intervention a_i stay Euclidean-close to x_j.  One noise draw per j,
    reused across interventions; pointwise (not kernelized)."""
    a, x = _check_batch(a, x)
    if abd.d_u != mech.d_u:
        raise ArgumentError("abductor output dimension must equal mechanism noise dimension")
    n = a.shape[0]
    eta_bar = rng.standard_normal((n, abd.d_noise))
    u = abd.forward_t(np.concatenate([x, a, eta_bar], axis=1))
    a_rep = np.repeat(a, n, axis=0)              # row i*n + j holds a_i
    u_rep = ad.tile_rows(u, n)                   # row i*n + j holds u_j
    x_rep = np.tile(x, (n, 1))
    recon = mech.forward_t(ad.concat([Tensor(a_rep), u_rep], axis=1))
    dists = ad.rownorm(ad.sub(recon, Tensor(x_rep)))
    return ad.tmean(dists)


def _resolve_rho(policy, block: np.ndarray) -> float:
    if isinstance(policy, str):
        if policy != "median":
            raise ConfigError(f"unknown rho policy {policy!r}")
        return median_heuristic(block)
    if policy <= 0:
        raise ConfigError("rho must be positive")
    return float(policy)


def resolve_stage1_kernels(train: Dataset, cfg: GenTrainConfig, mech: MechanismModel,
                           abd: AbductorModel, rng: RngStream) -> dict[str, Kernel]:
    """Fix one kernel per loss before training (stationary objectives).

    The conditional losses embed x, so their default rho is the median
    heuristic on training x; the joint loss embeds (x, a, u) triples, probed
    with prior noise from a dedicated child stream.
    """
    probe_rng = rng.spawn("rho-pos-probe")
    m = min(train.n, 512)
    probe = np.concatenate(
        [train.x[:m], train.a[:m], probe_rng.standard_normal((m, mech.d_u))], axis=1
    )
    return {
        "gen": Kernel(_resolve_rho(cfg.rho_gen, train.x)),
        "pos": Kernel(_resolve_rho(cfg.rho_pos, probe)),
        "ctf": Kernel(_resolve_rho(cfg.rho_ctf, train.x)),
    }


def _run_phase(mech, abd, train, cfg, kernels, rng, params, active, steps,
               history, phase_offset):
    if not params:
        raise ConfigError("no trainable parameters in this phase")
    state = adam_init([p.data for p in params], lr=cfg.lr)
    n = train.n
    for step in range(steps):
        values = {"gen": 0.0, "pos": 0.0, "ctf": 0.0, "reg": 0.0}
        terms = []
        try:
            for name, weight in active:
                if name == "gen":
                    idx = rng.choice(n, min(cfg.n_gen, n))
                    term = loss_gen(mech, train.a[idx], train.x[idx], cfg.q_gen,
                                    kernels["gen"], rng)
                elif name == "pos":
                    idx = rng.choice(n, min(cfg.n_pos, n))
                    term = loss_pos(mech, abd, train.a[idx], train.x[idx], cfg.q_pos,
                                    kernels["pos"], rng,
                                    use_model_samples=cfg.pos_use_model_samples)
                elif name == "ctf":
                    idx = rng.choice(n, min(cfg.n_ctf, n))
                    term = loss_ctf(mech, abd, train.a[idx], train.x[idx], cfg.q_ctf,
                                    kernels["ctf"], rng)
                else:
                    idx = rng.choice(n, min(cfg.n_reg, n))
                    term = loss_reg(mech, abd, train.a[idx], train.x[idx], rng)
                values[name] = float(term.data)
                terms.append(ad.mul(term, weight))
            total = terms[0]
            for t in terms[1:]:
                total = ad.add(total, t)
            grads = ad.grad(total, params)
        except NumericsError as exc:
            raise TrainingError(
                f"stage-1 training diverged at step {phase_offset + step}: {exc}"
            ) from exc
        new_data, _ = adam_step(state, [p.data for p in params], grads)
        for p, d in zip(params, new_data):
            p.data = d
        history.append((phase_offset + step, values["gen"], values["pos"],
                        values["ctf"], values["reg"], float(total.data)))


def train_stage1(mech: MechanismModel, abd: AbductorModel, train: Dataset,
                 cfg: GenTrainConfig, rng: RngStream,
                 checkpoint_dir=None, config_digest: str | None = None,
                 seed: int | None = None):
    """Train (mechanism, abductor) jointly or in two phases.

    Phased mode first fits the mechanism on the conditional loss alone, then
    freezes it and fits the abductor on the joint, consistency, and
    near-world losses.  Returns (mech, abd, history) where history rows are
    (step, l_gen, l_pos, l_ctf, l_reg, total); losses inactive in a phase
    are logged as 0.0.
    """
    cfg.validate()
    if train.n < 1:
        raise ArgumentError("training dataset is empty")
    kernels = resolve_stage1_kernels(train, cfg, mech, abd, rng)
    history: list[tuple] = []

    if cfg.mode == "joint":
        active = [(name, getattr(cfg, f"lambda_{name}"))
                  for name in ("gen", "pos", "ctf", "reg")
                  if getattr(cfg, f"lambda_{name}") > 0.0]
        if not active:
            raise ConfigError("joint mode requires at least one positive lambda")
        params = mech.parameters() + abd.parameters()
        _run_phase(mech, abd, train, cfg, kernels, rng, params, active,
                   cfg.steps, history, 0)
    else:
        _run_phase(mech, abd, train, cfg, kernels, rng, mech.parameters(),
                   [("gen", cfg.lambda_gen if cfg.lambda_gen > 0 else 1.0)],
                   cfg.steps, history, 0)
        phase2 = [(name, getattr(cfg, f"lambda_{name}"))
                  for name in ("pos", "ctf", "reg")
                  if getattr(cfg, f"lambda_{name}") > 0.0]
        if phase2:
            was_trainable = [p.requires_grad for p in mech.parameters()]
            mech.set_trainable(False)
            try:
                _run_phase(mech, abd, train, cfg, kernels, rng, abd.parameters(),
                           phase2, cfg.steps, history, cfg.steps)
            finally:
                for p, flag in zip(mech.parameters(), was_trainable):
                    p.requires_grad = flag

    if checkpoint_dir is not None:
        save_stage1_checkpoint(checkpoint_dir, mech, abd, cfg, history,
                               config_digest=config_digest, seed=seed)
    return mech, abd, history


def save_stage1_checkpoint(directory, mech, abd, cfg: GenTrainConfig, history,
                           config_digest: str | None = None,
                           seed: int | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    mech.net.save(os.path.join(directory, "mechanism.json"),
                  rng_seed=seed, config_digest=config_digest)
    abd.net.save(os.path.join(directory, "abductor.json"),
                 rng_seed=seed, config_digest=config_digest)
    final = history[-1] if history else (0, 0.0, 0.0, 0.0, 0.0, 0.0)
    manifest = {
        "config": asdict(cfg),
        "seed": seed,
        "config_digest": config_digest,
        "d_a": mech.d_a,
        "d_u": mech.d_u,
        "d_noise": abd.d_noise,
        "final_losses": {"l_gen": final[1], "l_pos": final[2], "l_ctf": final[3],
                         "l_reg": final[4], "total": final[5]},
    }
    write_json_atomic(os.path.join(directory, "manifest.json"), manifest)
    save_loss_history(history, os.path.join(directory, "loss_history.csv"),
                      config_digest=config_digest)


def load_stage1_checkpoint(directory) -> tuple[MechanismModel, AbductorModel, dict]:
    import json

    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    mech_net = Mlp.load(os.path.join(directory, "mechanism.json"))
    abd_net = Mlp.load(os.path.join(directory, "abductor.json"))
    d_a, d_u, d_noise = manifest["d_a"], manifest["d_u"], manifest["d_noise"]
    mech = MechanismModel(mech_net, d_a, d_u)
    abd = AbductorModel(abd_net, mech.d_x, d_a, d_noise)
    return mech, abd, manifest


def save_loss_history(history, path, config_digest: str | None = None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        if config_digest is not None:
            fh.write(f"# config_digest={config_digest}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "l_gen", "l_pos", "l_ctf", "l_reg", "total"])
        for row in history:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    os.replace(tmp, path)


def generate_counterfactual(mech: MechanismModel, abd: AbductorModel, x, a,
                            a_prime, q_abd: int, rng: RngStream) -> np.ndarray:
    """Counterfactual samples for one evidence pair: abduct u from (x, a) with
    fresh pushforward noise, intervene with a', replay the mechanism."""
    if q_abd < 1:
        raise ArgumentError("q_abd must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    a_prime = np.atleast_1d(np.asarray(a_prime, dtype=np.float64))
    eta_bar = rng.standard_normal((q_abd, abd.d_noise))
    evidence = np.concatenate(
        [np.tile(x, (q_abd, 1)), np.tile(a, (q_abd, 1)), eta_bar], axis=1
    )
    u = abd.predict(evidence)
    return mech.predict(np.concatenate([np.tile(a_prime, (q_abd, 1)), u], axis=1))
