"""Maximum-likelihood training of the correction model and the plain-EBM ablation.

Each step draws a noisy positive minibatch, synthesizes negatives by Langevin
sampling from the current model, and descends mean(E on data) - mean(E on
negatives) plus an L2 penalty on the energy magnitudes, with Adam. The
correction variant initializes negatives from the fitted mixture and follows
the summed gradient of network-plus-mixture energy; the ablation drops the
mixture everywhere and starts chains from N(0, I).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .energy_net import EnergyMlp, mlp_energy, mlp_grad_input, mlp_grad_params, mlp_init, \
    mlp_entries, mlp_from_entries
from .featurestore import FeatureSet, minibatch_indices
from .mog import GaussianMixture, gaussian_energy_grad, mixture_entries, mixture_from_entries
from .sgld import SgldSchedule, sgld_init, sgld_sample
from .tensorio import read_archive, write_archive

_MODEL_KINDS = {1: "correction", 2: "ebm"}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 5e-6
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    l2_coeff: float = 10.0
    input_noise_std: float = 1e-3
    sgld: SgldSchedule = field(
        default_factory=lambda: SgldSchedule(20, (1e-6, 1e-7), (1e-3, 1e-4))
    )
    init_mode: str = "mog"
    seed: int = 0
    hidden_dim: int = 1024
    num_hidden: int = 4
    net_temperature: float = 1.0
    activation: str = "silu"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be nonnegative")
        if self.input_noise_std < 0:
            raise ValueError("input_noise_std must be nonnegative")
        if self.init_mode not in ("mog", "standard_normal"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")
        if self.net_temperature <= 0:
            raise ValueError("net_temperature must be positive")
        if self.hidden_dim < 1 or self.num_hidden < 1:
            raise ValueError("need at least one hidden layer of width >= 1")


def correction_defaults(toy: bool = False, seed: int = 0) -> TrainConfig:
    """Training recipe for the correction model.

    The wide variant targets 512-dim classifier features; the toy variant
    shrinks the network and raises the learning rate for 2-D data.
    """
    cfg = TrainConfig(seed=seed)
    if toy:
        cfg = replace(cfg, hidden_dim=128, learning_rate=1e-4)
    return cfg


def ebm_defaults(toy: bool = False, seed: int = 0) -> TrainConfig:
    """Training recipe for the plain-EBM ablation (no mixture anywhere)."""
    cfg = TrainConfig(
        learning_rate=5e-5,
        l2_coeff=0.1,
        sgld=SgldSchedule(200, (1e-2, 1e-3), (1e-2, 1e-3)),
        init_mode="standard_normal",
        net_temperature=1e-2,
        seed=seed,
    )
    if toy:
        cfg = replace(cfg, hidden_dim=128, learning_rate=1e-4)
    return cfg


@dataclass(frozen=True)
class CorrectionModel:
    """Trained energy correction on top of a fitted mixture."""

    net: EnergyMlp
    gm: GaussianMixture

    def __post_init__(self):
        if self.net.input_dim != self.gm.dim:
            raise ValueError(
                f"network input {self.net.input_dim} != mixture dimension {self.gm.dim}"
            )


def mle_loss(pos_energies, neg_energies) -> float:
    """mean(E on data) - mean(E on negatives); only the network energy enters."""
    pos = np.asarray(pos_energies, dtype=np.float64)
    neg = np.asarray(neg_energies, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("energy batches must be nonempty")
    return float(pos.mean() - neg.mean())


def l2_reg(pos_energies, neg_energies) -> float:
    """Mean squared energy over positives and negatives combined."""
    pos = np.asarray(pos_energies, dtype=np.float64)
    neg = np.asarray(neg_energies, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("energy batches must be nonempty")
    return float(np.mean(np.concatenate([pos, neg]) ** 2))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if len(params) != len(grads):
        raise ValueError("params and grads must pair up")
    b1, b2 = betas
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def _params_of(net: EnergyMlp) -> list:
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def _net_from_params(net: EnergyMlp, params) -> EnergyMlp:
    return EnergyMlp(tuple(params[0::2]), tuple(params[1::2]), net.activation)


def _run_training(fs: FeatureSet, gm: GaussianMixture | None, cfg: TrainConfig,
                  log_path=None):
    n, d = fs.features.shape
    root = np.random.SeedSequence(cfg.seed)
    ss_init, ss_shuffle, ss_noise, ss_neg = root.spawn(4)
    shuffle_rng = np.random.default_rng(ss_shuffle)
    noise_rng = np.random.default_rng(ss_noise)
    neg_rng = np.random.default_rng(ss_neg)

    dims = [d] + [cfg.hidden_dim] * cfg.num_hidden + [1]
    net = mlp_init(dims, np.random.default_rng(ss_init), cfg.activation)
    params = _params_of(net)
    state = AdamState.zeros_like(params)

    log_fh = open(log_path, "w") if log_path is not None else None
    history = []
    gstep = 0
    try:
        for epoch in range(cfg.epochs):
            sums = {"mle_loss": 0.0, "l2_reg": 0.0, "mean_pos_energy": 0.0,
                    "mean_neg_energy": 0.0, "sgld_mean_grad_norm": 0.0}
            steps = 0
            for idx in minibatch_indices(n, cfg.batch_size, shuffle_rng):
                b = idx.size
                pos = fs.features[idx]
                if cfg.input_noise_std > 0:
                    pos = pos + cfg.input_noise_std * noise_rng.standard_normal(pos.shape)

                grad_norms = []

                def energy_grad(z):
                    g = mlp_grad_input(net, z) / cfg.net_temperature
                    if gm is not None:
                        g = g + gaussian_energy_grad(gm, z)
                    grad_norms.append(float(np.mean(np.linalg.norm(g, axis=1))))
                    return g

                # stream domain 4: disjoint from the spawn keys of the rngs above
                start = sgld_init(cfg.init_mode, gm, b, d, neg_rng)
                neg = sgld_sample(start, energy_grad, cfg.sgld,
                                  seed=(cfg.seed, 4, gstep), chain_ids=np.arange(b))

                e_pos = mlp_energy(net, pos) / cfg.net_temperature
                e_neg = mlp_energy(net, neg) / cfg.net_temperature
                loss_mle = mle_loss(e_pos, e_neg)
                loss_reg = l2_reg(e_pos, e_neg)
                if not (np.isfinite(loss_mle) and np.isfinite(loss_reg)):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {gstep}"
                    )

                # d(L_mle + l2 * L_reg)/d(raw E) as one upstream weight per sample
                total = 2 * b
                upstream = np.concatenate([
                    1.0 / b + 2.0 * cfg.l2_coeff * e_pos / total,
                    -1.0 / b + 2.0 * cfg.l2_coeff * e_neg / total,
                ]) / cfg.net_temperature
                grads = mlp_grad_params(net, np.concatenate([pos, neg]), upstream)
                params, state = adam_step(params, grads.as_list(), state,
                                          cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
                net = _net_from_params(net, params)

                sums["mle_loss"] += loss_mle
                sums["l2_reg"] += loss_reg
                sums["mean_pos_energy"] += float(np.mean(e_pos))
                sums["mean_neg_energy"] += float(np.mean(e_neg))
                sums["sgld_mean_grad_norm"] += float(np.mean(grad_norms))
                steps += 1
                gstep += 1

            row = {"epoch": epoch}
            row.update({k: v / steps for k, v in sums.items()})
            history.append(row)
            if log_fh is not None:
                log_fh.write(json.dumps(row) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()
    return net, history


def train_correction(fs: FeatureSet, gm: GaussianMixture, cfg: TrainConfig,
                     log_path=None):
    """Train the correction network against the fitted mixture.

    Returns the trained model and the per-epoch loss trace.
    """
    if cfg.init_mode != "mog":
        raise ValueError("correction training requires init_mode='mog'")
    if fs.dim != gm.dim:
        raise ValueError(f"feature dimension {fs.dim} != mixture dimension {gm.dim}")
    net, history = _run_training(fs, gm, cfg, log_path)
    return CorrectionModel(net, gm), history


def train_ebm(fs: FeatureSet, cfg: TrainConfig, log_path=None):
    """Train the plain EBM ablation; the mixture is absent from sampling and loss."""
    if cfg.init_mode != "standard_normal":
        raise ValueError("EBM training requires init_mode='standard_normal'")
    net, history = _run_training(fs, None, cfg, log_path)
    return net, history


def save_correction(path, model: CorrectionModel) -> None:
    entries = {"kind": np.array([1], dtype=np.uint32)}
    entries.update(mlp_entries(model.net, "net."))
    entries.update(mixture_entries(model.gm, "mog."))
    write_archive(path, entries)


def save_ebm(path, net: EnergyMlp, net_temperature: float = 1.0) -> None:
    entries = {"kind": np.array([2], dtype=np.uint32),
               "net_temperature": np.array([net_temperature])}
    entries.update(mlp_entries(net, "net."))
    write_archive(path, entries)


def load_model(path):
    """Load a model archive; returns ('correction', CorrectionModel) or
    ('ebm', (EnergyMlp, net_temperature))."""
    entries = read_archive(path)
    if "kind" not in entries:
        raise ValueError(f"{path}: no model kind entry; is this a mixture archive?")
    kind = _MODEL_KINDS.get(int(entries["kind"][0]))
    if kind == "correction":
        return kind, CorrectionModel(mlp_from_entries(entries, "net."),
                                     mixture_from_entries(entries, "mog."))
    if kind == "ebm":
        return kind, (mlp_from_entries(entries, "net."),
                      float(entries["net_temperature"][0]))
    raise ValueError(f"unknown model kind code {int(entries['kind'][0])}")
