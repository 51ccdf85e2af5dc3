"""WGAN-GP objectives, Adam, and the alternating training loop.

The critic scores whole flattened snapshots, so one displacement realization
is one sample and every training step uses the full dataset as its batch. The
generator loss adds the equilibrium and boundary penalties to the adversarial
term; five generator updates run per critic update by default.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tape
from .container import read_container, write_container
from .fem import BoundaryLoad, SnapshotDataset
from .network import MlpNetwork, TapedNetwork, forward, init_network, param_gradient
from .physics import CollocationSet, ElasticityConstants, loss_bc, loss_pde
from .tape import Var

Array = np.ndarray

NORM_EPSILON = 1e-12  # smooths the gradient-penalty norm at zero


class TrainingDivergedError(Exception):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters of one optimizer instance."""

    lr: float
    beta1: float
    beta2: float
    epsilon: float
    m: Array
    v: Array
    step: int = 0

    @classmethod
    def fresh(cls, n_params: int, lr: float, beta1: float, beta2: float,
              epsilon: float = 1e-8) -> "AdamState":
        return cls(lr, beta1, beta2, epsilon, np.zeros(n_params), np.zeros(n_params))


def adam_step(state: AdamState, params: Array, grads: Array) -> Array:
    """One bias-corrected Adam update; mutates state, returns new parameters."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes must match")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def _snapshot_inputs(sensors: Array, xis: Array) -> Array:
    n = len(xis)
    return np.concatenate(
        [np.tile(sensors, (n, 1)), np.repeat(xis, len(sensors), axis=0)], axis=1
    )


def generate_snapshot(gen_u: MlpNetwork, sensors: Array, xi: Array) -> Array:
    """Flattened displacement snapshot at the sensors for one noise vector."""
    return generate_snapshots(gen_u, sensors, np.atleast_2d(xi))[0]


def generate_snapshots(gen_u: MlpNetwork, sensors: Array, xis: Array) -> Array:
    """Numeric snapshot batch, shape (n, 2 * n_sensors), sensor-major order."""
    out = forward(gen_u, _snapshot_inputs(sensors, xis))
    return out.reshape(len(xis), -1)


def generate_snapshots_taped(gen_u: TapedNetwork, sensors: Array, xis: Array) -> Var:
    """Snapshot batch on the tape, differentiable through the generator."""
    out = gen_u.forward(_snapshot_inputs(sensors, xis))
    return tape.reshape(out, (len(xis), -1))


def gradient_penalty(critic: TapedNetwork, v_hat) -> Var:
    """Mean squared deviation of the critic's input-gradient norm from one."""
    g = critic.input_gradient(v_hat)
    norms = tape.sqrt(tape.vsum(g * g, axis=1) + NORM_EPSILON)
    return tape.vmean((norms - 1.0) ** 2)


def _critic_loss_terms(critic: TapedNetwork, real_batch: Array, fake_batch,
                       lam: float, rng: np.random.Generator) -> tuple[Var, Var]:
    real_batch = np.asarray(real_batch, dtype=np.float64)
    fake_values = fake_batch.value if isinstance(fake_batch, Var) else fake_batch
    if len(real_batch) != len(fake_values) or len(real_batch) == 0:
        raise ValueError("real and fake batches must have equal nonzero length")
    wasserstein = tape.vmean(critic.forward(fake_batch)) - tape.vmean(
        critic.forward(real_batch)
    )
    # one fresh interpolation coefficient per (real, fake) pair
    eps = rng.uniform(size=(len(real_batch), 1))
    v_hat = eps * real_batch + (1.0 - eps) * fake_batch
    gp = gradient_penalty(critic, v_hat)
    return wasserstein + lam * gp, gp


def critic_loss(critic: TapedNetwork, real_batch: Array, fake_batch, lam: float,
                rng: np.random.Generator) -> Var:
    """Wasserstein critic loss with gradient penalty on random interpolates."""
    return _critic_loss_terms(critic, real_batch, fake_batch, lam, rng)[0]


def generator_adversarial_loss(critic: TapedNetwork, fake_batch) -> Var:
    """Negated mean critic score of generated snapshots."""
    return -tape.vmean(critic.forward(fake_batch))


def pigan_losses(
    gen_u: TapedNetwork,
    gen_e: TapedNetwork,
    critic: TapedNetwork,
    real_batch: Array,
    sensors: Array,
    colloc: CollocationSet,
    xi_adv: Array,
    xi_pde: Array,
    xi_bc: Array,
    rng: np.random.Generator,
    gp_coefficient: float,
    constants: ElasticityConstants,
    load: BoundaryLoad,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[Var, Var]:
    """Full generator and critic objectives on a shared tape.

    The generator objective sums the adversarial, equilibrium and boundary
    terms (unit weights by default); the critic objective is the WGAN-GP loss.
    The modulus generator feeds only the physics terms, never the critic.
    """
    fake = generate_snapshots_taped(gen_u, sensors, xi_adv)
    w_adv, w_pde, w_bc = weights
    l_g = w_adv * generator_adversarial_loss(critic, fake)
    l_g = l_g + w_pde * loss_pde(gen_u, gen_e, colloc, xi_pde, constants)
    l_g = l_g + w_bc * loss_bc(gen_u, gen_e, colloc, xi_bc, constants, load)
    l_d = critic_loss(critic, real_batch, fake, gp_coefficient, rng)
    return l_g, l_d


@dataclass
class TrainingConfig:
    """Everything the training loop needs besides the dataset."""

    total_steps: int
    noise_dim: int = 5
    hidden_layers: int = 4
    hidden_width: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_epsilon: float = 1e-8
    gp_coefficient: float = 0.1
    gen_steps_per_critic_step: int = 5
    n_pde_samples: int = 100
    n_bc_samples: int = 100
    weight_adversarial: float = 1.0
    weight_pde: float = 1.0
    weight_bc: float = 1.0
    nu: float = 0.3
    checkpoint_every: int = 1000
    init_seed: int = 0
    noise_seed: int = 1

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        for name in ("noise_dim", "hidden_layers", "hidden_width",
                     "gen_steps_per_critic_step", "n_pde_samples",
                     "n_bc_samples", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.gp_coefficient < 0:
            raise ValueError("gp_coefficient must be >= 0")

    def network_widths(self, n_sensors: int) -> dict[str, tuple[int, ...]]:
        hidden = (self.hidden_width,) * self.hidden_layers
        return {
            "gen_u": (2 + self.noise_dim, *hidden, 2),
            "gen_e": (2 + self.noise_dim, *hidden, 1),
            "critic": (2 * n_sensors, *hidden, 1),
        }


@dataclass
class TrainingLog:
    """Append-only per-step loss records."""

    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("step", "kind", "loss_g_w", "loss_pde", "loss_bc", "loss_d_w",
               "gradient_penalty", "seconds")

    def append(self, **row) -> None:
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("log steps must be strictly increasing")
        self.rows.append(row)

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows:
                cells = []
                for col in self.COLUMNS:
                    val = row.get(col)
                    if val is None:
                        cells.append("")
                    elif isinstance(val, float):
                        cells.append(f"{val:.17g}")
                    else:
                        cells.append(str(val))
                f.write(",".join(cells) + "\n")


@dataclass
class TrainResult:
    gen_u: MlpNetwork
    gen_e: MlpNetwork
    critic: MlpNetwork
    log: TrainingLog
    final_step: int


def save_checkpoint(path, gen_u: MlpNetwork, gen_e: MlpNetwork, critic: MlpNetwork,
                    adam_gen: AdamState, adam_critic: AdamState, step: int,
                    rng: np.random.Generator, config: TrainingConfig,
                    fingerprint: str = "") -> None:
    meta = {
        "kind": "checkpoint",
        "version": 1,
        "step": step,
        "widths": {
            "gen_u": list(gen_u.widths),
            "gen_e": list(gen_e.widths),
            "critic": list(critic.widths),
        },
        "seeds": {"init": config.init_seed, "noise": config.noise_seed},
        "adam": {
            "lr": config.learning_rate,
            "beta1": config.beta1,
            "beta2": config.beta2,
            "epsilon": config.adam_epsilon,
            "gen_step": adam_gen.step,
            "critic_step": adam_critic.step,
        },
        "rng_state": _encode_rng_state(rng),
        "fingerprint": fingerprint,
    }
    arrays = {
        "gen_u_params": gen_u.to_flat(),
        "gen_e_params": gen_e.to_flat(),
        "critic_params": critic.to_flat(),
        "adam_gen_m": adam_gen.m,
        "adam_gen_v": adam_gen.v,
        "adam_critic_m": adam_critic.m,
        "adam_critic_v": adam_critic.v,
    }
    write_container(path, meta, arrays)


def _encode_rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _decode_rng_state(blob: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": blob["bit_generator"],
        "state": {"state": int(blob["state"]), "inc": int(blob["inc"])},
        "has_uint32": blob["has_uint32"],
        "uinteger": blob["uinteger"],
    }
    return rng


def load_checkpoint(path):
    """Returns (meta, networks dict, adam states dict, rng or None)."""
    meta, arrays = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint file")
    nets = {}
    for name in ("gen_u", "gen_e", "critic"):
        widths = tuple(meta["widths"][name])
        net = init_network(widths, seed=0)
        net.set_flat(arrays[f"{name}_params"])
        nets[name] = net
    adam = meta["adam"]
    adam_gen = AdamState(adam["lr"], adam["beta1"], adam["beta2"], adam["epsilon"],
                         arrays["adam_gen_m"], arrays["adam_gen_v"], adam["gen_step"])
    adam_critic = AdamState(adam["lr"], adam["beta1"], adam["beta2"], adam["epsilon"],
                            arrays["adam_critic_m"], arrays["adam_critic_v"],
                            adam["critic_step"])
    rng = _decode_rng_state(meta["rng_state"])
    return meta, nets, {"gen": adam_gen, "critic": adam_critic}, rng


def train(
    config: TrainingConfig,
    dataset: SnapshotDataset,
    colloc: CollocationSet | None = None,
    load: BoundaryLoad = BoundaryLoad(),
    run_dir: str | Path | None = None,
    resume: bool = False,
    fingerprint: str = "",
) -> TrainResult:
    """Alternating WGAN-GP training of the two generators and the critic.

    The schedule runs config.gen_steps_per_critic_step generator updates, then
    one critic update, repeating until total_steps parameter updates have been
    taken. Noise draws follow a fixed per-step order, so a (config, seed) pair
    reproduces bit-identical results; resuming from a checkpoint restores the
    optimizer and noise-stream state exactly.
    """
    physics_on = config.weight_pde != 0.0 or config.weight_bc != 0.0
    if physics_on and colloc is None:
        raise ValueError("collocation set required when physics weights are nonzero")

    sensors = dataset.sensor_coords
    real = dataset.flattened()
    n_u = len(dataset)
    widths = config.network_widths(dataset.n_sensors)
    constants = ElasticityConstants(config.nu)

    ckpt_dir = None
    if run_dir is not None:
        ckpt_dir = Path(run_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    start_step = 0
    if resume:
        if ckpt_dir is None:
            raise ValueError("resume requires a run directory")
        latest = _latest_checkpoint(ckpt_dir)
        if latest is None:
            raise FileNotFoundError(f"no checkpoint to resume from in {ckpt_dir}")
        meta, nets, adams, rng = load_checkpoint(latest)
        gen_u, gen_e, critic = nets["gen_u"], nets["gen_e"], nets["critic"]
        adam_gen, adam_critic = adams["gen"], adams["critic"]
        start_step = meta["step"]
    else:
        init_seeds = np.random.SeedSequence(config.init_seed).spawn(3)
        gen_u = init_network(widths["gen_u"], init_seeds[0])
        gen_e = init_network(widths["gen_e"], init_seeds[1])
        critic = init_network(widths["critic"], init_seeds[2])
        adam_gen = AdamState.fresh(gen_u.n_params + gen_e.n_params,
                                   config.learning_rate, config.beta1,
                                   config.beta2, config.adam_epsilon)
        adam_critic = AdamState.fresh(critic.n_params, config.learning_rate,
                                      config.beta1, config.beta2,
                                      config.adam_epsilon)
        rng = np.random.default_rng(config.noise_seed)
        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / _ckpt_name(0), gen_u, gen_e, critic,
                            adam_gen, adam_critic, 0, rng, config, fingerprint)

    log = TrainingLog()
    cycle = config.gen_steps_per_critic_step + 1
    weights = (config.weight_adversarial, config.weight_pde, config.weight_bc)

    for step in range(start_step + 1, config.total_steps + 1):
        t0 = time.perf_counter()
        is_gen_step = (step - 1) % cycle < config.gen_steps_per_critic_step

        if is_gen_step:
            xi_adv = rng.standard_normal((n_u, config.noise_dim))
            xi_pde = rng.standard_normal((config.n_pde_samples, config.noise_dim))
            xi_bc = rng.standard_normal((config.n_bc_samples, config.noise_dim))

            tg_u = TapedNetwork(gen_u, trainable=True)
            tg_e = TapedNetwork(gen_e, trainable=True)
            tc = TapedNetwork(critic, trainable=False)

            fake = generate_snapshots_taped(tg_u, sensors, xi_adv)
            l_adv = generator_adversarial_loss(tc, fake)
            l_total = weights[0] * l_adv
            l_pde_val = l_bc_val = None
            if physics_on:
                l_pde = loss_pde(tg_u, tg_e, colloc, xi_pde, constants)
                l_bc = loss_bc(tg_u, tg_e, colloc, xi_bc, constants, load)
                l_total = l_total + weights[1] * l_pde + weights[2] * l_bc
                l_pde_val = float(l_pde.value)
                l_bc_val = float(l_bc.value)

            _check_finite(step, "generator loss", float(l_total.value))
            grads = param_gradient(l_total, [tg_u, tg_e])
            joint = np.concatenate([gen_u.to_flat(), gen_e.to_flat()])
            updated = adam_step(adam_gen, joint, grads)
            gen_u.set_flat(updated[: gen_u.n_params])
            gen_e.set_flat(updated[gen_u.n_params :])

            log.append(step=step, kind="gen", loss_g_w=float(l_adv.value),
                       loss_pde=l_pde_val, loss_bc=l_bc_val, loss_d_w=None,
                       gradient_penalty=None,
                       seconds=time.perf_counter() - t0)
        else:
            xi_fake = rng.standard_normal((n_u, config.noise_dim))
            fake = generate_snapshots(gen_u, sensors, xi_fake)
            tc = TapedNetwork(critic, trainable=True)
            l_d, gp = _critic_loss_terms(tc, real, fake, config.gp_coefficient, rng)

            _check_finite(step, "critic loss", float(l_d.value))
            grads = param_gradient(l_d, [tc])
            critic.set_flat(adam_step(adam_critic, critic.to_flat(), grads))

            log.append(step=step, kind="critic", loss_g_w=None, loss_pde=None,
                       loss_bc=None, loss_d_w=float(l_d.value),
                       gradient_penalty=float(gp.value),
                       seconds=time.perf_counter() - t0)

        if ckpt_dir is not None and (
            step % config.checkpoint_every == 0 or step == config.total_steps
        ):
            save_checkpoint(ckpt_dir / _ckpt_name(step), gen_u, gen_e, critic,
                            adam_gen, adam_critic, step, rng, config, fingerprint)

    if run_dir is not None:
        # a resumed run rewrites the log with the resumed segment only
        log.write_csv(Path(run_dir) / "training_log.csv")

    return TrainResult(gen_u, gen_e, critic, log, config.total_steps)


def _check_finite(step: int, label: str, value: float) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(step, f"{label} is {value}")


def _ckpt_name(step: int) -> str:
    return f"checkpoint_{step:08d}.bin"


def _latest_checkpoint(ckpt_dir: Path):
    files = sorted(Path(ckpt_dir).glob("checkpoint_*.bin"))
    return files[-1] if files else None


def latest_checkpoint(run_dir) -> Path | None:
    """Most recent checkpoint file in a run directory, if any."""
    ckpt_dir = Path(run_dir) / "checkpoints"
    if not ckpt_dir.is_dir():
        return None
    return _latest_checkpoint(ckpt_dir)
