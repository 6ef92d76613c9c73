"""Losses, Adam with warmup/decay scheduling, the training loop, and the
synthetic Morse-potential dataset used for desk-scale verification.

The force term of the composite loss contains the gradient of the predicted
energy w.r.t. coordinates; differentiating that loss w.r.t. the parameters
is the double-backward path the autodiff engine was built for.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .errors import ConfigError, DataError
from .geometry import Molecule, distance_matrix
from .model import GeoTModel, checkpoint_bytes

# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    lr: float = 2e-4
    warmup_steps: int = 3000
    decay_factor: float = 0.95
    decay_every: int = 200_000
    batch_size: int = 32
    max_epochs: int = 300
    max_steps: int | None = None
    eval_every: int = 10_000
    force_weight: float = 1000.0
    use_forces: bool = True
    normalize_targets: bool = True
    patience: int = 10
    seed: int = 0
    # optional early exit once validation energy MAE drops below a target
    stop_below_val_mae: float | None = None

    def __post_init__(self):
        for name in ("lr", "warmup_steps", "decay_factor", "decay_every",
                     "batch_size", "max_epochs", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``lr`` followed by stepwise geometric decay."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    warm = min(step / cfg.warmup_steps, 1.0)
    return cfg.lr * warm * cfg.decay_factor ** (step // cfg.decay_every)


# ---------------------------------------------------------------------------
# losses


def mae_loss(pred, target) -> ad.Tensor:
    """Mean absolute error; scalars or same-shape tensors."""
    pred = pred if isinstance(pred, ad.Tensor) else ad.constant(pred)
    return ad.mean(ad.absolute(ad.sub(pred, target)))


def composite_loss(e_label: float, e_hat: ad.Tensor, de_dr_label: np.ndarray,
                   coords: ad.Tensor, weight: float) -> ad.Tensor:
    """|E - Ê| + weight * sum_j |dE/dr_j - dÊ/dr_j|.

    ``de_dr_label`` is the energy-gradient label, i.e. the *negative* of the
    physical force.  The force term sums over atoms and components.
    """
    if de_dr_label is None:
        raise ConfigError("composite loss requires force labels")
    (de_dr,) = ad.grad(e_hat, [coords])
    energy_term = ad.absolute(ad.sub(e_hat, e_label))
    force_term = ad.tensor_sum(ad.absolute(ad.sub(de_dr, de_dr_label)))
    return ad.add(energy_term, ad.mul(force_term, weight))


def molecule_loss(model: GeoTModel, mol: Molecule, cfg: TrainConfig) -> ad.Tensor:
    e_hat, coords = model.forward_parts(mol)
    if cfg.use_forces and mol.forces is not None:
        # dataset forces are physical (F = -grad E); the loss compares
        # energy gradients, so flip the sign of the label
        return composite_loss(mol.energy, e_hat, -mol.forces, coords,
                              cfg.force_weight)
    if mol.energy is None:
        raise DataError("molecule has no energy label")
    return ad.absolute(ad.sub(e_hat, mol.energy))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam (0.9 / 0.999 / 1e-8) with externally supplied step size."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise ad.NonFiniteError(
                    f"non-finite gradient for parameter {name!r} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params: dict, grads: dict, state: Adam, step: int,
              cfg: TrainConfig) -> None:
    """One scheduled update; ``step`` drives the warmup/decay schedule."""
    state.step(grads, lr_schedule(step, cfg))


# ---------------------------------------------------------------------------
# synthetic Morse dataset


@dataclass
class SyntheticSpec:
    n_molecules: int = 600
    min_atoms: int = 4
    max_atoms: int = 8
    elements: tuple = (1, 6, 7, 8)
    box: float = 5.0
    min_distance: float = 0.8
    pair_params: dict | None = None   # (z_lo, z_hi) -> (well_depth, width, r_eq)

    def __post_init__(self):
        if self.min_atoms < 2 or self.max_atoms < self.min_atoms:
            raise ConfigError("bad atom count range")
        if self.pair_params is None:
            self.pair_params = default_morse_table(self.elements)


def default_morse_table(elements, seed: int = 12345) -> dict:
    """Deterministic per-element-pair Morse parameters with a broad spread of
    well depths, so composition carries a strong energy signal."""
    rng = np.random.default_rng(seed)
    table = {}
    for z1, z2 in itertools.combinations_with_replacement(sorted(elements), 2):
        table[(z1, z2)] = (rng.uniform(0.5, 2.0),   # well depth
                           rng.uniform(1.0, 1.6),   # width
                           rng.uniform(1.2, 1.8))   # equilibrium distance
    return table


def _pair(table: dict, z1: int, z2: int):
    key = (min(z1, z2), max(z1, z2))
    if key not in table:
        raise DataError(f"no Morse parameters for element pair {key}")
    return table[key]


def morse_energy_forces(numbers: np.ndarray, coords: np.ndarray,
                        table: dict) -> tuple[float, np.ndarray]:
    """Closed-form energy and physical forces (F = -grad E) of a Morse sum."""
    n = len(numbers)
    energy = 0.0
    forces = np.zeros((n, 3))
    for i in range(n):
        for j in range(i + 1, n):
            d_e, a, r_e = _pair(table, numbers[i], numbers[j])
            rij = coords[j] - coords[i]
            r = np.linalg.norm(rij)
            x = np.exp(-a * (r - r_e))
            energy += d_e * (1.0 - x) ** 2 - d_e
            dv_dr = 2.0 * d_e * a * (1.0 - x) * x
            pair_force = -dv_dr * rij / r     # force on atom j
            forces[j] += pair_force
            forces[i] -= pair_force
    return float(energy), forces


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> Dataset:
    """Random small molecules with exactly consistent Morse labels."""
    rng = np.random.default_rng(seed)
    mols = []
    for _ in range(spec.n_molecules):
        n = int(rng.integers(spec.min_atoms, spec.max_atoms + 1))
        numbers = rng.choice(spec.elements, size=n)
        coords = None
        for _attempt in range(200):
            cand = rng.uniform(0.0, spec.box, size=(n, 3))
            d = distance_matrix(cand)
            if np.min(d[~np.eye(n, dtype=bool)]) >= spec.min_distance:
                coords = cand
                break
        if coords is None:
            raise DataError("could not place atoms with the minimum distance; "
                            "increase the box or reduce the atom count")
        energy, forces = morse_energy_forces(numbers, coords, spec.pair_params)
        mols.append(Molecule(numbers, coords, energy=energy, forces=forces))
    return Dataset(molecules=mols, target_name="morse_energy", units="arb")


# ---------------------------------------------------------------------------
# evaluation and the training loop


def energy_mae(model: GeoTModel, molecules) -> float:
    if not molecules:
        raise ConfigError("cannot evaluate on an empty set")
    errs = [abs(model.energy(m) - m.energy) for m in molecules]
    return float(np.mean(errs))


@dataclass
class TrainResult:
    model: GeoTModel
    metrics: list = field(default_factory=list)   # (step, split, metric, value)
    best_val_mae: float = np.inf
    best_checkpoint: bytes | None = None
    steps_run: int = 0
    stopped: str = "max_steps"

    def metrics_csv(self) -> str:
        lines = ["step,split,metric,value"]
        for step, split, metric, value in self.metrics:
            lines.append(f"{step},{split},{metric},{value:.17g}")
        return "\n".join(lines) + "\n"


def train(model: GeoTModel, dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """Gradient-accumulation training with periodic validation and early
    stopping on validation energy MAE."""
    train_mols = dataset.subset("train")
    val_mols = dataset.subset("val")
    if not train_mols:
        raise ConfigError("empty training set")

    params = model.params()
    opt = Adam(params)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model=model)

    def evaluate(step: int) -> float:
        val = energy_mae(model, val_mols)
        result.metrics.append((step, "val", "energy_mae", val))
        return val

    def snapshot(val: float) -> None:
        if val < result.best_val_mae:
            result.best_val_mae = val
            result.best_checkpoint = checkpoint_bytes(model)

    # the step-0 entry is the untrained model as initialized; the output
    # normalization below is the first act of training, not part of init
    snapshot(evaluate(0))

    if cfg.normalize_targets:
        # composition baseline: least-squares per-element reference energies
        # plus an intercept, then scale by the residual spread.  Forces are
        # untouched (the baseline is constant per molecule), but the network
        # no longer has to learn composition offsets through the weakly
        # weighted energy term.
        energies = np.array([m.energy for m in train_mols])
        elements = sorted({int(z) for m in train_mols
                           for z in m.atomic_numbers})
        design = np.ones((len(train_mols), 1 + len(elements)))
        for col, z in enumerate(elements, start=1):
            design[:, col] = [np.sum(m.atomic_numbers == z) for m in train_mols]
        coef, *_ = np.linalg.lstsq(design, energies, rcond=None)
        residual = energies - design @ coef
        model.config.out_shift = float(coef[0])
        model.config.atom_refs = {str(z): float(c)
                                  for z, c in zip(elements, coef[1:])}
        model.config.out_scale = float(max(residual.std(), 1e-8))
    bad_evals = 0
    step = 0
    running_loss = 0.0
    done = False
    for _epoch in range(cfg.max_epochs):
        if done:
            break
        order = rng.permutation(len(train_mols))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_mols[i] for i in order[lo:lo + cfg.batch_size]]
            step += 1
            grads = {name: np.zeros_like(t.data) for name, t in params.items()}
            batch_loss = 0.0
            for mol in batch:
                loss = molecule_loss(model, mol, cfg)
                batch_loss += loss.item()
                for name, g in zip(params, ad.grad(loss, params.values())):
                    grads[name] += g.data
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                result.stopped = "diverged"
                done = True
                break
            for name in grads:
                grads[name] /= len(batch)
            adam_step(params, grads, opt, step, cfg)
            running_loss = batch_loss

            if step % cfg.eval_every == 0:
                result.metrics.append((step, "train", "loss", running_loss))
                val = evaluate(step)
                if val < result.best_val_mae:
                    bad_evals = 0
                else:
                    bad_evals += 1
                snapshot(val)
                if cfg.stop_below_val_mae is not None and val < cfg.stop_below_val_mae:
                    result.stopped = "target_reached"
                    done = True
                    break
                if bad_evals >= cfg.patience:
                    result.stopped = "early_stopping"
                    done = True
                    break
            if cfg.max_steps is not None and step >= cfg.max_steps:
                result.stopped = "max_steps"
                done = True
                break

    if step % cfg.eval_every != 0 and result.stopped not in ("diverged",):
        result.metrics.append((step, "train", "loss", running_loss))
        snapshot(evaluate(step))
    result.steps_run = step
    return result
