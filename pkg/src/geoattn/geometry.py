"""Distances, radial basis families, and the learned two-body pair kernel.

The pair kernel maps each interatomic distance (optionally combined with a
symmetric code for the two atomic numbers) through a per-layer two-layer MLP
to a gating vector of width ``d_m``.  Everything here is differentiable
through the autodiff engine, including the distance matrix itself, which is
what force prediction relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

MAX_ATOMIC_NUMBER = 118


@dataclass
class Molecule:
    """Atomic numbers plus 3-D coordinates in Angstrom, with optional labels."""

    atomic_numbers: np.ndarray
    coords: np.ndarray
    energy: float | None = None
    forces: np.ndarray | None = None

    def __post_init__(self):
        self.atomic_numbers = np.asarray(self.atomic_numbers, dtype=np.intp)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.atomic_numbers.ndim != 1 or len(self.atomic_numbers) < 1:
            raise DataError("molecule needs at least one atom")
        n = len(self.atomic_numbers)
        if np.any(self.atomic_numbers < 1) or np.any(self.atomic_numbers > MAX_ATOMIC_NUMBER):
            raise DataError(f"atomic numbers must lie in [1, {MAX_ATOMIC_NUMBER}]")
        if self.coords.shape != (n, 3):
            raise DataError(f"coords must have shape ({n}, 3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise DataError("coordinates must be finite")
        if n > 1:
            d = distance_matrix(self.coords)
            if np.min(d[~np.eye(n, dtype=bool)]) <= 0.0:
                raise DataError("two atoms coincide exactly")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.shape != (n, 3):
                raise DataError("forces must have shape (N, 3)")

    @property
    def n_atoms(self) -> int:
        return len(self.atomic_numbers)


@dataclass
class BasisConfig:
    """Radial basis family and its fixed hyperparameters."""

    kind: str = "gaussian"
    n_basis: int = 300
    gamma: float = 10.0      # Gaussian width
    delta: float = 0.1       # Gaussian center spacing, Angstrom
    bessel_cutoff: float = 5.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear", "bessel"):
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        if self.n_basis < 1:
            raise ConfigError("n_basis must be >= 1")
        if self.gamma <= 0 or self.delta <= 0 or self.bessel_cutoff <= 0:
            raise ConfigError("basis hyperparameters must be positive")


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    """Plain numpy pairwise distances, for data handling and dumps."""
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def pairwise_distances(coords: ad.Tensor) -> ad.Tensor:
    """Differentiable N x N distance matrix.

    sqrt is not differentiable at 0, so the diagonal is computed on a shifted
    argument and masked back to exact zeros; its gradient w.r.t. coordinates
    is exactly zero, which is the right value for the i == j pairs.
    """
    n = coords.shape[0]
    left = ad.reshape(coords, (n, 1, 3))
    right = ad.reshape(coords, (1, n, 3))
    sq = ad.tensor_sum(ad.square(ad.sub(left, right)), axis=2)
    eye = np.eye(n)
    safe = ad.sqrt(ad.add(sq, eye))
    return ad.mul(safe, 1.0 - eye)


def gaussian_basis(r: ad.Tensor, cfg: BasisConfig) -> ad.Tensor:
    """exp(-gamma * (r - delta*k)^2) for k = 1..n_basis, appended as last axis."""
    centers = cfg.delta * np.arange(1, cfg.n_basis + 1)
    rx = ad.reshape(r, r.shape + (1,))
    return ad.exp(ad.mul(ad.square(ad.sub(rx, centers)), -cfg.gamma))


def linear_basis(r: ad.Tensor, a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """a_k + b_k * r with trainable per-component scalars."""
    rx = ad.reshape(r, r.shape + (1,))
    return ad.add(a, ad.mul(b, rx))


def bessel_basis(r: ad.Tensor, cfg: BasisConfig) -> ad.Tensor:
    """sqrt(2/c) * sin(n pi r / c) / r; the r -> 0 limit n pi / c * sqrt(2/c) is
    substituted where r is numerically zero (a removable singularity)."""
    c = cfg.bessel_cutoff
    freqs = np.arange(1, cfg.n_basis + 1) * np.pi / c
    amp = np.sqrt(2.0 / c)
    tiny = r.data < 1e-10
    rx = ad.reshape(r, r.shape + (1,))
    mask = tiny.astype(r.data.dtype).reshape(r.shape + (1,))
    r_safe = ad.add(rx, mask)
    main = ad.mul(ad.div(ad.sin(ad.mul(rx, freqs)), r_safe), amp)
    limit = mask * (amp * freqs)
    return ad.add(ad.mul(main, 1.0 - mask), limit)


@dataclass
class KernelParams:
    """Trainable state of one layer's two-body kernel."""

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor
    embed: ad.Tensor | None = None    # (MAX_ATOMIC_NUMBER + 1, d_emb2), atom-aware mode
    lin_a: ad.Tensor | None = None    # (n_basis,), linear basis only
    lin_b: ad.Tensor | None = None

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        out = {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
               f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}
        if self.embed is not None:
            out[f"{prefix}.embed"] = self.embed
        if self.lin_a is not None:
            out[f"{prefix}.lin_a"] = self.lin_a
            out[f"{prefix}.lin_b"] = self.lin_b
        return out


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_kernel_params(rng: np.random.Generator, cfg: BasisConfig, d_m: int,
                       mode: str = "atom_aware", d_rbf: int = 64,
                       d_emb2: int = 64) -> KernelParams:
    if mode not in ("plain", "atom_aware"):
        raise ConfigError(f"unknown kernel mode {mode!r}")
    in_dim = cfg.n_basis + (d_emb2 if mode == "atom_aware" else 0)
    embed = None
    if mode == "atom_aware":
        embed = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(d_emb2),
                                        size=(MAX_ATOMIC_NUMBER + 1, d_emb2)))
    lin_a = lin_b = None
    if cfg.kind == "linear":
        lin_a = ad.parameter(rng.uniform(-1.0, 1.0, size=cfg.n_basis))
        lin_b = ad.parameter(rng.uniform(-1.0, 1.0, size=cfg.n_basis))
    return KernelParams(
        w1=ad.parameter(glorot(rng, in_dim, d_rbf)),
        b1=ad.parameter(np.zeros(d_rbf)),
        w2=ad.parameter(glorot(rng, d_rbf, d_m)),
        b2=ad.parameter(np.zeros(d_m)),
        embed=embed, lin_a=lin_a, lin_b=lin_b,
    )


def expand_basis(r: ad.Tensor, cfg: BasisConfig, params: KernelParams) -> ad.Tensor:
    if cfg.kind == "gaussian":
        return gaussian_basis(r, cfg)
    if cfg.kind == "bessel":
        return bessel_basis(r, cfg)
    return linear_basis(r, params.lin_a, params.lin_b)


def atom_pair_code(params: KernelParams, z_i, z_j) -> ad.Tensor:
    """Symmetric embedding code Z(z_i) + Z(z_j); z_i/z_j may be arrays."""
    if params.embed is None:
        raise ConfigError("kernel was built without atom embeddings")
    z_i = np.atleast_1d(np.asarray(z_i, dtype=np.intp))
    z_j = np.atleast_1d(np.asarray(z_j, dtype=np.intp))
    for z in (z_i, z_j):
        if np.any(z < 1) or np.any(z > MAX_ATOMIC_NUMBER):
            raise DataError("atomic number out of range")
    return ad.add(ad.take_rows(params.embed, z_i), ad.take_rows(params.embed, z_j))


def _kernel_mlp(params: KernelParams, flat_in: ad.Tensor) -> ad.Tensor:
    h = ad.swish(ad.add(ad.matmul(flat_in, params.w1), params.b1))
    return ad.add(ad.matmul(h, params.w2), params.b2)


def two_body_kernel(params: KernelParams, cfg: BasisConfig, r: ad.Tensor,
                    z_i: int | None = None, z_j: int | None = None) -> ad.Tensor:
    """Kernel vector for a single pair; scalar distance in, (d_m,) out."""
    g = ad.reshape(expand_basis(ad.reshape(r, ()), cfg, params), (1, -1))
    if params.embed is not None:
        if z_i is None or z_j is None:
            raise ConfigError("atom-aware kernel needs both atomic numbers")
        g = ad.concat([g, atom_pair_code(params, z_i, z_j)], axis=1)
    return ad.reshape(_kernel_mlp(params, g), (-1,))


def kernel_tensor(params: KernelParams, cfg: BasisConfig, dist: ad.Tensor,
                  atomic_numbers: np.ndarray) -> ad.Tensor:
    """Full N x N x d_m kernel for one layer.

    Symmetry in the atom indices is inherited from the symmetric distance
    matrix and the symmetric pair code.
    """
    n = dist.shape[0]
    g = expand_basis(dist, cfg, params)              # N x N x n_basis
    if params.embed is not None:
        zi = np.repeat(atomic_numbers, n)
        zj = np.tile(atomic_numbers, n)
        code = atom_pair_code(params, zi, zj)        # N*N x d_emb2
        flat = ad.concat([ad.reshape(g, (n * n, -1)), code], axis=1)
    else:
        flat = ad.reshape(g, (n * n, -1))
    return ad.reshape(_kernel_mlp(params, flat), (n, n, -1))
