"""The full energy model: atom embedding, kernel-gated encoder blocks,
sum-pool readout, and forces by differentiating the energy w.r.t. the
atomic coordinates.

Energies depend on coordinates only through the pairwise distance matrix,
so they are invariant under rigid rotations and translations by
construction, and the sum-pool readout makes them invariant under atom
permutations.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (AttentionConfig, AttentionParams, AttentionRecord,
                        geo_msa, init_attention_params, softmax_msa)
from .errors import ConfigError, DataError
from .geometry import (MAX_ATOMIC_NUMBER, BasisConfig, KernelParams, Molecule,
                       glorot, init_kernel_params, kernel_tensor,
                       pairwise_distances)


@dataclass
class ModelConfig:
    """Architecture settings; the defaults are sized for laptop CPUs."""

    n_layers: int = 4
    d_m: int = 64
    n_heads: int = 4
    d_h: int = 128
    block_kind: str = "sequential"      # or "parallel_mlp"
    kernel_mode: str = "atom_aware"     # or "plain"
    basis: BasisConfig = field(default_factory=lambda: BasisConfig(n_basis=64))
    use_attn_scale: bool = False
    use_softmax_baseline: bool = False
    scale_per_head: bool = True
    d_rbf: int = 64
    d_emb2: int = 64
    force_sign: str = "paper"           # "paper": F = +dE/dr, "physical": F = -dE/dr
    # output affine applied to the raw readout; set from training-target
    # statistics so the network itself works near unit scale
    out_shift: float = 0.0
    out_scale: float = 1.0
    # per-element reference energies (str(Z) -> energy), the standard
    # composition baseline fit by least squares from the training targets;
    # forces are unaffected since the baseline is constant per molecule
    atom_refs: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.basis, dict):
            self.basis = BasisConfig(**self.basis)
        if self.n_layers < 1:
            raise ConfigError("need at least one layer")
        if self.d_m % self.n_heads != 0:
            raise ConfigError("d_m must be divisible by n_heads")
        if self.block_kind not in ("sequential", "parallel_mlp"):
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.kernel_mode not in ("plain", "atom_aware"):
            raise ConfigError(f"unknown kernel mode {self.kernel_mode!r}")
        if self.force_sign not in ("paper", "physical"):
            raise ConfigError(f"unknown force sign {self.force_sign!r}")

    def attention(self) -> AttentionConfig:
        return AttentionConfig(d_m=self.d_m, n_heads=self.n_heads,
                               use_softmax_baseline=self.use_softmax_baseline,
                               use_attn_scale=self.use_attn_scale,
                               scale_per_head=self.scale_per_head)


@dataclass
class LayerParams:
    attn: AttentionParams
    kernel: KernelParams
    ffn_w1: ad.Tensor
    ffn_b1: ad.Tensor
    ffn_w2: ad.Tensor
    ffn_b2: ad.Tensor
    ln_gains: list
    ln_biases: list

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        out = {}
        out.update(self.attn.named(f"{prefix}.attn"))
        out.update(self.kernel.named(f"{prefix}.kernel"))
        out.update({f"{prefix}.ffn_w1": self.ffn_w1, f"{prefix}.ffn_b1": self.ffn_b1,
                    f"{prefix}.ffn_w2": self.ffn_w2, f"{prefix}.ffn_b2": self.ffn_b2})
        for i, (g, b) in enumerate(zip(self.ln_gains, self.ln_biases)):
            out[f"{prefix}.ln{i}_gain"] = g
            out[f"{prefix}.ln{i}_bias"] = b
        return out


def ffn(x: ad.Tensor, layer: LayerParams) -> ad.Tensor:
    h = ad.elu(ad.add(ad.matmul(x, layer.ffn_w1), layer.ffn_b1))
    return ad.add(ad.matmul(h, layer.ffn_w2), layer.ffn_b2)


class GeoTModel:
    """Trainable parameters plus the forward/force evaluation paths."""

    def __init__(self, config: ModelConfig, layers: list[LayerParams],
                 atom_embedding: ad.Tensor, w_pool: ad.Tensor, b_out: ad.Tensor):
        self.config = config
        self.layers = layers
        self.atom_embedding = atom_embedding
        self.w_pool = w_pool
        self.b_out = b_out

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "GeoTModel":
        rng = np.random.default_rng(seed)
        d_m = config.d_m
        embedding = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(d_m),
                                            size=(MAX_ATOMIC_NUMBER + 1, d_m)))
        n_ln = 2 if config.block_kind == "sequential" else 1
        layers = []
        for _ in range(config.n_layers):
            layers.append(LayerParams(
                attn=init_attention_params(rng, d_m),
                kernel=init_kernel_params(rng, config.basis, d_m,
                                          mode=config.kernel_mode,
                                          d_rbf=config.d_rbf, d_emb2=config.d_emb2),
                ffn_w1=ad.parameter(glorot(rng, d_m, config.d_h)),
                ffn_b1=ad.parameter(np.zeros(config.d_h)),
                ffn_w2=ad.parameter(glorot(rng, config.d_h, d_m)),
                ffn_b2=ad.parameter(np.zeros(d_m)),
                ln_gains=[ad.parameter(np.ones(d_m)) for _ in range(n_ln)],
                ln_biases=[ad.parameter(np.zeros(d_m)) for _ in range(n_ln)],
            ))
        w_pool = ad.parameter(glorot(rng, d_m, 1))
        b_out = ad.parameter(np.zeros(()))
        return cls(config, layers, embedding, w_pool, b_out)

    # -- parameters ---------------------------------------------------------

    def params(self) -> dict[str, ad.Tensor]:
        out = {"atom_embedding": self.atom_embedding}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"layer{i}"))
        out["w_pool"] = self.w_pool
        out["b_out"] = self.b_out
        return out

    # -- forward ------------------------------------------------------------

    def embed(self, molecule: Molecule) -> ad.Tensor:
        z = molecule.atomic_numbers
        if np.any(z > MAX_ATOMIC_NUMBER) or np.any(z < 1):
            raise DataError("atomic number out of range")
        return ad.take_rows(self.atom_embedding, z)

    def _block(self, x: ad.Tensor, lam, layer: LayerParams, index: int,
               trace) -> ad.Tensor:
        cfg = self.config
        acfg = cfg.attention()
        if cfg.use_softmax_baseline:
            msa = softmax_msa(x, layer.attn, acfg)
        else:
            msa = geo_msa(x, lam, layer.attn, acfg, layer=index, trace=trace)
        if cfg.block_kind == "sequential":
            xt = ad.layer_norm(ad.add(msa, x), layer.ln_gains[0], layer.ln_biases[0])
            return ad.layer_norm(ad.add(ffn(xt, layer), xt),
                                 layer.ln_gains[1], layer.ln_biases[1])
        mixed = ad.add(ad.add(msa, ffn(x, layer)), x)
        return ad.layer_norm(mixed, layer.ln_gains[0], layer.ln_biases[0])

    def readout(self, x: ad.Tensor) -> ad.Tensor:
        pooled = ad.tensor_sum(x, axis=0, keepdims=True)      # 1 x d_m
        return ad.add(ad.reshape(ad.matmul(pooled, self.w_pool), ()), self.b_out)

    def forward_parts(self, molecule: Molecule,
                      trace: "list[AttentionRecord] | None" = None):
        """Energy tensor plus the coordinate leaf it was built from."""
        coords = ad.parameter(molecule.coords)
        raw = self.readout(self._encode(molecule, coords, trace))
        baseline = self.config.out_shift + sum(
            self.config.atom_refs.get(str(z), 0.0)
            for z in molecule.atomic_numbers)
        energy = ad.add(ad.mul(raw, self.config.out_scale), baseline)
        return energy, coords

    def _encode(self, molecule: Molecule, coords: ad.Tensor, trace) -> ad.Tensor:
        dist = pairwise_distances(coords)
        x = self.embed(molecule)
        for i, layer in enumerate(self.layers):
            lam = None
            if not self.config.use_softmax_baseline:
                lam = kernel_tensor(layer.kernel, self.config.basis, dist,
                                    molecule.atomic_numbers)
            x = self._block(x, lam, layer, i, trace)
        return x

    def features(self, molecule: Molecule) -> np.ndarray:
        """Per-atom feature matrix (N x d_m) after the last encoder block."""
        return self._encode(molecule, ad.constant(molecule.coords), None).data.copy()

    def energy(self, molecule: Molecule) -> float:
        e, _ = self.forward_parts(molecule)
        return e.item()

    def force_tensor(self, molecule: Molecule):
        """(force tensor, energy tensor, coords leaf); differentiable again."""
        e, coords = self.forward_parts(molecule)
        (de_dr,) = ad.grad(e, [coords])
        f = de_dr if self.config.force_sign == "paper" else ad.neg(de_dr)
        return f, e, coords

    def forces(self, molecule: Molecule) -> np.ndarray:
        f, _, _ = self.force_tensor(molecule)
        return f.data.copy()


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: GeoTModel, path) -> None:
    """Single .npz container: config JSON plus every named parameter."""
    arrays = {f"param:{name}": t.data for name, t in model.params().items()}
    cfg_json = json.dumps(dataclasses.asdict(model.config))
    np.savez(path, __config__=np.frombuffer(cfg_json.encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> GeoTModel:
    with np.load(path) as blob:
        cfg_json = bytes(blob["__config__"]).decode()
        config = ModelConfig(**json.loads(cfg_json))
        model = GeoTModel.init(config, seed=0)
        params = model.params()
        for key in blob.files:
            if not key.startswith("param:"):
                continue
            name = key[len("param:"):]
            if name not in params:
                raise ConfigError(f"checkpoint parameter {name!r} not in model")
            if params[name].shape != blob[key].shape:
                raise ConfigError(f"shape mismatch for {name!r}: "
                                  f"{params[name].shape} vs {blob[key].shape}")
            params[name].data = blob[key].astype(params[name].data.dtype)
    return model


def checkpoint_bytes(model: GeoTModel) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(model, buf)
    return buf.getvalue()
