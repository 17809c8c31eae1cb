"""MLP encoder/decoder pair with a Gaussian reparameterized latent.

One hidden layer per side (400 units by default).  The encoder maps an
input row-batch to the mean and log-variance of a diagonal-Gaussian
posterior over the latent code; the decoder maps latent rows back to
per-pixel Bernoulli probabilities (sigmoid output).  Gaussian observation
mode keeps the sigmoid because all supported data lives in [0, 1]; the
decoder output is then read as the Gaussian mean.

Checkpoint container (binary, little-endian):

    bytes 0..3   magic b"RVAE"
    bytes 4..7   format version (u32, currently 1)
    bytes 8..11  header length in bytes (u32)
    header       UTF-8 JSON: {"arch": {...}, "fields": [...],
                 "shapes": {...}, "meta": {...}}
    payload      the parameter arrays in field order, row-major float64

Raw float64 bytes round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Graph, Tensor, op_add, op_exp, op_matmul, op_mul, op_relu, op_scale, op_sigmoid
from .errors import DataError, ShapeError

CHECKPOINT_MAGIC = b"RVAE"
CHECKPOINT_VERSION = 1

BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"

PARAM_FIELDS = (
    "enc_w1", "enc_b1",
    "enc_w_mu", "enc_b_mu",
    "enc_w_logvar", "enc_b_logvar",
    "dec_w1", "dec_b1",
    "dec_w_out", "dec_b_out",
)


@dataclass(frozen=True)
class Arch:
    """Network dimensions and observation model."""

    input_dim: int
    latent_dim: int
    hidden_dim: int = 400
    obs_model: str = BERNOULLI

    def __post_init__(self):
        if min(self.input_dim, self.latent_dim, self.hidden_dim) <= 0:
            raise ShapeError(f"arch dimensions must be positive: {self}")
        if self.obs_model not in (BERNOULLI, GAUSSIAN):
            raise DataError(f"unknown obs_model {self.obs_model!r}")

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        d, h, l = self.input_dim, self.hidden_dim, self.latent_dim
        return {
            "enc_w1": (d, h), "enc_b1": (1, h),
            "enc_w_mu": (h, l), "enc_b_mu": (1, l),
            "enc_w_logvar": (h, l), "enc_b_logvar": (1, l),
            "dec_w1": (l, h), "dec_b1": (1, h),
            "dec_w_out": (h, d), "dec_b_out": (1, d),
        }


@dataclass
class VaeParams:
    """All encoder/decoder weights as plain float64 arrays."""

    arch: Arch
    values: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if set(self.values) != set(PARAM_FIELDS):
            raise ShapeError("parameter fields do not match the expected set")
        for name, arr in self.values.items():
            if arr.shape != shapes[name]:
                raise ShapeError(
                    f"{name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.isfinite(arr).all():
                raise DataError(f"{name} contains non-finite entries")

    def copy(self) -> "VaeParams":
        return VaeParams(self.arch, {k: v.copy() for k, v in self.values.items()})


@dataclass
class LatentPosterior:
    """Mean and log-variance rows of the diagonal-Gaussian posterior."""

    mu: Tensor
    logvar: Tensor


@dataclass
class Reconstruction:
    """Decoder output rows: Bernoulli probabilities or Gaussian means."""

    out: Tensor


def init_params(arch: Arch, seed: int) -> VaeParams:
    """Seeded init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    shapes = arch.param_shapes()
    values = {}
    for name in PARAM_FIELDS:
        shape = shapes[name]
        if "_b" in name:
            values[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            values[name] = rng.uniform(-bound, bound, size=shape)
    return VaeParams(arch, values)


@dataclass
class BoundVae:
    """``VaeParams`` bound into one graph as trainable leaves."""

    graph: Graph
    arch: Arch
    leaves: dict[str, Tensor] = field(default_factory=dict)

    def grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.leaves.items()}


def bind(graph: Graph, params: VaeParams) -> BoundVae:
    leaves = {name: graph.leaf(params.values[name], trainable=True)
              for name in PARAM_FIELDS}
    return BoundVae(graph, params.arch, leaves)


def encode(bound: BoundVae, x: Tensor) -> LatentPosterior:
    """Posterior parameters for an input row-batch (batch x input_dim)."""
    if x.shape[1] != bound.arch.input_dim:
        raise ShapeError(
            f"input has {x.shape[1]} columns, arch expects {bound.arch.input_dim}")
    p = bound.leaves
    h = op_relu(op_add(op_matmul(x, p["enc_w1"]), p["enc_b1"]))
    mu = op_add(op_matmul(h, p["enc_w_mu"]), p["enc_b_mu"])
    logvar = op_add(op_matmul(h, p["enc_w_logvar"]), p["enc_b_logvar"])
    return LatentPosterior(mu=mu, logvar=logvar)


def reparameterize(post: LatentPosterior, eps: Tensor) -> Tensor:
    """z = mu + exp(logvar / 2) * eps with externally supplied noise."""
    if eps.shape != post.mu.shape:
        raise ShapeError(f"eps shape {eps.shape} != posterior shape {post.mu.shape}")
    std = op_exp(op_scale(post.logvar, 0.5))
    return op_add(post.mu, op_mul(std, eps))


def decode(bound: BoundVae, z: Tensor) -> Reconstruction:
    """Decoder forward pass for latent rows (batch x latent_dim)."""
    if z.shape[1] != bound.arch.latent_dim:
        raise ShapeError(
            f"latent has {z.shape[1]} columns, arch expects {bound.arch.latent_dim}")
    p = bound.leaves
    h = op_relu(op_add(op_matmul(z, p["dec_w1"]), p["dec_b1"]))
    out = op_sigmoid(op_add(op_matmul(h, p["dec_w_out"]), p["dec_b_out"]))
    return Reconstruction(out=out)


def posterior_arrays(params: VaeParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mu, logvar) for a plain array batch, via a throwaway graph."""
    g = Graph()
    post = encode(bind(g, params), g.leaf(x))
    return post.mu.data, post.logvar.data


def reconstruct_arrays(params: VaeParams, x: np.ndarray,
                       eps: np.ndarray | None = None) -> np.ndarray:
    """Reconstruction of a plain array batch; posterior mean when eps is None."""
    g = Graph()
    bound = bind(g, params)
    post = encode(bound, g.leaf(x))
    if eps is None:
        z = post.mu
    else:
        z = reparameterize(post, g.leaf(eps))
    return decode(bound, z).out.data


def decode_arrays(params: VaeParams, z: np.ndarray) -> np.ndarray:
    """Decoder output for plain latent rows."""
    g = Graph()
    return decode(bind(g, params), g.leaf(z)).out.data


def save_checkpoint(params: VaeParams, path, meta: dict | None = None) -> None:
    """Write the versioned binary checkpoint described in the module docstring."""
    arch = params.arch
    header = {
        "arch": {
            "input_dim": arch.input_dim,
            "latent_dim": arch.latent_dim,
            "hidden_dim": arch.hidden_dim,
            "obs_model": arch.obs_model,
        },
        "fields": list(PARAM_FIELDS),
        "shapes": {k: list(v) for k, v in arch.param_shapes().items()},
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name in PARAM_FIELDS:
            f.write(np.ascontiguousarray(params.values[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[VaeParams, dict]:
    """Read a checkpoint; returns (params, meta)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    arch = Arch(**header["arch"])
    shapes = arch.param_shapes()
    values = {}
    offset = 12 + hlen
    for name in header["fields"]:
        shape = tuple(shapes[name])
        n = shape[0] * shape[1]
        end = offset + 8 * n
        if end > len(raw):
            raise DataError(f"{path}: truncated checkpoint payload")
        values[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes in checkpoint")
    return VaeParams(arch, values), header.get("meta", {})
