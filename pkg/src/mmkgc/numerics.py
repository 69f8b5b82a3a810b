"""Numerical substrate shared by every model in the package.

torch supplies tensors and autodiff; this module adds the pieces the rest
of the code relies on: explicit seeding helpers, the parameter
initialization schemes, optimizer construction, a self-describing binary
checkpoint container, and an independent finite-difference gradient
checker used to validate every loss we train on.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, DataError, NumericalError

CHECKPOINT_MAGIC = b"MMCK"
CHECKPOINT_VERSION = 1

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def derive_seed(seed: int, *labels) -> int:
    """Stable child seed from a base seed and any hashable labels.

    All randomness in the pipeline flows from one experiment seed; stages
    and per-entity streams get independent seeds through this function.
    """
    text = str(int(seed)) + "".join("|" + str(lab) for lab in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def make_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed) % (2**63))
    return gen


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def leaky_relu(x: torch.Tensor, slope: float = 0.01) -> torch.Tensor:
    return torch.nn.functional.leaky_relu(x, slope)


def init_dense_(layer: torch.nn.Linear, generator: torch.Generator) -> None:
    """Fan-in uniform init U(-1/sqrt(d_in), 1/sqrt(d_in)) for weight and bias."""
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=generator)


def init_embedding_(table: torch.Tensor, generator: torch.Generator) -> None:
    """Standard normal scaled by 1/sqrt(dim) along the last axis."""
    with torch.no_grad():
        table.normal_(0.0, 1.0, generator=generator)
        table.mul_(1.0 / math.sqrt(table.shape[-1]))


def make_optimizer(params, learning_rate: float, scheme: str = "adam") -> torch.optim.Optimizer:
    """Adam (default) or plain SGD over the given parameters."""
    if learning_rate < 0:
        raise ConfigError(f"learning rate must be >= 0, got {learning_rate}")
    if scheme == "adam":
        return torch.optim.Adam(params, lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
    if scheme == "sgd":
        return torch.optim.SGD(params, lr=learning_rate)
    raise ConfigError(f"unknown optimizer scheme {scheme!r}")


def save_checkpoint(path, tensors: dict, metadata: dict | None = None) -> None:
    """Write named tensors to a self-describing binary container.

    Layout: 4-byte magic, little-endian uint32 version, uint64 header
    length, JSON header mapping parameter names to shape/offset, then the
    row-major little-endian float32 payload.
    """
    params = {}
    payload = bytearray()
    for name, tensor in tensors.items():
        arr = tensor.detach().to(torch.float32).contiguous().cpu().numpy()
        raw = arr.astype("<f4", copy=False).tobytes()
        params[name] = {"shape": list(arr.shape), "offset": len(payload), "nbytes": len(raw)}
        payload.extend(raw)
    header = {"version": CHECKPOINT_VERSION, "metadata": metadata or {}, "params": params}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint container; returns (name -> float32 tensor, metadata)."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    payload = data[16 + header_len :]
    tensors = {}
    for name, meta in header["params"].items():
        raw = payload[meta["offset"] : meta["offset"] + meta["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"]).copy()
        tensors[name] = torch.from_numpy(arr)
    return tensors, header.get("metadata", {})


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    worst_param: str
    per_param: dict
    eps: float
    tol: float


def gradient_check(f, params: dict, eps: float = 1e-5, tol: float = 1e-4,
                   floor: float = 1e-6) -> GradCheckReport:
    """Compare autograd gradients of a scalar objective against central
    finite differences.

    ``f`` takes no arguments and must recompute the objective from the
    current parameter values; ``params`` maps names to the leaf tensors it
    reads. Run in float64 or the differences drown in rounding noise. The
    relative error denominator is floored so that gradients that are zero
    on both sides do not produce spurious failures.
    """
    names = list(params)
    leaves = [params[n] for n in names]
    loss = f()
    if not bool(torch.isfinite(loss)):
        raise NumericalError(f"objective is not finite: {float(loss)}")
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)

    per_param = {}
    worst, worst_name = 0.0, ""
    for name, leaf, grad in zip(names, leaves, grads):
        analytic = torch.zeros_like(leaf) if grad is None else grad
        numeric = torch.zeros_like(leaf)
        flat = leaf.detach().reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
            f_plus = float(f())
            with torch.no_grad():
                flat[i] = orig - eps
            f_minus = float(f())
            with torch.no_grad():
                flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericalError("objective became non-finite while differencing")
            num_flat[i] = (f_plus - f_minus) / (2.0 * eps)
        diff = (analytic - numeric).abs()
        denom = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(floor)
        err = float((diff / denom).max()) if leaf.numel() else 0.0
        per_param[name] = err
        if err >= worst:
            worst, worst_name = err, name
    return GradCheckReport(worst <= tol, worst, worst_name, per_param, eps, tol)
