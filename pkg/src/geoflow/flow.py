"""Flow-matching objectives, Euler inference and velocity-field diagnostics.

Three training objectives share one straight-line path
``z_t = t * z1 + (1 - t) * z0`` and the constant target ``v = z1 - z0``:

``direct``  the model sees ``(z_x, z_t, t)``; inference integrates from
            Gaussian noise with explicit Euler.
``cv``      consistent velocity: the model sees ``(z_x, z0)`` only, so the
            predicted velocity cannot depend on ``t`` and the path is straight.
``cvfs``    consistent velocity from a fixed zero start: the model sees
            ``z_x`` only and inference is a single evaluation.

Latents are the data themselves (identity encoder/decoder).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tensor, as_tensor, concat, mse
from .errors import ContractError
from .nn import MLP, AdamW, Module, dispersion_loss

log = logging.getLogger(__name__)

DISPERSION_WEIGHT = 0.5
DISPERSION_TAU = 1.0


class ObjectiveKind(str, enum.Enum):
    DIRECT = "direct"
    CV = "cv"
    CVFS = "cvfs"

    @classmethod
    def parse(cls, name: str) -> ObjectiveKind:
        aliases = {"directadapt": "direct", "consistentvelocity": "cv", "consistentvelocityfixedstart": "cvfs"}
        key = name.lower().replace("_", "").replace("-", "")
        return cls(aliases.get(key, name.lower()))


@dataclass(frozen=True)
class FlowObjective:
    kind: ObjectiveKind
    euler_steps: int = 1

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ObjectiveKind.parse(self.kind))
        if self.euler_steps < 1:
            raise ValueError("euler_steps must be >= 1")

    @property
    def model_inputs(self) -> tuple[bool, bool]:
        """(sees_state, sees_time) for a model trained under this objective."""
        return {
            ObjectiveKind.DIRECT: (True, True),
            ObjectiveKind.CV: (True, False),
            ObjectiveKind.CVFS: (False, False),
        }[self.kind]


@dataclass
class FlowBatch:
    z_x: np.ndarray
    z_y1: np.ndarray
    z_y0: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.z_x = np.asarray(self.z_x, dtype=np.float64)
        self.z_y1 = np.asarray(self.z_y1, dtype=np.float64)
        self.z_y0 = np.asarray(self.z_y0, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        n = self.z_x.shape[0]
        if not (self.z_y1.shape[0] == self.z_y0.shape[0] == self.t.shape[0] == n):
            raise ContractError("FlowBatch tensors must share the batch size")
        if self.z_y1.shape != self.z_y0.shape:
            raise ContractError("z_y0 and z_y1 must share a shape")
        if np.any((self.t < 0) | (self.t > 1)):
            raise ContractError("t must lie in [0, 1]")

    @property
    def velocity(self) -> np.ndarray:
        return self.z_y1 - self.z_y0


class VelocityModel(Module):
    """MLP velocity predictor f(z_x[, z][, t]).

    ``state_dim`` is 0 for fixed-start models, which see only the condition.
    ``feature_layer`` indexes the hidden activation used for the dispersion
    loss (default: last hidden layer).
    """

    def __init__(
        self,
        cond_dim: int,
        out_dim: int,
        state_dim: int = 0,
        accepts_time: bool = False,
        hidden: int = 64,
        depth: int = 2,
        seed: int = 0,
        feature_layer: int = -1,
    ):
        self.cond_dim = cond_dim
        self.out_dim = out_dim
        self.state_dim = state_dim
        self.accepts_time = accepts_time
        self.hidden = hidden
        self.feature_layer = feature_layer
        in_dim = cond_dim + state_dim + (1 if accepts_time else 0)
        sizes = [in_dim] + [hidden] * depth + [out_dim]
        self.mlp = MLP(sizes, np.random.default_rng(seed), prefix="velocity")
        self.forward_count = 0

    @classmethod
    def for_objective(cls, objective: FlowObjective, cond_dim: int, dim: int, **kw) -> VelocityModel:
        sees_state, sees_time = objective.model_inputs
        return cls(cond_dim, dim, state_dim=dim if sees_state else 0, accepts_time=sees_time, **kw)

    def parameters(self) -> dict[str, Tensor]:
        return self.mlp.parameters()

    def _inputs(self, z_x, z, t) -> Tensor:
        parts = [as_tensor(z_x)]
        n = parts[0].shape[0]
        if self.state_dim:
            if z is None:
                raise ContractError("this model needs the flow state z")
            parts.append(as_tensor(z))
        if self.accepts_time:
            if t is None:
                raise ContractError("this model needs the time t")
            t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (n, 1))
            parts.append(as_tensor(t))
        return concat(parts, axis=1) if len(parts) > 1 else parts[0]

    def __call__(self, z_x, z=None, t=None, return_features: bool = False):
        self.forward_count += 1
        out, hidden = self.mlp(self._inputs(z_x, z, t), return_hidden=True)
        if return_features:
            return out, (hidden[self.feature_layer] if hidden else None)
        return out

    def velocity(self, z_x, z=None, t=None) -> np.ndarray:
        """Plain-array evaluation, arguments the model does not use are ignored."""
        return self(np.asarray(z_x, dtype=np.float64), z, t).data


VelocityFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def _as_field(model) -> VelocityFn:
    if isinstance(model, VelocityModel):
        return lambda z_x, z, t: model.velocity(z_x, z if model.state_dim else None, t if model.accepts_time else None)
    return model


def interpolate(batch: FlowBatch) -> np.ndarray:
    t = batch.t.reshape((-1,) + (1,) * (batch.z_y1.ndim - 1))
    return t * batch.z_y1 + (1.0 - t) * batch.z_y0


def fm_loss(model: VelocityModel, batch: FlowBatch, return_features: bool = False):
    if not model.accepts_time:
        raise ContractError("fm_loss needs a model that takes t")
    out = model(batch.z_x, interpolate(batch), batch.t, return_features=return_features)
    return _finish(out, batch.velocity, return_features)


def cv_loss(model: VelocityModel, batch: FlowBatch, return_features: bool = False):
    if model.accepts_time or not model.state_dim:
        raise ContractError("cv_loss needs a model that takes (z_x, z0) and not t")
    out = model(batch.z_x, batch.z_y0, return_features=return_features)
    return _finish(out, batch.velocity, return_features)


def cvfs_loss(model: VelocityModel, batch: FlowBatch, return_features: bool = False):
    if np.any(batch.z_y0 != 0):
        raise ContractError("fixed-start loss requires z_y0 == 0")
    if model.accepts_time or model.state_dim:
        raise ContractError("cvfs_loss needs a model that takes only z_x")
    out = model(batch.z_x, return_features=return_features)
    return _finish(out, batch.z_y1, return_features)


def _finish(out, target, return_features):
    if return_features:
        pred, feats = out
        return mse(pred, target), feats
    return mse(out, target)


LOSSES = {ObjectiveKind.DIRECT: fm_loss, ObjectiveKind.CV: cv_loss, ObjectiveKind.CVFS: cvfs_loss}


def euler_infer(model, z_x, z_y0, steps: int) -> np.ndarray:
    """Left-endpoint explicit Euler from t=0 to t=1 in ``steps`` equal steps."""
    if steps < 1:
        raise ContractError("euler_infer needs at least one step")
    f = _as_field(model)
    z = np.array(z_y0, dtype=np.float64)
    dt = 1.0 / steps
    for k in range(steps):
        z = z + dt * np.asarray(f(z_x, z, k * dt), dtype=np.float64)
    return z


def single_step_infer(model, z_x) -> np.ndarray:
    """Fixed-start inference: the prediction is the velocity itself."""
    if isinstance(model, VelocityModel):
        return model.velocity(z_x)
    return np.asarray(model(z_x, None, 0.0), dtype=np.float64)


def predict(objective: FlowObjective, model, z_x, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inference path for each objective; ``rng`` supplies the Gaussian start where one is used."""
    z_x = np.asarray(z_x, dtype=np.float64)
    kind = objective.kind
    if kind is ObjectiveKind.CVFS:
        return single_step_infer(model, z_x)
    rng = rng if rng is not None else np.random.default_rng(0)
    out_dim = model.out_dim if isinstance(model, VelocityModel) else z_x.shape[1]
    z0 = rng.standard_normal((z_x.shape[0], out_dim))
    if kind is ObjectiveKind.CV:
        return z0 + model.velocity(z_x, z0)
    return euler_infer(model, z_x, z0, objective.euler_steps)


# -- velocity-field diagnostics ---------------------------------------------------


def velocity_field_grid(model, z_x, z1_values, z2_values, t_values) -> np.ndarray:
    """Evaluate a 2-D velocity field on a (t, z1, z2) lattice.

    Returns rows ``(z1, z2, t, v1, v2)`` ordered by t, then z1, then z2.
    """
    if isinstance(model, VelocityModel) and model.out_dim != 2:
        raise ContractError("velocity-field diagnostics need a 2-D latent")
    f = _as_field(model)
    g1, g2 = np.meshgrid(np.asarray(z1_values, float), np.asarray(z2_values, float), indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    z_x = np.asarray(z_x, dtype=np.float64).reshape(1, -1)
    rows = []
    for t in t_values:
        v = np.asarray(f(np.repeat(z_x, len(pts), axis=0), pts, float(t)), dtype=np.float64)
        if v.shape != pts.shape:
            raise ContractError("velocity-field diagnostics need a 2-D latent")
        rows.append(np.column_stack([pts, np.full(len(pts), float(t)), v]))
    return np.concatenate(rows, axis=0)


def marginal_velocity(z, t: float, means, weights=None, sigma: float = 0.0, start: str = "gaussian") -> np.ndarray:
    """Closed-form posterior-mean velocity E[z1 - z0 | z_t = z] of the straight-line path.

    Targets are an isotropic Gaussian mixture (``sigma = 0`` gives point
    masses). ``start="gaussian"`` draws z0 ~ N(0, I); ``start="zero"`` pins
    z0 = 0, where the field is radial: v = z / t.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    k, d = means.shape
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if start == "zero":
        if t <= 0:
            raise ContractError("the fixed-start field is undefined at t = 0")
        return z / t
    if start != "gaussian":
        raise ValueError(f"unknown start distribution {start!r}")
    s2 = sigma**2
    var = t * t * s2 + (1.0 - t) ** 2
    if var <= 0:
        raise ContractError("field is undefined at t = 1 for point-mass targets")
    gain = (t * s2 - (1.0 - t)) / var
    resid = z[:, None, :] - t * means[None, :, :]  # [n, k, d]
    logp = np.log(w)[None, :] - 0.5 * np.sum(resid**2, axis=2) / var
    logp -= logp.max(axis=1, keepdims=True)
    post = np.exp(logp)
    post /= post.sum(axis=1, keepdims=True)
    cond = means[None, :, :] + gain * resid
    return np.einsum("nk,nkd->nd", post, cond)


# -- datasets and training ------------------------------------------------------


@dataclass
class FlowDataset:
    """Paired condition/target latents, optionally tagged with a source pool (0 or 1)."""

    z_x: np.ndarray
    z_y1: np.ndarray
    pool: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.z_x)


def make_toy_task(
    kind: str = "nonlinear",
    cond_dim: int = 4,
    target_dim: int = 4,
    n_train: int = 1024,
    n_test: int = 512,
    seed: int = 0,
    outdoor_fraction: float = 0.1,
) -> tuple[FlowDataset, FlowDataset, dict]:
    """Deterministic conditional regression z_y1 = g(z_x).

    Samples come from two pools: "indoor-like" N(0, I) conditions and
    "outdoor-like" conditions with doubled spread, so the 90/10 mixing rule
    has something to act on. Returns (train, test, params).
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((cond_dim, target_dim)) / np.sqrt(cond_dim)
    b = rng.standard_normal((cond_dim, target_dim)) / np.sqrt(cond_dim)

    def g(x):
        if kind == "linear":
            return x @ a
        if kind == "nonlinear":
            return np.tanh(x @ a) + 0.5 * np.sin(x @ b)
        raise ValueError(f"unknown toy task {kind!r}")

    def draw(n):
        pool = (rng.random(n) < outdoor_fraction).astype(np.int64)
        x = rng.standard_normal((n, cond_dim)) * np.where(pool[:, None] == 1, 2.0, 1.0)
        return FlowDataset(x, g(x), pool)

    train = draw(n_train)
    test = draw(n_test)
    return train, test, {"kind": kind, "A": a, "B": b}


@dataclass
class TrainResult:
    model: VelocityModel
    trace: list[dict] = field(default_factory=list)
    optimizer: AdamW | None = None


def _batch_indices(dataset: FlowDataset, batch_size: int, rng: np.random.Generator, mix) -> list[np.ndarray]:
    n = len(dataset)
    n_batches = max(1, -(-n // batch_size))
    pools = dataset.pool
    if pools is None or mix is None:
        perm = rng.permutation(n)
        return [perm[i * batch_size : (i + 1) * batch_size] for i in range(n_batches)]
    members = [np.flatnonzero(pools == 0), np.flatnonzero(pools == 1)]
    if any(len(m) == 0 for m in members):
        perm = rng.permutation(n)
        return [perm[i * batch_size : (i + 1) * batch_size] for i in range(n_batches)]
    out = []
    for _ in range(n_batches):
        which = rng.random(batch_size) >= mix[0]
        idx = np.where(
            which,
            members[1][rng.integers(0, len(members[1]), batch_size)],
            members[0][rng.integers(0, len(members[0]), batch_size)],
        )
        out.append(idx)
    return out


def make_batch(objective: FlowObjective, dataset: FlowDataset, idx: np.ndarray, rng: np.random.Generator) -> FlowBatch:
    z_x, z_y1 = dataset.z_x[idx], dataset.z_y1[idx]
    if objective.kind is ObjectiveKind.CVFS:
        z_y0 = np.zeros_like(z_y1)
    else:
        z_y0 = rng.standard_normal(z_y1.shape)
    # t only matters for the direct objective; drawn uniformly on [0, 1]
    t = rng.random(len(idx)) if objective.kind is ObjectiveKind.DIRECT else np.zeros(len(idx))
    return FlowBatch(z_x, z_y1, z_y0, t)


def test_mse(objective: FlowObjective, model, dataset: FlowDataset, seed: int = 0) -> float:
    pred = predict(objective, model, dataset.z_x, np.random.default_rng(seed))
    return float(np.mean((pred - dataset.z_y1) ** 2))


test_mse.__test__ = False  # not a pytest test


def train(
    objective: FlowObjective,
    model: VelocityModel,
    dataset: FlowDataset,
    epochs: int,
    seed: int = 0,
    lr: float = 1e-4,
    batch_size: int = 32,
    weight_decay: float = 0.0,
    disp_weight: float = DISPERSION_WEIGHT,
    tau: float = DISPERSION_TAU,
    mix: tuple[float, float] | None = (0.9, 0.1),
    test: FlowDataset | None = None,
) -> TrainResult:
    """Minibatch AdamW on the objective's loss plus ``disp_weight`` * dispersion loss.

    The trace holds one row per epoch: mean training loss (flow term plus
    weighted dispersion) and, when ``test`` is given, the test MSE of the
    objective's inference path.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    objective = objective if isinstance(objective, FlowObjective) else FlowObjective(objective)
    loss_fn = LOSSES[objective.kind]
    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    result = TrainResult(model, optimizer=opt)
    for epoch in range(epochs):
        losses = []
        for idx in _batch_indices(dataset, batch_size, rng, mix):
            batch = make_batch(objective, dataset, idx, rng)
            opt.zero_grad()
            loss, feats = loss_fn(model, batch, return_features=True)
            total = loss
            if disp_weight and feats is not None and len(idx) > 1:
                total = loss + disp_weight * dispersion_loss(feats, tau)
            total.backward()
            opt.step()
            losses.append(total.item())
        row = {"epoch": epoch + 1, "train_loss": float(np.mean(losses))}
        if test is not None:
            row["test_mse"] = test_mse(objective, model, test, seed=seed + 1)
        result.trace.append(row)
        log.debug("epoch %d loss %.6g", epoch + 1, row["train_loss"])
    return result
