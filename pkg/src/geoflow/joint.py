"""Joint depth + normal estimation over width-concatenated token grids.

Condition tokens (the image) and start tokens (zeros under the fixed-start
objective) are concatenated into one sequence of length ``2n``. A single
globally-attending model maps it to outputs of the same shape; the left
half ``p_l`` is supervised with depth and the right half ``p_r`` with
normals, so the second task costs no extra forward pass. The single-task
baseline supervises depth on ``p_r`` only and leaves ``p_l`` unused.

Scene grids are cut into ``patch x patch`` tiles of 3 channels each (depth
labels are replicated to 3 channels, like an RGB annotation).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, concat
from .depth_codec import QuantScheme, SchemeKind, percentile_affine, percentile_denormalize
from .errors import ContractError, ShapeError
from .flow import DISPERSION_TAU, DISPERSION_WEIGHT, FlowObjective, ObjectiveKind
from .nn import MLP, AdamW, AttentionBlock, Module, _glorot, block_diagonal_mask, dispersion_loss
from .scenes import SceneSample, angular_error_deg, normals_from_depth

log = logging.getLogger(__name__)

PATCH = 2
CHANNELS = 3


# -- token layout ---------------------------------------------------------------


def patchify(grid: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """[H, W, C] -> [(H/p)*(W/p), p*p*C], tokens in row-major tile order."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[..., None]
    h, w, c = grid.shape
    if h % patch or w % patch:
        raise ShapeError(f"grid {h}x{w} is not divisible by patch {patch}")
    t = grid.reshape(h // patch, patch, w // patch, patch, c).transpose(0, 2, 1, 3, 4)
    return t.reshape((h // patch) * (w // patch), patch * patch * c)


def unpatchify(tokens: np.ndarray, h: int, w: int, patch: int = PATCH) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    c = tokens.shape[-1] // (patch * patch)
    t = tokens.reshape(h // patch, w // patch, patch, patch, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(h, w, c)


@dataclass
class ConcatLatent:
    tokens: np.ndarray  # [batch, 2n, dim]
    half_split: int

    def __post_init__(self):
        if self.tokens.shape[1] != 2 * self.half_split:
            raise ShapeError("sequence length must equal twice the half split")

    @classmethod
    def build(cls, left, right) -> ConcatLatent:
        left, right = np.asarray(left, np.float64), np.asarray(right, np.float64)
        if left.shape != right.shape:
            raise ShapeError(f"halves differ in shape: {left.shape} vs {right.shape}")
        return cls(np.concatenate([left, right], axis=1), left.shape[1])


def split_output(output):
    """Split [batch, 2n, dim] into its left and right halves along the sequence axis."""
    out = as_tensor(output)
    if out.ndim != 3 or out.shape[1] % 2:
        raise ShapeError(f"expected [batch, even length, dim], got {out.shape}")
    n = out.shape[1] // 2
    return out[:, :n, :], out[:, n:, :]


def masked_sq_error(pred: Tensor, target, weight=None) -> Tensor:
    """Batch mean of the summed squared error; ``weight`` (0/1) drops invalid entries."""
    diff = pred - as_tensor(target)
    if weight is not None:
        diff = diff * np.asarray(weight, dtype=np.float64)
    sq = diff.square()
    return sq.reshape(sq.shape[0], -1).sum(axis=1).mean()


def joint_loss(p_l, p_r, v_D, v_N, mask_D=None, mask_N=None) -> Tensor:
    """Depth term on the left half plus normal term on the right half."""
    p_l, p_r = as_tensor(p_l), as_tensor(p_r)
    for name, a, b in (("depth", p_l, v_D), ("normal", p_r, v_N)):
        if a.shape != np.shape(b):
            raise ShapeError(f"{name} prediction {a.shape} vs target {np.shape(b)}")
    if p_l.shape != p_r.shape:
        raise ShapeError(f"halves differ in shape: {p_l.shape} vs {p_r.shape}")
    return masked_sq_error(p_l, v_D, mask_D) + masked_sq_error(p_r, v_N, mask_N)


# -- model --------------------------------------------------------------------------


class TokenVelocityModel(Module):
    """Token-wise embedding, one global attention block and one MLP block, both residual.

    ``cross_half=False`` installs a block-diagonal attention mask so the two
    halves cannot exchange information.
    """

    def __init__(
        self,
        half_tokens: int,
        token_dim: int,
        width: int = 16,
        hidden: int = 32,
        accepts_time: bool = False,
        cross_half: bool = True,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.half_tokens = half_tokens
        self.token_dim = token_dim
        self.width = width
        self.accepts_time = accepts_time
        self.cross_half = cross_half
        self.w_in = Tensor(_glorot(rng, token_dim, width), requires_grad=True)
        self.b_in = Tensor(np.zeros(width), requires_grad=True)
        self.pos = Tensor(0.1 * rng.standard_normal((2 * half_tokens, width)), requires_grad=True)
        self.w_time = Tensor(0.1 * rng.standard_normal(width), requires_grad=True) if accepts_time else None
        self.attn = AttentionBlock(width, rng, prefix="attn")
        self.mlp = MLP([width, hidden, width], rng, prefix="block")
        self.w_out = Tensor(_glorot(rng, width, token_dim), requires_grad=True)
        self.b_out = Tensor(np.zeros(token_dim), requires_grad=True)
        self.forward_count = 0

    @property
    def out_dim(self) -> int:
        return self.token_dim

    @property
    def attention_mask(self) -> np.ndarray | None:
        return None if self.cross_half else block_diagonal_mask(2 * self.half_tokens, self.half_tokens)

    def parameters(self) -> dict[str, Tensor]:
        p = {"embed.w": self.w_in, "embed.b": self.b_in, "embed.pos": self.pos}
        if self.w_time is not None:
            p["embed.time"] = self.w_time
        p.update(self.attn.parameters())
        p.update(self.mlp.parameters())
        p.update({"head.w": self.w_out, "head.b": self.b_out})
        return p

    def __call__(self, tokens, t=None, return_features: bool = False):
        self.forward_count += 1
        x = as_tensor(tokens)
        if x.ndim != 3 or x.shape[1] != 2 * self.half_tokens or x.shape[2] != self.token_dim:
            raise ShapeError(f"expected [batch, {2 * self.half_tokens}, {self.token_dim}], got {x.shape}")
        h = x @ self.w_in + self.b_in + self.pos
        if self.accepts_time:
            if t is None:
                raise ContractError("this model needs the time t")
            tt = np.asarray(t, dtype=np.float64).reshape(-1, 1, 1)
            h = h + as_tensor(tt) * self.w_time
        h = h + self.attn(h, self.attention_mask)
        out, hidden = self.mlp(h, return_hidden=True)
        h = h + out
        y = h @ self.w_out + self.b_out
        if return_features:
            # per-sample feature: hidden activations pooled over tokens
            return y, hidden[-1].mean(axis=1)
        return y


def cross_half_gradient_probe(model: TokenVelocityModel, tokens, v_D, v_N) -> tuple[float, float]:
    """Gradient norms that cross between halves.

    Returns (||d loss_right / d left inputs||, ||d loss_left / d right inputs||),
    where loss_right is the normal term on ``p_r`` and loss_left the depth term
    on ``p_l``. Parameter gradients are cleared afterwards.
    """
    n = model.half_tokens
    out = []
    for half, target, probe in (("right", v_N, slice(0, n)), ("left", v_D, slice(n, 2 * n))):
        x = Tensor(np.asarray(tokens, dtype=np.float64), requires_grad=True)
        p_l, p_r = split_output(model(x, t=np.zeros(x.shape[0]) if model.accepts_time else None))
        loss = masked_sq_error(p_r if half == "right" else p_l, target)
        loss.backward()
        out.append(float(np.linalg.norm(x.grad[:, probe, :])))
        model.zero_grad()
    return out[0], out[1]


# -- scene data -------------------------------------------------------------------


@dataclass
class SceneTokens:
    cond: np.ndarray  # [N, n, d]
    depth: np.ndarray  # [N, n, d] normalized depth labels
    normals: np.ndarray  # [N, n, d]
    mask: np.ndarray  # [N, n, d] 1.0 on valid pixels
    anchors: list[tuple[float, float]]
    quant: SchemeKind
    shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.cond)


def depth_label(sample: SceneSample, quant: SchemeKind | str = SchemeKind.LOGARITHMIC):
    """Percentile-normalized, BF16-rounded depth label in the quantization's space."""
    quant = SchemeKind.parse(quant) if isinstance(quant, str) else quant
    scheme = QuantScheme(quant, 0.1, 80.0)
    d = np.where(sample.valid_mask, sample.depth, 1.0)
    if quant is SchemeKind.LOGARITHMIC:
        x = np.log(d + 1e-6)
    else:
        x = scheme.transform(d)
    return percentile_affine(x, sample.valid_mask)


def label_to_depth(label: np.ndarray, anchors, quant: SchemeKind) -> np.ndarray:
    x = percentile_denormalize(label, anchors)
    if quant is SchemeKind.LOGARITHMIC:
        return np.exp(x) - 1e-6
    if quant is SchemeKind.INVERSE:
        with np.errstate(divide="ignore"):
            return 1.0 / x
    return x


def prepare_scenes(samples: list[SceneSample], quant: SchemeKind | str = SchemeKind.LOGARITHMIC) -> SceneTokens:
    if not samples:
        raise ContractError("no scenes given")
    quant = SchemeKind.parse(quant) if isinstance(quant, str) else quant
    cond, depth, normals, mask, anchors = [], [], [], [], []
    for s in samples:
        if s.depth is None or s.normals is None:
            raise ContractError("scenes must carry both depth and normal labels")
        lab = depth_label(s, quant)
        rep = lambda g: np.repeat(np.asarray(g)[..., None], CHANNELS, axis=-1)
        cond.append(patchify(rep(s.image_proxy)))
        depth.append(patchify(rep(lab.values)))
        normals.append(patchify(np.where(s.valid_mask[..., None], s.normals, 0.0)))
        mask.append(patchify(rep(s.valid_mask.astype(np.float64))))
        anchors.append(lab.anchors)
    return SceneTokens(
        np.stack(cond), np.stack(depth), np.stack(normals), np.stack(mask), anchors, quant, samples[0].depth.shape
    )


# -- training ---------------------------------------------------------------------


@dataclass
class JointTrainResult:
    model: TokenVelocityModel
    depth_trace: list[float] = field(default_factory=list)
    normal_trace: list[float] = field(default_factory=list)
    consistency_trace: list[float] = field(default_factory=list)
    forward_passes: list[int] = field(default_factory=list)


def _start_and_time(objective: FlowObjective, shape, rng):
    if objective.kind is ObjectiveKind.CVFS:
        return np.zeros(shape), None
    z0 = rng.standard_normal(shape)
    t = rng.random(shape[0]) if objective.kind is ObjectiveKind.DIRECT else None
    return z0, t


def _step_inputs(objective, data: SceneTokens, idx, joint: bool, swap: bool, rng):
    """Model input and (depth, normal) targets for one batch.

    The right half carries the flow state; under ``direct`` it is z_t at a
    random t, under ``cv`` it is the Gaussian start. The left half always
    holds the condition tokens.
    """
    cond = data.cond[idx]
    state_target = data.normals[idx] if joint else data.depth[idx]
    z0, t = _start_and_time(objective, state_target.shape, rng)
    if t is not None:
        tt = t[:, None, None]
        state = tt * state_target + (1.0 - tt) * z0
    else:
        state = z0
    x = np.concatenate([cond, state], axis=1)
    v_state = state_target - z0
    return x, t, v_state


def train_joint(
    model: TokenVelocityModel,
    data: SceneTokens,
    epochs: int,
    seed: int = 0,
    joint: bool = True,
    objective: FlowObjective | str = "cvfs",
    lr: float = 3e-3,
    batch_size: int = 8,
    weight_decay: float = 0.0,
    disp_weight: float = DISPERSION_WEIGHT,
    tau: float = DISPERSION_TAU,
    swap_halves: bool = False,
    consistency_scenes: list[SceneSample] | None = None,
) -> JointTrainResult:
    """Train depth (and, with ``joint``, normals) with one forward pass per step.

    Joint mode supervises depth on the left half and normals on the right
    (swapped with ``swap_halves``); single-task mode supervises depth on the
    right half only. Traces hold per-epoch mean depth / normal loss terms.
    """
    objective = objective if isinstance(objective, FlowObjective) else FlowObjective(objective)
    if len(data) == 0:
        raise ContractError("cannot train on an empty scene set")
    if joint and objective.kind is not ObjectiveKind.CVFS:
        warnings.warn(
            "joint estimation with a stochastic start: the depth half is supervised from a zero start",
            stacklevel=2,
        )
    if model.accepts_time != (objective.kind is ObjectiveKind.DIRECT):
        raise ContractError("model time input does not match the objective")
    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    result = JointTrainResult(model)
    if consistency_scenes is not None:
        result.consistency_trace.append(depth_normal_consistency(model, consistency_scenes, data.quant))
    n = len(data)
    for _ in range(epochs):
        d_losses, n_losses = [], []
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = perm[i : i + batch_size]
            x, t, v_state = _step_inputs(objective, data, idx, joint, swap_halves, rng)
            if swap_halves and joint:
                x = np.concatenate([x[:, data.cond.shape[1] :], x[:, : data.cond.shape[1]]], axis=1)
            opt.zero_grad()
            before = model.forward_count
            y, feats = model(x, t, return_features=True)
            result.forward_passes.append(model.forward_count - before)
            p_l, p_r = split_output(y)
            if swap_halves and joint:
                p_l, p_r = p_r, p_l
            if joint:
                d_term = masked_sq_error(p_l, data.depth[idx], data.mask[idx])
                n_term = masked_sq_error(p_r, v_state, data.mask[idx])
                loss = d_term + n_term
                n_losses.append(n_term.item())
            else:
                d_term = masked_sq_error(p_r, v_state, data.mask[idx])
                loss = d_term
            d_losses.append(d_term.item())
            if disp_weight and len(idx) > 1:
                loss = loss + disp_weight * dispersion_loss(feats, tau)
            loss.backward()
            opt.step()
        result.depth_trace.append(float(np.mean(d_losses)))
        if n_losses:
            result.normal_trace.append(float(np.mean(n_losses)))
        if consistency_scenes is not None:
            result.consistency_trace.append(depth_normal_consistency(model, consistency_scenes, data.quant))
    return result


def predict_tokens(
    model: TokenVelocityModel,
    cond: np.ndarray,
    objective: FlowObjective | str = "cvfs",
    joint: bool = True,
    rng: np.random.Generator | None = None,
    swap_halves: bool = False,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inference: returns (depth tokens, normal tokens or None)."""
    objective = objective if isinstance(objective, FlowObjective) else FlowObjective(objective)
    rng = rng if rng is not None else np.random.default_rng(0)
    cond = np.asarray(cond, dtype=np.float64)
    z0, _ = _start_and_time(objective, cond.shape, rng)
    z = z0
    steps = objective.euler_steps if objective.kind is ObjectiveKind.DIRECT else 1
    for k in range(steps):
        x = np.concatenate([cond, z], axis=1)
        if swap_halves and joint:
            x = np.concatenate([z, cond], axis=1)
        t = np.full(len(cond), k / steps) if model.accepts_time else None
        p_l, p_r = split_output(model(x, t))
        if swap_halves and joint:
            p_l, p_r = p_r, p_l
        z = z + p_r.data / steps
        if k == 0:
            first_left = p_l.data
    if joint:
        return first_left, z
    return z, None


def depth_mse(pred_tokens: np.ndarray, data: SceneTokens) -> float:
    """Mean squared error of depth labels over valid pixel-channels."""
    m = data.mask
    return float(np.sum(((pred_tokens - data.depth) * m) ** 2) / np.sum(m))


def depth_normal_consistency(model: TokenVelocityModel, scenes: list[SceneSample], quant=SchemeKind.LOGARITHMIC) -> float:
    """Mean angle between normals differenced from the predicted depth and the predicted normals.

    Predicted depth labels are mapped back to metres with each scene's own
    percentile anchors; the average runs over interior pixels.
    """
    data = prepare_scenes(scenes, quant)
    d_tok, n_tok = predict_tokens(model, data.cond, "cvfs", joint=True)
    h, w = data.shape
    errs = []
    for i, s in enumerate(scenes):
        label = unpatchify(d_tok[i], h, w).mean(axis=-1)
        depth = label_to_depth(np.clip(label, -1.0, 1.0), data.anchors[i], data.quant)
        fd = normals_from_depth(depth, s.pixel_size)
        pn = unpatchify(n_tok[i], h, w)
        ok = s.interior_mask & (np.linalg.norm(pn, axis=-1) > 0)
        errs.append(angular_error_deg(fd[ok], pn[ok]))
    return float(np.mean(np.concatenate(errs)))


def decode_depth_tokens(d_tok: np.ndarray, data: SceneTokens) -> list[np.ndarray]:
    """Predicted label tokens -> metric depth grids, using each scene's ground-truth anchors."""
    h, w = data.shape
    out = []
    for i in range(len(d_tok)):
        label = np.clip(unpatchify(d_tok[i], h, w).mean(axis=-1), -1.0, 1.0)
        out.append(label_to_depth(label, data.anchors[i], data.quant))
    return out


def scene_metrics(depths: list[np.ndarray], scenes: list[SceneSample], normals: list[np.ndarray] | None = None) -> dict:
    """Per-scene affine alignment, then metrics pooled over every valid pixel."""
    from .metrics import DEPTH_FLOOR, absrel, affine_align, angular_errors, delta1, floored_count

    aligned, gts, floored = [], [], 0
    for d, s in zip(depths, scenes):
        fit = affine_align(d, s.depth, s.valid_mask)
        aligned.append(fit.aligned[s.valid_mask])
        gts.append(s.depth[s.valid_mask])
        floored += floored_count(fit.aligned, s.valid_mask)
    a, g = np.concatenate(aligned), np.concatenate(gts)
    row = {
        "n_valid": int(g.size),
        "absrel": absrel(np.maximum(a, DEPTH_FLOOR), g),
        "delta1": delta1(a, g),
        "floored": floored,
    }
    if normals is not None:
        errs = np.concatenate([angular_errors(n, s.normals, s.valid_mask) for n, s in zip(normals, scenes)])
        row["mean_err_deg"] = float(np.mean(errs))
        row["within_11_25"] = float(np.mean(errs < 11.25))
    return row
