"""Command-line entry point: ``geoflow <command> [--flags]``.

Commands: quant-table, gen-data, train, eval, field-plot, ablate. Every run
writes ``run.json`` echoing the resolved configuration and the SHA-256 of
each output file. Settings come from built-in defaults, then an optional
key=value ``--config`` file, then explicit flags (last wins).

Exit codes: 0 success, 1 usage/contract, 2 I/O or corruption, 3 numerical
or degenerate input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .depth_codec import QuantScheme, SchemeKind, StepModel, error_table, write_error_csv
from .errors import ConfigError, ContractError, CorruptionError, LabError
from .flow import FlowObjective, VelocityModel, make_toy_task, marginal_velocity, test_mse, train, velocity_field_grid
from .io import sha256_file
from .joint import (
    TokenVelocityModel,
    decode_depth_tokens,
    prepare_scenes,
    predict_tokens,
    scene_metrics,
    train_joint,
    unpatchify,
)
from .metrics import MetricReport, write_report
from .nn import load_checkpoint, save_checkpoint
from .scenes import draw_pools, generate_dataset, load_dataset, save_dataset
from .svg import Panel, write_svg

log = logging.getLogger("geoflow")

OUT_ENV = "FE2E_LAB_OUT"


# -- config handling ------------------------------------------------------------


def _fraction(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from exc


def _on_off(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    a, b = (_fraction(p) for p in parts)
    if a < 0 or b < 0 or not np.isclose(a + b, 1.0):
        raise argparse.ArgumentTypeError(f"mix weights must be non-negative and sum to 1, got {text!r}")
    return a, b


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _float_list(text: str) -> list[float]:
    return [_fraction(p) for p in _str_list(text)]


# (flag, type, default, help); the same type parses config-file values
COMMON = [
    ("seed", int, 0, "global random seed"),
    ("out", str, None, f"output directory (default: ${OUT_ENV}/<command> or runs/<command>)"),
]
OPTIONS: dict[str, list] = {
    "quant-table": [
        ("schemes", _str_list, ["uniform", "inverse", "logarithmic"], "comma-separated quantization schemes"),
        ("delta-v", _fraction, 1 / 256, "label-space step, e.g. 1/256"),
        ("d-min", float, 0.1, "near depth in metres (inverse/log schemes)"),
        ("d-max", float, 80.0, "far depth in metres"),
        ("sweep-points", int, 200, "depth samples in the dense sweep"),
    ],
    "gen-data": [
        ("count", int, 64, "number of scenes"),
        ("resolution", int, 32, "square grid size"),
        ("mix", _pair, (0.9, 0.1), "indoor,outdoor pool weights"),
        ("dry-run", _on_off, False, "only draw pool assignments (no files per scene)"),
    ],
    "train": [
        ("task", str, "scenes", "scenes or toy"),
        ("objective", str, "cvfs", "direct, cv or cvfs"),
        ("joint", _on_off, True, "supervise normals on the second output half"),
        ("quant", str, "logarithmic", "depth label space: uniform, inverse or logarithmic"),
        ("epochs", int, 40, "training epochs"),
        ("lr", float, 3e-3, "AdamW learning rate"),
        ("weight-decay", float, 0.0, "AdamW decoupled weight decay"),
        ("batch-size", int, 8, "minibatch size"),
        ("disp-weight", float, 0.5, "dispersion-loss weight (0 disables)"),
        ("euler-steps", int, 1, "Euler steps at inference for the direct objective"),
        ("count", int, 32, "generated training scenes (ignored with --data)"),
        ("resolution", int, 16, "generated scene size"),
        ("mix", _pair, (0.9, 0.1), "indoor,outdoor pool weights"),
        ("data", str, None, "dataset directory written by gen-data"),
        ("cross-half", _on_off, True, "global attention (off: block-diagonal mask)"),
        ("swap-halves", _on_off, False, "supervise depth on the right half and normals on the left"),
        ("toy-kind", str, "nonlinear", "toy task: linear or nonlinear"),
        ("cond-dim", int, 4, "toy condition dimension"),
        ("target-dim", int, 4, "toy target dimension"),
    ],
    "eval": [
        ("run", str, None, "training output directory (run.json + checkpoint.bin)"),
        ("data", str, None, "dataset directory (default: freshly generated test scenes)"),
        ("count", int, 16, "generated test scenes"),
        ("seeds", int, 1, "inference seeds; fixed-start models must agree across all of them"),
        ("oracle", _on_off, False, "score ground truth against itself"),
    ],
    "field-plot": [
        ("mode", str, "analytic", "analytic or checkpoint"),
        ("run", str, None, "toy run with a 2-D target (checkpoint mode)"),
        ("grid", int, 9, "arrows per axis"),
        ("times", _float_list, [0.25, 0.5, 0.75], "comma-separated t values"),
        ("sigma", float, 0.1, "target mixture spread (analytic mode)"),
        ("trajectories", int, 24, "sample paths drawn per panel"),
        ("timestamp", str, None, "optional comment stamped into the SVG"),
    ],
    "ablate": [
        ("configs", _str_list, None, "subset of configs (default: all eight)"),
        ("seeds", int, 3, "training seeds per config"),
        ("epochs", int, 40, "training epochs"),
        ("lr", float, 3e-3, "AdamW learning rate"),
        ("count", int, 32, "training scenes"),
        ("test-count", int, 16, "test scenes"),
        ("resolution", int, 16, "scene size"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geoflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, help=COMMANDS[cmd].__doc__.splitlines()[0])
        sp.add_argument("--config", type=str, default=None, help="key=value file; flags override it")
        for name, typ, default, help_ in opts + COMMON:
            sp.add_argument(f"--{name}", type=typ, default=None, help=f"{help_} [default: {default}]")
    return p


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("_", "-")] = v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    opts = OPTIONS[args.command] + COMMON
    known = {name: (typ, default) for name, typ, default, _ in opts}
    cfg = {name: default for name, (_, default) in known.items()}
    if args.config:
        for k, v in read_config_file(args.config).items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r} for {args.command}")
            try:
                cfg[k] = known[k][0](v)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from exc
    for name in known:
        v = getattr(args, name.replace("-", "_"))
        if v is not None:
            cfg[name] = v
    if cfg["out"] is None:
        cfg["out"] = str(Path(os.environ.get(OUT_ENV, "runs")) / args.command)
    return cfg


def _jsonable(x):
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def write_manifest(out: Path, command: str, cfg: dict, outputs: list[str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": _jsonable(cfg),
        "outputs": {name: sha256_file(out / name) for name in outputs},
    }
    if extra:
        manifest.update(_jsonable(extra))
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- quant-table ------------------------------------------------------------------


def _schemes(names, d_min, d_max) -> list[QuantScheme]:
    out = []
    for n in names:
        kind = SchemeKind.parse(n)
        out.append(QuantScheme(kind, 0.0 if kind is SchemeKind.UNIFORM else d_min, d_max))
    return out


def cmd_quant_table(cfg: dict) -> int:
    """Worst-case BF16 depth error per quantization scheme."""
    dv = cfg["delta-v"]
    if not 0 < dv <= 2**-7:
        raise ConfigError(f"--delta-v must lie in (0, 1/128], got {dv}")
    step = StepModel(dv)
    schemes = _schemes(cfg["schemes"], cfg["d-min"], cfg["d-max"])
    out = _out_dir(cfg)
    rows = error_table(schemes, [cfg["d-max"], cfg["d-min"]], step)
    write_error_csv(out / "quant_table.csv", rows)
    sweep = np.geomspace(cfg["d-min"], cfg["d-max"], cfg["sweep-points"])
    write_error_csv(out / "quant_sweep.csv", error_table(schemes, sweep, step))
    for r in rows:
        print(f"{r['scheme']:>12} {r['depth_m']:>6g} m  abs_error={r['abs_error_m']:.6g} m  absrel={r['absrel']:.6g}")
    write_manifest(out, "quant-table", cfg, ["quant_table.csv", "quant_sweep.csv"])
    return 0


# -- gen-data -----------------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> int:
    """Generate and persist a manifest-stamped synthetic scene dataset."""
    out = _out_dir(cfg)
    if cfg["count"] < 0:
        raise ConfigError("--count must be non-negative")
    if cfg["dry-run"]:
        pools = draw_pools(cfg["count"], cfg["seed"], cfg["mix"])
        n_out = sum(p.value == "outdoor" for p in pools)
        frac = n_out / len(pools) if pools else float("nan")
        _write_rows(out / "pools.csv", ["pool", "count", "fraction"],
                    [["indoor", len(pools) - n_out, repr(1 - frac)], ["outdoor", n_out, repr(frac)]])
        print(f"{len(pools)} draws: outdoor fraction {frac:.4f}")
        write_manifest(out, "gen-data", cfg, ["pools.csv"])
        return 0
    samples = generate_dataset(cfg["count"], cfg["resolution"], cfg["seed"], cfg["mix"])
    save_dataset(samples, out, seed=cfg["seed"], mix=cfg["mix"], extra={"config": _jsonable(cfg)})
    print(f"wrote {len(samples)} scenes to {out}")
    write_manifest(out, "gen-data", cfg, ["manifest.json"])
    return 0


# -- train --------------------------------------------------------------------------


def _scene_model(spec: dict) -> TokenVelocityModel:
    return TokenVelocityModel(
        spec["half_tokens"], spec["token_dim"], accepts_time=spec["accepts_time"],
        cross_half=spec["cross_half"], seed=spec["seed"],
    )


def _toy_model(spec: dict) -> VelocityModel:
    return VelocityModel.for_objective(FlowObjective(spec["objective"]), spec["cond_dim"], spec["target_dim"], seed=spec["seed"])


def _training_scenes(cfg):
    if cfg["data"]:
        _, samples = load_dataset(cfg["data"])
        return samples
    return generate_dataset(cfg["count"], cfg["resolution"], cfg["seed"], cfg["mix"])


def cmd_train(cfg: dict) -> int:
    """Train a toy flow model or the joint scene model; write checkpoint, loss CSV, manifest."""
    objective = FlowObjective(cfg["objective"], euler_steps=cfg["euler-steps"])
    out = _out_dir(cfg)
    if cfg["task"] == "toy":
        train_set, test_set, _ = make_toy_task(cfg["toy-kind"], cfg["cond-dim"], cfg["target-dim"], seed=cfg["seed"])
        spec = {"task": "toy", "toy_kind": cfg["toy-kind"], "objective": objective.kind.value, "euler_steps": objective.euler_steps,
                "cond_dim": cfg["cond-dim"], "target_dim": cfg["target-dim"], "seed": cfg["seed"]}
        model = _toy_model(spec)
        res = train(objective, model, train_set, cfg["epochs"], seed=cfg["seed"], lr=cfg["lr"],
                    batch_size=cfg["batch-size"], weight_decay=cfg["weight-decay"],
                    disp_weight=cfg["disp-weight"], test=test_set)
        rows = [[r["epoch"], repr(r["train_loss"]), repr(r["test_mse"])] for r in res.trace]
        _write_rows(out / "loss.csv", ["epoch", "train_loss", "test_mse"], rows)
        extra = {"model": spec, "final_test_mse": test_mse(objective, model, test_set, seed=cfg["seed"] + 1)}
    elif cfg["task"] == "scenes":
        quant = SchemeKind.parse(cfg["quant"])
        samples = _training_scenes(cfg)
        data = prepare_scenes(samples, quant)
        spec = {"task": "scenes", "objective": objective.kind.value, "euler_steps": objective.euler_steps,
                "joint": cfg["joint"], "quant": quant.value, "swap_halves": cfg["swap-halves"],
                "half_tokens": data.cond.shape[1], "token_dim": data.cond.shape[2],
                "accepts_time": objective.model_inputs[1], "cross_half": cfg["cross-half"],
                "seed": cfg["seed"], "resolution": data.shape[0]}
        model = _scene_model(spec)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = train_joint(model, data, cfg["epochs"], seed=cfg["seed"], joint=cfg["joint"], objective=objective,
                              lr=cfg["lr"], batch_size=cfg["batch-size"], weight_decay=cfg["weight-decay"],
                              disp_weight=cfg["disp-weight"], swap_halves=cfg["swap-halves"])
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        normal = res.normal_trace or [float("nan")] * len(res.depth_trace)
        rows = [[i + 1, repr(d + n if cfg["joint"] else d), repr(d), repr(n)]
                for i, (d, n) in enumerate(zip(res.depth_trace, normal))]
        _write_rows(out / "loss.csv", ["epoch", "train_loss", "depth_loss", "normal_loss"], rows)
        extra = {"model": spec, "forward_passes_per_step": sorted(set(res.forward_passes))}
    else:
        raise ConfigError(f"unknown task {cfg['task']!r} (expected scenes or toy)")
    save_checkpoint(out / "checkpoint.bin", model.state_dict())
    write_manifest(out, "train", cfg, ["checkpoint.bin", "loss.csv"], extra)
    print(f"trained {model.num_parameters()} parameters for {cfg['epochs']} epochs -> {out}")
    return 0


def load_run(run_dir) -> tuple[dict, object]:
    """Rebuild a trained model from a ``train`` output directory."""
    run_dir = Path(run_dir)
    try:
        spec = json.loads((run_dir / "run.json").read_text())["model"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise CorruptionError(f"{run_dir}/run.json is not a training manifest") from exc
    model = _toy_model(spec) if spec["task"] == "toy" else _scene_model(spec)
    model.load_state_dict(load_checkpoint(run_dir / "checkpoint.bin"))
    return spec, model


# -- eval ---------------------------------------------------------------------------


def cmd_eval(cfg: dict) -> int:
    """Score a checkpoint (or the ground truth itself) with the depth and normal metrics."""
    out = _out_dir(cfg)
    if cfg["seeds"] < 1:
        raise ConfigError("--seeds must be at least 1")
    spec, model = (None, None)
    if not cfg["oracle"]:
        if not cfg["run"]:
            raise ConfigError("eval needs --run (or --oracle on)")
        spec, model = load_run(cfg["run"])
    if spec is not None and spec["task"] == "toy":
        objective = FlowObjective(spec["objective"], euler_steps=spec["euler_steps"])
        _, test_set, _ = make_toy_task(spec["toy_kind"], spec["cond_dim"], spec["target_dim"], seed=spec["seed"])
        mses = [test_mse(objective, model, test_set, seed=cfg["seed"] + k) for k in range(cfg["seeds"])]
        spread = float(np.ptp(mses))
        _write_rows(out / "metrics.csv", ["dataset", "seed", "mse", "spread"],
                    [["toy", cfg["seed"] + k, repr(m), repr(spread)] for k, m in enumerate(mses)])
        write_manifest(out, "eval", cfg, ["metrics.csv"])
        return 0

    resolution = spec["resolution"] if spec else 16
    if cfg["data"]:
        _, scenes = load_dataset(cfg["data"])
    else:
        scenes = generate_dataset(cfg["count"], resolution, cfg["seed"] + 1000)
    reports, absrels = [], []
    for k in range(cfg["seeds"]):
        if cfg["oracle"]:
            depths = [s.depth for s in scenes]
            normals = [s.normals for s in scenes]
        else:
            quant = SchemeKind(spec["quant"])
            data = prepare_scenes(scenes, quant)
            objective = FlowObjective(spec["objective"], euler_steps=spec["euler_steps"])
            d_tok, n_tok = predict_tokens(model, data.cond, objective, joint=spec["joint"],
                                          rng=np.random.default_rng(cfg["seed"] + k), swap_halves=spec["swap_halves"])
            depths = decode_depth_tokens(d_tok, data)
            h, w = data.shape
            normals = [unpatchify(n, h, w) for n in n_tok] if n_tok is not None else None
        m = scene_metrics(depths, scenes, normals)
        absrels.append(m["absrel"])
        reports.append(MetricReport("synthetic", m["n_valid"], m["absrel"], m["delta1"],
                                    m.get("mean_err_deg", float("nan")), m.get("within_11_25", float("nan")),
                                    m["floored"], {"seed": cfg["seed"] + k}))
    spread = float(np.ptp(absrels))
    for r in reports:
        r.extra["absrel_spread"] = repr(spread)
    write_report(out / "metrics.csv", reports)
    r0 = reports[0]
    print(f"AbsRel {100 * r0.absrel:.3f}  delta1 {100 * r0.delta1:.2f}  normals {r0.mean_err_deg:.2f} deg  "
          f"spread over {cfg['seeds']} seeds {spread:.3g}")
    write_manifest(out, "eval", cfg, ["metrics.csv"])
    return 0


# -- field-plot ---------------------------------------------------------------------

FIELD_MEANS = np.array([[1.5, 1.0], [1.0, -1.5], [-1.5, 0.5]])


def _trajectories(field, starts, steps=40):
    z = np.array(starts, dtype=np.float64)
    path = [z.copy()]
    for k in range(steps):
        z = z + field(z, k / steps) / steps
        path.append(z.copy())
    return np.stack(path, axis=1)  # [n, steps+1, 2]


def cmd_field_plot(cfg: dict) -> int:
    """Velocity-field arrows: Gaussian start (curved) versus fixed zero start (straight)."""
    out = _out_dir(cfg)
    rng = np.random.default_rng(cfg["seed"])
    lim = 3.0
    axis = np.linspace(-lim, lim, cfg["grid"])
    times = [t for t in cfg["times"]]
    if any(not 0 < t < 1 for t in times):
        raise ConfigError("--times must lie strictly between 0 and 1")
    if cfg["mode"] == "analytic":
        sigma = cfg["sigma"]
        fields = {
            "gaussian_start": lambda z, t: marginal_velocity(z, t, FIELD_MEANS, sigma=sigma, start="gaussian"),
            "fixed_start": lambda z, t: marginal_velocity(z, max(t, 1e-9), FIELD_MEANS, sigma=sigma, start="zero"),
        }
    elif cfg["mode"] == "checkpoint":
        if not cfg["run"]:
            raise ConfigError("checkpoint mode needs --run")
        spec, model = load_run(cfg["run"])
        if spec["task"] != "toy" or spec["target_dim"] != 2:
            raise ContractError("field plots need a toy model with a 2-D target")
        z_x = make_toy_task(spec["toy_kind"], spec["cond_dim"], 2, seed=spec["seed"])[1].z_x[:1]

        def learned(z, t):
            return model.velocity(np.repeat(z_x, len(z), axis=0), z, np.full(len(z), t))

        fields = {spec["objective"]: learned}
    else:
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    rows, panels = [], []
    for name, f in fields.items():
        grid = velocity_field_grid(lambda zx, z, t, f=f: f(z, t), np.zeros(1), axis, axis, times)
        rows.extend([name, *map(repr, r)] for r in grid)
        panel = Panel(name.replace("_", " "), (-lim, lim), (-lim, lim))
        mid = grid[grid[:, 2] == times[len(times) // 2]]
        scale = 0.8 * (axis[1] - axis[0]) / max(np.max(np.linalg.norm(mid[:, 3:], axis=1)), 1e-12)
        for z1, z2, _, v1, v2 in mid:
            panel.arrow(z1, z2, scale * v1, scale * v2)
        starts = np.zeros((cfg["trajectories"], 2)) if name == "fixed_start" else rng.standard_normal((cfg["trajectories"], 2))
        if name == "fixed_start":
            # every path leaves the origin; its direction is set by the sampled target
            targets = FIELD_MEANS[rng.integers(0, len(FIELD_MEANS), len(starts))]
            paths = np.linspace(0.0, 1.0, 41)[None, :, None] * targets[:, None, :]
        else:
            paths = _trajectories(f, starts)
        for p in paths:
            panel.polyline(p[:, 0], p[:, 1])
        for s in starts:
            panel.dot(*s)
        for m in FIELD_MEANS:
            panel.dot(*m, r=4, color="#36c")
        panels.append(panel)
    _write_rows(out / "field.csv", ["field", "z1", "z2", "t", "v1", "v2"], rows)
    write_svg(out / "field.svg", panels, timestamp=cfg["timestamp"])
    write_manifest(out, "field-plot", cfg, ["field.csv"])
    print(f"wrote {len(rows)} field samples to {out}")
    return 0


# -- ablate -------------------------------------------------------------------------

# name -> (objective, quant, joint, dispersion weight); mirrors the step-by-step ablation
ABLATION_CONFIGS = {
    "id2": ("direct", "uniform", False, 0.0),
    "id3": ("cv", "uniform", False, 0.0),
    "id4": ("cvfs", "uniform", False, 0.0),
    "id4+dl": ("cvfs", "uniform", False, 0.5),
    "id5": ("cvfs", "inverse", False, 0.0),
    "id6": ("cvfs", "logarithmic", False, 0.0),
    "id8": ("cvfs", "logarithmic", True, 0.0),
    "id8+dl": ("cvfs", "logarithmic", True, 0.5),
}


def run_ablation_config(name: str, seed: int, epochs: int, lr: float, train_scenes, test_scenes) -> dict:
    objective_name, quant, joint, disp = ABLATION_CONFIGS[name]
    objective = FlowObjective(objective_name)
    data = prepare_scenes(train_scenes, quant)
    test = prepare_scenes(test_scenes, quant)
    model = TokenVelocityModel(data.cond.shape[1], data.cond.shape[2], accepts_time=objective.model_inputs[1], seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train_joint(model, data, epochs, seed=seed, joint=joint, objective=objective, lr=lr, disp_weight=disp)
    d_tok, _ = predict_tokens(model, test.cond, objective, joint=joint, rng=np.random.default_rng(seed + 7))
    return scene_metrics(decode_depth_tokens(d_tok, test), test_scenes)


def cmd_ablate(cfg: dict) -> int:
    """Train the eight ablation configs over several seeds and rank them by AbsRel."""
    out = _out_dir(cfg)
    names = cfg["configs"] or list(ABLATION_CONFIGS)
    unknown = [n for n in names if n not in ABLATION_CONFIGS]
    if unknown:
        raise ConfigError(f"unknown ablation configs {unknown}; choose from {list(ABLATION_CONFIGS)}")
    results = {n: [] for n in names}
    for k in range(cfg["seeds"]):
        seed = cfg["seed"] + k
        train_scenes = generate_dataset(cfg["count"], cfg["resolution"], seed)
        test_scenes = generate_dataset(cfg["test-count"], cfg["resolution"], seed + 1000)
        for n in names:
            results[n].append(run_ablation_config(n, seed, cfg["epochs"], cfg["lr"], train_scenes, test_scenes))
            log.info("%s seed %d absrel %.4f", n, seed, results[n][-1]["absrel"])
    summary = []
    for n in names:
        objective, quant, joint, disp = ABLATION_CONFIGS[n]
        ab = np.array([r["absrel"] for r in results[n]])
        d1 = np.array([r["delta1"] for r in results[n]])
        summary.append([n, objective, quant, "on" if joint else "off", disp, ab.mean(), ab.std(), d1.mean()])
    order = sorted(range(len(summary)), key=lambda i: summary[i][5])
    rank = {i: r + 1 for r, i in enumerate(order)}
    rows = [s[:5] + [f"{100 * s[5]:.4f}", f"{100 * s[6]:.4f}", f"{100 * s[7]:.4f}", rank[i]] for i, s in enumerate(summary)]
    _write_rows(out / "ablation.csv",
                ["config", "objective", "quant", "joint", "disp_weight", "absrel", "absrel_std", "delta1", "rank"], rows)
    for r in rows:
        print(f"{r[0]:>8}  AbsRel {r[5]:>8}  delta1 {r[7]:>8}  rank {r[8]}")
    write_manifest(out, "ablate", cfg, ["ablation.csv"])
    return 0


COMMANDS = {
    "quant-table": cmd_quant_table,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "field-plot": cmd_field_plot,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
