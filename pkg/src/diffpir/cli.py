"""Command-line front end: synthesize degradations, restore, and sweep.

Subcommands
-----------
degrade   write a measurement (PNG + raw .npy sidecar), the kernel/mask used,
          and a JSON provenance record
restore   run a sampler against a measurement and write the output + report
bench     run a (steps | t_start | lambda | zeta) sweep and emit CSV rows

Flag values override config-file values, which override preset values, which
override the built-in defaults. Config files are flat ``key = value`` text
(JSON objects are also accepted, so an emitted provenance record replays a
run verbatim). The environment variable ``DIFFPIR_BRIDGE`` overrides the
endpoint of an ``extern:`` denoiser.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np

from . import degrade, imgcore, toys
from .degrade import DegradationModel
from .denoise import (
    CountingDenoiser,
    ExternalDenoiser,
    GaussianDenoiser,
    GaussianPrior,
    GmmDenoiser,
)
from .errors import DiffpirError, InvalidConfig
from .sample import SamplerConfig, dump_trajectory, run_diffpir, run_dps
from .schedule import build_linear_schedule, quadratic_subsequence

__all__ = ["RunConfig", "PRESETS", "cmd_degrade", "cmd_restore", "cmd_bench", "main"]

TASKS = ("deblur-gauss", "deblur-motion", "inpaint-box", "inpaint-random", "sr")


@dataclass
class RunConfig:
    """Resolved settings for one command invocation."""

    task: str = "deblur-gauss"
    sampler: str = "diffpir"
    steps: int = 100
    t_start: Optional[int] = None
    lambda_: float = 7.0
    zeta: float = 0.3
    eta: float = 0.0
    sigma_n: float = 0.05
    seed: int = 0
    denoiser: str = "oracle"
    kernel: Optional[str] = None
    mask: Optional[str] = None
    sf: int = 4
    input: Optional[str] = None
    gt: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    dump_trajectory: Optional[str] = None
    metrics: bool = True
    n_train: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kernel_size: int = 61
    kernel_std: float = 3.0
    motion_intensity: float = 0.5
    box_size: int = 128
    drop_ratio: float = 0.5
    sr_solver: str = "closed"
    workers: int = 1
    toy_task: str = "sr"
    sweep_steps: Optional[str] = None
    sweep_t_start: Optional[str] = None
    sweep_lambda: Optional[str] = None
    sweep_zeta: Optional[str] = None


# lambda/zeta presets per task, dataset, noise level, and NFE budget; the
# values bind sensibly only with a pretrained external denoiser attached
PRESETS: dict[str, dict] = {}


def _add_presets():
    table = {
        ("ffhq", 0.05, 20): {"deblur-gauss": (8.0, 0.5), "deblur-motion": (7.0, 0.8), "sr": (8.0, 0.4)},
        ("imagenet", 0.05, 20): {"deblur-gauss": (12.0, 0.9), "deblur-motion": (7.0, 1.0), "sr": (10.0, 0.5)},
        ("ffhq", 0.0, 20): {"inpaint-box": (6.0, 1.0), "inpaint-random": (3.0, 1.0),
                            "deblur-gauss": (15.0, 0.5), "deblur-motion": (25.0, 1.0), "sr": (9.0, 0.2)},
        ("ffhq", 0.05, 100): {"deblur-gauss": (7.0, 0.3), "deblur-motion": (7.0, 0.4), "sr": (8.0, 0.2)},
        ("imagenet", 0.05, 100): {"deblur-gauss": (8.0, 0.3), "deblur-motion": (8.0, 0.7), "sr": (9.0, 0.5)},
        ("ffhq", 0.0, 100): {"inpaint-box": (6.0, 0.5), "inpaint-random": (7.0, 1.0),
                             "deblur-gauss": (12.0, 0.4), "deblur-motion": (7.0, 0.9), "sr": (6.0, 0.3)},
    }
    for (dataset, sigma, nfe), tasks in table.items():
        noise = "noisy" if sigma > 0 else "noiseless"
        for task, (lam, zeta) in tasks.items():
            PRESETS[f"{dataset}-{noise}-{task}-{nfe}"] = {
                "task": task, "steps": nfe, "lambda_": lam, "zeta": zeta, "sigma_n": sigma,
            }


_add_presets()

_FIELD_NAMES = {f.name for f in fields(RunConfig)}
_ALIASES = {"lambda": "lambda_", "in": "input"}


def _coerce(name: str, value):
    if isinstance(value, str):
        if value.lower() in ("none", ""):
            return None
        try:
            value = json.loads(value)
        except (json.JSONDecodeError, ValueError):
            pass
    return value


def load_config_file(path) -> dict:
    """Parse a flat key=value config file (JSON objects also accepted).

    A JSON object carrying a dict under a ``config`` key (the shape of every
    emitted provenance record) is unwrapped, so reports and degradation
    records replay directly via --config.
    """
    text = Path(path).read_text()
    stripped = text.lstrip()
    out = {}
    if stripped.startswith("{"):
        raw = json.loads(text)
        if isinstance(raw.get("config"), dict):
            raw = raw["config"]
    else:
        raw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidConfig(f"bad config line {line!r}; expected key = value")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    for key, value in raw.items():
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in _FIELD_NAMES:
            raise InvalidConfig(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(cli_args: dict, preset: Optional[str] = None,
                   config_path: Optional[str] = None) -> RunConfig:
    merged: dict = {}
    if preset:
        if preset not in PRESETS:
            raise InvalidConfig(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    if config_path:
        merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in cli_args.items() if k in _FIELD_NAMES})
    cfg = RunConfig(**merged)
    if cfg.task not in TASKS:
        raise InvalidConfig(f"unknown task {cfg.task!r}; expected one of {TASKS}")
    return cfg


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _build_model(cfg: RunConfig, shape: tuple[int, int],
                 rng: np.random.Generator) -> DegradationModel:
    h, w = shape
    if cfg.task == "deblur-gauss":
        k = imgcore.load_kernel(cfg.kernel) if cfg.kernel else degrade.gaussian_kernel(
            cfg.kernel_size, cfg.kernel_std)
        return DegradationModel.blur(k, sigma_n=cfg.sigma_n)
    if cfg.task == "deblur-motion":
        k = imgcore.load_kernel(cfg.kernel) if cfg.kernel else degrade.motion_kernel(
            cfg.kernel_size, cfg.motion_intensity, rng)
        return DegradationModel.blur(k, sigma_n=cfg.sigma_n)
    if cfg.task == "inpaint-box":
        m = degrade.load_mask_png(cfg.mask) if cfg.mask else degrade.make_box_mask(
            h, w, cfg.box_size, cfg.box_size)
        return DegradationModel.inpaint(m, sigma_n=cfg.sigma_n)
    if cfg.task == "inpaint-random":
        m = degrade.load_mask_png(cfg.mask) if cfg.mask else degrade.make_random_mask(
            h, w, cfg.drop_ratio, rng)
        return DegradationModel.inpaint(m, sigma_n=cfg.sigma_n)
    kernel = imgcore.load_kernel(cfg.kernel) if cfg.kernel else None
    return DegradationModel.downsample(cfg.sf, kernel=kernel, sigma_n=cfg.sigma_n)


def _build_denoiser(cfg: RunConfig, gt: Optional[np.ndarray]):
    sel = cfg.denoiser
    if sel == "gaussian":
        return GaussianDenoiser(GaussianPrior(mean=0.5, var=0.04))
    if sel == "gmm":
        return _scalar_gmm()
    if sel == "oracle":
        if gt is None:
            raise InvalidConfig("the oracle denoiser requires --gt")
        from .denoise import oracle_denoiser

        return oracle_denoiser(gt)
    if sel.startswith("extern"):
        endpoint = os.environ.get("DIFFPIR_BRIDGE")
        if not endpoint and ":" in sel:
            endpoint = sel.split(":", 1)[1]
        if not endpoint:
            raise InvalidConfig("extern denoiser needs extern:<endpoint> or DIFFPIR_BRIDGE")
        return ExternalDenoiser(endpoint=endpoint)
    raise InvalidConfig(f"unknown denoiser {sel!r}")


def _scalar_gmm():
    from .denoise import GmmPrior

    return GmmDenoiser(GmmPrior(weights=(1 / 3, 1 / 3, 1 / 3),
                                means=(0.25, 0.5, 0.75),
                                variances=(0.02, 0.02, 0.02)))


def _load_measurement(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        return imgcore.as_image(arr)
    return imgcore.load_png(path)


def _provenance(cfg: RunConfig) -> dict:
    data = asdict(cfg)
    return {k: v for k, v in data.items() if v is not None}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_degrade(cfg: RunConfig) -> int:
    """Synthesize a measurement and write it with full provenance."""
    if not cfg.input or not cfg.out:
        raise InvalidConfig("degrade requires --in and --out")
    x = imgcore.load_png(cfg.input)
    rng = np.random.default_rng(cfg.seed)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = _build_model(cfg, x.shape[1:], rng)
    y = degrade.apply(model, x, rng)

    files = {"measurement_png": "y.png", "measurement_raw": "y.npy"}
    imgcore.save_png(np.clip(y, 0.0, 1.0), out_dir / "y.png")
    np.save(out_dir / "y.npy", y)
    if model.kernel is not None:
        imgcore.save_kernel(model.kernel, out_dir / "kernel.k2d")
        files["kernel"] = "kernel.k2d"
    if model.mask is not None:
        degrade.save_mask_png(model.mask, out_dir / "mask.png")
        files["mask"] = "mask.png"
    record = {
        "config": _provenance(cfg),
        "files": files,
        "measurement_shape": list(y.shape),
    }
    (out_dir / "degrade.json").write_text(json.dumps(record, indent=2))
    print(f"wrote measurement to {out_dir}")
    return 0


def cmd_restore(cfg: RunConfig) -> int:
    """Run the selected sampler and write the restored image plus a report."""
    if not cfg.input or not cfg.out:
        raise InvalidConfig("restore requires --in and --out")
    y = _load_measurement(cfg.input)
    gt = imgcore.load_png(cfg.gt) if cfg.gt else None
    rng = np.random.default_rng(cfg.seed)
    model = _build_model(cfg, _hr_shape(cfg, y), rng)
    denoiser = CountingDenoiser(_build_denoiser(cfg, gt))
    s = build_linear_schedule(cfg.n_train, cfg.beta_start, cfg.beta_end)
    t_start = cfg.t_start or s.n_train
    want_traj = bool(cfg.report or cfg.dump_trajectory)
    scfg = SamplerConfig(lambda_=cfg.lambda_, zeta=cfg.zeta, eta=cfg.eta,
                         steps=cfg.steps, t_start=t_start, seed=cfg.seed,
                         sampler=cfg.sampler, sr_solver=cfg.sr_solver,
                         record_trajectory=want_traj)

    started = time.perf_counter()
    if cfg.sampler == "diffpir":
        plan = quadratic_subsequence(s.n_train, min(cfg.steps, t_start), t_start)
        out, traj = run_diffpir(y, model, denoiser, s, plan, scfg, rng)
    elif cfg.sampler in ("dps-yt", "dps-y0"):
        out, traj = run_dps(y, model, denoiser, s, scfg, rng,
                            variant=cfg.sampler.split("-")[1])
    else:
        raise InvalidConfig(f"unknown sampler {cfg.sampler!r}")
    elapsed = time.perf_counter() - started

    out_path = Path(cfg.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    imgcore.save_png(np.clip(out, 0.0, 1.0), out_path)

    report = {
        "config": _provenance(cfg),
        "nfe": denoiser.calls,
        "seconds": elapsed,
        "residuals": [r.residual for r in traj.records],
    }
    if gt is not None and cfg.metrics:
        # measure what was actually written: the 8-bit quantized output
        quantized = np.rint(np.clip(out, 0.0, 1.0) * 255.0) / 255.0
        value = imgcore.psnr(quantized, gt)
        report["psnr"] = "Infinite" if math.isinf(value) else value
    if cfg.dump_trajectory:
        manifest = dump_trajectory(traj, cfg.dump_trajectory, y, model)
        report["trajectory_manifest"] = str(manifest)
    if cfg.report:
        Path(cfg.report).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.report).write_text(json.dumps(report, indent=2))

    print(f"{'output':>12}  {out_path}")
    print(f"{'NFE':>12}  {denoiser.calls}")
    print(f"{'seconds':>12}  {elapsed:.3f}")
    if "psnr" in report:
        print(f"{'PSNR':>12}  {report['psnr']}")
    return 0


def _hr_shape(cfg: RunConfig, y: np.ndarray) -> tuple[int, int]:
    if cfg.task == "sr":
        return (y.shape[1] * cfg.sf, y.shape[2] * cfg.sf)
    return y.shape[1:]


def _parse_sweep(text: Optional[str], fallback) -> list:
    if text is None:
        return [fallback]
    items = [part.strip() for part in text.split(",")]
    return [json.loads(part) for part in items if part]


def _run_image_cell(cfg: RunConfig, steps, t_start, lam, zeta) -> dict:
    """One sweep cell on a provided measurement instead of the toy."""
    y = _load_measurement(cfg.input)
    gt = imgcore.load_png(cfg.gt) if cfg.gt else None
    rng = np.random.default_rng(cfg.seed)
    model = _build_model(cfg, _hr_shape(cfg, y), rng)
    denoiser = _build_denoiser(cfg, gt)
    s = build_linear_schedule(cfg.n_train, cfg.beta_start, cfg.beta_end)
    t_start = t_start or s.n_train
    plan = quadratic_subsequence(s.n_train, min(steps, t_start), t_start)
    scfg = SamplerConfig(lambda_=lam, zeta=zeta, steps=steps, t_start=t_start,
                         seed=cfg.seed, sr_solver=cfg.sr_solver)
    started = time.perf_counter()
    out, traj = run_diffpir(y, model, denoiser, s, plan, scfg, rng)
    elapsed = time.perf_counter() - started
    quantized = np.rint(np.clip(out, 0.0, 1.0) * 255.0) / 255.0
    residual = float(np.linalg.norm(y - degrade.apply_forward(model, out)))
    row = {"residual": residual, "seconds": elapsed, "nfe": traj.nfe}
    if gt is not None:
        row["psnr"] = imgcore.psnr(quantized, gt)
        row["error"] = float(np.linalg.norm(quantized - gt))
    if hasattr(denoiser, "close"):
        denoiser.close()
    return row


def cmd_bench(cfg: RunConfig) -> int:
    """Run the sweep cross product on the toy or a provided measurement; emit CSV."""
    if not cfg.out:
        raise InvalidConfig("bench requires --out for the CSV file")
    steps_list = _parse_sweep(cfg.sweep_steps, cfg.steps)
    tstart_list = _parse_sweep(cfg.sweep_t_start, cfg.t_start or cfg.n_train)
    lambda_list = _parse_sweep(cfg.sweep_lambda, cfg.lambda_)
    zeta_list = _parse_sweep(cfg.sweep_zeta, cfg.zeta)
    cells = list(product(steps_list, tstart_list, lambda_list, zeta_list))

    def run_cell(cell):
        steps, t_start, lam, zeta = cell
        try:
            if cfg.input:
                metrics = _run_image_cell(cfg, steps, t_start, lam, zeta)
            else:
                metrics = toys.run_toy_sweep_cell(cfg.toy_task, steps, lam, zeta, cfg.seed,
                                                  t_start=t_start, sigma_n=cfg.sigma_n)
            return (cell, metrics, "ok")
        except Exception as exc:  # partial failures keep the sweep going
            return (cell, {}, f"error: {exc}")

    rows = []
    if cells:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max(cfg.workers, 1)) as pool:
            rows = list(pool.map(run_cell, cells))

    out_path = Path(cfg.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["steps", "t_start", "lambda", "zeta", "psnr",
                         "error", "residual", "seconds", "status"])
        for (steps, t_start, lam, zeta), metrics, status in rows:
            writer.writerow([steps, t_start, lam, zeta,
                             metrics.get("psnr", ""), metrics.get("error", ""),
                             metrics.get("residual", ""), metrics.get("seconds", ""),
                             status])
    provenance = out_path.with_suffix(out_path.suffix + ".provenance.json")
    provenance.write_text(json.dumps({"config": _provenance(cfg)}, indent=2))
    n_ok = sum(1 for _, _, status in rows if status == "ok")
    print(f"wrote {len(rows)} rows ({n_ok} ok) to {out_path}")
    return 0 if n_ok == len(rows) else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--task", choices=TASKS, default=S)
    p.add_argument("--sampler", choices=("diffpir", "dps-yt", "dps-y0"), default=S)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--t-start", dest="t_start", type=int, default=S)
    p.add_argument("--lambda", dest="lambda_", type=float, default=S)
    p.add_argument("--zeta", type=float, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--sigma-n", dest="sigma_n", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--denoiser", default=S, help="gaussian | gmm | oracle | extern:<endpoint>")
    p.add_argument("--kernel", default=S, help="kernel file (K2D1 or PNG)")
    p.add_argument("--mask", default=S, help="mask PNG (0 = dropped, 255 = kept)")
    p.add_argument("--sf", type=int, default=S)
    p.add_argument("--in", dest="input", default=S)
    p.add_argument("--gt", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--report", default=S)
    p.add_argument("--dump-trajectory", dest="dump_trajectory", default=S)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, help=f"one of: {', '.join(sorted(PRESETS))}")
    p.add_argument("--n-train", dest="n_train", type=int, default=S)
    p.add_argument("--beta-start", dest="beta_start", type=float, default=S)
    p.add_argument("--beta-end", dest="beta_end", type=float, default=S)
    p.add_argument("--kernel-size", dest="kernel_size", type=int, default=S)
    p.add_argument("--kernel-std", dest="kernel_std", type=float, default=S)
    p.add_argument("--motion-intensity", dest="motion_intensity", type=float, default=S)
    p.add_argument("--box-size", dest="box_size", type=int, default=S)
    p.add_argument("--drop-ratio", dest="drop_ratio", type=float, default=S)
    p.add_argument("--sr-solver", dest="sr_solver", choices=("closed", "ibp", "gradient"), default=S)
    p.add_argument("--no-metrics", dest="metrics", action="store_false", default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffpir",
                                     description="Plug-and-play diffusion image restoration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("degrade", "synthesize a measurement"),
                      ("restore", "restore a measurement"),
                      ("bench", "run a hyperparameter sweep on the toy problem")):
        p = sub.add_parser(name, help=doc)
        _add_common_flags(p)
        if name == "bench":
            p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
            p.add_argument("--toy-task", dest="toy_task", choices=("sr", "deblur"),
                           default=argparse.SUPPRESS)
            p.add_argument("--sweep-steps", dest="sweep_steps", default=argparse.SUPPRESS)
            p.add_argument("--sweep-t-start", dest="sweep_t_start", default=argparse.SUPPRESS)
            p.add_argument("--sweep-lambda", dest="sweep_lambda", default=argparse.SUPPRESS)
            p.add_argument("--sweep-zeta", dest="sweep_zeta", default=argparse.SUPPRESS)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    args = vars(ns)
    command = args.pop("command")
    preset = args.pop("preset", None)
    config_path = args.pop("config", None)
    try:
        cfg = resolve_config(args, preset=preset, config_path=config_path)
        handler = {"degrade": cmd_degrade, "restore": cmd_restore, "bench": cmd_bench}[command]
        return handler(cfg)
    except DiffpirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
