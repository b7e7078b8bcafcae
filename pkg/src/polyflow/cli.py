"""Command line front end for the full pipeline.

Verbs:
    round   canonicalize + round a model, emit the transform chain
    sample  MCMC draws from the target on the rounded polytope
    train   fit a flow to those draws, emit a checkpoint
    eval    score a checkpoint: importance metrics, sample/grid CSVs
    run     all of the above in one go

Every run is driven by one JSON config and one root seed; per-stage RNGs
are derived substreams so stages stay reproducible independently of each
other. Stage failures abort with a message tagged by the stage name.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from .balltransform import BallMapConfig, to_ball
from .flows import BaseDist, TrainConfig, TrainedFlow, parse_divergence, train_flow
from .mcmc import run_chains, write_diagnostics_json, write_samples_csv
from .metrics import (
    estimate_volume,
    estimate_Z,
    flow_metrics,
    write_density_grid_csv,
    write_metrics_json,
)
from .nets import VectorFieldNet
from .polytope import canonicalize, enumerate_vertices, load_model
from .rounding import TransformChain, chebyshev_center, round_polytope
from .simplexcoords import (LAMBDA_FLOOR, fit_projection, helmert_basis, ilr,
                            mec, to_zt)
from .targets import (
    box_mixture_2d,
    build_example_model,
    cube_mixture,
    cube_polytope,
    rounded_mixture,
)

__all__ = [
    "ExperimentConfig", "ModelConfig", "TargetConfig", "McmcConfig",
    "EvalConfig", "StageError", "run_experiment", "load_config", "main",
]

STAGES = ("round", "sample", "train", "eval")

# how many facet subsets vertex enumeration may visit before we call the
# ait chart infeasible for this model
MAX_VERTEX_COMBOS = 200_000
# hull-adjacent draws get barycentric weights too small for the log-ratio
# chart; anything below this keeps |log lam| modest so the chart's
# standardization is not dominated by a handful of boundary outliers
AIT_WEIGHT_MIN = 1e-26


class StageError(RuntimeError):
    """Pipeline failure, tagged with the stage that raised it."""


def _from_dict(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown keys in {where}: {unknown}")
    return cls(**data)


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "example"  # example | cube | file
    dim: int = 20
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("example", "cube", "file"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("model kind 'file' needs a path")


@dataclass(frozen=True)
class TargetConfig:
    kind: str = "rounded_mixture"  # rounded_mixture | cube_mixture | box_mixture | uniform
    scale: float = 1.015
    var: float = 0.05
    offset: float = 0.5
    axes: tuple | None = None  # mixture axis names for rounded_mixture
    signs: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("rounded_mixture", "cube_mixture", "box_mixture",
                             "uniform"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.axes is not None:
            object.__setattr__(self, "axes", tuple(self.axes))
        if self.signs is not None:
            object.__setattr__(self, "signs", tuple(self.signs))


@dataclass(frozen=True)
class McmcConfig:
    n_samples: int = 4096  # per chain, after thinning
    n_chains: int = 8
    burn_in: int = 1000
    thin: int = 15
    n_proposals: int = 3
    kernel: str = "peskun"
    chunk: int = 4096


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 4096
    volume_draws: int = 125_000
    grid_size: int = 60
    divergence: str = "exact"
    z_mode: str = "auto"  # auto | rejection | self

    def __post_init__(self):
        parse_divergence(self.divergence)
        if self.z_mode not in ("auto", "rejection", "self"):
            raise ValueError(f"unknown z_mode {self.z_mode!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    manifold: str = "ball"  # euclid | ball | ait
    model: ModelConfig = field(default_factory=ModelConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.manifold not in ("euclid", "ball", "ait"):
            raise ValueError(f"unknown manifold {self.manifold!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        parts = {}
        for key, sub in (("model", ModelConfig), ("target", TargetConfig),
                         ("mcmc", McmcConfig), ("eval", EvalConfig)):
            if key in data:
                parts[key] = _from_dict(sub, data.pop(key), key)
        if "train" in data:
            tr = dict(data.pop("train"))
            if "hidden" in tr:
                tr["hidden"] = tuple(int(h) for h in tr["hidden"])
            parts["train"] = _from_dict(TrainConfig, tr, "train")
        cfg = _from_dict(cls, data, "config")
        return replace(cfg, **parts)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def substream_seed(root_seed: int, label: str) -> int:
    """Named, stable child seed of the manifest seed."""
    key = zlib.crc32(label.encode("ascii"))
    return int(np.random.SeedSequence([root_seed, key]).generate_state(1)[0])


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(f"stage '{name}' failed: {exc}") from exc


def build_base_polytope(model: ModelConfig):
    if model.kind == "example":
        return canonicalize(build_example_model())
    if model.kind == "cube":
        return cube_polytope(model.dim)
    return canonicalize(load_model(model.path))


def build_target(target: TargetConfig, john):
    """Target density on the rounded polytope, or None for uniform."""
    if target.kind == "uniform":
        return None
    if target.kind == "rounded_mixture":
        kwargs = {}
        if target.axes is not None:
            kwargs["axes"] = target.axes
        if target.signs is not None:
            kwargs["signs"] = target.signs
        return rounded_mixture(john.names, target.scale, target.var, **kwargs)
    if target.kind == "cube_mixture":
        return cube_mixture(john.dim, target.scale, target.var)
    return box_mixture_2d(target.offset, target.var)


def _target_logpdf(mog):
    if mog is None:
        return lambda v: np.zeros(len(np.atleast_2d(v)))
    return mog.logpdf


def _stage_round(config: ExperimentConfig) -> TransformChain:
    H0 = build_base_polytope(config.model)
    return round_polytope(H0)


def _stage_sample(config: ExperimentConfig, chain: TransformChain):
    john = chain.john
    mog = build_target(config.target, john)
    mc = config.mcmc
    samples, diag = run_chains(
        john, _target_logpdf(mog), mc.n_samples, M=mc.n_proposals,
        n_chains=mc.n_chains, burn_in=mc.burn_in, thin=mc.thin,
        kernel=mc.kernel, seed=substream_seed(config.seed, "mcmc"),
        chunk=mc.chunk)
    return samples.reshape(-1, john.dim), diag


def _fit_ait_chart(john, train_v):
    """Vertex chart for the chart-space flow: returns the chart pieces and
    the training points it can represent (the hull-adjacent sliver whose
    weights underflow the log-ratio transform is dropped)."""
    n_combos = math.comb(john.nrows, john.dim)
    if n_combos > MAX_VERTEX_COMBOS:
        raise ValueError(
            f"vertex enumeration would visit {n_combos} facet subsets; "
            "the ait chart is only practical for small models")
    vmat = enumerate_vertices(john)
    basis = helmert_basis(vmat.nverts)
    lam = mec(train_v, vmat, min_weight=0.0)
    keep = lam.min(axis=1) >= AIT_WEIGHT_MIN
    z = ilr(lam[keep], basis)
    proj = fit_projection(z, k=john.dim)
    return vmat, basis, proj, train_v[keep]


def _stage_train(config: ExperimentConfig, chain: TransformChain, train_v):
    john = chain.john
    dim = john.dim
    tc = replace(config.train, seed=substream_seed(config.seed, "train"))
    dtype = np.float32 if tc.dtype == "float32" else np.float64
    net = VectorFieldNet(dim, hidden=tc.hidden,
                         seed=substream_seed(config.seed, "net"), dtype=dtype)
    base_pool = None
    if config.manifold == "euclid":
        # the euclidean flow transports the uniform distribution on the
        # polytope itself; rejection draws double as the training pool
        rng_base = np.random.default_rng(substream_seed(config.seed, "base"))
        vol, _, base_pool = estimate_volume(
            john, config.eval.volume_draws, rng_base, return_samples=True)
        flow = TrainedFlow("euclid", net,
                           BaseDist("uniform_polytope", dim, H=john,
                                    log_volume=float(np.log(vol))),
                           step_size=tc.step_size, H=john)
        h_train = train_v
    elif config.manifold == "ball":
        cfg_ball = BallMapConfig()
        flow = TrainedFlow("ball", net, BaseDist("uniform_ball", dim),
                           step_size=tc.step_size, H=john, ball_cfg=cfg_ball)
        h_train = to_ball(train_v, john, cfg_ball)
    else:
        vmat, basis, proj, train_v = _fit_ait_chart(john, train_v)
        flow = TrainedFlow("ait", net, BaseDist("normal", dim),
                           step_size=tc.step_size, vmat=vmat, basis=basis,
                           proj=proj)
        h_train = to_zt(train_v, vmat, basis, proj, min_weight=LAMBDA_FLOOR)
    losses = train_flow(net, h_train, flow.base, tc, base_pool=base_pool)
    return flow, losses


def _stage_eval(config: ExperimentConfig, chain: TransformChain,
                flow: TrainedFlow):
    john = chain.john
    mog = build_target(config.target, john)
    rng = np.random.default_rng(substream_seed(config.seed, "eval"))
    v = flow.sample(config.eval.n_samples, rng=rng)
    logq = flow.log_density(v, divergence=config.eval.divergence, rng=rng)
    logp = _target_logpdf(mog)(v)

    extra = {"name": config.name, "manifold": config.manifold}
    use_rejection = (config.eval.z_mode == "rejection"
                     or (config.eval.z_mode == "auto" and john.dim <= 8))
    if use_rejection:
        rng_vol = np.random.default_rng(substream_seed(config.seed, "volume"))
        vol, vol_err, pts = estimate_volume(
            john, config.eval.volume_draws, rng_vol, return_samples=True)
        extra["volume"] = vol
        extra["volume_stderr"] = vol_err
        extra["z_rejection"] = estimate_Z(_target_logpdf(mog), john, vol, pts)
    report = flow_metrics(v, logq, logp, H=john, seed=config.seed)
    return v, report, extra


def run_experiment(config: ExperimentConfig, outdir,
                   stages=STAGES) -> dict:
    """Execute the requested stages, reading earlier artifacts from outdir
    when a stage is skipped. Returns a dict of in-memory results."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    out: dict = {"outdir": outdir}

    if "round" in stages:
        chain = _stage("round", _stage_round, config)
        chain.save(outdir / "transform_chain.json")
    else:
        chain = _stage("round", TransformChain.load,
                       outdir / "transform_chain.json")
    out["chain"] = chain
    _, radius = chebyshev_center(chain.john)
    out["inscribed_radius"] = radius

    train_v = None
    if "sample" in stages:
        train_v, diag = _stage("sample", _stage_sample, config, chain)
        write_diagnostics_json(outdir / "chain_diagnostics.json", diag,
                               names=list(chain.john.names))
        if "train" not in stages:
            write_samples_csv(outdir / "samples.csv", train_v,
                              list(chain.john.names))
        out["train_samples"] = train_v
        out["diagnostics"] = diag

    if "train" in stages:
        if train_v is None:
            raise StageError("stage 'train' failed: no MCMC samples; "
                             "run the sample stage first")
        flow, losses = _stage("train", _stage_train, config, chain, train_v)
        flow.save(outdir / "flow_checkpoint.json")
        out["flow"] = flow
        out["losses"] = losses
    elif "eval" in stages:
        flow = _stage("train", TrainedFlow.load,
                      outdir / "flow_checkpoint.json")
        out["flow"] = flow

    if "eval" in stages:
        v, report, extra = _stage("eval", _stage_eval, config, chain, flow)
        write_samples_csv(outdir / "samples.csv", v, list(chain.john.names))
        write_metrics_json(outdir / "metrics.json", report, extra=extra)
        write_density_grid_csv(outdir / "density_grid.csv", v,
                               list(chain.john.names),
                               gridsize=config.eval.grid_size)
        out["samples"] = v
        out["metrics"] = report
        out["metrics_extra"] = extra

    manifest = {
        "name": config.name,
        "seed": config.seed,
        "substreams": {label: substream_seed(config.seed, label)
                       for label in ("mcmc", "net", "base", "train", "eval",
                                     "volume")},
        "stages": list(stages),
        "config": config.to_dict(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": round(time.time() - t0, 3),
    }
    if "losses" in out and len(out["losses"]):
        manifest["final_loss"] = float(out["losses"][-1])
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    out["manifest"] = manifest
    return out


def _config_from_args(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = ExperimentConfig()
    if getattr(args, "model", None):
        config = replace(config, model=ModelConfig(kind="file",
                                                   path=args.model))
    overrides = {}
    for name in ("name", "seed", "manifold"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if overrides:
        config = replace(config, **overrides)

    train_over = {k: getattr(args, k) for k in
                  ("epochs", "lr", "batch_size", "step_size", "divergence")
                  if getattr(args, k, None) is not None}
    if train_over:
        config = replace(config, train=replace(config.train, **train_over))
    mcmc_over = {}
    if getattr(args, "mcmc_samples", None) is not None:
        mcmc_over["n_samples"] = args.mcmc_samples
    for k in ("n_chains", "burn_in", "thin", "n_proposals", "kernel"):
        if getattr(args, k, None) is not None:
            mcmc_over[k] = getattr(args, k)
    if mcmc_over:
        config = replace(config, mcmc=replace(config.mcmc, **mcmc_over))
    if getattr(args, "eval_samples", None) is not None:
        config = replace(config,
                         eval=replace(config.eval,
                                      n_samples=args.eval_samples))
    return config


def _add_common(p):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--name", help="experiment name override")
    p.add_argument("--seed", type=int, help="root seed override")


def _add_train_flags(p):
    p.add_argument("--manifold", choices=("euclid", "ball", "ait"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--divergence",
                   help="'exact' or 'hutchinson:N' probe count")


def _add_mcmc_flags(p):
    p.add_argument("--mcmc-samples", dest="mcmc_samples", type=int,
                   help="retained draws per chain")
    p.add_argument("--n-chains", dest="n_chains", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--n-proposals", dest="n_proposals", type=int)
    p.add_argument("--kernel", choices=("peskun", "barker"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="polyflow",
        description="density modeling on convex polytopes")
    sub = p.add_subparsers(dest="verb", required=True)

    pr = sub.add_parser("round", help="canonicalize and round a model")
    _add_common(pr)
    pr.add_argument("--model", help="model JSON (overrides config model)")

    ps = sub.add_parser("sample", help="MCMC draws on the rounded polytope")
    _add_common(ps)
    ps.add_argument("--model", help="model JSON (overrides config model)")
    _add_mcmc_flags(ps)

    pt = sub.add_parser("train", help="fit a flow to MCMC draws")
    _add_common(pt)
    pt.add_argument("--model", help="model JSON (overrides config model)")
    _add_train_flags(pt)
    _add_mcmc_flags(pt)

    pe = sub.add_parser("eval", help="score an existing checkpoint")
    _add_common(pe)
    pe.add_argument("--eval-samples", dest="eval_samples", type=int)
    pe.add_argument("--divergence")

    pa = sub.add_parser("run", help="round + sample + train + eval")
    _add_common(pa)
    pa.add_argument("--model", help="model JSON (overrides config model)")
    _add_train_flags(pa)
    _add_mcmc_flags(pa)
    pa.add_argument("--eval-samples", dest="eval_samples", type=int)
    return p


_VERB_STAGES = {
    "round": ("round",),
    "sample": ("round", "sample"),
    "train": ("round", "sample", "train"),
    "eval": ("eval",),
    "run": STAGES,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        out = run_experiment(config, args.out, stages=_VERB_STAGES[args.verb])
    except (StageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.verb == "round":
        john = out["chain"].john
        report = {
            "dim": john.dim,
            "names": list(john.names),
            "inscribed_radius": out["inscribed_radius"],
            "transform_chain": str(Path(args.out) / "transform_chain.json"),
        }
        print(json.dumps(report, indent=1))
    elif args.verb == "sample":
        diag = out["diagnostics"]
        print(json.dumps({"n_samples": int(len(out["train_samples"])),
                          "max_rhat": float(np.max(diag.rhat)),
                          "min_ess_pct": float(np.min(diag.ess_fraction))},
                         indent=1))
    elif args.verb == "train":
        print(json.dumps({"final_loss": float(out["losses"][-1]),
                          "checkpoint": str(Path(args.out) / "flow_checkpoint.json")},
                         indent=1))
    else:
        payload = out["metrics"].to_dict()
        payload.update(out["metrics_extra"])
        print(json.dumps(payload, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
