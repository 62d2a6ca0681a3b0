"""Command-line interface: ``scenemotion <command> [options]``.

Commands: gen, train, predict, eval, analyze, bench, plot. Every option that
mirrors a configuration field is spelled ``--section.field`` (for example
``--model.d_model 32``) and overrides the value from ``--config``.

Errors are reported on stderr as ``error[CODE]: message`` with a non-zero
exit status; see :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import __version__
from . import tensor as T
from .forecast import load_forecasts, save_forecasts
from .interaction import interaction_report
from .metrics import JOINT_METRICS, MARGINAL_METRICS, METRIC_NAMES, MetricError, eval_scenes, evaluate
from .model import CapacityError, ModelConfig, SceneMotion, load_model, save_model
from .scenario import ScenarioParseError, ScenarioValidationError, load_scenarios, save_scenarios
from .synthetic import ConfigurationError, GeneratorConfig, generate_synthetic
from .training import AdamW, TrainConfig, TrainingDivergedError, fit
from .views import ViewConfig

log = logging.getLogger("scenemotion")

EXIT_CODES = {
    "E_USAGE": 2,
    "E_INPUT": 3,
    "E_CONFIG": 4,
    "E_DIVERGED": 5,
    "E_CAPACITY": 6,
    "E_INTERNAL": 70,
}
# version of the CSV layouts written by the commands (loss.csv, metrics.csv,
# interaction.csv, clusters.csv, bench CSV); bumped whenever a column changes
CSV_SCHEMA_VERSION = 1


class CLIError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# -- run configuration ------------------------------------------------------
SECTIONS = {"model": ModelConfig, "train": TrainConfig, "generator": GeneratorConfig, "view": ViewConfig}


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    view: ViewConfig = field(default_factory=ViewConfig)

    def to_dict(self) -> dict:
        return {"seed": self.seed, **{name: asdict(getattr(self, name)) for name in SECTIONS}}


def _section(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise CLIError("E_CONFIG", f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise CLIError("E_CONFIG", f"{where}: {exc}") from exc


def config_from_dict(d: dict | None) -> RunConfig:
    d = dict(d or {})
    unknown = set(d) - {"seed", *SECTIONS}
    if unknown:
        raise CLIError("E_CONFIG", f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kw = {"seed": int(d.get("seed", 0))}
    for name, cls in SECTIONS.items():
        sec = d.get(name) or {}
        if not isinstance(sec, dict):
            raise CLIError("E_CONFIG", f"section {name!r} must be a mapping")
        kw[name] = _section(cls, sec, name)
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise CLIError("E_INPUT", f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise CLIError("E_CONFIG", f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise CLIError("E_CONFIG", f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _add_config_flags(p: argparse.ArgumentParser, sections) -> None:
    for name in sections:
        g = p.add_argument_group(f"{name} settings")
        for f in fields(SECTIONS[name]):
            default = f.default
            kind = {bool: _parse_bool, int: int, float: float}.get(type(default), str)
            g.add_argument(f"--{name}.{f.name}", dest=f"cfg__{name}__{f.name}", type=kind, default=None,
                           metavar=type(default).__name__.upper(), help=f"(default {default})")


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None)).to_dict()
    for key, val in vars(args).items():
        if key.startswith("cfg__") and val is not None:
            _, sec, name = key.split("__", 2)
            cfg[sec][name] = val
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    # the top-level seed drives model init and data shuffling
    cfg["model"]["seed"] = cfg["train"]["seed"] = cfg["seed"]
    return config_from_dict(cfg)


# -- helpers ---------------------------------------------------------------------
def _scenarios(path):
    if not os.path.exists(path):
        raise CLIError("E_INPUT", f"data file not found: {path}")
    try:
        return load_scenarios(path)
    except (ScenarioParseError, ScenarioValidationError) as exc:
        raise CLIError("E_INPUT", str(exc)) from exc


def _write(path, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise CLIError("E_INPUT", f"checkpoint not found: {path}")
    try:
        return load_model(path)
    except (T.CheckpointError, KeyError, ValueError) as exc:
        raise CLIError("E_INPUT", f"{path}: {exc}") from exc


def _forecasts(args, scenarios, view_cfg=None):
    if getattr(args, "forecasts", None):
        if not os.path.exists(args.forecasts):
            raise CLIError("E_INPUT", f"forecast file not found: {args.forecasts}")
        try:
            return load_forecasts(args.forecasts)
        except ValueError as exc:
            raise CLIError("E_INPUT", str(exc)) from exc
    if getattr(args, "checkpoint", None):
        model, _, _ = _load_checkpoint(args.checkpoint)
        return model.predict(scenarios, view_cfg)
    raise CLIError("E_USAGE", "need --checkpoint or --forecasts")


def loss_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "stage", "loss", "lr"])
    for epoch, stage, loss, lr in curve:
        w.writerow([epoch, stage, repr(float(loss)), repr(float(lr))])
    return buf.getvalue()


def _read_curve(path):
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), r["stage"], float(r["loss"]), float(r["lr"])) for r in rows]


# -- commands ----------------------------------------------------------------------
def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    if args.scenes < 1:
        raise CLIError("E_USAGE", "--scenes must be >= 1")
    try:
        scenes = generate_synthetic(cfg.seed, args.scenes, cfg.generator)
    except ConfigurationError as exc:
        raise CLIError("E_CONFIG", str(exc)) from exc
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_scenarios(args.out, scenes)
    n_agents = sum(len(s.agents) for s in scenes)
    print(f"wrote {len(scenes)} scenes, {n_agents} agents to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    stage = {"joint": "joint", "marginal": "marginal_finetune"}[args.stage]
    scenarios = _scenarios(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "model.ckpt")
    curve_path = os.path.join(args.out_dir, "loss.csv")
    curve, start_epoch, opt_state = [], 0, {}
    if args.resume:
        model, extra, meta = _load_checkpoint(ckpt_path)
        curve = _read_curve(curve_path)
        start_epoch = int(meta.get("next_epoch", 0))
        opt_state = extra
        if meta.get("stage") != stage:
            raise CLIError("E_USAGE", f"checkpoint is from stage {meta.get('stage')!r}, not {stage!r}")
    elif stage == "marginal_finetune":
        if not args.init_checkpoint:
            raise CLIError("E_USAGE", "--stage marginal needs --init-checkpoint (joint-trained weights)")
        model, _, _ = _load_checkpoint(args.init_checkpoint)
    else:
        model = SceneMotion(cfg.model)
    total = cfg.train.epochs_joint if stage == "joint" else cfg.train.epochs_marginal_finetune
    remaining = total - start_epoch
    opt = AdamW(model.parameters(), weight_decay=cfg.train.weight_decay)
    opt.load_state(opt_state)
    _write(os.path.join(args.out_dir, "config.yaml"), dump_config(cfg))

    def save(result, next_epoch):
        save_model(ckpt_path, model, opt.state(), {"stage": stage, "next_epoch": next_epoch,
                                                   "train_config": asdict(cfg.train), "seed": cfg.seed})
        _write(curve_path, loss_csv(curve + result.curve))

    def on_epoch(epoch, result):
        if (epoch + 1) % cfg.train.checkpoint_every == 0:
            save(result, epoch + 1)
        return False

    result = None
    if remaining > 0:
        try:
            result = fit(scenarios, model, cfg.train, stage, epochs=remaining, start_epoch=start_epoch,
                         optimizer=opt, view_cfg=cfg.view, callback=on_epoch)
        except TrainingDivergedError as exc:
            raise CLIError("E_DIVERGED", str(exc)) from exc
        except CapacityError as exc:
            raise CLIError("E_CAPACITY", str(exc)) from exc
        save(result, start_epoch + len(result.curve))
    final = (curve + result.curve) if result else curve
    last = f"{final[-1][2]:.6f}" if final else "n/a"
    print(f"stage {stage}: epochs {start_epoch}..{total - 1}, final loss {last}, checkpoint {ckpt_path}")
    return 0


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    scenarios = _scenarios(args.data)
    model, _, _ = _load_checkpoint(args.checkpoint)
    try:
        forecasts = model.predict(scenarios, cfg.view)
    except CapacityError as exc:
        raise CLIError("E_CAPACITY", str(exc)) from exc
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_forecasts(args.out, forecasts)
    print(f"wrote {len(forecasts)} forecasts to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    scenarios = _scenarios(args.data)
    forecasts = _forecasts(args, scenarios, cfg.view)
    metrics = {"joint": JOINT_METRICS, "marginal": MARGINAL_METRICS, "all": METRIC_NAMES}[args.mode]
    try:
        report = evaluate(eval_scenes(forecasts, scenarios), metrics=metrics)
    except MetricError as exc:
        raise CLIError("E_INPUT", str(exc)) from exc
    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "metrics.csv"), report.to_csv())
    _write(os.path.join(args.out_dir, "metrics.txt"), report.to_text())
    sys.stdout.write(report.to_text())
    return 0


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    scenarios = _scenarios(args.data)
    forecasts = _forecasts(args, scenarios, cfg.view)
    report = interaction_report(forecasts, seed=cfg.seed, eps=args.eps, min_pts=args.min_pts)
    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "interaction.csv"), report.to_csv())
    _write(os.path.join(args.out_dir, "clusters.csv"), report.clusters_csv())
    _write(os.path.join(args.out_dir, "interaction.txt"), report.to_text())
    sys.stdout.write(report.to_text())
    return 0


def bench_scene(n_focal: int, seed: int, gen: GeneratorConfig):
    """A synthetic scene with ``n_focal`` focal agents (generated with spare agents)."""
    n = max(n_focal + n_focal // 2 + 2, gen.n_focal, gen.n_agents_min)
    cfg = dataclasses.replace(gen, n_agents_min=n, n_agents_max=n)
    for attempt in range(20):
        s = generate_synthetic(seed + attempt, 1, cfg)[0]
        ids = [a.agent_id for a in s.agents if a.valid[s.current_index]]
        if len(ids) >= n_focal:
            return dataclasses.replace(s, focal_ids=tuple(ids[:n_focal]))
    raise CLIError("E_CONFIG", f"could not build a scene with {n_focal} focal agents")


def data_bench_scene(scenarios, n_focal: int):
    """The data scene with the most agents present now, with its first ``n_focal`` of them as focal agents."""
    def present(s):
        return [a.agent_id for a in s.agents if a.valid[s.current_index]]

    best = max(scenarios, key=lambda s: len(present(s)))
    ids = present(best)
    if len(ids) < n_focal:
        raise CLIError("E_INPUT", f"no scene in the data has {n_focal} agents present (most: {len(ids)})")
    return dataclasses.replace(best, focal_ids=tuple(ids[:n_focal]))


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    try:
        n_list = [int(x) for x in args.n_focal.split(",") if x.strip()]
    except ValueError as exc:
        raise CLIError("E_USAGE", f"--n-focal: {exc}") from exc
    if not n_list or min(n_list) < 1 or args.iters < 1:
        raise CLIError("E_USAGE", "--n-focal needs positive integers and --iters >= 1")
    model = _load_checkpoint(args.checkpoint)[0] if args.checkpoint else SceneMotion(cfg.model)
    scenarios = _scenarios(args.data) if args.data else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_focal", "iters", "mean_s", "std_s"])
    for n in n_list:
        scene = data_bench_scene(scenarios, n) if scenarios else bench_scene(n, cfg.seed, cfg.generator)
        times = []
        for _ in range(args.iters):
            t0 = time.perf_counter()
            model.predict([scene], cfg.view)
            times.append(time.perf_counter() - t0)
        w.writerow([len(scene.focal_ids), args.iters, f"{np.mean(times):.6f}", f"{np.std(times):.6f}"])
    _write(args.out, buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_plot(args) -> int:
    from .plot import scene_svg

    scenarios = {s.scenario_id: s for s in _scenarios(args.data)}
    if args.scenario_id not in scenarios:
        raise CLIError("E_INPUT", f"scenario {args.scenario_id!r} not in {args.data}")
    scenario = scenarios[args.scenario_id]
    forecast = None
    if args.forecasts:
        found = [f for f in load_forecasts(args.forecasts) if f.scenario_id == args.scenario_id]
        forecast = found[0] if found else None
    _write(args.out, scene_svg(scenario, forecast, eps=args.eps))
    print(f"wrote {args.out}")
    return 0


# -- parser ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenemotion", description="Scene-wide motion forecasting toolkit.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version",
                   version=f"scenemotion {__version__} (CSV schema {CSV_SCHEMA_VERSION})")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help, sections=()):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None)
        _add_config_flags(sp, sections)
        sp.set_defaults(func=fn)
        return sp

    sp = command("gen", cmd_gen, "generate synthetic scenarios", ("generator",))
    sp.add_argument("--scenes", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = command("train", cmd_train, "train a model", ("model", "train", "view"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--stage", choices=("joint", "marginal"), default="joint")
    sp.add_argument("--init-checkpoint", help="joint-trained weights for --stage marginal")
    sp.add_argument("--resume", action="store_true", help="continue from OUT_DIR/model.ckpt")

    sp = command("predict", cmd_predict, "write forecasts for a scenario file", ("view",))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = command("eval", cmd_eval, "metric tables", ("view",))
    sp.add_argument("--checkpoint")
    sp.add_argument("--forecasts")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=("joint", "marginal", "all"), default="all")
    sp.add_argument("--out-dir", required=True)

    sp = command("analyze", cmd_analyze, "waypoint-cluster interaction report", ("view",))
    sp.add_argument("--checkpoint")
    sp.add_argument("--forecasts")
    sp.add_argument("--data", required=True)
    sp.add_argument("--eps", type=float, default=2.5)
    sp.add_argument("--min-pts", type=int, default=2)
    sp.add_argument("--out-dir", required=True)

    sp = command("bench", cmd_bench, "inference latency per focal-agent count", ("model", "generator", "view"))
    sp.add_argument("--checkpoint")
    sp.add_argument("--data", help="take the timed scene from this file instead of generating one")
    sp.add_argument("--n-focal", default="2,4,8")
    sp.add_argument("--iters", type=int, default=5)
    sp.add_argument("--out", required=True)

    sp = command("plot", cmd_plot, "static SVG of a scene and its forecast")
    sp.add_argument("--data", required=True)
    sp.add_argument("--scenario-id", required=True)
    sp.add_argument("--forecasts")
    sp.add_argument("--eps", type=float, default=2.5)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print("error[E_USAGE]: invalid command line", file=sys.stderr)
            return EXIT_CODES["E_USAGE"]
        return 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise CLIError("E_USAGE", "--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except CLIError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.code]
    except Exception as exc:  # pragma: no cover - last resort
        print(f"error[E_INTERNAL]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES["E_INTERNAL"]


if __name__ == "__main__":
    sys.exit(main())
