"""Command line surface.

Subcommands: match, eval, sweep-threshold, ablate, stats, partial-proto,
gen-synthetic, verify-grad. Common flags: --config PATH, --set KEY=VALUE
(repeatable, unknown keys rejected), --seed, --jobs, --out, --format.

Exit codes: 0 success, 1 usage or bad parameters, 2 file/format problems,
3 pipeline errors. SSP_LOG={error,warn,info,debug} controls stderr
logging. Artifacts echo the effective configuration and contain nothing
run-dependent (no timestamps, no worker counts), so identical invocations
produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from typing import Optional

from .episode import load_manifest, save_episodes
from .errors import (
    ConfigError,
    InvalidRatioError,
    SsmatchError,
    TensorFormatError,
)
from .harness import (
    ablation_table,
    bootstrap_lower_bound,
    evaluate,
    partial_prototype_experiment,
    report_to_json,
    similarity_stats,
    sweep_thresholds,
)
from .losses import gradient_check
from .metrics import IOU_THRESHOLD
from .pipeline import ABLATION_FULL, ABLATIONS, SspConfig, match_episode
from .sspt import write_tensor_file
from .synthetic import SyntheticSpec, generate_suite

log = logging.getLogger("ssmatch")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_PIPELINE = 3

# threshold region that keeps a good fg/bg balance on reference data;
# annotated in sweep outputs as guidance, not enforced
PLATEAU_REFERENCE = {"tau_fg": [0.7, 0.9], "tau_bg": [0.5, 0.7]}

DEFAULT_EPISODES = 200
DEFAULT_SHOTS = 1


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the taxonomy reserves 2 for
    format problems, so remap usage to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = {
        "error": logging.ERROR,
        "warn": logging.WARNING,
        "info": logging.INFO,
        "debug": logging.DEBUG,
    }.get(os.environ.get("SSP_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key] = _parse_set_value(raw)
    return out


class RunContext:
    """Effective configuration for one invocation."""

    def __init__(self, cfg: SspConfig, spec: SyntheticSpec, episodes: int,
                 shots: int, seed: int, manifest: Optional[str]):
        self.cfg = cfg
        self.spec = spec
        self.episodes = episodes
        self.shots = shots
        self.seed = seed
        self.manifest = manifest

    def echo(self, command: str) -> dict:
        return {
            "command": command,
            "pipeline": self.cfg.to_dict(),
            "synthetic": None if self.manifest else self.spec.to_dict(),
            "manifest": self.manifest,
            "episodes": self.episodes,
            "shots": self.shots,
            "seed": self.seed,
        }

    def load_episodes(self):
        if self.manifest:
            log.info("loading episodes from %s", self.manifest)
            return load_manifest(self.manifest)
        log.info("generating %d synthetic episodes (%d shots)",
                 self.episodes, self.shots)
        return generate_suite(self.spec, self.episodes, self.shots)


def _build_context(args) -> RunContext:
    doc = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise TensorFormatError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise TensorFormatError(f"{args.config}: config must be a JSON object")

    synthetic = dict(doc.pop("synthetic", {}) or {})
    episodes = doc.pop("episodes", DEFAULT_EPISODES)
    shots = doc.pop("shots", DEFAULT_SHOTS)
    pipeline_keys = dict(doc)

    for key, value in _parse_overrides(getattr(args, "set", None)).items():
        if key.startswith("synthetic."):
            synthetic[key[len("synthetic."):]] = value
        elif key == "episodes":
            episodes = value
        elif key == "shots":
            shots = value
        else:
            pipeline_keys[key] = value

    try:
        episodes = int(episodes)
        shots = int(shots)
    except (TypeError, ValueError):
        raise ConfigError("episodes and shots must be integers") from None
    if episodes < 1 or shots < 1:
        raise ConfigError("episodes and shots must be >= 1")

    if getattr(args, "seed", None) is not None:
        synthetic["seed"] = args.seed
    cfg = SspConfig.from_dict(pipeline_keys)
    spec = SyntheticSpec.from_dict(synthetic)
    manifest = getattr(args, "manifest", None)
    return RunContext(cfg, spec, episodes, shots, spec.seed, manifest)


# ---------------------------------------------------------------------------
# output plumbing


def _csv_text(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if row.get(col) is None else _csv_cell(row[col])
                         for col in header])
    return buf.getvalue()


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _emit(args, payload: dict, csv_header=None, csv_rows=None) -> None:
    if args.format == "csv":
        if csv_header is None:
            raise ConfigError(f"{args.command} has no CSV form; use --format json")
        text = _csv_text(csv_header, csv_rows)
    else:
        text = report_to_json(payload)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def _fg_pixels(pair) -> int:
    return int((pair.fg.data > IOU_THRESHOLD).sum())


def cmd_match(args) -> int:
    ctx = _build_context(args)
    episodes = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for ep in episodes:
        result = match_episode(ep.supports, ep.query, ctx.cfg)
        prefix = f"ep{ep.episode_id:05d}"
        files = {}
        stage_fg = {}
        for name in ("initial", "self_support", "refined", "final"):
            pair = getattr(result, name)
            if pair is None:
                continue
            path = f"{prefix}_{name}_fg.sspt"
            write_tensor_file(os.path.join(args.out, path), pair.fg)
            files[name] = path
            stage_fg[name] = _fg_pixels(pair)
        rows.append({
            "episode_id": ep.episode_id,
            "class_id": ep.class_id,
            "files": files,
            "stage_fg_pixels": stage_fg,
            "diagnostics": result.diagnostics.to_dict(),
        })
    summary = {"invocation": ctx.echo("match"), "episodes": rows}
    path = os.path.join(args.out, "match_summary.json")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_to_json(summary))
    sys.stdout.write(report_to_json({"summary": path, "episode_count": len(rows)}))
    return EXIT_OK


def _pct(value) -> str:
    # stored in [0,1]; shown x100 to read like a percent-style table
    return "n/a" if value is None else f"{100.0 * value:.2f}"


def cmd_eval(args) -> int:
    ctx = _build_context(args)
    episodes = ctx.load_episodes()
    report = evaluate(episodes, ctx.cfg, ablation=args.ablation,
                      jobs=args.jobs, seed=ctx.seed)
    report["invocation"] = ctx.echo("eval")
    header = ["episode_id", "class_id", "iou", "mae_all", "mae_tp"]
    _emit(args, report, header, report["episodes"])
    if args.out:
        s = report["summary"]
        sys.stdout.write(
            f"mIoU {100.0 * s['miou']:.2f}  MAE-all {_pct(s['mae_all'])}  "
            f"MAE-tp {_pct(s['mae_tp'])}  (x100)\n")
    return EXIT_OK


def _float_list(raw: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {raw!r}") from None
    if not values:
        raise ConfigError(f"{flag} is empty")
    return values


def cmd_sweep(args) -> int:
    ctx = _build_context(args)
    episodes = ctx.load_episodes()
    fg_grid = _float_list(args.tau_fg, "--tau-fg")
    bg_grid = _float_list(args.tau_bg, "--tau-bg")
    rows = sweep_thresholds(episodes, ctx.cfg, fg_grid, bg_grid,
                            jobs=args.jobs, seed=ctx.seed)
    payload = {
        "invocation": ctx.echo("sweep-threshold"),
        "plateau_reference": PLATEAU_REFERENCE,
        "rows": rows,
    }
    _emit(args, payload, ["tau_fg", "tau_bg", "miou", "mae_all"], rows)
    return EXIT_OK


def cmd_ablate(args) -> int:
    ctx = _build_context(args)
    episodes = ctx.load_episodes()
    rows = ablation_table(episodes, ctx.cfg, jobs=args.jobs, seed=ctx.seed)
    payload = {"invocation": ctx.echo("ablate"), "rows": rows}
    header = ["row", "ablation", "miou", "mae_all", "mae_tp", "mean_total_loss"]
    _emit(args, payload, header, rows)
    if args.out:
        for row in rows:
            sys.stdout.write(
                f"{row['row']:<10s} mIoU {100.0 * row['miou']:6.2f}  "
                f"MAE-all {_pct(row['mae_all'])}  (x100)\n")
    return EXIT_OK


def cmd_stats(args) -> int:
    ctx = _build_context(args)
    episodes = ctx.load_episodes()
    stats = similarity_stats(episodes, seed=ctx.seed)
    for key in ("fg_margin", "bg_margin"):
        values = [r[key] for r in stats["per_episode"] if r[key] is not None]
        stats[f"{key}_ci_low"] = (bootstrap_lower_bound(values, seed=ctx.seed)
                                  if values else None)
    stats["invocation"] = ctx.echo("stats")
    header = ["episode_id", "fg_cross", "fg_intra", "fg_margin",
              "bg_cross", "bg_intra", "bg_margin"]
    _emit(args, stats, header, stats["per_episode"])
    return EXIT_OK


def cmd_partial(args) -> int:
    ctx = _build_context(args)
    episodes = ctx.load_episodes()
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    rows = []
    for ratio in _float_list(args.ratios, "--ratios"):
        for noise in _float_list(args.noise_ratios, "--noise-ratios"):
            for mode in modes:
                res = partial_prototype_experiment(
                    episodes, ratio, noise, mode, cfg=ctx.cfg, seed=ctx.seed)
                rows.append({
                    "mode": mode,
                    "object_ratio": ratio,
                    "noise_ratio": noise,
                    "mean_iou": res["mean_iou"],
                })
    payload = {"invocation": ctx.echo("partial-proto"), "rows": rows}
    _emit(args, payload, ["mode", "object_ratio", "noise_ratio", "mean_iou"], rows)
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    ctx = _build_context(args)
    episodes = generate_suite(ctx.spec, ctx.episodes, ctx.shots)
    manifest = save_episodes(args.out, episodes)
    sys.stdout.write(report_to_json({
        "invocation": ctx.echo("gen-synthetic"),
        "manifest": manifest,
        "episode_count": len(episodes),
    }))
    return EXIT_OK


def cmd_verify_grad(args) -> int:
    ctx = _build_context(args)
    result = gradient_check(cases=args.cases, seed=ctx.seed,
                            temperature=ctx.cfg.temperature)
    result["invocation"] = ctx.echo("verify-grad")
    _emit(args, result)
    return EXIT_OK if result["passed"] else EXIT_PIPELINE


# ---------------------------------------------------------------------------
# wiring


def _common_flags(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable); synthetic.* "
                        "targets the generator, episodes/shots the suite size")
    p.add_argument("--seed", type=int, metavar="U64", help="run seed")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, metavar="N",
                   help="worker processes (default: available parallelism)")
    p.add_argument("--out", metavar="PATH", help=out_help)
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> _Parser:
    parser = _Parser(prog="ssmatch",
                     description="self-support prototype matching for "
                                 "few-shot segmentation at the feature level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="run the pipeline over a manifest, "
                                     "write per-stage fg probability masks")
    p.add_argument("manifest", help="episode manifest JSON")
    _common_flags(p, "output directory for masks + summary (required)")
    p.set_defaults(func=cmd_match, need_out=True)

    p = sub.add_parser("eval", help="evaluate episodes, report IoU/MAE per stage")
    p.add_argument("--manifest", metavar="PATH", help="episode manifest "
                   "(default: generate synthetic episodes)")
    p.add_argument("--ablation", choices=ABLATIONS, default=ABLATION_FULL)
    _common_flags(p, "report path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-threshold", help="mIoU over a tau_fg x tau_bg grid")
    p.add_argument("--manifest", metavar="PATH")
    p.add_argument("--tau-fg", default="0.5,0.6,0.7,0.8,0.9", metavar="LIST")
    p.add_argument("--tau-bg", default="0.4,0.5,0.6,0.7", metavar="LIST")
    _common_flags(p, "report path (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="component ablation table "
                                      "(baseline, ssm, ssm+asbp, full)")
    p.add_argument("--manifest", metavar="PATH")
    _common_flags(p, "report path (default: stdout)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", help="cross/intra-image cosine similarity statistics")
    p.add_argument("--manifest", metavar="PATH")
    _common_flags(p, "report path (default: stdout)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("partial-proto", help="prototype quality from partial "
                                             "and noisy object pixels")
    p.add_argument("--manifest", metavar="PATH")
    p.add_argument("--ratios", default="1.0,0.1,0.01", metavar="LIST")
    p.add_argument("--noise-ratios", default="0.0,0.2", metavar="LIST")
    p.add_argument("--modes", default="support,self", metavar="LIST")
    _common_flags(p, "report path (default: stdout)")
    p.set_defaults(func=cmd_partial)

    p = sub.add_parser("gen-synthetic", help="write a synthetic episode "
                                             "dataset (SSPT files + manifest)")
    _common_flags(p, "dataset directory (required)")
    p.set_defaults(func=cmd_gen_synthetic, need_out=True)

    p = sub.add_parser("verify-grad", help="analytic vs finite-difference "
                                           "gradient agreement")
    p.add_argument("--cases", type=int, default=20)
    _common_flags(p, "report path (default: stdout)")
    p.set_defaults(func=cmd_verify_grad)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "need_out", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.seed is not None and not (0 <= args.seed < 2 ** 64):
        parser.error("--seed must fit in an unsigned 64-bit integer")
    try:
        return args.func(args)
    except (TensorFormatError, OSError) as exc:
        log.debug("format/io failure", exc_info=True)
        print(f"ssmatch: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, InvalidRatioError) as exc:
        log.debug("bad parameters", exc_info=True)
        print(f"ssmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SsmatchError as exc:
        log.debug("pipeline failure", exc_info=True)
        print(f"ssmatch: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
