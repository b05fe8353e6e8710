"""Command-line entry point: synth, pretrain, train, eval, inspect, verify.

Every command echoes its resolved config to ``<out>/config.json``; errors
map to stable exit codes (see ``src.errors``).
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from src import __version__
from src.config import resolve_config_path, set_global_seed, set_precision, set_threads, setup_logging
from src.errors import ArtifactIOError, ConfigError, SpecMismatchError, VolumilError
from src.harness.attention import attention_overlap
from src.harness.crossval import run_crossval, score_examples
from src.harness.data import build_examples, gather
from src.harness.metrics import auroc, prauc
from src.harness.probe import linear_probe_auroc
from src.harness.report import ComparisonRow, MetricsReport, format_table, humanize_count, read_report, write_predictions, write_report
from src.models.accounting import component_totals, count_flops, count_params, layer_table
from src.models.factory import load_model
from src.models.spec import ModelSpec
from src.pretrain.trainer import pretrain_encoder
from src.pretrain.transfer import export_encoder
from src.synthcohort.generator import generate_cohort
from src.synthcohort.splits import split_dataset
from src.synthcohort.storage import dump_json, load_cohort, save_cohort
from src.validation.schema import RunConfig

logger = logging.getLogger(__name__)

ARCHITECTURES = ("cnn_bilstm", "cnn_transformer", "i3d", "vivit_fsa", "cnn_meanpool")


def load_run_config(config: Optional[str]) -> RunConfig:
    """Parse a RunConfig JSON file; no file means all defaults."""
    if not config:
        return RunConfig()
    path = resolve_config_path(config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not read config {path}: {e}") from e
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}:\n{e}") from e


def apply_overrides(run: RunConfig, args: argparse.Namespace) -> RunConfig:
    """CLI flags win over the config file; ``--seed`` reseeds every section."""
    data = run.model_dump(mode="json")
    if args.seed is not None:
        data["seed"] = args.seed
        for section in ("cohort", "train", "pretrain"):
            data[section]["seed"] = args.seed
    train = data["train"]
    for flag, key in (
        ("arch", "architecture"),
        ("preset", "preset"),
        ("init", "init"),
        ("checkpoint", "checkpoint"),
        ("encoder_mode", "encoder_mode"),
        ("epochs", "epochs"),
        ("label_fraction", "label_fraction"),
        ("k_folds", "k_folds"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    if getattr(args, "pretrain_epochs", None) is not None:
        data["pretrain"]["epochs"] = args.pretrain_epochs
    for flag, key in (("n_patients", "n_patients"), ("noise_level", "noise_level")):
        value = getattr(args, flag, None)
        if value is not None:
            data["cohort"][key] = value
    if getattr(args, "precision", None):
        data["precision"] = args.precision
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid overrides:\n{e}") from e


def model_spec_for(run: RunConfig, architecture: Optional[str] = None) -> ModelSpec:
    """Spec for the configured architecture, with its input matched to the preprocessing."""
    pre = run.preprocess
    overrides = {"input": {"n_slices": pre.n_slices, "height": pre.out_h, "width": pre.out_w}}
    try:
        return ModelSpec.from_preset(architecture or run.train.architecture, run.train.preset, **overrides)
    except ValueError as e:
        raise ConfigError(f"Invalid model spec: {e}") from e


def echo_config(out: Path, command: str, run: RunConfig, spec: Optional[ModelSpec] = None) -> None:
    payload: Dict[str, Any] = {
        "command": command,
        "config_hash": run.content_hash(),
        "run": run.model_dump(mode="json"),
        "version": __version__,
    }
    if spec is not None:
        payload["model"] = spec.model_dump(mode="json")
        payload["model_hash"] = spec.spec_hash()
    write_json(out / "config.json", payload)


def write_json(path: Path, obj) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_json(obj, path)
    except OSError as e:
        raise ArtifactIOError(f"Could not write {path}: {e}") from e


def _load_cohort(path: Optional[str]):
    if not path:
        raise ConfigError("--cohort is required")
    return load_cohort(Path(path))


def command_synth(args, run: RunConfig, out: Path) -> int:
    echo_config(out, "synth", run)
    timelines = generate_cohort(run.cohort, n_workers=args.threads or 1, progress=args.progress)
    save_cohort(timelines, run.cohort, out)
    converters = sum(t.is_converter for t in timelines)
    logger.info("Wrote %d patients (%d converters) to %s", len(timelines), converters, out)
    return 0


def command_pretrain(args, run: RunConfig, out: Path) -> int:
    spec = model_spec_for(run)
    echo_config(out, "pretrain", run, spec)
    _, timelines = _load_cohort(args.cohort)
    result = pretrain_encoder(timelines, spec.encoder, run.pretrain, run.preprocess, progress=args.progress)
    export_encoder(result.encoder, spec.encoder, out / "checkpoints" / "encoder.ckpt", run.precision)
    log = result.log_dict(run.pretrain)
    if args.probe:
        try:
            log["linear_probe_auroc"] = linear_probe_auroc(result.encoder, timelines, run.preprocess, seed=run.seed)
        except ValueError as e:
            logger.warning("Linear probe skipped: %s", e)
            log["linear_probe_auroc"] = None
    write_json(out / "logs" / "pretrain.json", log)
    return 0


def sibling_comparison(out: Path, report: MetricsReport) -> List[ComparisonRow]:
    """This run next to every sibling run directory with a random-init report for the same architecture."""
    rows = [
        ComparisonRow(
            label="TINC",
            run=out.name,
            auroc_mean=report.auroc_mean,
            auroc_std=report.auroc_std,
            prauc_mean=report.prauc_mean,
            prauc_std=report.prauc_std,
            ensemble_auroc=report.ensemble_auroc,
        )
    ]
    for sibling in sorted(p for p in out.resolve().parent.iterdir() if p.is_dir() and p.resolve() != out.resolve()):
        path = sibling / "report.json"
        if not path.exists():
            continue
        try:
            other = read_report(path)
        except (ArtifactIOError, ValidationError):
            logger.warning("Skipping unreadable sibling report %s", path)
            continue
        if other.architecture == report.architecture and other.init == "random":
            rows.append(
                ComparisonRow(
                    label="random",
                    run=sibling.name,
                    auroc_mean=other.auroc_mean,
                    auroc_std=other.auroc_std,
                    prauc_mean=other.prauc_mean,
                    prauc_std=other.prauc_std,
                    ensemble_auroc=other.ensemble_auroc,
                )
            )
    return rows


def attention_summary(models, holdout) -> Optional[dict]:
    """Per-fold attention overlap on the holdout, or None when it cannot be measured."""
    if not models[0].supports_attention:
        return None
    if not any(ex.label == 1 and ex.lesion_slices for ex in holdout):
        logger.warning("Holdout has no positive volumes with lesion slices; skipping attention.json")
        return None
    top_k = min(4, models[0].spec.input.n_slices)
    per_fold = [attention_overlap(m, holdout, top_k).to_dict() for m in models]
    return {"folds": per_fold, "mean_ratio": float(np.mean([f["ratio"] for f in per_fold]))}


def command_train(args, run: RunConfig, out: Path) -> int:
    spec = model_spec_for(run)
    echo_config(out, "train", run, spec)
    _, timelines = _load_cohort(args.cohort)
    cfg = run.train
    split = split_dataset(timelines, cfg.holdout_frac, cfg.k_folds, cfg.seed)
    examples = build_examples(timelines, cfg.window_days, run.preprocess, progress=args.progress)
    result = run_crossval(
        cfg,
        spec,
        timelines,
        split,
        run.preprocess,
        out_dir=out,
        config_hash=run.content_hash(),
        precision=run.precision,
        examples=examples,
        progress=args.progress,
    )
    for fold, log in enumerate(result.train_logs):
        write_json(out / "logs" / f"train_fold{fold}.json", log.log_dict())
    if result.train_logs[0].transfer is not None:
        write_json(out / "logs" / "transfer.json", result.train_logs[0].transfer)

    summary = attention_summary(result.models, gather(examples, split.holdout))
    if summary is not None:
        write_json(out / "logs" / "attention.json", summary)

    report = result.report
    if cfg.init == "tinc_checkpoint":
        report = report.model_copy(update={"comparison": sibling_comparison(out, report)})
    write_report(report, out)
    write_predictions(result.predictions, out / "predictions.csv")
    return 0


def command_eval(args, run: RunConfig, out: Path) -> int:
    """Re-score a trained run's fold checkpoints on every labelled scan of a cohort."""
    if not args.run_dir:
        raise ConfigError("--run-dir is required")
    checkpoints = sorted((Path(args.run_dir) / "checkpoints").glob("fold[0-9]*.ckpt"))
    if not checkpoints:
        raise ArtifactIOError(f"No fold checkpoints under {args.run_dir}/checkpoints")
    first = load_model(checkpoints[0])
    spec = first.spec
    if args.arch and args.arch != spec.architecture:
        raise SpecMismatchError(f"--arch {args.arch} does not match the checkpoints", [f"architecture: {spec.architecture} != {args.arch}"])
    models = [first] + [load_model(p, expected=spec) for p in checkpoints[1:]]
    echo_config(out, "eval", run, spec)
    cohort_params, timelines = _load_cohort(args.cohort)
    pre = run.preprocess.model_copy(
        update={"n_slices": spec.input.n_slices, "out_h": spec.input.height, "out_w": spec.input.width}
    )
    examples = gather(build_examples(timelines, run.train.window_days, pre), [t.patient_id for t in timelines])
    folds, ensemble, rows = score_examples(models, examples, fold_labels=[p.stem.replace("fold", "") for p in checkpoints])
    labels = [ex.label for ex in examples]
    source = read_report(Path(args.run_dir) / "report.json") if (Path(args.run_dir) / "report.json").exists() else None
    report = MetricsReport.from_folds(
        folds,
        architecture=spec.architecture,
        preset=spec.preset,
        init=source.init if source else "unknown",
        encoder_mode=source.encoder_mode if source else "unknown",
        n_params=count_params(spec),
        flops=count_flops(spec),
        ensemble_auroc=auroc(ensemble, labels),
        ensemble_prauc=prauc(ensemble, labels),
        config_hash=run.content_hash(),
        seed=run.seed,
        version=__version__,
        cohort=f"synthetic noise={cohort_params.noise_level} seed={cohort_params.seed}",
    )
    write_report(report, out)
    write_predictions(rows, out / "predictions.csv")
    return 0


def inspect_payload(spec: ModelSpec) -> dict:
    return {
        "architecture": spec.architecture,
        "preset": spec.preset,
        "params": count_params(spec),
        "flops": count_flops(spec),
        "flops_convention": "1 FLOP per multiply-accumulate",
        "components": component_totals(spec),
        "layers": [row.to_dict() for row in layer_table(spec)],
    }


def inspect_text(payload: dict) -> str:
    rows = [
        (r["component"], r["layer"], "x".join(str(d) for d in r["out_shape"]), f"{r['params']:,}", f"{r['macs']:,}")
        for r in payload["layers"]
    ]
    text = format_table(("Component", "Layer", "Output", "Params", "MACs"), rows)
    text += (
        f"\n{payload['architecture']} ({payload['preset']}): "
        f"{payload['params']:,} params ({humanize_count(payload['params'])}), "
        f"{payload['flops']:,} FLOPs ({humanize_count(payload['flops'])})\n"
    )
    return text


def command_inspect(args, run: RunConfig, out: Optional[Path]) -> int:
    arch = args.arch or run.train.architecture
    preset = args.preset or run.train.preset
    try:
        spec = ModelSpec.from_preset(arch, preset)
    except ValueError as e:
        raise ConfigError(f"Invalid model spec: {e}") from e
    payload = inspect_payload(spec)
    text = inspect_text(payload)
    print(text, end="")
    if out is not None:
        echo_config(out, "inspect", run, spec)
        write_json(out / "inspect.json", payload)
        try:
            (out / "inspect.txt").write_text(text, encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"Could not write {out / 'inspect.txt'}: {e}") from e
    return 0


def command_verify(args, run: RunConfig, out: Optional[Path]) -> int:
    from src.verify import run_suites

    results = run_suites(args.suite or None, seed=run.seed, fault=args.inject_fault)
    rows = [(r.name, "pass" if r.passed else "FAIL", str(len(r.checks)), f"{r.seconds:.1f}s") for r in results]
    print(format_table(("Suite", "Result", "Checks", "Time"), rows), end="")
    if out is not None:
        write_json(out / "verify.json", {"suites": [r.to_dict() for r in results]})
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "synth": command_synth,
    "pretrain": command_pretrain,
    "train": command_train,
    "eval": command_eval,
    "inspect": command_inspect,
    "verify": command_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON path, or a bare name looked up in the config directory")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Override every seed in the config")
    common.add_argument("--threads", type=int, help="Torch intra-op threads (and cohort workers)")
    common.add_argument("--precision", choices=("float32", "float64"))
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--progress", action="store_true", help="Show progress bars")

    parser = argparse.ArgumentParser(prog="vmil", description="Volumetric multiple-instance learning toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="Generate a synthetic cohort")
    synth.add_argument("--n-patients", type=int)
    synth.add_argument("--noise-level", type=float, help="Scanner noise; change it to build a shifted external cohort")

    pretrain = sub.add_parser("pretrain", parents=[common], help="Pretrain the slice encoder on visit pairs")
    pretrain.add_argument("--cohort")
    pretrain.add_argument("--arch", choices=ARCHITECTURES, help="Architecture whose encoder spec is pretrained")
    pretrain.add_argument("--epochs", dest="pretrain_epochs", type=int)
    pretrain.add_argument("--preset", choices=("paper_scale", "desk_scale"))
    pretrain.add_argument("--probe", action="store_true", help="Also score a linear lesion probe on the embeddings")

    train = sub.add_parser("train", parents=[common], help="Cross-validate a classifier")
    train.add_argument("--cohort")
    train.add_argument("--arch", choices=ARCHITECTURES)
    train.add_argument("--preset", choices=("paper_scale", "desk_scale"))
    train.add_argument("--init", choices=("random", "tinc_checkpoint"))
    train.add_argument("--checkpoint", help="Encoder checkpoint for --init tinc_checkpoint")
    train.add_argument("--encoder-mode", choices=("frozen", "end_to_end"))
    train.add_argument("--epochs", type=int)
    train.add_argument("--k-folds", type=int)
    train.add_argument("--label-fraction", type=float)

    evaluate = sub.add_parser("eval", parents=[common], help="Re-score a trained run on a cohort")
    evaluate.add_argument("--cohort")
    evaluate.add_argument("--arch", choices=ARCHITECTURES, help="Expected architecture of the checkpoints")
    evaluate.add_argument("--run-dir", help="Output directory of a previous train run")

    inspect = sub.add_parser("inspect", parents=[common], help="Parameter and FLOP table")
    inspect.add_argument("--arch", choices=ARCHITECTURES)
    inspect.add_argument("--preset", choices=("paper_scale", "desk_scale"))

    verify = sub.add_parser("verify", parents=[common], help="Run the self-check suites")
    verify.add_argument("--suite", action="append", choices=("gradients", "inflation", "metrics", "determinism", "accounting"))
    verify.add_argument("--inject-fault", choices=("inflation",), help="Perturb a fixture; the suite must then fail")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        run = apply_overrides(load_run_config(args.config), args)
        set_threads(args.threads)
        set_precision(run.precision)
        set_global_seed(run.seed)
        needs_out = args.command not in ("inspect", "verify")
        if needs_out and not args.out:
            raise ConfigError(f"{args.command} needs --out")
        out = Path(args.out) if args.out else None
        return COMMANDS[args.command](args, run, out)
    except VolumilError as e:
        logger.error("%s", e)
        return e.exit_code
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
