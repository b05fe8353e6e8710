"""Pretrained vs random encoder initialisation at a reduced label fraction.

Usage:
    python -m scripts.compare_pretraining --config desk_scale --cohort runs/cohort --out runs/compare
    python -m scripts.compare_pretraining --config desk_scale --cohort runs/cohort --checkpoint runs/pre/checkpoints/encoder.ckpt --out runs/compare
"""
import argparse
import logging
import sys
from pathlib import Path

from src.config import set_global_seed, set_precision, setup_logging
from src.errors import VolumilError
from src.harness.experiments import compare_pretraining, render_comparison, write_comparison
from src.harness.probe import linear_probe_auroc
from src.main import load_run_config, model_spec_for
from src.pretrain.trainer import pretrain_encoder
from src.pretrain.transfer import export_encoder
from src.synthcohort.splits import split_dataset
from src.synthcohort.storage import load_cohort

logger = logging.getLogger(__name__)


def run_comparison(args) -> int:
    run = load_run_config(args.config)
    set_precision(run.precision)
    set_global_seed(run.seed)
    out = Path(args.out)
    spec = model_spec_for(run, args.arch)
    _, timelines = load_cohort(Path(args.cohort))

    checkpoint = args.checkpoint
    probe = None
    if checkpoint is None:
        logger.info("No encoder checkpoint given; pretraining one first")
        result = pretrain_encoder(timelines, spec.encoder, run.pretrain, run.preprocess, progress=args.progress)
        checkpoint = str(export_encoder(result.encoder, spec.encoder, out / "encoder.ckpt", run.precision))
        probe = linear_probe_auroc(result.encoder, timelines, run.preprocess, seed=run.seed)

    cfg = run.train.model_copy(update={"architecture": spec.architecture})
    split = split_dataset(timelines, cfg.holdout_frac, cfg.k_folds, cfg.seed)
    comparison = compare_pretraining(
        cfg,
        spec,
        timelines,
        split,
        run.preprocess,
        checkpoint,
        seeds=args.seeds,
        label_fraction=args.label_fraction,
        progress=args.progress,
    )
    if probe is not None:
        comparison = comparison.model_copy(update={"linear_probe_auroc": probe})
    write_comparison(comparison, out)
    print(render_comparison(comparison), end="")
    return 0 if comparison.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="desk_scale")
    parser.add_argument("--cohort", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--checkpoint", help="Pretrained encoder; pretrains one when omitted")
    parser.add_argument("--arch", default="cnn_bilstm", choices=("cnn_bilstm", "cnn_transformer", "cnn_meanpool"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--label-fraction", type=float, default=0.1)
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--progress", action="store_true")
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return run_comparison(args)
    except VolumilError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
