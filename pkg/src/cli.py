"""
Command-line entry point: ``python -m src <gen-data|train|eval|infer|check>``.

Exit codes: 0 success, 1 runtime or check failure, 2 configuration error. Logs go to
stderr; stdout carries command output only.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog
from pydantic import ValidationError
from pythonjsonlogger import jsonlogger

from .checks import SCOPES, run_checks
from .config import GenDataConfig, RunConfig, get_settings, load_run_config, validate_configuration
from .datasets.border_ownership import gen_border_ownership, load_border_ownership, load_images, save_border_ownership
from .datasets.io import load_binary, load_continuous, save_binary, save_continuous
from .datasets.splits import split
from .datasets.synthetic import gen_rbm_samples, gen_texture, random_rbm_params
from .errors import ConfigError, InvalidArgumentError, QtbpError
from .models.params import ModelKind
from .models.training import CheckpointMeta, MetricRecord, QuerySpec, TrainConfig
from .training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .training.models import build_model
from .training.query_loss import baseline_nce, gaussian_baseline
from .training.trainer import STREAM_EVAL, evaluate, stream, train

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

CHECKPOINT_NAME = "checkpoint.qtbp"
METRICS_NAME = "metrics.jsonl"

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
JSON_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def configure_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """Route structlog through stdlib logging on stderr, as text or JSON lines."""
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
        renderer = structlog.stdlib.render_to_log_kwargs
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))
        renderer = structlog.processors.KeyValueRenderer(key_order=["event"])
    logging.basicConfig(level=level.upper(), handlers=[handler], force=True)
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.format_exc_info,
            renderer,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


# dataset plumbing

Loader = Callable[[str], Any]
Saver = Callable[[str, Any], None]

DATA_IO: Dict[ModelKind, Tuple[Loader, Saver, str]] = {
    ModelKind.RBM: (load_binary, save_binary, "txt"),
    ModelKind.DBM: (load_binary, save_binary, "txt"),
    ModelKind.GRBM: (load_continuous, save_continuous, "csv"),
    ModelKind.GMRF: (load_border_ownership, save_border_ownership, "txt"),
}


def load_dataset(kind: ModelKind, path: str) -> Any:
    return DATA_IO[kind][0](path)


def resolve_splits(run: RunConfig) -> Tuple[Any, Any, Optional[Any]]:
    """(train, valid, test) from explicit split files or a seeded split of ``data_path``."""
    if run.train_path is not None:
        if run.valid_path is None:
            raise ConfigError("train_path needs a matching valid_path")
        test = load_dataset(run.model, run.test_path) if run.test_path else None
        return load_dataset(run.model, run.train_path), load_dataset(run.model, run.valid_path), test
    if run.data_path is None:
        raise ConfigError("no dataset: set data_path or train_path/valid_path")
    try:
        return split(load_dataset(run.model, run.data_path), run.split_fractions, run.seed)
    except InvalidArgumentError as e:
        raise ConfigError(str(e)) from e


def visible_units(run: RunConfig, data: Any) -> Optional[int]:
    if run.model == ModelKind.GMRF:
        return None
    if data.ndim != 2 or data.shape[1] == 0:
        raise ConfigError("training data has no columns")
    width = data.shape[1]
    if run.visible is not None and run.visible != width:
        raise ConfigError(f"visible = {run.visible} but the data has {width} columns")
    return width


def checkpoint_config(checkpoint: Checkpoint, query: Optional[str] = None,
                      image_shape: Optional[Tuple[int, int]] = None) -> TrainConfig:
    """Rebuild the inference-relevant configuration stored with a checkpoint."""
    params, meta = checkpoint.params, checkpoint.meta
    visible = None
    n_clones = 8
    if checkpoint.kind == ModelKind.GMRF:
        n_clones = params.n_states - 2
    else:
        visible = params.W_H1V.shape[1] if checkpoint.kind == ModelKind.DBM else params.W.shape[1]
    try:
        return TrainConfig(
            model=checkpoint.kind,
            visible=visible,
            layers=meta.layers,
            temperature=meta.temperature,
            epsilon=meta.epsilon,
            query=QuerySpec.parse(query or meta.query),
            image_shape=image_shape or meta.image_shape,
            n_clones=n_clones,
            seed=meta.seed,
        )
    except (ValidationError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# subcommands

def cmd_gen_data(args: argparse.Namespace) -> int:
    try:
        cfg = GenDataConfig(
            kind=args.kind, n=args.n, rows=args.rows or args.size, cols=args.cols or args.size,
            shape=args.shape, p_drop=args.p_drop, n_spurious=args.n_spurious, spur_len=args.spur_len,
            visible=args.visible, hidden=args.hidden, weight_scale=args.weight_scale, seed=args.seed or 0,
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from e

    rng = np.random.default_rng(cfg.seed)
    manifest: Dict[str, Any] = {"kind": cfg.kind, "seed": cfg.seed, "n": cfg.n, "path": args.out}
    if cfg.kind == "border":
        try:
            data = gen_border_ownership(cfg.n, cfg.rows, cfg.cols, cfg.shape, rng,
                                        cfg.p_drop, cfg.n_spurious, cfg.spur_len)
        except InvalidArgumentError as e:
            raise ConfigError(str(e)) from e
        save_border_ownership(args.out, data)
        manifest.update(rows=cfg.rows, cols=cfg.cols, shape=cfg.shape, p_drop=cfg.p_drop,
                        n_spurious=cfg.n_spurious, spur_len=cfg.spur_len)
    elif cfg.kind == "texture":
        save_continuous(args.out, gen_texture(cfg.n, cfg.rows, cfg.cols, rng))
        manifest.update(rows=cfg.rows, cols=cfg.cols)
    else:
        truth = random_rbm_params(cfg.visible, cfg.hidden, rng, cfg.weight_scale)
        save_binary(args.out, gen_rbm_samples(truth, cfg.n, rng))
        manifest.update(visible=cfg.visible, hidden=cfg.hidden, weight_scale=cfg.weight_scale)
        if args.truth_out:
            meta = CheckpointMeta(seed=cfg.seed, temperature=1.0)
            save_checkpoint(args.truth_out, Checkpoint(ModelKind.RBM, truth, meta))
            manifest["truth_checkpoint"] = args.truth_out
    logger.info("Dataset written", **manifest)
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def _run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    keys = ("model", "visible", "hidden", "hidden2", "layers", "temperature", "lr", "batch_size",
            "max_epochs", "patience", "seed", "query", "epsilon", "n_clones", "image_rows",
            "image_cols", "data_path", "train_path", "valid_path", "test_path", "output_dir", "threads")
    overrides = {key: getattr(args, key, None) for key in keys}
    if getattr(args, "lr_grid", None):
        overrides["lr_grid"] = [item for item in args.lr_grid.split(",") if item.strip()]
    if getattr(args, "wall_time", False):
        overrides["record_wall_time"] = True
    if getattr(args, "no_wall_time", False):
        overrides["record_wall_time"] = False
    return overrides


def cmd_train(args: argparse.Namespace) -> int:
    settings = get_settings()
    run = load_run_config(args.config, _run_overrides(args),
                          defaults={"threads": settings.threads, "output_dir": settings.output_dir})
    train_data, valid_data, test_data = resolve_splits(run)
    config = run.train_config(visible_units(run, train_data))

    out_dir = Path(run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / METRICS_NAME
    with metrics_path.open("w", encoding="utf-8") as stream_out:
        def sink(record: MetricRecord) -> None:
            stream_out.write(record.model_dump_json() + "\n")

        result = train(config, train_data, valid_data, metrics_sink=sink)

    checkpoint_path = out_dir / CHECKPOINT_NAME
    save_checkpoint(checkpoint_path, Checkpoint(config.model, result.params, result.meta))
    summary: Dict[str, Any] = {
        "checkpoint": str(checkpoint_path),
        "metrics": str(metrics_path),
        "best_lr": result.meta.lr,
        "best_epoch": result.meta.epoch,
        "best_valid_nce": result.meta.best_valid_nce,
        "diverged_lrs": result.diverged_lrs,
    }
    if test_data is not None and run.test_path is None:
        loader_saver = DATA_IO[config.model]
        test_path = out_dir / f"test.{loader_saver[2]}"
        loader_saver[1](str(test_path), test_data)
        summary["test_split"] = str(test_path)
    print(json.dumps(summary, sort_keys=True))
    print(f"Final validation NCE: {result.meta.best_valid_nce:.4f} bits (lr={result.meta.lr})")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    image_shape = (args.image_rows, args.image_cols) if args.image_rows and args.image_cols else None
    config = checkpoint_config(checkpoint, args.query, image_shape)
    data = load_dataset(checkpoint.kind, args.data)
    seed = checkpoint.meta.seed if args.seed is None else args.seed
    adapter = build_model(config)
    report = evaluate(adapter, checkpoint.params, data, seed, query=config.query)

    payload: Dict[str, Any] = {
        "kind": str(checkpoint.kind),
        "query": config.query.to_string(),
        "seed": seed,
        "n_samples": report.n_samples,
        "n_predicted": report.n_predicted,
        "total_bits": report.total_bits,
        "nce": report.nce,
    }
    if report.iou is not None:
        payload["iou"] = report.iou
    if args.baseline_data:
        if checkpoint.kind != ModelKind.GRBM:
            raise ConfigError("--baseline-data applies to Gaussian models only")
        mean, var = gaussian_baseline(load_continuous(args.baseline_data))
        masks = adapter.sample_masks(len(data), stream(seed, STREAM_EVAL), training=False, spec=config.query)
        payload["baseline_nce"] = baseline_nce(data, mean, var, masks)

    report_path = Path(args.report) if args.report else Path(args.checkpoint).with_name("eval_report.json")
    _write_json(report_path, payload)
    print(f"{checkpoint.kind} on {args.data}: NCE {report.nce:.4f} bits over {report.n_predicted} targets")
    if report.iou is not None:
        print(f"Mean IOU: {report.iou:.4f}")
    if "baseline_nce" in payload:
        print(f"Independent-Gaussian baseline NCE: {payload['baseline_nce']:.4f} bits")
    print(f"Report: {report_path}")
    return EXIT_OK


def _load_masks(path: Optional[str], n: int, width: int) -> np.ndarray:
    if path is None:
        raise ConfigError("--mask is required for this model kind")
    masks = load_binary(path)
    if masks.shape[0] == 1:
        masks = np.repeat(masks, n, axis=0)
    if masks.shape != (n, width):
        raise InvalidArgumentError(f"mask file holds {masks.shape}, expected ({n}, {width})")
    return masks


def cmd_infer(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint_config(checkpoint)
    adapter = build_model(config)
    if checkpoint.kind == ModelKind.GMRF:
        rows = adapter.predict(checkpoint.params, load_images(args.input), None)
    elif args.soft_evidence:
        if checkpoint.kind != ModelKind.RBM:
            raise ConfigError("--soft-evidence applies to RBM checkpoints only")
        probs = load_continuous(args.input)
        masks = _load_masks(args.mask, probs.shape[0], probs.shape[1])
        rows = adapter.predict_soft(checkpoint.params, probs, masks)
    else:
        data = load_dataset(checkpoint.kind, args.input)
        masks = _load_masks(args.mask, data.shape[0], data.shape[1])
        rows = adapter.predict(checkpoint.params, data, masks)
    lines = "".join(json.dumps(row) + "\n" for row in rows)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(lines, encoding="utf-8")
        logger.info("Marginals written", path=args.out, samples=len(rows))
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(args.scope, seed=args.seed or 0, n_cases=args.cases, perturb=args.perturb_gradient)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.scope}/{r.suite}  metric={r.metric:.3e}  threshold={r.threshold:.1e}  cases={r.cases}")
    if args.report:
        _write_json(Path(args.report), {"results": [r.model_dump() for r in results]})
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_FAILURE if failed else EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtbp", description="Query-trained unrolled belief propagation")
    parser.add_argument("--config", help="Flat key = value run configuration file")
    parser.add_argument("--seed", type=int, help="Seed for every random stream")
    parser.add_argument("--threads", type=int, help="Worker cap for minibatch gradients")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR or CRITICAL")
    parser.add_argument("--log-json", action="store_true", help="Emit log records as JSON lines")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Write a synthetic dataset")
    gen.add_argument("--kind", required=True, choices=["border", "rbm", "texture"])
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--size", type=int, default=12, help="Grid side when --rows/--cols are omitted")
    gen.add_argument("--rows", type=int)
    gen.add_argument("--cols", type=int)
    gen.add_argument("--shape", default="rectangle", choices=["rectangle", "ellipse"])
    gen.add_argument("--p-drop", type=float, default=0.2)
    gen.add_argument("--n-spurious", type=int, default=8)
    gen.add_argument("--spur-len", type=int, default=3)
    gen.add_argument("--visible", type=int, default=10)
    gen.add_argument("--hidden", type=int, default=5)
    gen.add_argument("--weight-scale", type=float, default=1.0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--truth-out", help="Also save the ground-truth RBM checkpoint")
    gen.set_defaults(handler=cmd_gen_data)

    tr = sub.add_parser("train", help="Train a model with sampled queries")
    tr.add_argument("--model", choices=[k.value for k in ModelKind])
    tr.add_argument("--data", dest="data_path")
    tr.add_argument("--train", dest="train_path")
    tr.add_argument("--valid", dest="valid_path")
    tr.add_argument("--test", dest="test_path")
    tr.add_argument("--visible", type=int)
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--hidden2", type=int)
    tr.add_argument("--layers", type=int)
    tr.add_argument("--temperature", help="A value >= 0, or 'learned'")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--lr-grid", help="Comma-separated learning rates")
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--max-epochs", type=int)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--query", help="bernoulli:P, patch:HxW or fixed")
    tr.add_argument("--epsilon", type=float)
    tr.add_argument("--n-clones", type=int)
    tr.add_argument("--image-rows", type=int)
    tr.add_argument("--image-cols", type=int)
    tr.add_argument("--output-dir")
    tr.add_argument("--wall-time", action="store_true", help="Record elapsed wall_ms per record (not reproducible)")
    tr.add_argument("--no-wall-time", action="store_true", help="Write wall_ms = 0 even if the config file asks for it")
    tr.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="Score a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--query")
    ev.add_argument("--image-rows", type=int)
    ev.add_argument("--image-cols", type=int)
    ev.add_argument("--baseline-data", help="Training data for the independent-Gaussian reference")
    ev.add_argument("--report", help="JSON report path (default: next to the checkpoint)")
    ev.set_defaults(handler=cmd_eval)

    inf = sub.add_parser("infer", help="Write conditional marginals for every input row")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--input", required=True)
    inf.add_argument("--mask", help="0/1 rows, 1 = evidence; one row applies to all inputs")
    inf.add_argument("--soft-evidence", action="store_true",
                     help="RBM only: input rows are comma-separated probabilities of each unit being 1")
    inf.add_argument("--out")
    inf.set_defaults(handler=cmd_infer)

    chk = sub.add_parser("check", help="Run the verification suites")
    chk.add_argument("--scope", action="append", choices=list(SCOPES))
    chk.add_argument("--cases", type=int, default=10_000)
    chk.add_argument("--perturb-gradient", type=float, default=0.0)
    chk.add_argument("--report")
    chk.set_defaults(handler=cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
        configure_logging(args.log_level or settings.effective_log_level, args.log_json or settings.log_json)
        for message in validate_configuration(settings):
            log = logger.warning if message.startswith("WARNING") else logger.debug
            log("Settings check", message=message)
    except (ValidationError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.handler(args)
    except (ConfigError, ValidationError) as e:
        logger.error("Configuration error", command=args.command, error=str(e))
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (QtbpError, OSError) as e:
        logger.error("Command failed", command=args.command, error=str(e), error_type=type(e).__name__,
                     exc_info=settings.enable_debug_mode)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
