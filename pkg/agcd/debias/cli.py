"""Command line interface: agcd-debias <command> ..."""
import logging
import sys
from argparse import ArgumentParser, Namespace
from logging import getLogger
from typing import List, NoReturn, Optional, Sequence

from . import __version__
from .config import TrainConfig
from .const import (
    ABLATIONS,
    END_TO_END_ENTRIES,
    LOGGER_NAME,
    SPLITS,
    ExitCode,
)
from .data import BiasSpec, gen_dataset, load_dataset, measure_bias
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .gradcheck import CHECKS, run_checks
from .model import ModelConfig
from .trainer import ablate, evaluate, train

log = getLogger(LOGGER_NAME)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Parser(ArgumentParser):
    """Usage errors exit with `ExitCode.USAGE`"""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(ExitCode.USAGE.value, f"{self.prog}: error: {message}\n")


def seed_list(value: str) -> List[int]:
    """0,1,2 -> [0, 1, 2]"""
    try:
        seeds = [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise ConfigError(f"Seeds must be integers, got {value!r}") from None
    if not seeds:
        raise ConfigError("At least one seed is needed")
    return seeds


def cmd_gen_data(args: Namespace) -> ExitCode:
    """Write the synthetic biased dataset"""
    spec = BiasSpec.from_file(args.spec) if args.spec else BiasSpec()
    out_dir = gen_dataset(spec, args.out, workers=args.workers)
    for split in SPLITS:
        report = measure_bias(load_dataset(out_dir, split))
        log.info("%s: %d samples, measured rho %.4f", split,
                 int(report.counts.sum()), report.rho)
    print(out_dir)
    return ExitCode.SUCCESS


def cmd_train(args: Namespace) -> ExitCode:
    """Train one model"""
    model_cfg = ModelConfig.from_file(args.model) if args.model else None
    train_cfg = TrainConfig.from_file(args.train) if args.train else None
    if args.resume and (model_cfg or train_cfg):
        log.warning("Resuming uses the configs stored in %s", args.resume)
    result = train(model_cfg,
                   train_cfg,
                   args.data,
                   args.out,
                   resume=args.resume)
    print(f"best val accuracy {result.best_val:.4f}")
    return ExitCode.SUCCESS


def cmd_eval(args: Namespace) -> ExitCode:
    """Evaluate a checkpoint"""
    result = evaluate(args.ckpt,
                      args.data,
                      split=args.split,
                      out_csv=args.out,
                      dump_cim=args.dump_cim)
    print(f"{args.split} accuracy {result.accuracy:.4f}")
    return ExitCode.SUCCESS


def cmd_gradcheck(args: Namespace) -> ExitCode:
    """Compare autodiff with finite differences"""
    results = run_checks(args.module or None, seed=args.seed)
    for result in results:
        print(f"{result.name:12} {result.error:.3e} <= "
              f"{result.tolerance:.0e} "
              f"{'ok' if result.passed else 'FAILED'}")
    if all(result.passed for result in results):
        return ExitCode.SUCCESS
    return ExitCode.NUMERICAL


def cmd_ablate(args: Namespace) -> ExitCode:
    """Train and test configs A-E over seeds"""
    model_cfg = ModelConfig.from_file(args.model) if args.model else None
    train_cfg = TrainConfig.from_file(args.train) if args.train \
        else TrainConfig.desk()
    if args.epochs is not None:
        train_cfg = train_cfg.with_changes(epochs=args.epochs)
    rows = ablate(args.data,
                  seed_list(args.seeds),
                  args.out,
                  model_cfg=model_cfg,
                  train_cfg=train_cfg,
                  work_dir=args.work_dir,
                  configs=args.configs or tuple(ABLATIONS),
                  workers=args.workers)
    for row in rows:
        print(",".join(row.cells()))
    return ExitCode.SUCCESS


def build_parser() -> ArgumentParser:
    """The agcd-debias argument parser"""
    parser = Parser(prog="agcd-debias",
                    description="Context debiasing for emotion recognition")
    parser.add_argument("--version",
                        action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("-v",
                        "--verbose",
                        action="store_true",
                        help="log progress")
    parser.add_argument("--debug",
                        action="store_true",
                        help="log every step")
    commands = parser.add_subparsers(dest="command",
                                     metavar="command",
                                     parser_class=Parser)
    commands.required = True

    cmd = commands.add_parser("gen-data", help="write the biased dataset")
    cmd.add_argument("--spec", help="key=value bias spec file")
    cmd.add_argument("--out", required=True, help="dataset directory")
    cmd.add_argument("--workers", type=int, default=1)
    cmd.set_defaults(func=cmd_gen_data)

    cmd = commands.add_parser("train", help="train a model")
    cmd.add_argument("--model", help="key=value model config file")
    cmd.add_argument("--train", help="key=value train config file")
    cmd.add_argument("--data", required=True, help="dataset directory")
    cmd.add_argument("--out", required=True, help="run directory")
    cmd.add_argument("--resume", help="continue from this checkpoint")
    cmd.set_defaults(func=cmd_train)

    cmd = commands.add_parser("eval", help="evaluate a checkpoint")
    cmd.add_argument("--ckpt", required=True)
    cmd.add_argument("--data", required=True, help="dataset directory")
    cmd.add_argument("--split", choices=SPLITS, default="test")
    cmd.add_argument("--out", help="confusion matrix CSV")
    cmd.add_argument("--dump-cim",
                     dest="dump_cim",
                     help="directory for the AG-CIM trace tensors")
    cmd.set_defaults(func=cmd_eval)

    cmd = commands.add_parser(
        "gradcheck",
        help="check gradients numerically",
        description="Compare autodiff gradients with central differences "
        "in f64. Module checks cover every parameter tensor. The "
        f"end-to-end check samples {END_TO_END_ENTRIES} random entries "
        "of each parameter tensor of a tiny model.")
    cmd.add_argument("--module",
                     action="append",
                     choices=list(CHECKS),
                     help="run only this check, may repeat")
    cmd.add_argument("--seed", type=int, default=0)
    cmd.set_defaults(func=cmd_gradcheck)

    cmd = commands.add_parser("ablate", help="run the ablation table")
    cmd.add_argument("--data", required=True, help="dataset directory")
    cmd.add_argument("--seeds", default="0,1,2", help="e.g. 0,1,2")
    cmd.add_argument("--out", required=True, help="table CSV")
    cmd.add_argument("--model", help="key=value model config file")
    cmd.add_argument("--train", help="key=value train config file")
    cmd.add_argument("--epochs", type=int, help="override epochs")
    cmd.add_argument("--config",
                     dest="configs",
                     action="append",
                     choices=list(ABLATIONS),
                     help="run only this config, may repeat")
    cmd.add_argument("--work-dir", dest="work_dir")
    cmd.add_argument("--workers", type=int, default=1)
    cmd.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point, returns the process exit code"""
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.debug:
        level = logging.DEBUG
    elif args.verbose:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        return args.func(args).value
    except (ConfigError, DataError, ShapeError) as err:
        log.error("%s", err)
        return ExitCode.DATA.value
    except NumericalError as err:
        log.error("Numerical failure: %s", err)
        return ExitCode.NUMERICAL.value


if __name__ == "__main__":
    sys.exit(main())
