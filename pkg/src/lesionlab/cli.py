"""Command-line surface for the pipeline.

Subcommands: synth, annotate, review-serve, train-unet, segment,
train-classifier, evaluate, pipeline. Global flags --config, --seed,
--work-dir, --paper-preset apply to every stage command.

Exit codes: 0 success, 1 usage or configuration problem, 2 data error,
3 training divergence.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .errors import ConfigError, ContractError, DataError, DivergenceError
from .pipeline import (
    PipelineConfig,
    STAGES,
    apply_paper_preset,
    load_config,
    run_stage,
)
from .synthetic import generate_synthetic_corpus


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Path to the JSON pipeline config.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--work-dir", type=click.Path(), default=None,
              help="Override the config work directory.")
@click.option("--paper-preset", is_flag=True,
              help="Use the full-scale preset (256x256 input, 25000 iterations).")
@click.pass_context
def cli(ctx, config_path, seed, work_dir, paper_preset):
    ctx.obj = {"config_path": config_path, "seed": seed,
               "work_dir": work_dir, "paper_preset": paper_preset}


def _get_config(ctx) -> PipelineConfig:
    opts = ctx.obj
    if not opts["config_path"]:
        raise ConfigError("this command needs --config <path>")
    config = load_config(opts["config_path"])
    if opts["seed"] is not None:
        seed = opts["seed"]
        config = dataclasses.replace(
            config, seed=seed,
            annotation=dataclasses.replace(config.annotation, seed=seed),
            unet_train=dataclasses.replace(config.unet_train, seed=seed),
            lenet_train=dataclasses.replace(config.lenet_train, seed=seed))
    if opts["work_dir"] is not None:
        config = dataclasses.replace(config, work_dir=opts["work_dir"])
    if opts["paper_preset"]:
        config = apply_paper_preset(config)
    return config


def _echo_report(report):
    click.echo(f"[{report.stage}] processed={report.processed} "
               f"skipped={report.skipped} time={report.wall_time_s}s")
    for key, value in report.details.items():
        click.echo(f"  {key}: {value}")


@cli.command()
@click.option("--count", "-n", type=int, default=80, show_default=True,
              help="Total images (half benign, half malignant).")
@click.option("--image-size", type=int, default=64, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Corpus root to create (benign/, malignant/, truth_masks/).")
@click.option("--seed", type=int, default=0, show_default=True)
def synth(count, image_size, out, seed):
    """Generate a seeded synthetic corpus with ground-truth masks."""
    records = generate_synthetic_corpus(count, image_size, seed, out)
    click.echo(f"wrote {len(records)} images under {out}")


def _stage_command(name: str, help_text: str):
    @cli.command(name=name, help=help_text)
    @click.pass_context
    def _cmd(ctx):
        report = run_stage(name, _get_config(ctx))
        _echo_report(report)

    return _cmd


_stage_command("annotate", "Run the self-annotation scheme over the corpus.")
_stage_command("train-unet", "Apply review decisions and train the U-Net.")
_stage_command("segment", "Predict a mask for every corpus image.")
_stage_command("train-classifier", "Train the classifier on AND-crops.")


@cli.command()
@click.pass_context
def evaluate(ctx):
    """Classify the test split and print the performance summary table."""
    config = _get_config(ctx)
    _echo_report(run_stage("evaluate", config))
    _print_summary_table(config)


@cli.command()
@click.pass_context
def pipeline(ctx):
    """Run all stages: annotate, train-unet, segment, train-classifier, evaluate."""
    config = _get_config(ctx)
    for stage in STAGES:
        _echo_report(run_stage(stage, config))
    _print_summary_table(config)


def _print_summary_table(config: PipelineConfig):
    metrics_path = config.paths()["metrics"]
    if not metrics_path.exists():
        return
    fields = dict(line.split("=", 1)
                  for line in metrics_path.read_text().strip().splitlines())
    click.echo("")
    click.echo(f"{'Model':<22}{'Training Acc (%)':>18}{'Testing Acc (%)':>17}"
               f"{'F1 Score':>10}{'Misclassification (%)':>23}")
    click.echo(f"{'two-stage (this run)':<22}"
               f"{fields.get('training_accuracy_pct', 'n/a'):>18}"
               f"{fields['testing_accuracy_pct']:>17}"
               f"{fields['f1_benign_positive']:>10}"
               f"{fields['misclassification_rate_pct']:>23}")


@cli.command(name="review-serve")
@click.option("--port", type=int, default=8700, show_default=True)
@click.option("--static-dir", type=click.Path(), default=None,
              help="Directory with the built review UI bundle.")
@click.pass_context
def review_serve(ctx, port, static_dir):
    """Serve the mask review API (and UI if a bundle is given)."""
    from .review import serve

    config = _get_config(ctx)
    paths = config.paths()
    if not paths["manifest"].exists():
        raise DataError(f"missing manifest {paths['manifest']}; run annotate first")
    click.echo(f"review service on http://127.0.0.1:{port}")
    serve(paths["manifest"], paths["decisions"], port=port,
          static_dir=static_dir, lock_path=paths["lock"])


@cli.command(name="show-config")
@click.pass_context
def show_config(ctx):
    """Print the effective configuration as JSON."""
    config = _get_config(ctx)
    payload = {
        "corpus_root": config.corpus_root,
        "work_dir": config.work_dir,
        "seed": config.seed,
        "split": config.split,
        "mask_threshold": config.mask_threshold,
        "crop_size": config.crop_size,
        "annotation": dataclasses.asdict(config.annotation),
        "unet": config.unet_spec.to_dict(),
        "unet_train": dataclasses.asdict(config.unet_train),
        "lenet_train": dataclasses.asdict(config.lenet_train),
    }
    click.echo(json.dumps(payload, indent=2))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        return 1
    except (ConfigError, ContractError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        return 3
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
