"""Command line interface.

Every subcommand prints one JSON document on stdout when it succeeds and
sends diagnostics to stderr.  Exit codes: 0 success, 1 usage error,
2 data error.  ``--seed`` falls back to the ``FANWARP_SEED`` environment
variable.

    $ fanwarp synth --n 100 --convex-fraction 0.7 --seed 1 --out corpus
    $ fanwarp split --manifest corpus/manifest.jsonl --seed 1 --out splits.json
    $ fanwarp train-baseline --manifest corpus/manifest.jsonl --splits splits.json \\
          --policy policy.cfg --seed 1 --epochs 4 --lr 0.02 --out model.json
    $ fanwarp evaluate --manifest corpus/manifest.jsonl --splits splits.json \\
          --model model.json --split test
"""

from __future__ import annotations

import json
import logging
import sys
import warnings
from pathlib import Path

import click

from . import baseline, dataset, phantom
from .augment import AugmentPolicy, AugmentRng, augment as augment_record, load_policy
from .geometry import GeometryError, Probe, ViewingWindow
from .raster import load_image, save_image
from .windowfit import estimate_window

EXIT_USAGE = 1
EXIT_DATA = 2

log = logging.getLogger("fanwarp")


class DataError(click.ClickException):
    exit_code = EXIT_DATA


def _emit(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True))


def _parse_numbers(text: str, count: int | None, what: str) -> list[float]:
    text = text.strip()
    try:
        values = json.loads(text) if text.startswith("[") else [float(v) for v in text.replace(",", " ").split()]
        values = [float(v) for v in values]
    except (ValueError, TypeError, json.JSONDecodeError):
        raise click.BadParameter(f"expected numbers, got {text!r}", param_hint=what) from None
    if count is not None and len(values) != count:
        raise click.BadParameter(f"expected {count} numbers, got {len(values)}", param_hint=what)
    return values


def _load_records(path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records = dataset.load_manifest(path)
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    return records


seed_option = click.option(
    "--seed", type=click.IntRange(0, 2**64 - 1), envvar="FANWARP_SEED", required=True,
    help="Global seed (falls back to $FANWARP_SEED).",
)
workers_option = click.option("--workers", type=click.IntRange(1), default=1, show_default=True)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Projective linear-convex ultrasound augmentation toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--n", "n", type=click.IntRange(1), required=True)
@click.option("--convex-fraction", type=click.FloatRange(0.0, 1.0), required=True)
@seed_option
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--prefix", default="ph", show_default=True, help="Record id prefix.")
@workers_option
def synth(n, convex_fraction, seed, out, prefix, workers):
    """Generate synthetic phantom frames and their manifest."""
    try:
        records, manifest = phantom.generate(n, convex_fraction, seed, out, id_prefix=prefix, workers=workers)
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from None
    table = dataset.stats(records)
    _emit({"manifest": str(manifest), "n": len(records), "by_probe": table["by_probe"], "by_label": table["by_label"]})


@cli.command("estimate-window")
@click.option("--image", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--threshold", type=click.FloatRange(0.0, 1.0), default=0.04, show_default=True)
def estimate_window_cmd(image, threshold):
    """Estimate the viewing-window corners of one frame."""
    try:
        w = estimate_window(load_image(image), threshold)
    except (GeometryError, OSError) as exc:
        raise DataError(str(exc)) from None
    _emit({"window": w.to_annotation(), "probe": w.probe.value})


@cli.command("split")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@seed_option
@click.option("--fractions", default="0.72,0.14,0.14", show_default=True)
@click.option("--level", type=click.Choice(["video", "image"]), default="video", show_default=True,
              help="Grouping unit; image ignores video_id.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def split_cmd(manifest, seed, fractions, level, out):
    """Stratified, video-level train/val/test split."""
    fr = _parse_numbers(fractions, 3, "--fractions")
    records = _load_records(manifest)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            assignment = dataset.split(records, fr, seed, level)
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="--fractions") from None
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    dataset.save_assignment(assignment, out)
    sizes = {s: sum(1 for v in assignment.values() if v == s) for s in dataset.SPLITS}
    _emit({"out": str(out), "sizes": sizes, "warnings": [str(w.message) for w in caught]})


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--table", is_flag=True, help="Also print an aligned text table to stderr.")
def stats(manifest, table):
    """Counts by probe, label and window coverage."""
    summary = dataset.stats(_load_records(manifest))
    if table:
        click.echo(dataset.format_stats(summary), err=True)
    _emit(summary)


@cli.command("augment")
@click.option("--image", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--window", "window_text", default=None, help="8 numbers p1lx,p1ly,p2lx,p2ly,p1rx,p1ry,p2rx,p2ry.")
@click.option("--probe", type=click.Choice([p.value for p in Probe]), default=None,
              help="Probe kind for --window.")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--id", "record_id", default=None, help="Record id in --manifest.")
@click.option("--policy", type=click.Path(exists=True, dir_okay=False), default=None)
@seed_option
@click.option("--epoch", type=click.IntRange(0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def augment_cmd(image, window_text, probe, manifest, record_id, policy, seed, epoch, out):
    """Augment a single frame (writes the warped image)."""
    if window_text is not None:
        if manifest is not None:
            raise click.UsageError("use either --window or --manifest/--id, not both")
        if probe is None:
            raise click.UsageError("--window needs --probe")
        values = _parse_numbers(window_text, 8, "--window")
        item_id = record_id or Path(image).stem
        try:
            window = ViewingWindow.from_annotation(values, probe)
        except GeometryError as exc:
            raise click.BadParameter(str(exc), param_hint="--window") from None
    elif manifest is not None and record_id is not None:
        records = {r.id: r for r in _load_records(manifest)}
        if record_id not in records:
            raise DataError(f"id {record_id!r} not in {manifest}")
        rec = records[record_id]
        if rec.window is None:
            raise DataError(f"record {record_id} has no window annotation")
        window = rec.viewing_window()
        item_id = record_id
    else:
        raise click.UsageError("give --window and --probe, or --manifest and --id")
    pol = _policy(policy)
    try:
        img = load_image(image)
        out_img, w_new = augment_record((img, window), pol, AugmentRng(seed, item_id, epoch))
        save_image(out_img, out)
    except (GeometryError, OSError) as exc:
        raise DataError(str(exc)) from None
    _emit({"out": str(out), "id": item_id, "epoch": epoch, "window": w_new.to_annotation(), "probe": w_new.probe.value})


def _policy(path) -> AugmentPolicy:
    try:
        return load_policy(path)
    except (ValueError, TypeError) as exc:
        raise DataError(f"bad policy file: {exc}") from None


def _split_records(manifest, splits):
    records = _load_records(manifest)
    try:
        assignment = dataset.load_assignment(splits)
    except dataset.ManifestError as exc:
        raise DataError(str(exc)) from None
    return records, assignment


@cli.command("train-baseline")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--splits", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--policy", type=click.Path(exists=True, dir_okay=False), default=None)
@seed_option
@click.option("--epochs", type=click.IntRange(0), required=True)
@click.option("--lr", type=click.FloatRange(0.0, min_open=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--no-linear-transform", is_flag=True, help="Pass linear frames through unwarped.")
@click.option("--no-augment", is_flag=True, help="Disable augmentation entirely.")
@click.option("--feature-size", type=click.IntRange(1), default=32, show_default=True)
@workers_option
def train_baseline(manifest, splits, policy, seed, epochs, lr, out, no_linear_transform, no_augment,
                   feature_size, workers):
    """Train the logistic baseline on the train split."""
    records, assignment = _split_records(manifest, splits)
    pol = _policy(policy)
    if no_linear_transform:
        pol = AugmentPolicy(**{**pol.to_dict(), "apply_linear_transform": False})
    loader = dataset.CachedLoader()

    def source(epoch):
        return dataset.stream(records, assignment, "train", pol, seed, epoch,
                              augment_train=not no_augment, workers=workers, loader=loader)

    try:
        model = baseline.train(source, epochs, lr, seed, (feature_size, feature_size))
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from None
    model.save(out)
    n_train = sum(1 for v in assignment.values() if v == "train")
    _emit({
        "out": str(out), "n_train": n_train, "epochs": epochs, "lr": lr,
        "augment": not no_augment, "linear_transform": pol.apply_linear_transform and not no_augment,
    })


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--splits", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", "split_name", type=click.Choice(list(dataset.SPLITS)), default="test", show_default=True)
@workers_option
def evaluate(manifest, splits, model_path, split_name, workers):
    """Accuracy and AUC of a saved model on one split."""
    records, assignment = _split_records(manifest, splits)
    try:
        model = baseline.LinearModel.load(model_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"bad model file {model_path}: {exc}") from None
    items = dataset.stream(records, assignment, split_name, None, 0, 0, workers=workers)
    try:
        metrics = baseline.evaluate(model, items)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from None
    _emit(metrics.to_json())


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="fanwarp", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except DataError as exc:
        exc.show()
        return EXIT_DATA
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_DATA
    except (dataset.ManifestError, GeometryError, FileNotFoundError) as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
