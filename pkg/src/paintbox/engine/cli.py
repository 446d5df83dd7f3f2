"""Command-line entry points for serving, data generation and evaluation."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

log = logging.getLogger(__name__)


@click.group()
@click.option("--verbose", is_flag=True, help="Log at debug level.")
def main(verbose: bool):
    """Interactive volumetric labelling engine."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=None, help="Overrides the configured port.")
@click.option("--host", type=str, default=None, help="Overrides the configured host.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="SECTION.KEY=VALUE",
    help="Inline config override; repeatable.",
)
def serve(scene_path, port, host, config_path, overrides):
    """Serve one labelling session over HTTP and WebSocket."""
    import uvicorn

    from ..scene import load_scene
    from .config import load_config
    from .server import create_app
    from .session import Session

    pairs = {}
    for item in overrides:
        key, _, value = item.partition("=")
        if not _:
            raise click.BadParameter(f"expected SECTION.KEY=VALUE, got {item!r}")
        pairs[key] = value
    if port is not None:
        pairs["server.port"] = port
    if host is not None:
        pairs["server.host"] = host
    config = load_config(config_path, overrides=pairs)
    scene = load_scene(Path(scene_path).read_bytes())
    session = Session(scene, config)
    app = create_app(session)
    click.echo(
        f"serving {len(scene)} voxels on "
        f"http://{config.server.host}:{config.server.port} (stream at /stream)"
    )
    uvicorn.run(app, host=config.server.host, port=config.server.port, log_level="warning")


@main.command("gen-scene")
@click.argument("preset")
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--voxel-size", type=float, default=0.02, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--labelled", is_flag=True, help="Bake the ground-truth labels in.")
def gen_scene(preset, output, voxel_size, seed, labelled):
    """Generate a synthetic scene preset and write it as a scene file."""
    from ..generators import available_presets, generate
    from ..scene import save_scene

    try:
        scene, _truth = generate(preset, voxel_size=voxel_size, seed=seed, labelled=labelled)
    except KeyError:
        raise click.BadParameter(
            f"unknown preset {preset!r}; available: {', '.join(available_presets())}"
        ) from None
    Path(output).write_bytes(save_scene(scene))
    click.echo(f"wrote {len(scene)} voxels, {len(scene.label_table)} labels -> {output}")


@main.command("gen-touch-sequence")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--script", "script_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--width", type=int, default=640, show_default=True)
@click.option("--height", type=int, default=480, show_default=True)
def gen_touch_sequence(scene_path, script_path, output, width, height):
    """Render a scripted hand pass over a scene to a depth sequence."""
    from ..scene import load_scene
    from ..touch import TouchScript, save_sequence

    scene = load_scene(Path(scene_path).read_bytes())
    script = TouchScript.from_json(Path(script_path).read_text())
    meta = save_sequence(scene, script, output, width=width, height=height)
    click.echo(f"wrote {meta['frames']} frames -> {output}")


@main.command("touch-train")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None,
              help="Scene to synthesize the corpus from; defaults to the plane preset.")
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--seed", type=int, default=20240501, show_default=True)
def touch_train(scene_path, output, seed):
    """Train the touch-candidate classifier on a synthetic corpus."""
    from ..generators import generate
    from ..scene import load_scene
    from ..touch import default_scripts, train_touch_classifier

    if scene_path is None:
        scene, _ = generate("plane")
    else:
        scene = load_scene(Path(scene_path).read_bytes())
    forest = train_touch_classifier(scene, default_scripts(scene), seed=seed)
    Path(output).write_bytes(forest.save_checkpoint())
    stats = forest.stats()
    click.echo(
        f"trained on {stats['total_examples']} candidates; "
        f"leaves per tree {[t['leaves'] for t in stats['trees']]} -> {output}"
    )


@main.command("touch-run")
@click.option("--sequence", "seq_dir", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--classifier", "classifier_path", type=click.Path(exists=True), default=None,
              help="Touch classifier checkpoint; defaults to the packaged one.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the per-frame results as JSON.")
def touch_run(seq_dir, scene_path, classifier_path, report_path):
    """Detect touch interactions over a recorded depth sequence."""
    from ..raycaster import Intrinsics, raycast
    from ..rigging import CameraPose
    from ..scene import load_scene
    from ..touch import TouchPipeline, load_sequence, load_touch_classifier

    scene = load_scene(Path(scene_path).read_bytes())
    classifier = load_touch_classifier(classifier_path)
    pipeline = TouchPipeline(classifier)
    rows = []
    for index, (raw_depth, matrix, meta) in enumerate(load_sequence(seq_dir)):
        height, width = raw_depth.shape
        pose = CameraPose.from_matrix(matrix)
        ortho = meta.get("projection") == "orthographic"
        rc = raycast(
            scene,
            pose,
            Intrinsics(width, height),
            orthographic=ortho,
            ortho_scale=float(meta["ortho_scale"]) if ortho else None,
        )
        result = pipeline.process(raw_depth, rc.depth)
        rows.append(
            {
                "frame": index,
                "touched": result.touched,
                "points": [[int(r), int(c)] for r, c in result.points],
                "elapsed_ms": result.elapsed_ms,
            }
        )
        state = f"touch at {len(result.points)} px" if result.touched else "no touch"
        click.echo(f"frame {index:04d}: {state} ({result.elapsed_ms:.1f} ms)")
    if report_path:
        Path(report_path).write_text(json.dumps({"frames": rows}, indent=2))
        click.echo(f"report -> {report_path}")


@main.command("gen-poker")
@click.option("-o", "--output", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
def gen_poker(out_dir, seed):
    """Write a surrogate card-classification corpus with official class counts."""
    from ..evaluation import write_poker_files

    written = write_poker_files(out_dir, seed=seed)
    for name, count in written.items():
        click.echo(f"{name}: {count} rows")


@main.command("eval-poker")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--reweight", is_flag=True, help="Inverse-class-frequency reweighting.")
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--epochs", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--confusion-csv", type=click.Path(), default=None)
def eval_poker(data_dir, reweight, repeats, epochs, seed, report_path, confusion_csv):
    """Evaluate streaming forest accuracy on the card-classification task."""
    from ..evaluation import (
        confusion_to_csv,
        evaluate,
        format_report,
        load_poker,
        save_report,
    )

    dataset = load_poker(data_dir)
    click.echo(
        f"train {len(dataset.train_y)} / test {len(dataset.test_y)} examples; "
        f"reweight={'on' if reweight else 'off'}"
    )

    def progress(r, raw, norm):
        click.echo(f"  repeat {r}: raw {100 * raw:.2f}%  normalized {100 * norm:.2f}%")

    result = evaluate(
        dataset,
        reweight=reweight,
        repeats=repeats,
        epochs=epochs,
        base_seed=seed,
        progress=progress,
    )
    click.echo(format_report(result))
    if report_path:
        save_report(result, report_path)
        click.echo(f"report -> {report_path}")
    if confusion_csv:
        confusion_to_csv(result.confusion, confusion_csv)
        click.echo(f"confusion -> {confusion_csv}")


if __name__ == "__main__":
    main(prog_name="paintbox")
