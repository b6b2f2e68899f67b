"""Pipeline entry point: store management through training, scoring, and serving.

Setting precedence is flags > config file > environment > defaults. The
config file is JSON keyed by the flag name with dashes as underscores;
environment variables use the ``CAPRANK_`` prefix (``CAPRANK_KEEP_RATIO``).
Every artifact-producing run drops a ``<artifact>.prov.json`` stamp naming
its inputs by checksum. Data errors exit 1 with one machine-parseable
line ``error: <ErrorName>: <detail>`` on stderr; usage errors exit 2.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .errors import CaprankError

ENV_PREFIX = "CAPRANK_"


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class Settings:
    """flags > config file > env > defaults, resolved per option."""

    def __init__(self, config_path=None):
        self.file_values = _load_config_file(config_path)

    def get(self, name: str, flag_value, default=None, cast=None):
        if flag_value is not None:
            return flag_value
        if name in self.file_values:
            value = self.file_values[name]
            return cast(value) if cast and isinstance(value, str) else value
        env_value = os.environ.get(ENV_PREFIX + name.upper())
        if env_value is not None:
            return cast(env_value) if cast else env_value
        return default


def _fail(error: Exception, code: int = 1):
    name = error.name if isinstance(error, CaprankError) else type(error).__name__
    detail = " ".join(str(error).split())
    click.echo(f"error: {name}: {detail}", err=True)
    sys.exit(code)


def _run(fn):
    try:
        fn()
    except CaprankError as e:
        _fail(e, 1)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        _fail(e, 1)


@click.group()
def main():
    """Caption-preference collection, reward training, corpus compression."""


@main.command("init-store")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--store-id", default="store", show_default=True)
def init_store(store_path, store_id):
    """Create an empty preference store log."""

    def go():
        from .store import PreferenceDataset

        PreferenceDataset.create(store_path, store_id=store_id).close()
        click.echo(f"initialized store {store_id} at {store_path}")

    _run(go)


@main.command("import")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
def import_log(store_path, input_path):
    """Merge another record log's entries into a store."""

    def go():
        from .store import export_store, load_store

        store = load_store(store_path)
        incoming = load_store(input_path)
        added = {"images": 0, "captions": 0, "records": 0}
        for image in incoming.images.values():
            if image.image_id not in store.images:
                store.add_image(image)
                added["images"] += 1
        for image_id, captions in incoming.captions.items():
            for caption in captions.values():
                if caption.caption_id not in store.captions.get(image_id, {}):
                    store.add_caption(caption)
                    added["captions"] += 1
        for rec in incoming.records:
            if rec.record_id not in store._record_ids:
                store.append_record(rec)
                added["records"] += 1
        export_store(store, store_path)
        click.echo(
            f"imported {added['images']} images, {added['captions']} captions, "
            f"{added['records']} records into {store_path}"
        )

    _run(go)


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--holdout-out", type=click.Path(), default=None)
@click.option("--holdout-fraction", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-pairs-per-image", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def pairgen(store_path, out_path, holdout_out, holdout_fraction, seed, max_pairs_per_image, config_path):
    """Generate comparison pairs from a store's rankings."""

    def go():
        from .pairs import generate_dataset_pairs, write_pairs
        from .provenance import write_stamp
        from .store import load_store

        settings = Settings(config_path)
        fraction = settings.get("holdout_fraction", holdout_fraction, 0.0, float)
        the_seed = settings.get("seed", seed, 0, int)
        cap = settings.get("max_pairs_per_image", max_pairs_per_image, None, int)

        store = load_store(store_path)
        train, holdout = generate_dataset_pairs(
            store, split_seed=the_seed, holdout_fraction=fraction, max_pairs_per_image=cap
        )
        write_pairs(train, out_path)
        cfg = {"seed": the_seed, "holdout_fraction": fraction, "max_pairs_per_image": cap}
        write_stamp(out_path, "pairgen", {"store": store_path}, cfg)
        click.echo(f"wrote {len(train)} train pairs to {out_path}")
        if holdout_out:
            write_pairs(holdout, holdout_out)
            write_stamp(holdout_out, "pairgen", {"store": store_path}, cfg)
            click.echo(f"wrote {len(holdout)} holdout pairs to {holdout_out}")

    _run(go)


@main.command()
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--log", "log_path", type=click.Path(), default=None)
@click.option("--holdout-pairs", type=click.Path(exists=True), default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--updates", "total_updates", type=int, default=None)
@click.option("--weight-decay", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--widths", default=None, help="comma-separated layer widths, input first")
@click.option("--dropout", default=None, help="comma-separated dropout rates")
@click.option("--activation", default=None, type=click.Choice(["relu", "gelu", "tanh"]))
@click.option("--no-dropout", is_flag=True, default=False)
@click.option("--per-image-weighting", is_flag=True, default=False)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def train(
    pairs_path,
    embeddings_path,
    out_path,
    log_path,
    holdout_pairs,
    learning_rate,
    batch_size,
    total_updates,
    weight_decay,
    seed,
    widths,
    dropout,
    activation,
    no_dropout,
    per_image_weighting,
    resume_path,
    config_path,
):
    """Train the reward head on comparison pairs."""

    def go():
        from .embeddings import load_shard_mapping
        from .ioutil import canonical_json
        from .pairs import read_pairs
        from .provenance import write_stamp
        from .reward import HeadArchitecture, TrainConfig, load_checkpoint, save_checkpoint
        from .reward import train as run_training

        settings = Settings(config_path)
        config = TrainConfig(
            learning_rate=settings.get("learning_rate", learning_rate, 1e-5, float),
            batch_size=settings.get("batch_size", batch_size, 64, int),
            total_updates=settings.get("total_updates", total_updates, 20_000, int),
            weight_decay=settings.get("weight_decay", weight_decay, 0.01, float),
            seed=settings.get("seed", seed, 0, int),
            dropout_enabled=not no_dropout,
            per_image_weighting=per_image_weighting,
        )

        dimension, embeddings = load_shard_mapping(embeddings_path)
        width_setting = settings.get("widths", widths, None)
        dropout_setting = settings.get("dropout", dropout, None)
        arch = None
        if width_setting or dropout_setting or activation:
            layer_widths = (
                tuple(int(w) for w in str(width_setting).split(","))
                if width_setting
                else HeadArchitecture.default_for_dim(dimension).layer_widths
            )
            if dropout_setting:
                rates = tuple(float(r) for r in str(dropout_setting).split(","))
            else:
                # canonical rates, truncated to fit shallower heads
                rates = HeadArchitecture().dropout_rates[: max(len(layer_widths) - 1, 0)]
            arch = HeadArchitecture(
                layer_widths=layer_widths,
                dropout_rates=rates,
                activation=activation or "relu",
            )
        elif resume_path is None:
            arch = HeadArchitecture.default_for_dim(dimension)

        train_pairs = read_pairs(pairs_path)
        holdout = read_pairs(holdout_pairs) if holdout_pairs else None
        resume_ckpt = load_checkpoint(resume_path, arch) if resume_path else None

        log_file = open(log_path, "w", encoding="utf-8") if log_path else None
        try:
            sink = None
            if log_file is not None:
                sink = lambda entry: (log_file.write(canonical_json(entry) + "\n"), log_file.flush())
            checkpoint, log = run_training(
                train_pairs,
                embeddings,
                config,
                architecture=arch,
                holdout_pairs=holdout,
                resume_from=resume_ckpt,
                log_sink=sink,
            )
        finally:
            if log_file is not None:
                log_file.close()

        save_checkpoint(checkpoint, out_path)
        inputs = {"pairs": pairs_path, "embeddings": embeddings_path}
        if holdout_pairs:
            inputs["holdout_pairs"] = holdout_pairs
        if resume_path:
            inputs["resume"] = resume_path
        write_stamp(out_path, "train", inputs, config.to_dict())
        final = log[-1] if log else {}
        click.echo(
            f"trained {config.total_updates} updates; final mean loss "
            f"{final.get('mean_loss')}; checkpoint at {out_path}"
        )
        if "holdout_pairwise_accuracy" in final:
            click.echo(f"holdout pairwise accuracy: {final['holdout_pairwise_accuracy']:.4f}")

    _run(go)


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--shards", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--workers", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def score(checkpoint_path, shards, out_path, workers, config_path):
    """Score a corpus of pair-keyed embedding shards."""

    def go():
        from .compress import score_corpus, write_score_table
        from .provenance import write_stamp
        from .reward import checkpoint_file_hash, load_checkpoint

        settings = Settings(config_path)
        n_workers = settings.get("workers", workers, 1, int)
        ckpt = load_checkpoint(checkpoint_path)
        table = score_corpus(
            ckpt,
            list(shards),
            workers=n_workers,
            checkpoint_hash=checkpoint_file_hash(checkpoint_path),
        )
        write_score_table(table, out_path)
        inputs = {"checkpoint": checkpoint_path}
        inputs.update({f"shard{i}": p for i, p in enumerate(shards)})
        write_stamp(out_path, "score", inputs, {"workers": n_workers})
        click.echo(f"scored {len(table)} pairs into {out_path}")

    _run(go)


@main.command()
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--keep-ratio", default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--approximate", is_flag=True, default=False)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def compress(scores_path, keep_ratio, out_path, approximate, config_path):
    """Select the top-k% pairs of a score table into a manifest."""

    def go():
        from .compress import (
            CompressionSpec,
            read_score_table,
            select_top,
            select_top_approximate,
            write_manifest,
        )
        from .provenance import write_stamp

        settings = Settings(config_path)
        ratio = settings.get("keep_ratio", keep_ratio, "0.5")
        spec = CompressionSpec(keep_ratio=ratio)
        table = read_score_table(scores_path)
        manifest = (
            select_top_approximate(table, spec) if approximate else select_top(table, spec)
        )
        write_manifest(manifest, out_path)
        write_stamp(
            out_path,
            "compress",
            {"scores": scores_path},
            {"keep_ratio": str(spec.keep_ratio), "approximate": approximate},
        )
        click.echo(
            f"kept {manifest.kept_count}/{manifest.input_count} pairs "
            f"(threshold {manifest.threshold!r}) in {out_path}"
        )

    _run(go)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--listing", "listing_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def apply(manifest_path, listing_path, out_path):
    """Filter a corpus listing down to the manifest's pairs."""

    def go():
        from .compress import apply_manifest, read_manifest
        from .provenance import write_stamp

        manifest = read_manifest(manifest_path)
        with open(listing_path, "r", encoding="utf-8") as f:
            kept = apply_manifest(manifest, f)
        with open(out_path, "w", encoding="utf-8") as f:
            for line in kept:
                f.write(line + "\n")
        write_stamp(
            out_path, "apply", {"manifest": manifest_path, "listing": listing_path}, {}
        )
        click.echo(f"kept {len(kept)} listing lines in {out_path}")

    _run(go)


@main.command("eval-preference")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), default=None)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), default=None)
@click.option("--cosine", is_flag=True, default=False)
@click.option("--image-shard", type=click.Path(exists=True), default=None)
@click.option("--text-shard", type=click.Path(exists=True), default=None)
@click.option("--strict", is_flag=True, default=False, help="argmax must equal the single best")
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_preference(
    store_path, checkpoint_path, embeddings_path, cosine, image_shard, text_shard, strict, out_path
):
    """Report best-caption and pairwise accuracy of a scorer on a store."""

    def go():
        from .embeddings import load_shard_mapping
        from .evaluate import CosineScorer, RewardHeadScorer, best_caption_accuracy
        from .ioutil import canonical_json
        from .provenance import write_stamp
        from .reward import checkpoint_file_hash, load_checkpoint
        from .store import load_store

        store = load_store(store_path)
        if cosine:
            if not image_shard or not text_shard:
                raise click.UsageError("--cosine needs --image-shard and --text-shard")
            di, image_vecs = load_shard_mapping(image_shard)
            dt, text_vecs = load_shard_mapping(text_shard)
            scorer = CosineScorer(image_vecs, text_vecs)
            inputs = {"store": store_path, "image_shard": image_shard, "text_shard": text_shard}
        else:
            if not checkpoint_path or not embeddings_path:
                raise click.UsageError(
                    "reward-head mode needs --checkpoint and --embeddings (or use --cosine)"
                )
            _, embeddings = load_shard_mapping(embeddings_path)
            scorer = RewardHeadScorer(
                load_checkpoint(checkpoint_path),
                embeddings,
                checkpoint_hash=checkpoint_file_hash(checkpoint_path),
            )
            inputs = {
                "store": store_path,
                "checkpoint": checkpoint_path,
                "embeddings": embeddings_path,
            }

        report = best_caption_accuracy(scorer, store, strict=strict)
        click.echo(report.render())
        if out_path:
            with open(out_path, "w", encoding="utf-8") as f:
                f.write(canonical_json(report.to_dict()) + "\n")
            write_stamp(out_path, "eval-preference", inputs, {"strict": strict})

    _run(go)


@main.command()
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--export-text", "text_path", type=click.Path(), default=None,
              help="also write the score table as tab-separated text")
def stats(scores_path, out_path, text_path):
    """Summary statistics of a score table."""

    def go():
        from .compress import export_scores_text, read_score_table
        from .evaluate import score_stats
        from .ioutil import canonical_json
        from .provenance import write_stamp

        table = read_score_table(scores_path)
        if text_path:
            export_scores_text(table, text_path)
            click.echo(f"text export at {text_path}")
        summary = score_stats(table.scores)
        click.echo(
            f"n={summary['count']} min={summary['min']:.6g} max={summary['max']:.6g} "
            f"mean={summary['mean']:.6g} median={summary['quantiles']['0.5']:.6g}"
        )
        if not summary["exact"]:
            click.echo(
                f"quantiles approximate; rank error bound "
                f"{summary['quantile_rank_error_bound']:.4g}"
            )
        if out_path:
            with open(out_path, "w", encoding="utf-8") as f:
                f.write(canonical_json(summary) + "\n")
            write_stamp(out_path, "stats", {"scores": scores_path}, {})

    _run(go)


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--lease-ttl", type=float, default=None, help="seconds")
@click.option("--labelers", default=None, help="comma-separated registered labeler ids")
@click.option("--replication", type=int, default=None)
@click.option("--ui-dir", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve(store_path, port, host, lease_ttl, labelers, replication, ui_dir, config_path):
    """Run the annotation HTTP service over a store."""

    def go():
        import uvicorn

        from .service import AnnotationService, create_app
        from .store import load_store

        settings = Settings(config_path)
        the_port = settings.get("port", port, 8100, int)
        ttl = settings.get("lease_ttl", lease_ttl, 1800.0, float)
        repl = settings.get("replication", replication, 1, int)
        labeler_setting = settings.get("labelers", labelers, None)
        labeler_set = (
            [l.strip() for l in str(labeler_setting).split(",") if l.strip()]
            if labeler_setting
            else None
        )

        store = load_store(store_path, log_appends=True)
        service = AnnotationService(
            store, labelers=labeler_set, lease_ttl=ttl, replication=repl
        )
        app = create_app(service, ui_dir=settings.get("ui_dir", ui_dir, None))
        click.echo(f"serving annotation API on {host}:{the_port} over {store_path}")
        try:
            uvicorn.run(app, host=host, port=the_port, log_level="warning")
        finally:
            store.close()

    _run(go)


@main.command()
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--images", type=int, default=None)
@click.option("--captions", "captions_per_image", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--labels", type=click.Choice(["oracle", "random"]), default=None)
@click.option("--corpus-size", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def demo(out_dir, seed, images, captions_per_image, dim, labels, corpus_size, config_path):
    """Generate the synthetic dataset used by the acceptance suite."""

    def go():
        from .demo import DemoSpec, generate_demo

        settings = Settings(config_path)
        spec = DemoSpec(
            images=settings.get("images", images, 500, int),
            captions_per_image=settings.get("captions", captions_per_image, 8, int),
            dimension=settings.get("dim", dim, 32, int),
            seed=settings.get("seed", seed, 0, int),
            labels=settings.get("labels", labels, "oracle"),
            corpus_size=settings.get("corpus_size", corpus_size, 4000, int),
        )
        paths = generate_demo(out_dir, spec)
        for name, path in paths.items():
            click.echo(f"{name}: {path}")

    _run(go)


if __name__ == "__main__":
    main()
