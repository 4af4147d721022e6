"""Command-line interface: ``letsne {embed,segment,eval,plot,synth}``.

Settings come from an optional JSON file (``--config``) overridden by
flags. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, network, objective, segmentation, svg
from .affinity import AffinityError
from .graph import GraphError

logger = logging.getLogger("letsne")

MODE_ALIASES = {"vis": "visualization", "visualization": "visualization",
                "labelled": "labelled", "region": "region"}
SYNTH_KINDS = ("blobs", "swissroll", "cube")
COLOR_BY = ("label", "region", "component")


class UsageError(Exception):
    """Bad configuration or missing inputs; maps to exit code 2."""


@dataclass
class RunConfig:
    input: str | None = None
    out: str = "run"
    seed: int = 0
    # embedding
    mode: str = "vis"
    cf: float | None = None
    lam: float = 1.0
    perplexity: float = 30.0
    k: int = 10
    dims: int = 2
    epochs: int = 50
    batch_size: int = 256
    hidden: list = field(default_factory=lambda: [256, 64])
    lr: float = 1e-3
    label_column: str | None = None
    ignore_columns: list = field(default_factory=list)
    regions: str | None = None
    standardize: bool = True
    # segmentation
    target_regions: int = 256
    compactness: float = 10.0
    slic_iters: int = 10
    merge_threshold: float = 0.0
    channels: int = 3
    # evaluation
    embeddings: str | None = None
    train_fraction: float = 0.7
    svm_c: float = 1e-3
    svm_epochs: int = 200
    baseline: str | None = None
    # plotting
    colors: str | None = None
    color_by: str = "label"
    point_size: float = 2.5
    # synthesis
    kind: str = "blobs"
    n_per_class: int = 50
    classes: int = 3
    d: int = 10
    spread: float = 1.0
    n: int = 500
    noise: float = 0.0
    height: int = 16
    width: int = 16
    bands: int = 20

    @classmethod
    def build(cls, file_values, overrides):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(file_values) - names)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        values = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise UsageError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self):
        if self.mode not in MODE_ALIASES:
            raise UsageError(f"mode must be one of vis|labelled|region, got {self.mode!r}")
        if self.color_by not in COLOR_BY:
            raise UsageError(f"color_by must be one of {COLOR_BY}")
        if self.channels not in (1, 3):
            raise UsageError("channels must be 1 or 3")
        if self.baseline not in (None, "pca"):
            raise UsageError("baseline must be 'pca' when given")

    def train_config(self):
        try:
            return objective.TrainConfig(
                mode=MODE_ALIASES[self.mode], perplexity=self.perplexity, cf=self.cf,
                lam=self.lam, k=self.k, batch_size=self.batch_size, epochs=self.epochs,
                seed=self.seed, dims=self.dims, hidden=tuple(self.hidden), lr=self.lr,
            )
        except objective.ConfigError as exc:
            raise UsageError(str(exc)) from None

    def to_dict(self):
        return dataclasses.asdict(self)


def fmt(v):
    return format(float(v), ".17g")


def write_matrix_csv(path, matrix, prefix="y"):
    matrix = np.asarray(matrix, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(f"{prefix}{j}" for j in range(matrix.shape[1])) + "\n")
        for row in matrix:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_matrix_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise UsageError(f"{path}: no data rows")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:] if r])
    except ValueError:
        raise UsageError(f"{path}: non-numeric cell") from None


def read_column(path, column):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise UsageError(f"{path}: no column {column!r}")
        return [row[column] for row in reader]


def load_input(cfg, need_labels=False):
    if cfg.input is None:
        raise UsageError("missing required field: input")
    path = Path(cfg.input)
    if not path.exists():
        raise UsageError(f"input {path} does not exist")
    with path.open("rb") as fh:
        is_cube = fh.read(len(data_mod.CUBE_MAGIC)) == data_mod.CUBE_MAGIC
    if is_cube:
        dm = data_mod.load_cube(path)
    else:
        dm = data_mod.load_tabular(path, cfg.label_column, cfg.ignore_columns)
    if need_labels and (dm.labels is None or not dm.labelled_mask.any()):
        raise UsageError("labels are required: set label_column (or use a labelled cube)")
    return dm


def segmentation_image(dm, channels):
    """First ``channels`` principal components of a gridded dataset as an image."""
    comps = evaluation.pca_project(dm.values, min(channels, dm.d))
    h, w = dm.grid
    return segmentation.rescale_channels(comps.reshape(h, w, -1))


def segment_data(dm, cfg):
    if dm.grid is None:
        raise UsageError("segmentation needs image input with grid geometry (an HSC cube)")
    image = segmentation_image(dm, cfg.channels)
    target = min(cfg.target_regions, dm.n)
    regions = segmentation.slic(image, target, cfg.compactness, cfg.slic_iters)
    if cfg.merge_threshold > 0:
        regions = segmentation.merge_regions(regions, image, cfg.merge_threshold)
    return regions


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_embed(cfg):
    tc = cfg.train_config()
    dm = load_input(cfg, need_labels=tc.mode == "labelled")
    if cfg.standardize:
        dm = data_mod.standardize(dm)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    regions = None
    written = ["embeddings.csv", "loss.csv", "manifest.json", "model.bin"]
    if tc.mode == "region":
        if cfg.regions:
            regions = segmentation.load_region_map(cfg.regions)
        else:
            regions = segment_data(dm, cfg)
            segmentation.save_region_map(regions, out / "regions.csv")
            written.append("regions.csv")
    model, result = objective.train(dm, tc, regions=regions)
    write_matrix_csv(out / "embeddings.csv", result.y)
    with (out / "loss.csv").open("w") as fh:
        fh.write("epoch,laplacian_term,kl_term,total\n")
        for e, (lap, kl, tot) in enumerate(result.history):
            fh.write(f"{e},{fmt(lap)},{fmt(kl)},{fmt(tot)}\n")
    network.save_model(model, out / "model.bin")
    manifest = {
        "command": "embed",
        "config": cfg.to_dict(),
        "train_config": tc.to_dict(),
        "n_samples": dm.n,
        "n_features": dm.d,
        "n_regions": None if regions is None else regions.n_regions,
        "outputs": sorted(written),
    }
    _write_json(out / "manifest.json", manifest)
    return 0


def cmd_segment(cfg):
    dm = load_input(cfg)
    if dm.grid is None:
        raise UsageError("segment needs image input with grid geometry (an HSC cube)")
    dm = data_mod.standardize(dm)
    regions = segment_data(dm, cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    segmentation.save_region_map(regions, out / "regions.csv")
    (out / "regions.svg").write_text(svg.regions_svg(regions.ids))
    logger.info("%d regions", regions.n_regions)
    return 0


def cmd_eval(cfg):
    dm = load_input(cfg, need_labels=True)
    if cfg.baseline == "pca":
        x = evaluation.pca_project(data_mod.standardize(dm).values, cfg.dims)
    elif cfg.embeddings:
        x = read_matrix_csv(cfg.embeddings)
    else:
        raise UsageError("missing required field: embeddings (or baseline='pca')")
    if x.shape[0] != dm.n:
        raise UsageError(f"embeddings have {x.shape[0]} rows, labels {dm.n}")
    report = evaluation.evaluate(x, dm.labels, cfg.train_fraction, cfg.seed,
                                 c=cfg.svm_c, epochs=cfg.svm_epochs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    return 0


def cmd_plot(cfg):
    if not cfg.embeddings:
        raise UsageError("missing required field: embeddings")
    y = read_matrix_csv(cfg.embeddings)
    colors, continuous = None, False
    if cfg.colors:
        if cfg.color_by == "region":
            colors = segmentation.load_region_map(cfg.colors).flat()
        elif cfg.color_by == "label":
            raw = read_column(cfg.colors, cfg.label_column or "label")
            colors = data_mod._remap_labels(raw)
        else:
            colors = np.array([float(v) for v in read_column(cfg.colors, cfg.label_column or "t")])
            continuous = True
        if len(colors) != y.shape[0]:
            raise UsageError(f"{len(colors)} colors for {y.shape[0]} points")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plot.svg").write_text(
        svg.scatter_svg(y, colors, continuous=continuous, radius=cfg.point_size)
    )
    return 0


def cmd_synth(cfg):
    if cfg.kind not in SYNTH_KINDS:
        raise UsageError(f"kind must be one of {SYNTH_KINDS}, got {cfg.kind!r}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "blobs":
        dm = data_mod.make_blobs(cfg.n_per_class, cfg.classes, cfg.d, cfg.spread, cfg.seed)
        data_mod.save_tabular(dm, out / "blobs.csv")
    elif cfg.kind == "swissroll":
        dm = data_mod.make_swiss_roll(cfg.n, cfg.noise, cfg.seed)
        data_mod.save_tabular(dm, out / "swissroll.csv")
    else:
        dm = data_mod.make_block_cube(cfg.height, cfg.width, cfg.bands, cfg.seed,
                                      noise=cfg.noise or 0.3, classes=cfg.classes)
        # cube labels are 1-based on disk; every pixel here is labelled
        data_mod.save_cube(dm, out / "cube.hsc")
    return 0


COMMANDS = {"embed": cmd_embed, "segment": cmd_segment, "eval": cmd_eval,
            "plot": cmd_plot, "synth": cmd_synth}


def _csv_list(text):
    return [t for t in text.split(",") if t]


def build_parser():
    parser = argparse.ArgumentParser(prog="letsne", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--input", help="dataset: CSV or HSC cube")
        p.add_argument("--label-column", dest="label_column")
        p.add_argument("--ignore-columns", dest="ignore_columns", type=_csv_list)

    def train_flags(p):
        p.add_argument("--mode", choices=sorted(MODE_ALIASES))
        p.add_argument("--cf", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--perplexity", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--dims", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--hidden", type=lambda s: [int(v) for v in _csv_list(s)])
        p.add_argument("--lr", type=float)
        p.add_argument("--regions", help="region-map CSV for region mode")

    def seg_flags(p):
        p.add_argument("--target-regions", dest="target_regions", type=int)
        p.add_argument("--compactness", type=float)
        p.add_argument("--slic-iters", dest="slic_iters", type=int)
        p.add_argument("--merge-threshold", dest="merge_threshold", type=float)
        p.add_argument("--channels", type=int)

    p = sub.add_parser("embed", help="train an encoder and project the dataset")
    common(p), train_flags(p), seg_flags(p)
    p = sub.add_parser("segment", help="superpixel region map of a cube")
    common(p), seg_flags(p)
    p = sub.add_parser("eval", help="SVM accuracy/kappa of embeddings")
    common(p)
    p.add_argument("--embeddings")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--svm-c", dest="svm_c", type=float)
    p.add_argument("--baseline", choices=["pca"])
    p.add_argument("--dims", type=int)
    p = sub.add_parser("plot", help="SVG scatter of embeddings")
    common(p)
    p.add_argument("--embeddings")
    p.add_argument("--colors", help="CSV providing colors (labels, region grid, or values)")
    p.add_argument("--color-by", dest="color_by", choices=COLOR_BY)
    p.add_argument("--point-size", dest="point_size", type=float)
    p = sub.add_parser("synth", help="write a synthetic dataset")
    common(p)
    p.add_argument("--kind")
    for name, typ in (("n-per-class", int), ("classes", int), ("d", int), ("spread", float),
                      ("n", int), ("noise", float), ("height", int), ("width", int),
                      ("bands", int)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    try:
        file_values = {}
        if args.config:
            try:
                file_values = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from None
            if not isinstance(file_values, dict):
                raise UsageError("config file must hold a JSON object")
        cfg = RunConfig.build(file_values, overrides)
        return COMMANDS[args.command](cfg)
    except (UsageError, objective.ConfigError, segmentation.SegmentationError) as exc:
        print(f"letsne {args.command}: {exc}", file=sys.stderr)
        return 2
    except data_mod.DataError as exc:
        print(f"letsne {args.command}: {exc}", file=sys.stderr)
        return 2
    except (network.TrainingError, network.NetworkError, AffinityError, GraphError,
            evaluation.EvalError, OSError) as exc:
        print(f"letsne {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
