"""Command-line surface: synth, decompose, train, predict, evaluate, crossval.

Settings resolve in three layers: built-in defaults, then an optional
`key = value` config file, then explicit flags.  Every run is
reproducible from (argv, seed).  Exit codes: 0 success, 1 usage error,
2 data error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import evaluation, imageio, network, perf, predict, synth, training, wavelet

CHANNEL_FLAGS = {"1": "base", "4d1": "d1", "4d2": "d2", "7": "d1d2"}
MODE_CHANNELS = {"base": 1, "d1": 4, "d2": 4, "d1d2": 7}

REPORT_HEADER = ("image", "fold", "Sn", "Sp", "Acc", "AUC")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclass
class RunConfig:
    """Resolved tunables shared by the pipeline commands.

    Defaults are the reference operating point: d2 wavelet channels,
    multiple prediction, rotation augmentation, and the 20-epoch staged
    schedule.
    """

    channels: str = "4d2"
    mode: str = "multiple"
    augment: str = "rotations"
    consecutive_rotations: bool = False
    dropout: str = "spatial"
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0
    patches_per_image: int = 2750
    decay: float = 1e-6
    threshold: float = 0.5
    k: int = 5
    jobs: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.channels not in CHANNEL_FLAGS:
            raise DataError(f"channels must be one of {sorted(CHANNEL_FLAGS)}")
        if self.mode not in predict.PREDICTION_MODES:
            raise DataError(f"mode must be one of {predict.PREDICTION_MODES}")
        if self.augment not in training.AUGMENT_MODES:
            raise DataError(f"augment must be one of {training.AUGMENT_MODES}")
        if self.dropout not in network.DROPOUT_MODES:
            raise DataError(f"dropout must be one of {network.DROPOUT_MODES}")


_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_kv_file(path: str) -> dict[str, str]:
    raw = {}
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, eq, value = line.partition("=")
                if not eq:
                    raise DataError(f"{path}:{ln}: expected 'key = value'")
                raw[key.strip()] = value.strip()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    return raw


def resolve_run_config(config_file: str | None, flag_values: dict) -> RunConfig:
    """Merge defaults <- config file <- explicit flags into a RunConfig."""
    values: dict = {}
    field_types = {f.name: f.type for f in fields(RunConfig)}
    if config_file:
        for key, raw in _parse_kv_file(config_file).items():
            if key not in field_types:
                raise DataError(f"unknown config key {key!r} in {config_file}")
            kind = field_types[key]
            if kind == "bool":
                if raw.lower() not in _BOOL_STRINGS:
                    raise DataError(f"config key {key!r}: cannot parse bool from {raw!r}")
                values[key] = _BOOL_STRINGS[raw.lower()]
            elif kind == "int":
                values[key] = int(raw)
            elif kind == "float":
                values[key] = float(raw)
            else:
                values[key] = raw
    for key, value in flag_values.items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise DataError(str(exc)) from exc


_ARCH_KEYS = (
    "base_width",
    "encoder_convs",
    "bottleneck_convs",
    "decoder_convs",
    "dropout_p",
    "dropout_p_last",
)


def _arch_overrides(path: str) -> dict:
    out = {}
    for key, raw in _parse_kv_file(path).items():
        if key not in _ARCH_KEYS:
            raise DataError(f"unknown architecture key {key!r} (allowed: {_ARCH_KEYS})")
        if key in ("encoder_convs", "decoder_convs"):
            out[key] = tuple(int(v) for v in raw.split(","))
        elif key in ("dropout_p", "dropout_p_last"):
            out[key] = float(raw)
        else:
            out[key] = int(raw)
    return out


def build_arch(cfg: RunConfig, arch_file: str | None) -> network.ArchConfig:
    mode = CHANNEL_FLAGS[cfg.channels]
    kwargs = dict(
        in_channels=MODE_CHANNELS[mode],
        channel_mode=mode,
        dropout_mode=cfg.dropout,
    )
    if arch_file:
        kwargs.update(_arch_overrides(arch_file))
    try:
        return network.ArchConfig(**kwargs)
    except ValueError as exc:
        raise DataError(f"invalid architecture: {exc}") from exc


def build_train_config(cfg: RunConfig, seed: int | None = None) -> training.TrainConfig:
    try:
        return training.TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            decay=cfg.decay,
            seed=cfg.seed if seed is None else seed,
            patches_per_image=cfg.patches_per_image,
            augment=cfg.augment,
            consecutive_rotations=cfg.consecutive_rotations,
        )
    except ValueError as exc:
        raise DataError(f"invalid training config: {exc}") from exc


# ---------------------------------------------------------------------------
# manifests and per-image data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    truth: str
    fov: str
    stratum: str

    @property
    def stem(self) -> str:
        return os.path.splitext(os.path.basename(self.image))[0]


def load_manifest(path: str) -> list[ManifestEntry]:
    """Read tab-separated (image, truth, fov, stratum) records.

    Relative paths resolve against the manifest's directory; every
    referenced file must exist.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise DataError(f"{path}:{ln}: expected 4 tab-separated fields")
                paths = [
                    p if os.path.isabs(p) else os.path.join(base, p) for p in parts[:3]
                ]
                for p in paths:
                    if not os.path.isfile(p):
                        raise DataError(f"{path}:{ln}: missing file {p}")
                entries.append(ManifestEntry(*paths, stratum=parts[3]))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not entries:
        raise DataError(f"manifest {path} is empty")
    return entries


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def load_entry(entry: ManifestEntry):
    """(image, truth plane, fov bits) with dimension validation."""
    try:
        image = imageio.read_pnm(_read(entry.image))
        truth = imageio.read_binary_plane(_read(entry.truth))
        fov = imageio.read_fov_mask(_read(entry.fov))
    except ValueError as exc:
        raise DataError(f"{entry.stem}: {exc}") from exc
    if truth.shape != image.shape[:2] or fov.shape != image.shape[:2]:
        raise DataError(
            f"{entry.stem}: image {image.shape[:2]}, truth {truth.shape}, "
            f"fov {fov.shape} dimensions disagree"
        )
    return image, truth, fov


def build_stack(image: np.ndarray, fov: np.ndarray, mode: str) -> wavelet.InputStack:
    try:
        green = imageio.normalize(imageio.green_channel(image), fov)
        return wavelet.build_input_stack(green, fov, mode)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    cfg = resolve_run_config(args.config, {"seed": args.seed})
    manifest = synth.synth_generate(args.count, args.width, args.height, cfg.seed, args.out)
    print(manifest)
    return 0


def _cmd_decompose(args) -> int:
    try:
        image = imageio.read_pnm(_read(args.image))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load image {args.image}: {exc}") from exc
    fov = None
    if args.fov:
        try:
            fov = imageio.read_fov_mask(_read(args.fov))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load FOV {args.fov}: {exc}") from exc
    green = imageio.normalize(imageio.green_channel(image), fov)
    levels = wavelet.swt2d(green, args.levels)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    planes = []
    for lv in levels:
        planes += [
            (f"{stem}_dV{lv.level}", lv.detail_v),
            (f"{stem}_dH{lv.level}", lv.detail_h),
            (f"{stem}_dD{lv.level}", lv.detail_d),
        ]
    planes.append((f"{stem}_a{levels[-1].level}", levels[-1].approx))
    scales = []
    for name, plane in planes:
        lo, hi = float(plane.min()), float(plane.max())
        scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
        data = imageio.write_pnm(np.rint(scaled * 65535.0).astype(np.uint16))
        with open(os.path.join(args.out, f"{name}.pgm"), "wb") as fh:
            fh.write(data)
        scales.append(f"{name} {lo!r} {hi!r}")
    with open(os.path.join(args.out, f"{stem}_scales.txt"), "w") as fh:
        fh.write("\n".join(scales) + "\n")
    print(os.path.join(args.out, f"{stem}_scales.txt"))
    return 0


def _load_dataset(entries, mode):
    dataset = []
    truths = []
    for entry in entries:
        image, truth, fov = load_entry(entry)
        dataset.append((build_stack(image, fov, mode), truth.astype(np.float64), fov))
        truths.append(truth)
    return dataset, truths


def _train_on(entries, cfg: RunConfig, arch, seed, out_dir) -> network.Model:
    dataset, _ = _load_dataset(entries, arch.channel_mode)
    os.makedirs(out_dir, exist_ok=True)
    tcfg = build_train_config(cfg, seed)

    def on_epoch(epoch, model, entry):
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            with open(os.path.join(out_dir, f"model_epoch{epoch:03d}.bin"), "wb") as fh:
                fh.write(network.save_model(model))

    try:
        model, log = training.train(tcfg, arch, dataset, on_epoch=on_epoch)
    except (ValueError, RuntimeError) as exc:
        raise DataError(f"training failed: {exc}") from exc
    with open(os.path.join(out_dir, "model.bin"), "wb") as fh:
        fh.write(network.save_model(model))
    with open(os.path.join(out_dir, "train_log.csv"), "w") as fh:
        fh.write("epoch,mean_loss,lr\n")
        for epoch, loss, lr in log:
            fh.write(f"{epoch},{loss!r},{lr!r}\n")
    return model


def _cmd_train(args) -> int:
    cfg = _run_config_from(args)
    arch = build_arch(cfg, args.arch)
    entries = load_manifest(args.manifest)
    _train_on(entries, cfg, arch, cfg.seed, args.out)
    print(os.path.join(args.out, "model.bin"))
    return 0


def _load_model(path: str) -> network.Model:
    try:
        return network.load_model(_read(path))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc


def _predict_entry(model, entry, mode, threshold):
    image, truth, fov = load_entry(entry)
    stack = build_stack(image, fov, model.config.channel_mode)
    try:
        prob_map, binary = predict.segment_image(model, stack, fov, mode, threshold)
    except ValueError as exc:
        raise DataError(f"{entry.stem}: {exc}") from exc
    return prob_map, binary, truth, fov


def _write_maps(out_dir, stem, prob_map, binary):
    with open(os.path.join(out_dir, f"{stem}_prob.pgm"), "wb") as fh:
        fh.write(imageio.write_probability_plane(prob_map.vessel))
    with open(os.path.join(out_dir, f"{stem}_bin.pgm"), "wb") as fh:
        fh.write(imageio.write_binary_plane(binary))


def _cmd_predict(args) -> int:
    cfg = _run_config_from(args)
    model = _load_model(args.model)
    entries = load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    for entry in entries:
        prob_map, binary, _, _ = _predict_entry(model, entry, cfg.mode, cfg.threshold)
        _write_maps(args.out, entry.stem, prob_map, binary)
    print(args.out)
    return 0


def _score(prob, truth, fov, threshold):
    binary = (prob >= threshold).astype(np.uint8)
    try:
        sn, sp, acc = evaluation.metrics(evaluation.confusion(binary, truth, fov))
        auc = evaluation.roc_auc(prob, truth, fov).auc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return sn, sp, acc, auc


def _write_report(path, rows):
    """rows: (image, fold, sn, sp, acc, auc); appends the mean row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in rows:
            writer.writerow(
                [row[0], row[1]] + [f"{v:.6f}" for v in row[2:]]
            )
        means = [float(np.mean([r[i] for r in rows])) for i in range(2, 6)]
        writer.writerow(["mean", ""] + [f"{v:.6f}" for v in means])
    return means


def _read_report(path):
    rows = {}
    try:
        with open(path, newline="") as fh:
            for record in csv.DictReader(fh):
                if record["image"] == "mean":
                    continue
                rows[record["image"]] = tuple(
                    float(record[m]) for m in ("Sn", "Sp", "Acc", "AUC")
                )
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot parse report {path}: {exc}") from exc
    if not rows:
        raise DataError(f"report {path} has no image rows")
    return rows


def _cmd_evaluate(args) -> int:
    cfg = _run_config_from(args)
    entries = load_manifest(args.manifest)
    rows = []
    for entry in entries:
        _, truth, fov = load_entry(entry)
        prob_path = os.path.join(args.pred_dir, f"{entry.stem}_prob.pgm")
        if not os.path.isfile(prob_path):
            raise DataError(f"missing probability map {prob_path}")
        try:
            prob = imageio.read_probability_plane(_read(prob_path))
        except ValueError as exc:
            raise DataError(f"{prob_path}: {exc}") from exc
        if prob.shape != truth.shape:
            raise DataError(f"{prob_path}: dimensions do not match {entry.stem}")
        rows.append((entry.stem, "") + _score(prob, truth, fov, cfg.threshold))
    _write_report(args.out, rows)
    if args.compare:
        ours = {r[0]: r[2:] for r in rows}
        other = _read_report(args.compare)
        common = sorted(set(ours) & set(other))
        if not common:
            raise DataError("no common images between the two reports")
        lines = ["metric,W,p"]
        for i, metric in enumerate(("Sn", "Sp", "Acc", "AUC")):
            pairs = [(ours[img][i], other[img][i]) for img in common]
            try:
                w, p = evaluation.wilcoxon_signed_rank(pairs)
                lines.append(f"{metric},{w!r},{p!r}")
            except ValueError:
                lines.append(f"{metric},nan,nan")
        text = "\n".join(lines) + "\n"
        with open(args.out + ".wilcoxon.csv", "w") as fh:
            fh.write(text)
        sys.stdout.write(text)
    print(args.out)
    return 0


def _fold_seed(seed: int, fold: int) -> int:
    return seed + fold


def _run_fold(payload):
    """Train one fold and score its held-out images (process-pool friendly)."""
    (fold, manifest_path, test_idx, cfg_kwargs, arch_text, out_dir) = payload
    perf.tune_process()
    cfg = RunConfig(**cfg_kwargs)
    arch = network.config_from_text(arch_text)
    entries = load_manifest(manifest_path)
    test_set = set(test_idx)
    train_entries = [e for i, e in enumerate(entries) if i not in test_set]
    fold_dir = os.path.join(out_dir, f"fold_{fold}")
    model = _train_on(train_entries, cfg, arch, _fold_seed(cfg.seed, fold), fold_dir)
    maps_dir = os.path.join(fold_dir, "maps")
    os.makedirs(maps_dir, exist_ok=True)
    rows = []
    for i in sorted(test_set):
        entry = entries[i]
        prob_map, binary, truth, fov = _predict_entry(model, entry, cfg.mode, cfg.threshold)
        _write_maps(maps_dir, entry.stem, prob_map, binary)
        rows.append((i, entry.stem, fold) + _score(prob_map.vessel, truth, fov, cfg.threshold))
    return rows


def _cmd_crossval(args) -> int:
    cfg = _run_config_from(args)
    arch = build_arch(cfg, args.arch)
    entries = load_manifest(args.manifest)
    if cfg.k < 2 or cfg.k > len(entries):
        raise DataError(f"k must be in 2..{len(entries)} for this manifest")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    split = evaluation.stratified_kfold([e.stratum for e in entries], cfg.k, rng)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "folds.tsv"), "w") as fh:
        for entry, fold in zip(entries, split.assignments):
            fh.write(f"{entry.stem}\t{fold}\n")
    payloads = [
        (
            fold,
            os.path.abspath(args.manifest),
            [int(i) for i in split.fold_items(fold)],
            {f.name: getattr(cfg, f.name) for f in fields(RunConfig)},
            network.config_to_text(arch),
            os.path.abspath(args.out),
        )
        for fold in range(cfg.k)
    ]
    jobs = cfg.jobs or min(cfg.k, os.cpu_count() or 1)
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            fold_rows = list(pool.map(_run_fold, payloads))
    else:
        fold_rows = [_run_fold(p) for p in payloads]
    indexed = sorted(row for rows in fold_rows for row in rows)
    report_rows = [row[1:] for row in indexed]
    means = _write_report(os.path.join(args.out, "report.csv"), report_rows)
    print(
        "mean over held-out folds: "
        f"Sn={means[0]:.4f} Sp={means[1]:.4f} Acc={means[2]:.4f} AUC={means[3]:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _add_shared_flags(p, *names):
    if "channels" in names:
        p.add_argument("--channels", choices=sorted(CHANNEL_FLAGS))
    if "mode" in names:
        p.add_argument("--mode", choices=list(predict.PREDICTION_MODES))
    if "train" in names:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", dest="batch_size", type=int)
        p.add_argument("--patches-per-image", dest="patches_per_image", type=int)
        p.add_argument("--augment", choices=list(training.AUGMENT_MODES))
        p.add_argument(
            "--consecutive-rotations",
            dest="consecutive_rotations",
            action="store_const",
            const=True,
        )
        p.add_argument("--dropout", choices=list(network.DROPOUT_MODES))
        p.add_argument("--decay", type=float)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        p.add_argument("--arch")
    if "threshold" in names:
        p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")


_RUN_KEYS = (
    "channels",
    "mode",
    "augment",
    "consecutive_rotations",
    "dropout",
    "epochs",
    "batch_size",
    "seed",
    "patches_per_image",
    "decay",
    "threshold",
    "k",
    "jobs",
    "checkpoint_every",
)


def _run_config_from(args) -> RunConfig:
    flag_values = {k: getattr(args, k, None) for k in _RUN_KEYS}
    return resolve_run_config(args.config, flag_values)


def build_parser() -> _Parser:
    parser = _Parser(prog="vesselseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--out", required=True)
    _add_shared_flags(p)

    p = sub.add_parser("decompose", help="write wavelet coefficient planes as PNM")
    p.add_argument("--image", required=True)
    p.add_argument("--fov")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--out", required=True)
    _add_shared_flags(p)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_shared_flags(p, "channels", "train")

    p = sub.add_parser("predict", help="segment every manifest image with a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_shared_flags(p, "mode", "threshold")

    p = sub.add_parser("evaluate", help="score saved probability maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", dest="pred_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--compare", help="another report CSV for paired signed-rank tests")
    _add_shared_flags(p, "threshold")

    p = sub.add_parser("crossval", help="stratified k-fold train/evaluate cycle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--jobs", type=int, help="parallel fold workers (0 = auto)")
    _add_shared_flags(p, "channels", "mode", "train", "threshold")
    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "decompose": _cmd_decompose,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "crossval": _cmd_crossval,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("train", "predict", "evaluate", "crossval"):
            perf.tune_process()
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
