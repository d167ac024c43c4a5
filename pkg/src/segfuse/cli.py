"""Command-line entry point: ``segfuse {preprocess,resample,fuse,evaluate,phantom}``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 validation error.
Failures print one line to stderr::

    segfuse: error code=4 kind=GeometryError case=case_01 message=...

Manifests are text files with one case per line, fields separated by tabs
(or whitespace when a line has no tab); ``#`` starts a comment line and
relative paths are resolved against the manifest's directory::

    preprocess:  <id> <image> <labels>
    fuse:        <id> <full> <low> [<low2>]
    evaluate:    <id> <prediction> <ground truth>
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kvtext, phantom, preprocess, report, resample
from .fusion import DEFAULT_CONFIG, ConfigError, FusionConfig, ensemble_join, postprocess_pair
from .metrics import aggregate, evaluate_case
from .volio import LabelRangeError, VolumeIOError, read_volume, write_volume
from .volume import CLASS_CODES, GeometryError, LabelValueError, LabelVolume

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


class CaseError(Exception):
    def __init__(self, case_id: str, error: BaseException):
        super().__init__(str(error))
        self.case_id = case_id
        self.error = error


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    paths: tuple[Path, ...]


def read_manifest(path, min_fields: int, max_fields: int) -> list[ManifestEntry]:
    path = Path(path)
    entries, seen = [], set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in (line.split("\t") if "\t" in line else line.split())]
        fields = [f for f in fields if f]
        if not min_fields <= len(fields) - 1 <= max_fields:
            raise ManifestError(
                f"{path}:{lineno}: expected an id and {min_fields}-{max_fields} paths, got {len(fields)} fields"
            )
        case_id = fields[0]
        if case_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate case id {case_id!r}")
        seen.add(case_id)
        paths = tuple(p if p.is_absolute() else path.parent / p for p in map(Path, fields[1:]))
        for p in paths:
            if not p.exists():
                raise CaseError(case_id, FileNotFoundError(f"{p} does not exist"))
        entries.append(ManifestEntry(case_id, paths))
    if not entries:
        raise ManifestError(f"{path}: no cases")
    return entries


# Class-code remapping between a file convention and the internal KiTS codes.


def parse_remap(text: str | None) -> np.ndarray | None:
    """``"2:3,3:2"`` maps file code 2 to internal 3 and vice versa; unlisted codes map to themselves."""
    if not text:
        return None
    lut = np.arange(len(CLASS_CODES), dtype=np.uint8)
    for item in text.split(","):
        src, sep, dst = item.partition(":")
        if not sep:
            raise ValueError(f"bad remap item {item!r}; expected FILE_CODE:INTERNAL_CODE")
        src, dst = int(src), int(dst)
        if src not in CLASS_CODES or dst not in CLASS_CODES:
            raise ValueError(f"remap codes must be in {CLASS_CODES}")
        lut[src] = dst
    if sorted(lut.tolist()) != list(CLASS_CODES):
        raise ValueError(f"remap {text!r} is not a permutation of {CLASS_CODES}")
    return lut


def read_labels(path, remap: np.ndarray | None) -> LabelVolume:
    labels = read_volume(path, kind="label")
    return labels if remap is None else labels.with_data(remap[labels.data])


def write_labels(labels: LabelVolume, path, remap: np.ndarray | None) -> None:
    if remap is not None:
        labels = labels.with_data(np.argsort(remap).astype(np.uint8)[labels.data])
    write_volume(labels, path)


def _run_cases(func: Callable, jobs: list[tuple], n_jobs: int) -> list:
    """Run ``func(*args)`` per case; the first element of each args tuple is the case id."""
    if n_jobs <= 1 or len(jobs) <= 1:
        results = []
        for args in jobs:
            try:
                results.append(func(*args))
            except Exception as exc:
                raise CaseError(args[0], exc) from exc
        return results
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [(args[0], pool.submit(func, *args)) for args in jobs]
        results = []
        for case_id, future in futures:
            try:
                results.append(future.result())
            except Exception as exc:
                raise CaseError(case_id, exc) from exc
        return results


# preprocess


def _load_stats(option: str, entries: list[ManifestEntry]) -> preprocess.IntensityStats:
    if option == "kits23":
        return preprocess.KITS23_STATS
    if option == "computed":
        cases = [
            (read_volume(e.paths[0], kind="image"), read_volume(e.paths[1], kind="label"))
            for e in entries
        ]
        return preprocess.compute_foreground_stats(cases)
    return preprocess.IntensityStats.from_dict(kvtext.read(option))


def _preprocess_case(case_id, image_path, label_path, remap, target, stats, out_dir):
    image = read_volume(image_path, kind="image")
    labels = read_labels(label_path, remap)
    if target is not None:
        image = resample.resample_image(image, target)
        labels = resample.resample_labels(labels, target)
    image = preprocess.clip_and_normalize(image, stats)
    out_dir = Path(out_dir)
    write_volume(image, out_dir / f"{case_id}_image.nii.gz")
    write_labels(labels, out_dir / f"{case_id}_labels.nii.gz", remap)
    return case_id


def cmd_preprocess(args) -> int:
    remap = parse_remap(args.remap)
    entries = read_manifest(args.manifest, 2, 2)
    stats = _load_stats(args.stats, entries)
    target = resample.PRESETS.get(args.preset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kvtext.write(stats.to_dict(), out_dir / "stats.txt")
    jobs = [(e.case_id, *e.paths, remap, target, stats, out_dir) for e in entries]
    _run_cases(_preprocess_case, jobs, args.jobs)
    return 0


# resample


def cmd_resample(args) -> int:
    if args.preset:
        spec = resample.PRESETS[args.preset]
    elif args.spacing:
        spec = resample.TargetSpec(spacing=tuple(args.spacing))
    else:
        spec = resample.TargetSpec(geometry=read_volume(args.like).geometry)
    volume = read_volume(args.input, kind=args.kind)
    if args.kind == "label":
        out = resample.resample_labels(volume, spec)
    else:
        out = resample.resample_image(volume, spec)
    write_volume(out, args.output)
    return 0


# fuse


def load_config(option: str) -> FusionConfig:
    if option == "default":
        return DEFAULT_CONFIG
    return FusionConfig.load(option)


def fuse_case(full: LabelVolume, low: LabelVolume, low2: LabelVolume | None, cfg: FusionConfig) -> LabelVolume:
    """One full-res map with one or two low-res maps; two pairs are fused then joined."""
    first = postprocess_pair(full, low, cfg)
    if low2 is None:
        return first
    return ensemble_join([first, postprocess_pair(full, low2, cfg)], cfg)


def _fuse_job(case_id, full_path, low_path, low2_path, out_path, cfg, remap):
    full = read_labels(full_path, remap)
    low = read_labels(low_path, remap)
    low2 = read_labels(low2_path, remap) if low2_path is not None else None
    write_labels(fuse_case(full, low, low2, cfg), out_path, remap)
    return case_id


def cmd_fuse(args) -> int:
    cfg = load_config(args.config)
    remap = parse_remap(args.remap)
    if args.dump_config:
        kvtext.write(cfg.to_entries(), args.dump_config)
    if args.manifest:
        if not args.out_dir:
            raise argparse.ArgumentTypeError("--manifest requires --out-dir")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = []
        for e in read_manifest(args.manifest, 2, 3):
            low2 = e.paths[2] if len(e.paths) > 2 else None
            jobs.append((e.case_id, e.paths[0], e.paths[1], low2, out_dir / f"{e.case_id}.nii.gz", cfg, remap))
        _run_cases(_fuse_job, jobs, args.jobs)
        return 0
    if not (args.full and args.low and args.out):
        raise argparse.ArgumentTypeError("give --full, --low and --out, or --manifest and --out-dir")
    _run_cases(_fuse_job, [("-", args.full, args.low, args.low2, args.out, cfg, remap)], 1)
    return 0


# evaluate


def _evaluate_job(case_id, pred_path, gt_path, tolerance, remap):
    return evaluate_case(read_labels(pred_path, remap), read_labels(gt_path, remap), tolerance, case_id)


def cmd_evaluate(args) -> int:
    remap = parse_remap(args.remap)
    entries = read_manifest(args.manifest, 2, 2)
    jobs = [(e.case_id, *e.paths, args.tolerance_mm, remap) for e in entries]
    reports = _run_cases(_evaluate_job, jobs, args.jobs)
    summary = aggregate(reports)
    report.write_report(reports, summary, args.out_dir, figures=not args.no_figures)
    return 0


# phantom


def cmd_phantom(args) -> int:
    if args.scenario in phantom.SCENARIOS:
        spec = phantom.SCENARIOS[args.scenario]
    else:
        spec = phantom.load_scenario(args.scenario)
    scenario = phantom.build_scenario(spec, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".nii.gz" if args.format == "nii" else ".raw"
    write_volume(scenario.image, out_dir / f"image{suffix}")
    write_volume(scenario.ground_truth, out_dir / f"ground_truth{suffix}")
    write_volume(scenario.full, out_dir / f"full{suffix}")
    write_volume(scenario.low, out_dir / f"low{suffix}")
    kvtext.write(
        {
            "name": scenario.spec.name,
            "seed": scenario.spec.seed,
            "fp_voxels": scenario.fp_voxels,
            "fp_volume_mm3": scenario.fp_volume_mm3,
            "expected_raw_tumor_dice": scenario.expected_raw_tumor_dice,
        },
        out_dir / "scenario.txt",
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segfuse",
        description="Multi-scale kidney/tumor segmentation fusion, preprocessing and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add_common(p, jobs=True):
        p.add_argument(
            "--remap",
            help="label code remap FILE:INTERNAL pairs, e.g. '2:3,3:2' (internal: 0 bg, 1 kidney, 2 tumor, 3 cyst)",
        )
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="cases processed in parallel")

    p = sub.add_parser("preprocess", help="resample and intensity-normalize a manifest of cases")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preset", choices=[*resample.PRESETS, "none"], default="fullres")
    p.add_argument("--stats", default="kits23", help="'kits23', 'computed', or a stats file")
    add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("resample", help="resample one volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--kind", choices=["image", "label"], required=True)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--preset", choices=list(resample.PRESETS))
    target.add_argument("--spacing", type=float, nargs=3, metavar=("X", "Y", "Z"))
    target.add_argument("--like", help="reference volume whose geometry is copied")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("fuse", help="fuse full- and low-resolution predictions")
    p.add_argument("--full")
    p.add_argument("--low")
    p.add_argument("--low2", help="second low-res prediction: fuse both pairs, then join")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.add_argument("--config", default="default", help="'default' or a key = value config file")
    p.add_argument("--dump-config", help="write the effective config (with step order) here")
    add_common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tolerance-mm", type=float, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("phantom", help="write a synthetic scenario (image, truth, predictions)")
    p.add_argument("--scenario", default="fp_tumors", help=f"one of {sorted(phantom.SCENARIOS)} or a scenario file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=["nii", "raw"], default="nii")
    p.set_defaults(func=cmd_phantom)
    return parser


def _classify(exc: BaseException) -> int:
    if isinstance(exc, LabelRangeError):
        return EXIT_VALIDATION
    if isinstance(exc, (VolumeIOError, OSError)):
        return EXIT_IO
    if isinstance(exc, argparse.ArgumentTypeError):
        return EXIT_USAGE
    return EXIT_VALIDATION


def _error_line(code: int, exc: BaseException, case_id: str | None) -> str:
    message = " ".join(str(exc).split()) or type(exc).__name__
    case = f" case={case_id}" if case_id else ""
    return f"segfuse: error code={code} kind={type(exc).__name__}{case} message={message}"


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CaseError as exc:
        inner = exc.error
        code = _classify(inner)
        print(_error_line(code, inner, exc.case_id if exc.case_id != "-" else None), file=sys.stderr)
        return code
    except (
        VolumeIOError,
        OSError,
        GeometryError,
        LabelValueError,
        ConfigError,
        kvtext.KeyValueError,
        ManifestError,
        argparse.ArgumentTypeError,
        ValueError,
    ) as exc:
        code = _classify(exc)
        print(_error_line(code, exc, None), file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
