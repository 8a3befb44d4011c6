"""``ugda`` command line: augment | match | eval | consistency | gradcheck | hist | selftest.

Exit codes: 0 success, 1 failed check, 2 bad input.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .augment import AugmentConfig, augment_batch, write_draw_log
from .consistency import LossConfig, ToyExtractor, consistency_loss, extract_features, smooth_l1
from .dataio import (
    FormatError,
    ManifestEntry,
    load_pair,
    read_disparity,
    read_manifest,
    save_image,
    write_disparity_pfm,
)
from .metrics import (
    aggregate_reports,
    compute_d1,
    error_map,
    feature_histogram,
    format_report,
    image_histogram,
    write_error_map,
    write_histogram_csv,
    write_reports_csv,
)
from .stereo import SgmParams, match
from .tensor import InvalidInputError

log = logging.getLogger("ugda")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2

THRESHOLDS = (1.0, 2.0, 3.0)

# flags that do not influence any output file and are left out of run.cfg
_NOT_RECORDED = {"out", "jobs", "config", "verbose", "func", "corrupt_gradient"}


def _default_seed() -> int:
    env = os.environ.get("UGDA_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env, 0)
    except ValueError:
        raise InvalidInputError(f"UGDA_SEED must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", type=Path, help="tab-separated pair list")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                        help="master seed (falls back to $UGDA_SEED, then 0)")
    common.add_argument("--batch", type=int, default=4, help="stereo pairs per augmentation batch")
    common.add_argument("--jobs", type=int, default=1, help="worker threads; results do not depend on it")
    common.add_argument("-v", "--verbose", action="store_true")

    aug = common.add_argument_group("augmentation")
    aug.add_argument("--pair-mode", choices=("shared", "independent"), default="shared")
    aug.add_argument("--sigma-floor", type=float, default=1e-6)
    aug.add_argument("--clip", choices=("none", "clip01"), default="none")
    aug.add_argument("--apply-prob", type=float, default=1.0)

    sgm = common.add_argument_group("matcher")
    sgm.add_argument("--dmax", type=int, default=64)
    sgm.add_argument("--p1", type=float, default=10.0)
    sgm.add_argument("--p2", type=float, default=120.0)
    sgm.add_argument("--census-window", type=int, default=5)
    sgm.add_argument("--directions", type=int, choices=(4, 8), default=8)
    sgm.add_argument("--lr-tol", type=float, default=1.0)

    loss = common.add_argument_group("loss")
    loss.add_argument("--lambda", dest="lam", type=float, default=0.17)
    loss.add_argument("--cons-norm", choices=("frobenius", "mean_per_element"), default="mean_per_element")
    loss.add_argument("--smooth-l1-beta", type=float, default=1.0)
    loss.add_argument("--extractor-seed", type=int, default=None)

    parser = argparse.ArgumentParser(prog="ugda", description="Uncertainty-guided stereo augmentation workbench.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="replay a run.cfg (flags given after it win)")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("augment", parents=[common], help="write augmented pairs and the draw log")
    p.set_defaults(func=cmd_augment)
    p = sub.add_parser("match", parents=[common], help="run the census/SGM matcher")
    p.set_defaults(func=cmd_match)
    p = sub.add_parser("eval", parents=[common], help="score disparity PFMs against ground truth")
    p.add_argument("--pred", type=Path, help="directory of <pair>.pfm predictions")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("consistency", parents=[common], help="per-pair consistency / total loss table")
    p.set_defaults(func=cmd_consistency)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of loss gradients")
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("hist", parents=[common], help="image/feature histograms, original vs augmented")
    p.set_defaults(func=cmd_hist)
    p = sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


# -- run.cfg -----------------------------------------------------------------------

def write_run_cfg(args: argparse.Namespace, out: Path) -> None:
    lines = ["# ugda run configuration; replay with: ugda --config run.cfg",
             f"subcommand={args.subcommand}"]
    for key in sorted(vars(args)):
        if key in _NOT_RECORDED or key == "subcommand":
            continue
        val = getattr(args, key)
        if val is None:
            continue
        if isinstance(val, Path):
            val = val.resolve().as_posix()
        elif isinstance(val, bool):
            if not val:
                continue
            val = ""
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key}={val}")
    (out / "run.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _flag_for(parser_sub: argparse.ArgumentParser, dest: str) -> str:
    for action in parser_sub._actions:
        if action.dest == dest and action.option_strings:
            return max(action.option_strings, key=len)
    raise FormatError(f"run.cfg: unknown key {dest!r}")


def expand_config(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    """Rewrite ``--config FILE rest...`` as ``<subcommand> <flags from FILE> rest...``."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise FormatError("--config needs a path")
    cfg_path = Path(argv[i + 1])
    rest = argv[:i] + argv[i + 2:]
    entries: dict[str, str] = {}
    for line in cfg_path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise FormatError(f"run.cfg: malformed line {line!r}")
        entries[key.strip()] = val
    sub_name = entries.pop("subcommand", None)
    if sub_name is None:
        raise FormatError("run.cfg: missing subcommand")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices[sub_name]
    flags: list[str] = []
    for key, val in entries.items():
        flag = _flag_for(sub, key)
        flags += [flag] if val == "" else [flag, val]
    if "--out" not in rest:
        flags += ["--out", str(cfg_path.resolve().parent)]
    if rest and rest[0] == sub_name:
        rest = rest[1:]
    return [sub_name] + flags + rest


# -- helpers -------------------------------------------------------------------------

def _augment_cfg(args) -> AugmentConfig:
    return AugmentConfig(
        pair_mode=args.pair_mode, sigma_floor=args.sigma_floor, clip_policy=args.clip,
        apply_probability=args.apply_prob, seed=args.seed,
    )


def _sgm_params(args) -> SgmParams:
    return SgmParams(p1=args.p1, p2=args.p2, directions=args.directions, census_window=args.census_window)


def _loss_cfg(args) -> LossConfig:
    return LossConfig(lam=args.lam, cons_norm=args.cons_norm, smooth_l1_beta=args.smooth_l1_beta)


def _extractor(args) -> ToyExtractor:
    return ToyExtractor.from_seed() if args.extractor_seed is None else ToyExtractor.from_seed(args.extractor_seed)


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise InvalidInputError("missing required flag(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _stem(index: int, entry: ManifestEntry) -> str:
    return f"{index:05d}_{entry.name}"


def _batches(n: int, size: int) -> list[range]:
    if size < 1:
        raise InvalidInputError(f"--batch must be >= 1, got {size}")
    return [range(s, min(s + size, n)) for s in range(0, n, size)]


def _ordered_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _prepare(args, need_manifest: bool = True):
    _require(args, "out", *(["manifest"] if need_manifest else []))
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(args.manifest) if need_manifest else None
    write_run_cfg(args, args.out)
    return manifest


# -- subcommands -----------------------------------------------------------------------

def cmd_augment(args) -> int:
    manifest = _prepare(args)
    cfg = _augment_cfg(args)
    entries = list(manifest)

    def run(batch: range):
        pairs = [load_pair(entries[i]) for i in batch]
        augmented, records = augment_batch(pairs, cfg, index_offset=batch.start)
        for i, (left, right) in zip(batch, augmented):
            stem = _stem(i, entries[i])
            save_image(args.out / f"{stem}_L.png", left)
            save_image(args.out / f"{stem}_R.png", right)
        return records

    records = [r for recs in _ordered_map(run, _batches(len(entries), args.batch), args.jobs) for r in recs]
    with open(args.out / "draws.log", "w", encoding="utf-8", newline="\n") as fh:
        write_draw_log(records, fh)
    applied = sum(r.applied for r in records)
    print(f"augmented {len(entries)} pairs, {applied}/{len(records)} images perturbed -> {args.out}")
    return EXIT_OK


def _write_metrics(out: Path, rows: list[tuple[str, dict]]) -> None:
    with open(out / "report.txt", "w", encoding="utf-8", newline="\n") as fh:
        for t in THRESHOLDS:
            agg = aggregate_reports([r[t] for _, r in rows])
            fh.write(format_report(agg, prefix=f"aggregate.d1_{t:g}px."))
        for name, r in rows:
            for t in THRESHOLDS:
                fh.write(format_report(r[t], prefix=f"{name}.d1_{t:g}px."))
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_reports_csv(fh, [(f"{name}@{t:g}px", r[t]) for name, r in rows for t in THRESHOLDS])


def cmd_match(args) -> int:
    manifest = _prepare(args)
    params = _sgm_params(args)
    entries = list(manifest)

    def run(i: int):
        entry = entries[i]
        pair = load_pair(entry)
        disp = match(pair.left, pair.right, params, d_max=args.dmax, lr_tol=args.lr_tol)
        stem = _stem(i, entry)
        write_disparity_pfm(args.out / f"{stem}.pfm", disp)
        if pair.gt is None:
            return stem, None
        reports = {t: compute_d1(disp, pair.gt, t) for t in THRESHOLDS}
        write_error_map(args.out / f"{stem}_error.png", disp, pair.gt, clip=THRESHOLDS[-1])
        from .plotting import plot_error_map

        img, epe = error_map(disp, pair.gt, clip=THRESHOLDS[-1])
        plot_error_map(img, epe, args.out / f"{stem}_error_fig.png", title=stem)
        return stem, reports

    results = _ordered_map(run, list(range(len(entries))), args.jobs)
    rows = [(stem, r) for stem, r in results if r is not None]
    if rows:
        _write_metrics(args.out, rows)
        agg = aggregate_reports([r[1.0] for _, r in rows])
        print(f"matched {len(results)} pairs; D1(1px)={agg.d1:.4f} EPE={agg.epe:.4f} over {len(rows)} with gt")
    else:
        print(f"matched {len(results)} pairs; no ground truth, metrics skipped")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = _prepare(args)
    _require(args, "pred")
    rows = []
    for i, entry in enumerate(manifest):
        if entry.gt is None:
            continue
        stem = _stem(i, entry)
        pred = read_disparity(args.pred / f"{stem}.pfm")
        gt = read_disparity(entry.gt)
        rows.append((stem, {t: compute_d1(pred, gt, t) for t in THRESHOLDS}))
    if not rows:
        raise InvalidInputError("no manifest entry has ground truth")
    _write_metrics(args.out, rows)
    sys.stdout.write(format_report(aggregate_reports([r[3.0] for _, r in rows]), prefix="aggregate."))
    return EXIT_OK


def cmd_consistency(args) -> int:
    manifest = _prepare(args)
    aug_cfg, loss_cfg, ext, params = _augment_cfg(args), _loss_cfg(args), _extractor(args), _sgm_params(args)
    entries = list(manifest)

    def run(batch: range):
        pairs = [load_pair(entries[i]) for i in batch]
        augmented, _ = augment_batch(pairs, aug_cfg, index_offset=batch.start)
        rows = []
        for i, pair, (la, ra) in zip(batch, pairs, augmented):
            feats = [extract_features(x, ext) for x in (pair.left, la, pair.right, ra)]
            l_cons = consistency_loss(*feats, loss_cfg)
            if pair.gt is not None:
                pred = match(la, ra, params, d_max=args.dmax, lr_tol=args.lr_tol)
                l_disp = smooth_l1(pred, pair.gt, loss_cfg.smooth_l1_beta)
            else:
                l_disp = math.nan
            rows.append((_stem(i, entries[i]), l_cons, l_disp, l_disp + loss_cfg.lam * l_cons))
        return rows

    rows = [r for rows in _ordered_map(run, _batches(len(entries), args.batch), args.jobs) for r in rows]
    with open(args.out / "consistency.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# lambda={loss_cfg.lam!r} cons_norm={loss_cfg.cons_norm.value}\n")
        fh.write("name,l_cons,l_disp,total\n")
        for name, lc, ld, tot in rows:
            fh.write(f"{name},{lc!r},{ld!r},{tot!r}\n")
    print(f"wrote {len(rows)} rows -> {args.out / 'consistency.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    seed = args.seed
    report = run_gradcheck(
        seed=seed, height=args.height, width=args.width, trials=args.trials, step=args.step,
        tolerance=args.tolerance, cfg=_loss_cfg(args), ext=_extractor(args), corrupt=args.corrupt_gradient,
    )
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_run_cfg(args, args.out)
        (args.out / "gradcheck.txt").write_text(text, encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_hist(args) -> int:
    from .plotting import plot_feature_histograms, plot_image_histograms

    manifest = _prepare(args)
    cfg, ext = _augment_cfg(args), _extractor(args)
    entries = list(manifest)

    def run(batch: range):
        pairs = [load_pair(entries[i]) for i in batch]
        augmented, records = augment_batch(pairs, cfg, index_offset=batch.start)
        rows = []
        recs = iter(records)
        for i, pair, aug in zip(batch, pairs, augmented):
            stem = _stem(i, entries[i])
            for side, orig, new in (("L", pair.left, aug[0]), ("R", pair.right, aug[1])):
                rec = next(recs)
                h0, h1 = image_histogram(orig), image_histogram(new)
                f0, f1 = feature_histogram(extract_features(orig, ext)), feature_histogram(extract_features(new, ext))
                base = args.out / f"{stem}_{side}"
                for suffix, h in (("image_orig", h0), ("image_aug", h1), ("feat_orig", f0), ("feat_aug", f1)):
                    with open(f"{base}_{suffix}.csv", "w", encoding="utf-8", newline="") as fh:
                        write_histogram_csv(fh, h)
                plot_image_histograms(h0, h1, f"{base}_image.png", title=f"{stem} {side}")
                plot_feature_histograms([f0, f1], ["original", "augmented"], f"{base}_feature.png",
                                        title=f"{stem} {side}")
                m0, m1 = h0.mean(), h1.mean()
                for c in range(len(m0)):
                    shift = (rec.draw.mu_prime[c] - rec.stats.mean[c]) if rec.applied else 0.0
                    rows.append(f"{stem},{side},{c},{float(m0[c])!r},{float(m1[c])!r},{float(shift)!r},{h0.bin_width!r}")
        return rows

    rows = [r for rows in _ordered_map(run, _batches(len(entries), args.batch), args.jobs) for r in rows]
    with open(args.out / "hist_summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,side,channel,hist_mean_orig,hist_mean_aug,logged_shift,bin_width\n")
        fh.write("".join(r + "\n" for r in rows))
    print(f"wrote histograms for {len(entries)} pairs -> {args.out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = expand_config(argv, parser)
    except (OSError, FormatError) as exc:
        print(f"ugda: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.subcommand is None:
        parser.print_help(sys.stderr)
        return EXIT_BAD_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except (InvalidInputError, FormatError, FileNotFoundError) as exc:
        print(f"ugda {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
