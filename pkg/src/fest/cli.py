"""``fest`` command line: synth, fuse, post, eval, sweep, roc, train-toy, grid, loss.

Tabular output is CSV. In eval / sweep / grid tables IoU, Pd and Score
are percentages and Fa is in units of 1e-6, all with two decimals; ROC
rows carry raw ratios. Any failure exits with status 1 (2 for usage
errors) after a single ``fest: error: ...`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

from . import __version__
from .dataset import list_ids, load_cases, load_pairs, tally_all
from .eedm import LossConfig, eedm_loss
from .fusion import FUSION_MODES, command_predictor, directory_predictor, run_multiscale
from .metrics import MatchConfig, ScoreConfig, evaluate, percent, roc_sweep
from .raster import read_any, read_mask, write_mask
from .sensitivity import INJECTION_STYLES, ASConfig, apply_as, binarize
from .synth import Template, gen_dataset, write_dataset
from .toymodel import LOSS_KINDS, TrainConfig, TrainingDiverged, predict_toy, save_model, train_toy

DEFAULT_W = (1.0, 3.0, 4.0, 5.0, 7.0)
DEFAULT_P = (0.1, 0.3, 0.5, 0.7, 0.9)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- flag parsing ---------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _th2_list(text: str) -> list[float | None]:
    out = []
    for t in text.split(","):
        t = t.strip().lower()
        if t in ("-", "none", ""):
            out.append(None)
        else:
            try:
                out.append(float(t))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad th2 value {t!r}") from None
    return out


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _range(text: str) -> tuple[int, int]:
    try:
        parts = [int(v) for v in text.split("-")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or MIN-MAX, got {text!r}") from None
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) == 2:
        return parts[0], parts[1]
    raise argparse.ArgumentTypeError(f"expected N or MIN-MAX, got {text!r}")


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# -- output helpers -------------------------------------------------------


def _open_csv(path):
    if path in (None, "-"):
        return sys.stdout, False
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return open(path, "w", newline=""), True


def write_csv(path, header, rows) -> None:
    fh, close = _open_csv(path)
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()


def _fa(x: float) -> str:
    return f"{x * 1e6:.2f}"


def _score_cells(rep) -> list[str]:
    return [
        percent(rep.iou),
        percent(rep.pd),
        _fa(rep.fa),
        "" if rep.score is None else percent(rep.score),
        "true" if rep.valid else "false",
    ]


def _match(args) -> MatchConfig:
    return MatchConfig(dmax=args.dmax, connectivity=args.connectivity)


def _scoring(args) -> ScoreConfig:
    return ScoreConfig(alpha=args.alpha, fa_limit=args.fa_limit)


def _makedirs_for(path):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


# -- subcommands ----------------------------------------------------------


def cmd_synth(args) -> None:
    h, w = args.hw
    tmpl = Template(
        height=h,
        width=w,
        targets=args.targets,
        clutter=args.clutter,
        noise=args.noise,
        image_noise=args.image_noise,
    )
    cases = gen_dataset(tmpl, args.n, args.seed)
    extra = {"seed": args.seed, "n": args.n, "template": {"height": h, "width": w,
             "targets": list(args.targets), "clutter": list(args.clutter),
             "noise": args.noise, "image_noise": args.image_noise}}
    write_dataset(cases, args.out_dir, scales=args.scales or (), manifest_extra=extra)


def _predictor(args, image_id):
    if args.pred_cmd:
        return command_predictor(args.pred_cmd)
    return directory_predictor(args.pred_dir, image_id)


def cmd_fuse(args) -> None:
    if bool(args.pred_dir) == bool(args.pred_cmd):
        raise UsageError("give exactly one of --pred-dir or --pred-cmd")
    if args.image:
        if not args.out:
            raise UsageError("--image needs --out")
        image_id = args.image_id or os.path.splitext(os.path.basename(args.image))[0]
        fused = run_multiscale(read_any(args.image), args.scales, _predictor(args, image_id), args.mode, args.jobs)
        _makedirs_for(args.out)
        write_mask(fused, args.out)
        return
    if not (args.image_dir and args.out_dir):
        raise UsageError("give --image/--out or --image-dir/--out-dir")
    os.makedirs(args.out_dir, exist_ok=True)
    for i in list_ids(args.image_dir):
        image = read_any(os.path.join(args.image_dir, f"{i}.pgm"))
        fused = run_multiscale(image, args.scales, _predictor(args, i), args.mode, args.jobs)
        write_mask(fused, os.path.join(args.out_dir, f"{i}.pgm"))


def _as_config(args) -> ASConfig:
    return ASConfig(th1=args.th1, th2=args.th2, injection=args.injection)


def cmd_post(args) -> None:
    cfg = _as_config(args)
    if args.prob:
        if not args.out:
            raise UsageError("--prob needs --out")
        jobs = [(os.path.splitext(os.path.basename(args.prob))[0], args.prob, args.out)]
    elif args.prob_dir and args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        jobs = [
            (i, os.path.join(args.prob_dir, f"{i}.pgm"), os.path.join(args.out_dir, f"{i}.pgm"))
            for i in list_ids(args.prob_dir)
        ]
    else:
        raise UsageError("give --prob/--out or --prob-dir/--out-dir")
    rows = []
    for image_id, src, dst in jobs:
        out, reports = apply_as(read_any(src), cfg)
        _makedirs_for(dst)
        write_mask(out, dst)
        rows += [
            [image_id, t.kind, t.pixel_count, repr(t.centroid_row), repr(t.centroid_col), repr(t.peak)]
            for t in reports
        ]
    if args.report:
        write_csv(args.report, ["image", "class", "pixels", "centroid_row", "centroid_col", "peak"], rows)


def cmd_eval(args) -> None:
    ids, preds, gts = load_pairs(args.pred_dir, args.gt_dir, "binary8")
    tallies = tally_all(preds, gts, _match(args), args.jobs)
    rep = evaluate(preds, gts, scoring=_scoring(args), tallies=tallies)
    header = ["scope", "image", "iou", "pd", "fa", "score", "valid",
              "tp_pixels", "t_pixels", "p_pixels", "detected", "targets", "false_pixels", "pixels"]
    rows = [["dataset", "", *_score_cells(rep),
             sum(t.tp for t in tallies), sum(t.t for t in tallies), sum(t.p for t in tallies),
             sum(t.hits for t in tallies), sum(t.targets for t in tallies),
             sum(t.false_pixels for t in tallies), sum(t.pixels for t in tallies)]]
    for i, t in zip(ids, tallies):
        rows.append(["image", i, "", "", "", "", "", t.tp, t.t, t.p, t.hits, t.targets, t.false_pixels, t.pixels])
    write_csv(args.csv, header, rows)


def sweep_rows(probs, gts, th1s, th2s, match: MatchConfig, scoring: ScoreConfig, injection="single", jobs=1):
    rows = []
    for th1 in th1s:
        for th2 in th2s:
            if th2 is not None and th2 >= th1:
                continue
            cfg = ASConfig(th1=th1, th2=th2, injection=injection)
            preds = [apply_as(p, cfg)[0] if th2 is not None else binarize(p, th1) for p in probs]
            rep = evaluate(preds, gts, scoring=scoring, tallies=tally_all(preds, gts, match, jobs))
            rows.append([repr(th1), "" if th2 is None else repr(th2), *_score_cells(rep)])
    return rows


def cmd_sweep(args) -> None:
    _, probs, gts = load_pairs(args.prob_dir, args.gt_dir, "gray16")
    th2s = args.th2 if args.th2 else [None]
    rows = sweep_rows(probs, gts, args.th1, th2s, _match(args), _scoring(args), args.injection, args.jobs)
    write_csv(args.csv, ["th1", "th2", "iou", "pd", "fa", "score", "valid"], rows)


def default_thresholds(n: int = 99) -> list[float]:
    """``n`` evenly spaced thresholds in (0, 1), descending."""
    return [(n - i) / (n + 1) for i in range(n)]


def cmd_roc(args) -> None:
    _, probs, gts = load_pairs(args.prob_dir, args.gt_dir, "gray16")
    ths = args.thresholds or default_thresholds()
    rows = roc_sweep(probs, gts, ths, _match(args))
    write_csv(args.csv, ["threshold", "fa", "pd"], [[repr(t), repr(fa), repr(pd)] for t, fa, pd in rows])


def _train_config(args, loss=None, w=None, p=None) -> TrainConfig:
    return TrainConfig(
        loss=loss or args.loss,
        w=args.w if w is None else w,
        p=args.p if p is None else p,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
    )


def cmd_train_toy(args) -> None:
    cases = load_cases(args.data)
    model = train_toy(cases, _train_config(args))
    _makedirs_for(args.out)
    save_model(model, args.out)
    if args.log:
        write_csv(args.log, ["epoch", "loss"], [[i, repr(v)] for i, v in enumerate(model.log)])


def split_cases(cases, holdout: float):
    n_eval = max(1, int(round(len(cases) * holdout)))
    if n_eval >= len(cases):
        raise ValueError(f"holdout {holdout} leaves no training data ({len(cases)} cases)")
    return cases[:-n_eval], cases[-n_eval:]


def grid_rows(train, test, ws, ps, base: TrainConfig, th: float, match: MatchConfig,
              scoring: ScoreConfig, baseline: bool = False):
    cells = [("eedm", w, p) for w in ws for p in ps]
    if baseline:
        cells.insert(0, ("bce", 1.0, 1.0))
    gts = [c.gt for c in test]
    rows = []
    for loss, w, p in cells:
        cfg = TrainConfig(loss=loss, w=w, p=p, lr=base.lr, epochs=base.epochs, seed=base.seed)
        try:
            model = train_toy(train, cfg)
        except TrainingDiverged as exc:
            rows.append([loss, repr(w), repr(p), "", "", "", "", "false", f"diverged at epoch {exc.epoch}", ""])
            continue
        preds = [binarize(predict_toy(model, c.image), th) for c in test]
        rep = evaluate(preds, gts, match, scoring)
        rows.append([loss, repr(w), repr(p), *_score_cells(rep), "", repr(model.log[-1])])
    return rows


def cmd_grid(args) -> None:
    cases = load_cases(args.data)
    if args.eval_data:
        train, test = cases, load_cases(args.eval_data)
    else:
        train, test = split_cases(cases, args.holdout)
    for w in args.w_list:
        LossConfig(w=w)
    for p in args.p_list:
        LossConfig(p=p)
    base = _train_config(args, loss="eedm", w=1.0, p=1.0)
    rows = grid_rows(train, test, args.w_list, args.p_list, base, args.threshold,
                     _match(args), _scoring(args), args.baseline)
    write_csv(args.csv, ["loss", "w", "p", "iou", "pd", "fa", "score", "valid", "error", "final_loss"], rows)


def cmd_loss(args) -> None:
    cfg = LossConfig(w=args.w, p=args.p, eps=args.eps)
    if args.gt and args.prob:
        pairs = [(os.path.splitext(os.path.basename(args.gt))[0], args.gt, args.prob)]
    elif args.gt_dir and args.prob_dir:
        pairs = [
            (i, os.path.join(args.gt_dir, f"{i}.pgm"), os.path.join(args.prob_dir, f"{i}.pgm"))
            for i in list_ids(args.gt_dir)
        ]
        if not pairs:
            raise ValueError(f"empty dataset: no .pgm files in {args.gt_dir}")
    else:
        raise UsageError("give --gt/--prob or --gt-dir/--prob-dir")
    rows = []
    for image_id, gt_path, prob_path in pairs:
        res = eedm_loss(read_mask(gt_path, "binary8"), read_any(prob_path), cfg)
        rows.append([image_id, repr(res.loss), len(res.kept), res.weighted.size])
    write_csv(args.csv, ["image", "loss", "kept", "pixels"], rows)


# -- parser ---------------------------------------------------------------


def _eval_flags(sp):
    sp.add_argument("--dmax", type=float, default=3.0, help="centroid distance limit in pixels (default 3)")
    sp.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    sp.add_argument("--alpha", type=float, default=0.5, help="IoU weight in the score (default 0.5)")
    sp.add_argument("--fa-limit", type=float, default=1e-4, help="score is valid only below this Fa")


def _train_flags(sp):
    sp.add_argument("--lr", type=float, default=0.5)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--seed", type=int, default=7)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value file; explicit flags win")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for per-image work")

    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--hw", type=_hw, default=(128, 128), help="scene size HxW (default 128x128)")
    sp.add_argument("--targets", type=_range, default=(1, 5), help="targets per scene, N or MIN-MAX")
    sp.add_argument("--clutter", type=_range, default=(0, 1), help="clutter blobs per scene, N or MIN-MAX")
    sp.add_argument("--noise", type=float, default=0.003, help="probability-map noise sigma")
    sp.add_argument("--image-noise", type=float, default=0.01, help="image noise sigma")
    sp.add_argument("--scales", type=_ints, help="also write simulated per-scale predictions pred/<id>/<scale>.pgm")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("fuse", parents=[common], help="multi-scale prediction fusion")
    sp.add_argument("--image")
    sp.add_argument("--image-id", help="id used to look up --pred-dir files (default: image file stem)")
    sp.add_argument("--image-dir")
    sp.add_argument("--scales", type=_ints, required=True)
    sp.add_argument("--pred-dir", help="precomputed masks <pred-dir>/<image-id>/<scale>.pgm")
    sp.add_argument("--pred-cmd", help="command run as: CMD <in.pgm> <out.pgm>")
    sp.add_argument("--mode", choices=FUSION_MODES, default="mean")
    sp.add_argument("--out")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("post", parents=[common], help="dual-threshold post-processing")
    sp.add_argument("--prob")
    sp.add_argument("--prob-dir")
    sp.add_argument("--th1", type=float, default=0.5)
    sp.add_argument("--th2", type=float, help="weak-target threshold; omit for plain binarization")
    sp.add_argument("--injection", choices=INJECTION_STYLES, default="single")
    sp.add_argument("--out")
    sp.add_argument("--out-dir")
    sp.add_argument("--report", help="per-target CSV report")
    sp.set_defaults(func=cmd_post)

    sp = sub.add_parser("eval", parents=[common], help="IoU / Pd / Fa / Score of binary predictions")
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--gt-dir", required=True)
    _eval_flags(sp)
    sp.add_argument("--csv", default="-")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", parents=[common], help="metrics over (th1, th2) threshold pairs")
    sp.add_argument("--prob-dir", required=True)
    sp.add_argument("--gt-dir", required=True)
    sp.add_argument("--th1", type=_floats, required=True, help="comma-separated th1 values")
    sp.add_argument("--th2", type=_th2_list, help="comma-separated th2 values; 'none' for th1 only")
    sp.add_argument("--injection", choices=INJECTION_STYLES, default="single")
    _eval_flags(sp)
    sp.add_argument("--csv", default="-")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("roc", parents=[common], help="(threshold, fa, pd) curve points")
    sp.add_argument("--prob-dir", required=True)
    sp.add_argument("--gt-dir", required=True)
    sp.add_argument("--thresholds", type=_floats, help="descending list; default 99 evenly spaced")
    sp.add_argument("--dmax", type=float, default=3.0)
    sp.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    sp.add_argument("--csv", default="-")
    sp.set_defaults(func=cmd_roc)

    sp = sub.add_parser("train-toy", parents=[common], help="train the logistic toy segmenter")
    sp.add_argument("--data", required=True, help="dataset dir with img/ and gt/")
    sp.add_argument("--loss", choices=LOSS_KINDS, default="eedm")
    sp.add_argument("--w", type=float, default=4.0)
    sp.add_argument("--p", type=float, default=0.5)
    _train_flags(sp)
    sp.add_argument("--out", required=True, help="model file, one weight per line")
    sp.add_argument("--log", help="per-epoch loss CSV")
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("grid", parents=[common], help="toy-model (w, p) hyperparameter grid")
    sp.add_argument("--data", required=True)
    sp.add_argument("--eval-data", help="held-out dataset dir (default: split --data)")
    sp.add_argument("--holdout", type=float, default=0.25, help="fraction of --data held out")
    sp.add_argument("--w-list", type=_floats, default=list(DEFAULT_W))
    sp.add_argument("--p-list", type=_floats, default=list(DEFAULT_P))
    sp.add_argument("--baseline", action="store_true", help="prepend a plain-BCE row")
    sp.add_argument("--threshold", type=float, default=0.5, help="binarization threshold for evaluation")
    _train_flags(sp)
    _eval_flags(sp)
    sp.add_argument("--csv", default="-")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("loss", parents=[common], help="EEDM loss of probability maps against ground truth")
    sp.add_argument("--gt")
    sp.add_argument("--prob")
    sp.add_argument("--gt-dir")
    sp.add_argument("--prob-dir")
    sp.add_argument("--w", type=float, default=4.0, help="edge weight (1 disables edge enhancement)")
    sp.add_argument("--p", type=float, default=0.5, help="kept fraction of hardest pixels (1 keeps all)")
    sp.add_argument("--eps", type=float, default=1e-7)
    sp.add_argument("--csv", default="-")
    sp.set_defaults(func=cmd_loss)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    return None


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None):
    """Parse flags, splicing config-file values in ahead of explicit flags.

    Config entries become ordinary flag tokens placed right after the
    subcommand, so explicit flags given later override them.
    """
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    pos = next((i for i, tok in enumerate(argv) if _subparser(parser, tok) is not None), None)
    if path and pos is not None:
        sp = _subparser(parser, argv[pos])
        opts = {a.dest: a for a in sp._actions if a.option_strings}
        extra = []
        for key, value in read_config(path).items():
            action = opts.get(key)
            if action is None or key in ("help", "config"):
                raise UsageError(f"{path}: unknown key {key!r} for {argv[pos]}")
            flag = action.option_strings[-1]
            if isinstance(action, argparse._StoreTrueAction):
                if value.lower() in ("1", "true", "yes", "on"):
                    extra.append(flag)
            else:
                extra += [flag, value]
        argv = argv[: pos + 1] + extra + argv[pos + 1 :]
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args)
    except UsageError as exc:
        print(f"fest: error: usage: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"fest: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
