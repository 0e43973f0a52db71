"""Command-line entry point: generate, train, eval, gradcheck, features, graph.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .basis import HarmonicTables, SineBasisConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluate import collect_predictions, load_predictions, report_from_predictions, save_predictions
from .features import FeatureContext, FeatureVariant, fit_sine_config, node_features
from .graph import radius_graph, surf2vol_graph, write_edge_list
from .gradcheck import run_gradchecks, summary
from .mesh import CaseFormatError, FieldId, load_case, load_manifest, recentre, save_case, write_manifest
from .synthetic import DegenerateShapeError, JoukowskiParams, generate_synthetic
from .train import TrainConfig, TrainingDiverged, train_field, write_history

log = logging.getLogger("geompnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    """Resolved configuration of one command, written before the work starts."""

    command: str
    seed: int
    config: dict
    artifacts: list = field(default_factory=list)
    version: str = __version__

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _outdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CaseFormatError(f"cannot create output directory {p}: {exc}") from exc
    return p


# -- generate ---------------------------------------------------------------------------


def _draw_case(rng, args):
    th = rng.uniform(*args.thickness)
    cam = rng.uniform(*args.camber)
    speed = rng.uniform(*args.speed)
    aoa = np.deg2rad(rng.uniform(*args.aoa))
    return JoukowskiParams(th, cam), np.array([speed * np.cos(aoa), speed * np.sin(aoa)])


def cmd_generate(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if not 0.0 <= args.split <= 1.0:
        raise UsageError("--split must lie in [0, 1]")
    out = _outdir(args.out)
    names = [f"case_{i:04d}.txt" for i in range(args.count)]
    n_train = int(round(args.split * args.count))
    order = np.random.default_rng([args.seed, 0]).permutation(args.count)
    train_names = [names[i] for i in sorted(order[:n_train])]
    test_names = [names[i] for i in sorted(order[n_train:])]
    RunManifest(
        "generate",
        args.seed,
        {k: v for k, v in vars(args).items() if k not in ("func", "out")},
        ["all.txt", "train.txt", "test.txt"] + names,
    ).write(out / "run.json")
    for i, name in enumerate(names):
        rng = np.random.default_rng([args.seed, 1, i])
        for attempt in range(100):
            params, vinf = _draw_case(rng, args)
            try:
                case = generate_synthetic(params, vinf, args.n_volume, args.n_surface, seed=[args.seed, 2, i], case_id=name[:-4])
                break
            except DegenerateShapeError:
                continue
        else:
            raise CaseFormatError(f"could not draw a valid shape for case {i}")
        save_case(case, out / name)
    write_manifest(out / "all.txt", names)
    write_manifest(out / "train.txt", train_names)
    write_manifest(out / "test.txt", test_names)
    print(f"wrote {args.count} cases ({len(train_names)} train, {len(test_names)} test) to {out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------------------


def _train_config(args, fid: FieldId) -> TrainConfig:
    return TrainConfig(
        field=fid,
        variant=FeatureVariant.parse(args.variant) if args.variant else None,
        max_lr=args.max_lr,
        epochs=args.epochs,
        subsample_n=args.subsample_n,
        seed=args.seed,
        beta1=args.beta1,
        beta2=args.beta2,
        eps=args.adam_eps,
        warmup_frac=args.warmup_frac,
        div_factor=args.div_factor,
        final_div_factor=args.final_div_factor,
        anneal=args.anneal,
        log_pressure=args.log_pressure and fid is FieldId.Pressure,
        sph_factorial_norm=args.sph_factorial_norm,
        n_basis=args.n_basis,
        kind=args.kind,
        hidden=args.hidden,
        mlp_depth=args.mlp_depth,
        surf_layers=args.surf_layers,
        sv_layers=args.sv_layers,
        gnn_layers=args.gnn_layers,
        k=args.k,
    )


def _train_once(args, cases, cfgs, out: Path) -> tuple[int, dict]:
    """Train every requested field into ``out``; returns (exit code, final mse per stem)."""
    stems = [f"{c.field.value}_{c.variant.value}" for c in cfgs]
    artifacts = [a for s in stems for a in (f"model_{s}.npz", f"history_{s}.txt")]
    RunManifest("train", cfgs[0].seed, {"manifest": str(args.manifest), "runs": [c.to_dict() for c in cfgs]}, artifacts).write(out / "run.json")
    sine = fit_sine_config([recentre(c) for c in cases], args.n_basis)
    finals = {}
    for cfg, stem in zip(cfgs, stems):
        log.info("training %s on %d cases", stem, len(cases))
        try:
            res = train_field(cases, cfg, sine=sine)
        except TrainingDiverged as exc:
            write_history(out / f"history_{stem}.txt", exc.history)
            print(f"error: {stem}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC, finals
        write_history(out / f"history_{stem}.txt", res.history)
        save_checkpoint(res.model, out / f"model_{stem}.npz")
        finals[stem] = res.history[-1][1]
        print(f"{stem}: final mse {res.history[-1][1]:.6g} -> {out / f'model_{stem}.npz'}")
    return EXIT_OK, finals


def cmd_train(args) -> int:
    if args.all_fields == (args.field is not None):
        raise UsageError("give exactly one of --field or --all-fields")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    fields = list(FieldId) if args.all_fields else [FieldId.parse(args.field)]
    if args.log_pressure and FieldId.Pressure not in fields:
        raise UsageError("--log-pressure needs the pressure field")
    try:
        _train_config(args, fields[0])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _outdir(args.out)
    cases = load_manifest(args.manifest)
    if args.repeats == 1:
        return _train_once(args, cases, [_train_config(args, f) for f in fields], out)[0]

    # repeat r trains with seed + r in its own directory
    per_stem: dict = {}
    for r in range(args.repeats):
        sub = vars(args).copy()
        sub["seed"] = args.seed + r
        cfgs = [_train_config(argparse.Namespace(**sub), f) for f in fields]
        code, finals = _train_once(args, cases, cfgs, _outdir(out / f"repeat_{r:02d}"))
        if code != EXIT_OK:
            return code
        for stem, v in finals.items():
            per_stem.setdefault(stem, []).append(v)
    with open(out / "repeats.txt", "w", encoding="utf-8") as fh:
        for stem, vals in per_stem.items():
            a = np.array(vals)
            fh.write(f"{stem} {len(a)} {float(a.mean())!r} {float(a.std())!r}\n")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------------


def cmd_eval(args) -> int:
    out = _outdir(args.out)
    RunManifest(
        "eval",
        args.seed,
        {k: v for k, v in vars(args).items() if k not in ("func", "out")},
        ["report.txt", "report_table.txt"] + (["predictions.npz"] if args.save_predictions else []),
    ).write(out / "run.json")
    if args.from_predictions:
        preds = load_predictions(args.from_predictions)
    else:
        if not args.checkpoints or args.manifest is None:
            raise UsageError("eval needs --manifest and --checkpoints (or --from-predictions)")
        models = [load_checkpoint(p) for p in args.checkpoints]
        cases = load_manifest(args.manifest)
        preds = collect_predictions(models, cases, args.subsample_n, args.seed, timing=not args.no_timing, jobs=args.jobs)
        if args.save_predictions:
            save_predictions(out / "predictions.npz", preds)
    report = report_from_predictions(preds)
    report.write(out / "report.txt")
    table = report.table()
    (out / "report_table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    if not all(np.isfinite(r.mse_full) for r in report.rows):
        return EXIT_NUMERIC
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.seed)
    print(summary(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


# -- debug dumps ------------------------------------------------------------------------


def _cases_from(args):
    if args.case:
        return [load_case(p) for p in args.case]
    if args.manifest:
        return load_manifest(args.manifest)
    raise UsageError("give --case or --manifest")


def cmd_features(args) -> int:
    variant = FeatureVariant.parse(args.variant)
    cases = [recentre(c) for c in _cases_from(args)]
    if args.sine_s is not None and args.sine_L is not None:
        sine = SineBasisConfig(args.n_basis, args.sine_s, args.sine_L)
    else:
        sine = fit_sine_config(cases, args.n_basis)
    tables = HarmonicTables(args.n_basis, args.sph_factorial_norm)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# variant={variant.value} n_basis={sine.n_basis} s={sine.s!r} L={sine.L!r}\n")
        for case in cases:
            X = node_features(FeatureContext.build(case, sine, tables), variant)
            for i, row in enumerate(X):
                fh.write(f"{case.case_id} {i} " + " ".join(repr(float(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_graph(args) -> int:
    case = recentre(load_case(args.case[0]))
    if args.kind == "surf2vol":
        g = surf2vol_graph(case, args.k)
        src, dst = g.src, g.dst
        write_edge_list(args.out, src, dst, case.points[src] - case.points[dst])
        return EXIT_OK
    pts = case.points[case.surface_idx] if args.kind == "surface" else case.points
    g = radius_graph(pts, args.radius, args.max_neighbors, args.seed)
    write_edge_list(args.out, g.src, g.dst, g.features)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geompnn", description="Geometry-aware message passing surrogate for 2-D airfoil flow.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write synthetic Joukowski cases and split manifests")
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--thickness", type=float, nargs=2, default=[0.06, 0.15], metavar=("MIN", "MAX"))
    g.add_argument("--camber", type=float, nargs=2, default=[0.0, 0.08], metavar=("MIN", "MAX"))
    g.add_argument("--speed", type=float, nargs=2, default=[20.0, 60.0], metavar=("MIN", "MAX"))
    g.add_argument("--aoa", type=float, nargs=2, default=[-5.0, 15.0], metavar=("MIN_DEG", "MAX_DEG"))
    g.add_argument("--n-volume", type=int, default=7744)
    g.add_argument("--n-surface", type=int, default=256)
    g.add_argument("--split", type=float, default=0.75, help="train fraction")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model per field")
    t.add_argument("--manifest", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--field", choices=[f.value for f in FieldId])
    t.add_argument("--all-fields", action="store_true")
    t.add_argument("--variant", choices=[v.value for v in FeatureVariant])
    t.add_argument("--log-pressure", action="store_true")
    t.add_argument("--sph-factorial-norm", action="store_true", help="use the literal factorial harmonic normalization")
    t.add_argument("--kind", choices=["mlp", "gnn", "surf2vol", "surf2vol_gnn"], default="surf2vol")
    t.add_argument("--epochs", type=int, default=600)
    t.add_argument("--max-lr", type=float, default=1e-3)
    t.add_argument("--subsample-n", type=int, default=32000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--repeats", type=int, default=1, help="independent runs with seeds seed..seed+R-1")
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--mlp-depth", type=int, default=2)
    t.add_argument("--surf-layers", type=int, default=4)
    t.add_argument("--sv-layers", type=int, default=4)
    t.add_argument("--gnn-layers", type=int, default=4)
    t.add_argument("--k", type=int, default=8)
    t.add_argument("--n-basis", type=int, default=8)
    t.add_argument("--beta1", type=float, default=0.9)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--adam-eps", type=float, default=1e-8)
    t.add_argument("--warmup-frac", type=float, default=0.3)
    t.add_argument("--div-factor", type=float, default=25.0)
    t.add_argument("--final-div-factor", type=float, default=1e4)
    t.add_argument("--anneal", choices=["cos", "linear"], default="cos")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-variant MSE and resolution shift")
    e.add_argument("--manifest", type=Path)
    e.add_argument("--checkpoints", type=Path, nargs="+")
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--subsample-n", type=int, default=32000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--no-timing", action="store_true", help="report zero times (bit-reproducible reports)")
    e.add_argument("--save-predictions", action="store_true")
    e.add_argument("--from-predictions", type=Path, help="rebuild the report from a saved predictions file")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every primitive and model")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("features", help="dump node features, one row per point")
    f.add_argument("--case", type=Path, nargs="+")
    f.add_argument("--manifest", type=Path)
    f.add_argument("--variant", choices=[v.value for v in FeatureVariant], default="sph")
    f.add_argument("--n-basis", type=int, default=8)
    f.add_argument("--sine-s", type=float)
    f.add_argument("--sine-L", type=float)
    f.add_argument("--sph-factorial-norm", action="store_true")
    f.add_argument("--out", type=Path, required=True)
    f.set_defaults(func=cmd_features)

    gr = sub.add_parser("graph", help="dump an edge list")
    gr.add_argument("--case", type=Path, nargs=1, required=True)
    gr.add_argument("--kind", choices=["surface", "volume", "surf2vol"], default="surf2vol")
    gr.add_argument("--radius", type=float, default=0.05)
    gr.add_argument("--max-neighbors", type=int, default=8)
    gr.add_argument("--k", type=int, default=8)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--out", type=Path, required=True)
    gr.set_defaults(func=cmd_graph)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseFormatError, CheckpointError, FileNotFoundError, DegenerateShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
