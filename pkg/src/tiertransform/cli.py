"""Command-line front end: segment, generate, features, rmsd, pca, metrics.

Every failure ends with one JSON line on stderr,
``{"error": <exception class>, "message": ...}``, and a nonzero exit code.
Batch subcommands keep going past per-item failures, print a summary and
exit with ``EXIT_PARTIAL``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import auc_roc, kabsch_align, ligand_rmsd, nef, pca_fit, pca_transform
from .errors import ShapeMismatch, TierTransformError
from .features import FeatureTrace, assemble_features, feature_rows, fallback_scores, read_score_table
from .ffenergy import NonbondedSettings
from .molio import (
    ConformationSet,
    element_symbols,
    parse_annotations,
    parse_system,
    read_conformations,
    read_table,
    write_conformations,
    write_table,
)
from .protocol import TRACE_COLUMNS, ProtocolConfig, generate_conformations, read_config
from .segmentation import SegmentationConfig, build_segmentation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3

RECORD_COLUMNS = ["seed", "status", "trace_length", "post_kick_energy", "final_energy", "flips", "error"]


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _selection(text: str) -> np.ndarray:
    """``"1-4,9"`` (1-based, inclusive) -> 0-based indices."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad atom selection {text!r}")
    return np.array(out, dtype=np.int64) - 1


def _global_options(parser: argparse.ArgumentParser, suppress: bool):
    # on subparsers the defaults are suppressed so values given before the subcommand survive
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed-list", type=_seed_list, default=d(None), help="comma-separated seeds")
    parser.add_argument("--preset", choices=["gentle", "aggressive"], default=d(None))
    parser.add_argument("--cutoff", type=float, default=d(20.0), help="pocket radius r_cutoff in Angstrom")
    parser.add_argument("--out-dir", type=Path, default=d(Path(".")))
    parser.add_argument("--deterministic", action="store_true", default=d(False), help="force sequential execution")
    parser.add_argument("--jobs", type=int, default=d(1))
    parser.add_argument("--config", type=Path, default=d(None), help="protocol config file (key = value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiertransform", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_options(p, suppress=True)
        return p

    def system_args(p):
        p.add_argument("--system", type=Path, required=True)
        p.add_argument("--annotations", type=Path, required=True)
        p.add_argument("--centre", type=float, nargs=3, metavar=("X", "Y", "Z"), help="pocket centre (default: ligand centroid)")

    p = add("segment", "build the group hierarchy and print its summary")
    system_args(p)

    p = add("generate", "relax, kick and minimize; one record per seed")
    system_args(p)
    p.add_argument("--skip-fixed-fixed", choices=["yes", "no"], default="yes")

    p = add("features", "assemble the feature table from generate outputs")
    p.add_argument("--runs", type=Path, nargs="+", required=True, help="generate output directories, one per ligand")
    p.add_argument("--scores", type=Path, help="ligand_id,score_initial,score_relaxed,score_conf_1..n")
    p.add_argument("--fallback", action="store_true", help="use interaction energies where scores are missing")
    p.add_argument("--method", choices=["stride", "mean"], default="stride")
    p.add_argument("--output", default="features.csv")

    p = add("rmsd", "align conformations on the pocket and report ligand RMSD")
    system_args(p)
    p.add_argument("--reference", type=Path, required=True, help="XYZ whose first frame is the reference")
    p.add_argument("--conformations", type=Path, nargs="+", required=True)
    p.add_argument("--mapping", type=Path, help="one 0-based candidate index per ligand atom")
    p.add_argument("--output", default="rmsd.csv")

    p = add("pca", "fit PCA on some structures and project others")
    p.add_argument("--fit", type=Path, nargs="+", required=True)
    p.add_argument("--transform", type=Path, nargs="*", default=[])
    p.add_argument("--atoms", type=_selection, required=True, help="1-based atoms, e.g. 2,6,10-14")
    p.add_argument("--output", default="pca.csv")

    p = add("metrics", "NEF and AUC-ROC from a score/label table")
    p.add_argument("--table", type=Path, required=True, help="columns score,label (label 1 = active)")
    p.add_argument("--chi", type=float, help="NEF fraction (default: active ratio)")
    p.add_argument("--output", default="metrics.csv")
    return parser


def _error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def _load(args):
    system = parse_system(args.system)
    ann = parse_annotations(args.annotations, system)
    if args.centre is not None:
        centre = tuple(args.centre)
    else:
        lig = system.positions[ann.is_ligand]
        centre = tuple(lig.mean(axis=0)) if len(lig) else tuple(system.positions.mean(axis=0))
    plan = build_segmentation(system, ann, SegmentationConfig(centre, args.cutoff))
    return system, ann, plan


def _protocol_config(args) -> ProtocolConfig:
    overrides = {}
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.seed_list is not None:
        overrides["seeds"] = args.seed_list
    if args.config is not None:
        return read_config(args.config, **overrides)
    return ProtocolConfig(**overrides)


def cmd_segment(args) -> int:
    _, _, plan = _load(args)
    summary = plan.summary()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "plan.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_generate(args) -> int:
    system, _, plan = _load(args)
    cfg = _protocol_config(args)
    settings = NonbondedSettings(skip_fixed_fixed=args.skip_fixed_fixed == "yes")
    jobs = 1 if args.deterministic else max(1, args.jobs)
    records = generate_conformations(system, plan, settings, cfg, jobs=jobs)

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    syms = element_symbols(system)
    relaxed = next((r.relaxed_coords for r in records if r.relaxed_coords is not None), None)
    rows = []
    for r in records:
        frames = [("initial", system.positions)]
        if r.relaxed_coords is not None:
            frames.append(("relaxed", r.relaxed_coords))
        if r.coords is not None:
            frames.append((f"seed {r.seed} final", r.coords))
        write_conformations(ConformationSet(frames, syms), out / f"seed_{r.seed}.xyz")
        write_table(r.trace.rows(), out / f"seed_{r.seed}_trace.csv", columns=list(TRACE_COLUMNS))
        rows.append(
            {
                "seed": r.seed,
                "status": r.status,
                "trace_length": len(r.trace),
                "post_kick_energy": r.post_kick_energy,
                "final_energy": r.final_energy,
                "flips": " ".join(str(f) for f in r.flips),
                "error": r.error,
            }
        )
    write_table(rows, out / "records.csv", columns=RECORD_COLUMNS)
    if relaxed is not None:
        fb = fallback_scores(system, plan, system.positions, relaxed, [r.coords for r in records], settings)
        write_table([{"score": float(v)} for v in fb], out / "fallback_scores.csv", columns=["score"])
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    failed = [r.seed for r in records if r.status == "failed"]
    print(json.dumps({"records": len(records), "failed_seeds": failed, "out_dir": str(out)}))
    if failed:
        for r in records:
            if r.status == "failed":
                print(json.dumps({"error": "FailedRecord", "message": f"seed {r.seed}: {r.error}"}), file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _run_traces(run_dir: Path):
    """``(traces or None per record, fallback scores or None)`` from a generate directory."""
    _, records = read_table(run_dir / "records.csv", numeric=False)
    traces = []
    for row in records:
        if row["status"] == "failed":
            traces.append(None)
            continue
        _, trace_rows = read_table(run_dir / f"seed_{row['seed']}_trace.csv")
        traces.append(FeatureTrace(np.array([t["delta_e"] for t in trace_rows]), float("nan"), int(row["seed"])))
    fb = None
    if (run_dir / "fallback_scores.csv").exists():
        _, fb_rows = read_table(run_dir / "fallback_scores.csv")
        fb = [r["score"] for r in fb_rows]
    return traces, fb


def cmd_features(args) -> int:
    scores = read_score_table(args.scores) if args.scores else {}
    vectors, failures = [], []
    for run_dir in args.runs:
        ligand_id = run_dir.name
        try:
            traces, fb = _run_traces(run_dir)
            vectors.append(
                assemble_features(traces, scores.get(ligand_id), ligand_id, fallback=fb if args.fallback else None, method=args.method)
            )
        except (TierTransformError, OSError, KeyError, ValueError) as exc:
            failures.append(ligand_id)
            print(json.dumps({"error": type(exc).__name__, "message": f"ligand {ligand_id}: {exc}"}), file=sys.stderr)
    if vectors:
        layouts = {tuple(v.columns) for v in vectors}
        if len(layouts) > 1:
            raise ShapeMismatch("ligands have different numbers of conformations")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        header, rows = feature_rows(vectors)
        write_table(rows, args.out_dir / args.output, columns=header)
    n_features = len(vectors[0].columns) if vectors else 0
    print(json.dumps({"ligands": len(vectors), "features": n_features, "failed": failures}))
    if failures:
        return EXIT_PARTIAL if vectors else EXIT_ERROR
    return EXIT_OK


def cmd_rmsd(args) -> int:
    system, ann, plan = _load(args)
    ref = read_conformations(args.reference).frames[0][1]
    pocket = np.intersect1d(plan.movable_atoms, np.flatnonzero(~ann.is_ligand))
    ligand = np.flatnonzero(ann.is_ligand)
    mapping = None
    if args.mapping is not None:
        mapping = np.loadtxt(args.mapping, dtype=np.int64, ndmin=1)
    rows = []
    for path in args.conformations:
        for label, xyz in read_conformations(path).frames:
            fit = kabsch_align(ref, xyz, pocket)
            moved = fit.apply(xyz)
            rows.append(
                {
                    "file": path.name,
                    "frame": label,
                    "pocket_rmsd": fit.rmsd,
                    "ligand_rmsd": ligand_rmsd(ref[ligand], moved[ligand], mapping),
                }
            )
    for path in {r["file"] for r in rows}:
        init = [r["ligand_rmsd"] for r in rows if r["file"] == path and r["frame"] == "initial"]
        for r in rows:
            if r["file"] == path:
                r["delta_rmsd"] = init[0] - r["ligand_rmsd"] if init else float("nan")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_table(rows, args.out_dir / args.output, columns=["file", "frame", "pocket_rmsd", "ligand_rmsd", "delta_rmsd"])
    best = min(rows, key=lambda r: r["ligand_rmsd"])
    print(json.dumps({"frames": len(rows), "best": {"file": best["file"], "frame": best["frame"], "ligand_rmsd": best["ligand_rmsd"]}}))
    return EXIT_OK


def _ca_rows(paths, atoms):
    out = []
    for path in paths:
        for label, xyz in read_conformations(path).frames:
            out.append((label, path.stem, xyz[atoms].ravel()))
    return out


def cmd_pca(args) -> int:
    fit_rows = _ca_rows(args.fit, args.atoms)
    model = pca_fit(np.array([r[2] for r in fit_rows]))
    rows = []
    for tag, data in (("fit", fit_rows), ("transform", _ca_rows(args.transform, args.atoms))):
        if not data:
            continue
        proj = pca_transform(model, np.array([r[2] for r in data]))
        for (label, stem, _), (pc1, pc2) in zip(data, proj):
            rows.append({"structure_label": f"{stem}:{label}", "source_tag": tag, "PC1": pc1, "PC2": pc2})
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_table(rows, args.out_dir / args.output, columns=["structure_label", "source_tag", "PC1", "PC2"])
    print(json.dumps({"rows": len(rows), "explained_variance": [float(v) for v in model.explained_variance]}))
    return EXIT_OK


def cmd_metrics(args) -> int:
    _, rows = read_table(args.table)
    scores = np.array([r["score"] for r in rows], dtype=float)
    labels = np.array([r["label"] for r in rows], dtype=float) > 0
    result = {"NEF": nef(scores, labels, args.chi), "AUC": auc_roc(scores, labels)}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_table([result], args.out_dir / args.output, columns=["NEF", "AUC"])
    print(f"NEF {result['NEF']}")
    print(f"AUC {result['AUC']}")
    return EXIT_OK


COMMANDS = {
    "segment": cmd_segment,
    "generate": cmd_generate,
    "features": cmd_features,
    "rmsd": cmd_rmsd,
    "pca": cmd_pca,
    "metrics": cmd_metrics,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return EXIT_OK
        print(json.dumps({"error": "UsageError", "message": "invalid command line"}), file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (TierTransformError, OSError, ValueError, KeyError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
