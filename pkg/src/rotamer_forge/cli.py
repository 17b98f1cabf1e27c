"""Command-line entry point: ``rotamer-forge <subcommand> ...``.

Exit status is 0 on success, 2 on a usage error and 1 on any runtime
failure. Every subcommand that produces files writes them under ``--out``
only, together with ``run_config.json`` holding the resolved configuration.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import torch

from . import __version__
from .config import SECTIONS, resolve
from .errors import RotamerForgeError
from .residues import ROTAMERIC

log = logging.getLogger("rotamer_forge")

# flags generated from dataclass fields, per subcommand
_SECTION_FLAGS = {"train": ("model", "train"), "evaluate": ("eval",), "prepare-data": ("data",)}
_SKIP = {("train", "seed"), ("eval", "seed"), ("eval", "k")}


def _add_section_flags(parser, section):
    group = parser.add_argument_group(f"[{section}] settings")
    for f in fields(SECTIONS[section]):
        if (section, f.name) in _SKIP:
            continue
        flag = "--" + f.name.replace("_", "-")
        dest = f"{section}__{f.name}"
        if f.type is bool:
            group.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=dest, type=f.type, default=None, metavar=f.name.upper())


def _common(parser, out=True):
    parser.add_argument("--config", help="INI file with [run]/[model]/[train]/[eval]/[data] sections")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    if out:
        parser.add_argument("--out", required=True, help="output directory")


def build_parser():
    p = argparse.ArgumentParser(prog="rotamer-forge", description="Energy-based side-chain models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    prep = sub.add_parser("prepare-data", help="parse and curate structures into a manifest")
    prep.add_argument("--structures", nargs="+", required=True, help="PDB files or directories")
    prep.add_argument("--split", choices=("train", "test"), default="train")
    _common(prep)

    tr = sub.add_parser("train", help="train an energy model")
    tr.add_argument("--data", required=True, help="manifest from prepare-data")
    tr.add_argument("--rotamer-lib", required=True)
    _common(tr)

    ev = sub.add_parser("evaluate", help="rotamer recovery benchmark")
    ev.add_argument("--checkpoints", nargs="+", required=True, help="one path, or several for an ensemble")
    ev.add_argument("--test-manifest", required=True)
    ev.add_argument("--rotamer-lib", required=True)
    _common(ev)

    an = sub.add_parser("analyze", help="energy scans, saliency, embeddings")
    an_sub = an.add_subparsers(dest="analysis", metavar="KIND")
    scan = an_sub.add_parser("scan", help="chi perturbation energy scan")
    scan.add_argument("--chi-index", type=int, default=1, help="1-based chi index")
    scan.add_argument("--step", type=float, default=10.0)
    scan.add_argument("--rotations", type=int, default=100)
    sal = an_sub.add_parser("saliency", help="coordinate gradient magnitudes")
    emb = an_sub.add_parser("embed", help="pooled context embeddings")
    for a in (scan, sal, emb):
        a.add_argument("--checkpoint", required=True)
        a.add_argument("--structure", required=True, help="PDB file")
        _common(a)
    scan.add_argument("--residue", action="append", help="residue id chain:resseq (repeatable; default all)")
    sal.add_argument("--residue", required=True, help="residue id chain:resseq")

    ins = sub.add_parser("inspect-checkpoint", help="print a checkpoint header")
    ins.add_argument("path")

    for name, sections in _SECTION_FLAGS.items():
        for section in sections:
            _add_section_flags(sub.choices[name], section)
    return p


def _flags(args):
    out = {"run": {}}
    for key, value in vars(args).items():
        if value is None:
            continue
        if "__" in key:
            section, name = key.split("__", 1)
            out.setdefault(section, {})[name] = value
        elif key in ("seed", "threads"):
            out["run"][key] = value
    return out


def _prepare_out(args, cfg, extra=None):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": args.command, "run_config": cfg.to_dict()}
    doc.update(extra or {})
    (out / "run_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def _pdb_paths(items):
    paths = []
    for item in items:
        p = Path(item)
        paths.extend(sorted(p.glob("*.pdb")) if p.is_dir() else [p])
    return paths


def _load_structures(entries):
    from .structures import read_pdb
    return [read_pdb(e.path, e.identifier) for e in entries]


# --------------------------------------------------------------- commands

def cmd_prepare_data(args, cfg):
    from .structures import StructureMetadata, filter_dataset, read_pdb
    out = _prepare_out(args, cfg)
    excluded = set()
    if cfg.data.exclude_file:
        excluded = set(Path(cfg.data.exclude_file).read_text().split())
    metas = []
    for path in _pdb_paths(args.structures):
        s = read_pdb(path)
        metas.append(StructureMetadata(s.identifier, s.resolution, s.r_value, str(Path(path).resolve())))
    manifest = filter_dataset(metas, excluded, cfg.data.resolution_max, cfg.data.rvalue_max,
                              cfg.data.val_fraction, cfg.seed, split=args.split)
    manifest.write_jsonl(out / "manifest.jsonl")
    summary = {split: len(manifest.ids(split)) for split in manifest.SPLITS}
    summary["dropped_missing_metadata"] = manifest.dropped_missing_metadata
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args, cfg):
    from .rotamers import parse_library
    from .structures import DatasetManifest
    from .training import train
    out = _prepare_out(args, cfg)
    manifest = DatasetManifest.read_jsonl(args.data)
    structures = _load_structures(manifest.select("train"))
    val = _load_structures(manifest.select("validation"))
    if not structures:
        raise RotamerForgeError(f"{args.data}: no training entries")
    lib = parse_library(args.rotamer_lib)
    result = train(cfg.train, cfg.model, structures, lib, val_structures=val, out_dir=out)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"steps": len(result.history), "final_loss": last.get("loss"),
                      "checkpoint": str(result.checkpoints[-1]) if result.checkpoints else None}))
    return 0


def cmd_evaluate(args, cfg):
    from dataclasses import replace
    from .evaluation import ModelScorer, aggregate, recover_rotamers, write_report_json, write_results_csv
    from .model import load_checkpoint
    from .rotamers import parse_library
    from .structures import DatasetManifest
    models = [load_checkpoint(p)[0] for p in args.checkpoints]
    opts = replace(cfg.eval, k=models[0].config.k)
    out = _prepare_out(args, cfg, {"checkpoints": [str(p) for p in args.checkpoints]})
    manifest = DatasetManifest.read_jsonl(args.test_manifest)
    entries = manifest.select("test") or manifest.select("train", "validation")
    lib = parse_library(args.rotamer_lib)
    scorer = ModelScorer(models)
    results = []
    for s in _load_structures(entries):
        results.extend(recover_rotamers(scorer, s, lib, opts=opts))
    report = aggregate(results)
    doc = write_report_json(out / "report.json", report, strict_report=aggregate(results, strict=True),
                            extra={"protocol": opts.protocol, "structures": [e.identifier for e in entries],
                                   "skipped": sum(r.skipped for r in results)})
    write_results_csv(out / "residues.csv", results)
    print(json.dumps({k: doc[k] for k in ("Avg", "Buried", "Surface")}))
    return 0


def cmd_analyze(args, cfg):
    from . import analysis
    from .evaluation import ModelScorer
    from .geometry import knn_context
    from .model import featurize, load_checkpoint
    from .structures import read_pdb
    model, _ = load_checkpoint(args.checkpoint)
    structure = read_pdb(args.structure)
    out = _prepare_out(args, cfg, {"checkpoint": str(args.checkpoint), "structure": str(args.structure),
                                   "analysis": args.analysis})
    if args.analysis == "scan":
        if args.residue:
            residues = [structure.residue(uid) for uid in args.residue]
        else:
            residues = [r for r in structure.residues
                        if r.amino_acid in ROTAMERIC and r.complete and len(r.chi) >= args.chi_index
                        and structure.n_atoms >= model.config.k]
        scorer = ModelScorer(model)
        scans = [analysis.chi_scan(scorer, structure, r, args.chi_index - 1, args.step, args.rotations,
                                   seed=cfg.seed, k=model.config.k) for r in residues]
        analysis.write_scan_csv(out / "scan.csv", scans)
        if scans:
            analysis.write_scan_aggregate_csv(out / "scan_aggregate.csv", *analysis.aggregate_scans(scans))
        print(json.dumps({"residues": len(scans)}))
    elif args.analysis == "saliency":
        residue = structure.residue(args.residue)
        fc = featurize(knn_context(structure, residue, k=model.config.k))
        analysis.write_saliency_csv(out / "saliency.csv", analysis.saliency(model, fc))
        print(json.dumps({"residue": residue.uid, "atoms": fc.k}))
    else:
        embeddings = analysis.embed_contexts(model, structure)
        analysis.write_embeddings_csv(out / "embeddings.csv", embeddings)
        print(json.dumps({"residues": len(embeddings), "width": model.config.width}))
    return 0


def cmd_inspect(args):
    from .model import read_checkpoint_header
    header, _ = read_checkpoint_header(args.path)
    summary = {k: header[k] for k in ("format_version", "config", "parameter_count", "meta")}
    summary["tensors"] = [{"name": t["name"], "dtype": t["dtype"], "shape": t["shape"]} for t in header["tensors"]]
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None or (args.command == "analyze" and args.analysis is None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "inspect-checkpoint":
            return cmd_inspect(args)
        cfg = resolve(args.config, _flags(args))
        torch.set_num_threads(cfg.threads)
        handler = {"prepare-data": cmd_prepare_data, "train": cmd_train,
                   "evaluate": cmd_evaluate, "analyze": cmd_analyze}[args.command]
        return handler(args, cfg)
    except (RotamerForgeError, OSError, KeyError) as exc:
        print(f"rotamer-forge: error: {exc}", file=sys.stderr)
        return 1


run = main

if __name__ == "__main__":
    sys.exit(main())
