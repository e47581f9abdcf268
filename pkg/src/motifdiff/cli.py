"""Command-line entry points: ingest, vocab, train, sample, eval, fingerprint."""

from __future__ import annotations

import contextlib
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .denoiser import Denoiser, load_checkpoint, save_checkpoint
from .diffusion import (
    TrainConfig,
    corpus_size_histogram,
    draw_sizes,
    prepare_pair,
    sample as run_chain,
    train as run_training,
)
from .metrics import (
    FilterRule,
    angle_kl,
    filter_pipeline,
    npr_descriptors,
    pattern_values,
    rmsd,
    scaffold_hash,
    set_metrics,
)
from .molio import (
    MolecularGraph,
    MoleculeError,
    PocketCloud,
    PocketError,
    emit_sdf,
    canonical_hash,
    parse_pocket_pdb,
    parse_sdf,
    residue_feature,
)
from .motifs import MotifVocabulary, build_vocabulary
from .topo import diagram_to_csv, fingerprint, rips_persistence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_EMPTY = 4

DEFAULT_PATTERNS = ("CCC", "CCO", "CNC", "CCN", "CC=O",
                    "CCCC", "CNCC", "NCCN", "CC=CC", "CCCS")


class CliError(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def log(event: str, **fields) -> None:
    record = {"event": event, **fields}
    print(json.dumps(record), file=sys.stderr)


def _apply_thread_cap() -> None:
    cap = os.environ.get("AMDIFF_THREADS")
    if cap:
        try:
            torch.set_num_threads(max(1, int(cap)))
        except ValueError:
            raise CliError(f"AMDIFF_THREADS must be an integer, got {cap!r}", EXIT_CONFIG)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


@contextlib.contextmanager
def _run_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(f"another run holds {lock}", EXIT_IO)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _manifest(out_dir: Path, command: str, config, seed, inputs, artifacts, started):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_digests": {str(p): _sha256(Path(p)) for p in inputs},
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": [str(a) for a in artifacts],
        "code_version": __version__,
    }
    _write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=1))


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# Pocket JSON bundle format


def pocket_to_json(pocket: PocketCloud) -> str:
    return json.dumps({
        "version": 1,
        "elements": list(pocket.elements),
        "residues": list(pocket.residues),
        "coords": pocket.coords.tolist(),
        "radius": pocket.radius,
    })


def pocket_from_json(text: str) -> PocketCloud:
    data = json.loads(text)
    features = np.stack([
        residue_feature(el, res)
        for el, res in zip(data["elements"], data["residues"])
    ])
    return PocketCloud(data["elements"], np.array(data["coords"]), features,
                       data["residues"], data["radius"])


def _load_pocket(path: Path, center, radius) -> PocketCloud:
    if path.suffix == ".json":
        return pocket_from_json(path.read_text())
    if center is None:
        raise CliError("PDB pocket input needs --center X,Y,Z", EXIT_CONFIG)
    return parse_pocket_pdb(path.read_bytes(), center, radius)


def _read_sdf_dir(path: Path):
    mols, unparsed = [], 0
    files = [path] if path.is_file() else sorted(path.glob("*.sdf"))
    for f in files:
        got, errs = parse_sdf(f.read_bytes())
        mols.extend(got)
        unparsed += len(errs)
        for e in errs:
            log("sdf_record_skipped", file=str(f), error=str(e))
    return mols, unparsed


# ---------------------------------------------------------------------------


@click.group()
def main():
    """Pocket-conditioned hierarchical diffusion toolkit."""
    _apply_thread_cap()


@main.command("print-config")
def print_config():
    """Print the default training configuration as JSON."""
    click.echo(TrainConfig().to_json())


@main.command()
@click.argument("ligand_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("protein_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--radius", default=10.0, show_default=True, help="Pocket radius (A).")
@click.option("--max-rmsd", default=2.0, show_default=True,
              help="Drop duplicate poses farther than this from the kept pose (A).")
def ingest(ligand_dir, protein_dir, out_dir, radius, max_rmsd):
    """Pair ligand SDFs with protein PDBs (by file stem) into a dataset bundle."""
    started = _now()
    with _run_lock(out_dir):
        pair_dir = out_dir / "pairs"
        pair_dir.mkdir(exist_ok=True)
        index, inputs = [], []
        for ligand_file in sorted(ligand_dir.glob("*.sdf")):
            protein_file = protein_dir / (ligand_file.stem + ".pdb")
            if not protein_file.exists():
                log("pair_skipped", ligand=str(ligand_file), reason="no matching PDB")
                continue
            mols, errs = parse_sdf(ligand_file.read_bytes())
            for e in errs:
                log("record_skipped", file=str(ligand_file), error=str(e))
            kept = _dedupe_poses(mols, max_rmsd)
            for i, mol in enumerate(kept):
                name = f"{ligand_file.stem}_{i}"
                try:
                    pocket = parse_pocket_pdb(
                        protein_file.read_bytes(), mol.coords.mean(axis=0), radius)
                except (PocketError, MoleculeError) as exc:
                    log("pair_skipped", ligand=name, reason=str(exc))
                    continue
                sdf_path = pair_dir / f"{name}.sdf"
                pocket_path = pair_dir / f"{name}.pocket.json"
                _write_atomic(sdf_path, emit_sdf([mol]))
                _write_atomic(pocket_path, pocket_to_json(pocket))
                index.append({"name": name,
                              "ligand": str(sdf_path.relative_to(out_dir)),
                              "pocket": str(pocket_path.relative_to(out_dir))})
            inputs.extend([ligand_file, protein_file])
        if not index:
            raise CliError("no usable ligand-pocket pairs", EXIT_EMPTY)
        bundle = {"version": 1, "radius": radius, "pairs": index}
        _write_atomic(out_dir / "bundle.json", json.dumps(bundle, indent=1))
        _manifest(out_dir, "ingest", {"radius": radius, "max_rmsd": max_rmsd},
                  None, sorted(set(inputs)), [out_dir / "bundle.json"], started)
        log("ingest_done", pairs=len(index))


def _dedupe_poses(mols, max_rmsd):
    kept = []
    for mol in mols:
        match = next(
            (k for k in kept if k.num_atoms == mol.num_atoms
             and canonical_hash(k) == canonical_hash(mol)), None)
        if match is not None and rmsd(match.coords, mol.coords) > max_rmsd:
            log("pose_skipped", name=mol.name, reason="pose RMSD above cutoff")
            continue
        kept.append(mol)
    return kept


def _load_bundle(bundle_dir: Path):
    bundle_file = bundle_dir / "bundle.json"
    if not bundle_file.exists():
        raise CliError(f"no bundle.json in {bundle_dir}", EXIT_IO)
    bundle = json.loads(bundle_file.read_text())
    pairs = []
    for item in bundle["pairs"]:
        mols, errs = parse_sdf((bundle_dir / item["ligand"]).read_bytes())
        if errs or not mols:
            log("pair_skipped", name=item["name"], reason="unreadable ligand")
            continue
        pocket = pocket_from_json((bundle_dir / item["pocket"]).read_text())
        pairs.append((mols[0], pocket))
    if not pairs:
        raise CliError("bundle contains no readable pairs", EXIT_EMPTY)
    return pairs


@main.command()
@click.argument("bundle_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("out_file", type=click.Path(path_type=Path))
@click.option("--min-freq", default=1, show_default=True)
def vocab(bundle_dir, out_file, min_freq):
    """Build a motif vocabulary from an ingested bundle."""
    pairs = _load_bundle(bundle_dir)
    vocabulary = build_vocabulary([mol for mol, _ in pairs], min_freq)
    _write_atomic(out_file, vocabulary.to_json())
    log("vocab_done", size=vocabulary.size)


@main.command()
@click.argument("bundle_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--config", "config_file", type=click.Path(exists=True, path_type=Path),
              help="TrainConfig JSON (defaults apply when omitted).")
@click.option("--vocab", "vocab_file", type=click.Path(exists=True, path_type=Path),
              help="Reuse an existing vocabulary instead of rebuilding.")
def train(bundle_dir, out_dir, config_file, vocab_file):
    """Train the denoiser on an ingested bundle."""
    started = _now()
    try:
        config = (TrainConfig.from_json(config_file.read_text())
                  if config_file else TrainConfig().validate())
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad config: {exc}", EXIT_CONFIG)
    pairs = _load_bundle(bundle_dir)
    with _run_lock(out_dir):
        if vocab_file:
            vocabulary = MotifVocabulary.from_json(vocab_file.read_text())
        else:
            vocabulary = build_vocabulary(
                [mol for mol, _ in pairs], config.min_frequency)
        torch.manual_seed(config.seed)
        model = Denoiser(hidden_dim=config.hidden_dim, num_layers=config.num_layers,
                         vocab_size=vocabulary.size, horizon=config.T)
        prepared = [prepare_pair(mol, pocket, vocabulary, config.coord_scale)
                    for mol, pocket in pairs]
        schedule = config.make_schedule()

        rows = ["step,L_a_pos,L_a_type,L_m_pos,L_m_id,total"]
        ckpt_path = out_dir / "checkpoint.bin"

        def callback(step, b):
            rows.append(f"{step},{b['L_a_pos']:.9g},{b['L_a_type']:.9g},"
                        f"{b['L_m_pos']:.9g},{b['L_m_id']:.9g},{b['total']:.9g}")
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model)
                log("checkpoint", step=step)

        run_training(prepared, model, schedule, config, callback)
        save_checkpoint(ckpt_path, model)
        _write_atomic(out_dir / "loss.csv", "\n".join(rows) + "\n")
        _write_atomic(out_dir / "vocab.json", vocabulary.to_json())
        meta = {
            "config": json.loads(config.to_json()),
            "vocab_size": vocabulary.size,
            "size_histogram": corpus_size_histogram(prepared),
        }
        _write_atomic(out_dir / "meta.json", json.dumps(meta, indent=1))
        inputs = [bundle_dir / "bundle.json"] + ([config_file] if config_file else [])
        _manifest(out_dir, "train", json.loads(config.to_json()), config.seed,
                  inputs, [ckpt_path, out_dir / "loss.csv", out_dir / "vocab.json"],
                  started)
        log("train_done", steps=config.steps)


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.argument("pocket_file", type=click.Path(exists=True, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--n", "n_molecules", default=10, show_default=True)
@click.option("--scale", default=None, type=float, help="Guidance scale override.")
@click.option("--temperature", default=None, type=float,
              help="Sampling noise temperature override in (0, 1].")
@click.option("--snapshots", default="", help="Comma-separated t values to record.")
@click.option("--seed", default=None, type=int, help="Master seed override.")
@click.option("--center", default=None, help="Ligand center X,Y,Z for PDB pockets.")
@click.option("--radius", default=10.0, show_default=True)
@click.option("--n-atoms", default=None, type=int)
@click.option("--n-motifs", default=None, type=int)
def sample(checkpoint, pocket_file, out_dir, n_molecules, scale, temperature,
           snapshots, seed, center, radius, n_atoms, n_motifs):
    """Sample molecules for a pocket from a trained checkpoint."""
    started = _now()
    meta_file = checkpoint.parent / "meta.json"
    if not meta_file.exists():
        raise CliError(f"missing {meta_file} next to the checkpoint", EXIT_IO)
    meta = json.loads(meta_file.read_text())
    config = TrainConfig.from_json(json.dumps(meta["config"]))
    model = load_checkpoint(checkpoint)
    if model.vocab_size != meta["vocab_size"] or model.horizon != config.T:
        raise CliError("checkpoint does not match its meta.json", EXIT_CONFIG)
    if scale is not None:
        config.guidance_scale = scale
    if temperature is not None:
        config.sample_temperature = temperature
    if seed is not None:
        config.seed = seed
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    snap_steps = tuple(int(s) for s in snapshots.split(",") if s.strip())
    if any(s < 1 or s > config.T for s in snap_steps):
        raise CliError("snapshot steps must lie in [1, T]", EXIT_CONFIG)
    if center is not None:
        center = tuple(float(v) for v in center.split(","))
    pocket = _load_pocket(pocket_file, center, radius)
    schedule = config.make_schedule()
    histogram = meta["size_histogram"]

    with _run_lock(out_dir):
        mols, props = [], []
        snap_dir = out_dir / "snapshots"
        for chain in range(n_molecules):
            rng = np.random.default_rng(config.seed + chain)
            na, nm = n_atoms, n_motifs
            if na is None or nm is None:
                drawn = draw_sizes(histogram, rng)
                na = na if na is not None else int(drawn[0])
                nm = nm if nm is not None else int(drawn[1])
            result = run_chain(pocket, na, nm, model, schedule, config, rng,
                               snapshots=snap_steps, name=f"sample_{chain}")
            mols.append(result.molecule)
            props.append({"valid": int(result.valid),
                          "seed": config.seed + chain,
                          "violations": "; ".join(result.violations)})
            for t, snap in result.snapshots:
                snap_dir.mkdir(exist_ok=True)
                _write_atomic(snap_dir / f"chain{chain:02d}_t{t:04d}.sdf",
                              emit_sdf([snap]))
            log("chain_done", chain=chain, valid=result.valid)
        sdf_path = out_dir / "samples.sdf"
        _write_atomic(sdf_path, emit_sdf(mols, props))
        _manifest(out_dir, "sample", json.loads(config.to_json()), config.seed,
                  [checkpoint, meta_file, pocket_file], [sdf_path], started)
        log("sample_done", n=n_molecules)


def _load_rules(path: Path):
    data = json.loads(path.read_text())
    rules = []
    for item in data["rules"]:
        payload = dict(item.get("payload", {}))
        if item["kind"] == "similarity-floor":
            refs, _ = _read_sdf_dir(Path(payload["references"]))
            payload["references"] = refs
        rules.append(FilterRule(item["name"], item["kind"], payload))
    return rules


@main.command("eval")
@click.argument("generated", type=click.Path(exists=True, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--reference", "references", multiple=True,
              type=click.Path(exists=True, path_type=Path),
              help="Reference SDF files/dirs (repeatable).")
@click.option("--rules", "rules_file", default=None,
              type=click.Path(exists=True, path_type=Path))
@click.option("--rmsd-against", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="Index-matched conformer SDF for RMSD statistics.")
def eval_cmd(generated, out_dir, references, rules_file, rmsd_against):
    """Compute the metric report for a generated molecule set."""
    started = _now()
    gen, unparsed = _read_sdf_dir(generated)
    ref_mols = []
    for ref in references:
        mols, _ = _read_sdf_dir(ref)
        ref_mols.extend(mols)

    with _run_lock(out_dir):
        report = {"unparsed": unparsed, "qed": "unavailable", "sa": "unavailable"}
        ref_hashes = {scaffold_hash(m) for m in ref_mols}
        report.update(set_metrics(gen, ref_hashes, set()))

        if gen and ref_mols:
            kl, omitted = angle_kl(ref_mols, gen, DEFAULT_PATTERNS)
            report["angle_kl"] = {p: v for p, v in kl.items()
                                  if len(p.replace("=", "").replace("#", "")) == 3}
            report["dihedral_kl"] = {p: v for p, v in kl.items()
                                     if len(p.replace("=", "").replace("#", "")) > 3}
            report["patterns_omitted"] = omitted
            _dump_histograms(out_dir, ref_mols, gen, kl.keys())

        npr_points = []
        for m in gen:
            if m.num_atoms >= 3:
                npr_points.append(npr_descriptors(m))
        report["npr_points"] = npr_points

        if rmsd_against:
            other, _ = _read_sdf_dir(Path(rmsd_against))
            values = [rmsd(a.coords, b.coords) for a, b in zip(gen, other)
                      if a.num_atoms == b.num_atoms]
            if values:
                report["rmsd_stats"] = {"mean": float(np.mean(values)),
                                        "std": float(np.std(values))}

        if rules_file:
            rules = _load_rules(rules_file)
            passed, rejected = filter_pipeline(gen, rules)
            report["filter"] = {
                "passed": len(passed),
                "rejected": [{"name": m.name, "reason": r} for m, r in rejected],
            }

        _write_atomic(out_dir / "report.json", json.dumps(report, indent=1))
        csv_rows = ["metric,value"]
        for key in ("validity", "uniqueness", "diversity", "novelty"):
            value = report.get(key)
            csv_rows.append(f"{key},{'' if value is None else value}")
        _write_atomic(out_dir / "report.csv", "\n".join(csv_rows) + "\n")
        _manifest(out_dir, "eval", {}, None, [generated], [out_dir / "report.json"],
                  started)
        log("eval_done", n_generated=len(gen))
    if not gen:
        raise CliError("no parseable generated molecules", EXIT_EMPTY)


def _dump_histograms(out_dir, ref_mols, gen, patterns):
    hist_dir = out_dir / "histograms"
    hist_dir.mkdir(exist_ok=True)
    for pattern in patterns:
        ref_vals, size = pattern_values(ref_mols, pattern)
        gen_vals, _ = pattern_values(gen, pattern)
        lo, hi, width = (0.0, 180.0, 2.0) if size == 3 else (-180.0, 180.0, 5.0)
        edges = np.arange(lo, hi + width / 2, width)
        p, _ = np.histogram(ref_vals, bins=edges, density=True)
        q, _ = np.histogram(gen_vals, bins=edges, density=True)
        rows = ["bin_left,ref_density,gen_density"]
        rows += [f"{edges[i]:g},{p[i]:.9g},{q[i]:.9g}" for i in range(len(p))]
        safe = pattern.replace("=", "d").replace("#", "t")
        _write_atomic(hist_dir / f"{safe}.csv", "\n".join(rows) + "\n")


@main.command("fingerprint")
@click.argument("input_file", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_file", default=None, type=click.Path(path_type=Path))
@click.option("--diagrams", default=None, type=click.Path(path_type=Path),
              help="Also export persistence diagrams as CSV to this directory.")
@click.option("--max-filtration", default=None, type=float)
def fingerprint_cmd(input_file, out_file, diagrams, max_filtration):
    """Topological fingerprints of the molecules (SDF) in a file."""
    mols, _ = _read_sdf_dir(input_file)
    if not mols:
        raise CliError("no parseable molecules", EXIT_EMPTY)
    out = {}
    for i, mol in enumerate(mols):
        name = mol.name or f"record_{i}"
        out[name] = fingerprint(mol.coords, max_filtration).tolist()
        if diagrams:
            Path(diagrams).mkdir(parents=True, exist_ok=True)
            mf = max_filtration
            if mf is None:
                d = mol.coords[:, None, :] - mol.coords[None, :, :]
                mf = float(np.sqrt((d ** 2).sum(-1)).max()) or 1.0
            diagram = rips_persistence(mol.coords, mf)
            _write_atomic(Path(diagrams) / f"{name}.csv", diagram_to_csv(diagram))
    text = json.dumps(out, indent=1)
    if out_file:
        _write_atomic(out_file, text)
    else:
        click.echo(text)


if __name__ == "__main__":
    main()
