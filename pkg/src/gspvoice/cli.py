"""Operator command line: PCA fitting, simulation, serving, analysis.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis as ana
from .corpus import load_corpus, make_synthetic_corpus, write_corpus
from .engine import ChainConfig
from .errors import GspError
from .latent import PcaBasis, fit_pca, reconstruct
from .service import ChainSetup, ExperimentService
from .simulate import Scenario, run_scenario


@click.group()
def cli():
    """Collaborative latent-space voice prototyping toolkit."""


@cli.command("make-corpus")
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--n", default=5000, show_default=True)
@click.option("--d", default=256, show_default=True)
@click.option("--clusters", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_make_corpus(out_path, n, d, clusters, seed):
    """Write the synthetic embedding corpus fixture."""
    write_corpus(out_path, make_synthetic_corpus(n=n, d=d, n_clusters=clusters, seed=seed))
    click.echo(f"wrote {n}x{d} corpus to {out_path}")


@cli.command("fit-pca")
@click.argument("corpus_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("k", type=int)
@click.argument("out_path", type=click.Path(dir_okay=False))
def cmd_fit_pca(corpus_path, k, out_path):
    """Fit K principal components on an embedding corpus."""
    corpus = load_corpus(corpus_path)
    basis = fit_pca(corpus, k)
    basis.save(out_path)
    click.echo(f"{'component':>9}  {'sigma':>12}  {'explained':>9}")
    for i in range(basis.k):
        click.echo(
            f"{i:>9}  {basis.sigma[i]:>12.6f}  {basis.explained_variance_ratio[i]:>9.4f}"
        )
    click.echo(f"total explained variance: {basis.explained_variance_ratio.sum():.4f}")


@cli.command("simulate")
@click.argument("scenario_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--basis", "basis_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="override the scenario seed")
def cmd_simulate(scenario_path, out_dir, basis_path, seed):
    """Run a simulated-agent experiment and export chain histories."""
    basis = PcaBasis.load(basis_path)
    scenario = Scenario.load(scenario_path)
    if seed is not None:
        scenario = Scenario(
            seed=seed,
            config=scenario.config,
            noise_grid_steps=scenario.noise_grid_steps,
            specs=scenario.specs,
        )
    chains = run_scenario(scenario, basis)

    out = Path(out_dir)
    (out / "chains").mkdir(parents=True, exist_ok=True)
    basis.save(out / "basis.json")
    for chain in chains:
        with open(out / "chains" / f"{chain.chain_id}.json", "w") as fh:
            json.dump(chain.to_dict(), fh, sort_keys=True)
    summary = {
        "n_chains": len(chains),
        "full": sum(1 for c in chains if c.status == "complete"),
        "terminated": sum(1 for c in chains if c.status == "terminated"),
        "seed": scenario.seed,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True)
    click.echo(json.dumps(summary))


def export_tree_hash(out_dir) -> str:
    """Stable hash over every file in an export tree."""
    h = hashlib.sha256()
    for path in sorted(Path(out_dir).rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(out_dir)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


@cli.command("hash-export")
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
def cmd_hash_export(out_dir):
    """Print the content hash of an export tree."""
    click.echo(export_tree_hash(out_dir))


@cli.command("serve")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def cmd_serve(config_path):
    """Host the experiment web service."""
    import uvicorn

    from .webapi import create_app

    with open(config_path) as fh:
        cfg = json.load(fh)
    port = int(os.environ.get("GSPVOICE_PORT", cfg.get("port", 8000)))
    host = os.environ.get("GSPVOICE_HOST", cfg.get("host", "127.0.0.1"))
    mode = os.environ.get("GSPVOICE_MODE", cfg.get("mode", "gsp"))
    data_dir = Path(os.environ.get("GSPVOICE_DATA_DIR", cfg.get("data_dir", ".")))
    data_dir.mkdir(parents=True, exist_ok=True)

    basis = PcaBasis.load(cfg["basis_path"])
    chain_config = ChainConfig.from_dict(cfg.get("chain_config", {}))
    setups = [
        ChainSetup(
            chain_id=c["chain_id"],
            target_ref=c.get("target_ref", c["chain_id"]),
            sentence_id=c.get("sentence_id", "s0"),
            meta=c.get("meta", {}),
        )
        for c in cfg["chains"]
    ]
    rated_chains = None
    if mode == "rating":
        from .engine import ChainState

        rated_chains = []
        for path in sorted(Path(cfg["rated_export_dir"]).glob("*.json")):
            with open(path) as fh2:
                rated_chains.append(ChainState.from_dict(json.load(fh2)))

    import time

    service = ExperimentService(
        basis,
        chain_config,
        setups,
        mode=mode,
        log_path=str(data_dir / "events.jsonl"),
        now_fn=time.time,
        rated_chains=rated_chains,
    )
    app = create_app(service)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        service.close()


@cli.command("analyze")
@click.argument("export_dir", type=click.Path(exists=True, file_okay=False))
@click.argument(
    "which",
    type=click.Choice(["distances", "reference", "mds", "pitch", "bootstrap", "mos", "all"]),
)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@click.option("--ratings", "ratings_path", default=None, type=click.Path(exists=True))
@click.option("--n-boot", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_analyze(export_dir, which, out_dir, ratings_path, n_boot, seed):
    """Emit figure-analog data files from a simulation/service export."""
    export_dir = Path(export_dir)
    out = Path(out_dir) if out_dir else export_dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    basis = PcaBasis.load(export_dir / "basis.json")
    chain_paths = sorted((export_dir / "chains").glob("*.json"))
    if not chain_paths:
        raise GspError(f"no chain exports under {export_dir / 'chains'}")
    histories = ana.load_histories(chain_paths, basis)

    wanted = (
        ["distances", "reference", "mds", "pitch", "bootstrap", "mos"]
        if which == "all"
        else [which]
    )
    for name in wanted:
        if name == "mos" and ratings_path is None:
            if which != "all":
                raise GspError("mos analysis requires --ratings")
            continue
        _ANALYSES[name](histories, basis, out, ratings_path, n_boot, seed)
        click.echo(f"wrote {name} results to {out}")


def _analyze_distances(histories, basis, out, *_):
    rows = []
    for h in histories:
        for i, d in enumerate(ana.consecutive_distances(h)):
            rows.append([h.chain_id, i, f"{d:.9g}"])
    ana.write_csv(out / "fig2c_consecutive_distances.csv", ["chain_id", "iteration", "distance"], rows)


def _analyze_reference(histories, basis, out, *_):
    rows = []
    for h in histories:
        target = h.meta.get("target_coords")
        if target is None:
            continue
        from .latent import LatentPoint

        ref = reconstruct(basis, LatentPoint(np.array(target, dtype=np.float64)))
        for i, d in enumerate(ana.reference_distance(h, ref)):
            rows.append([h.chain_id, i, f"{d:.9g}"])
    ana.write_csv(out / "fig2d_reference_distances.csv", ["chain_id", "iteration", "distance"], rows)


def _analyze_mds(histories, basis, out, *_):
    labels, vecs = [], []
    for h in histories:
        for i, e in enumerate(h.embeddings):
            labels.append((h.chain_id, i, h.meta.get("sex", "")))
            vecs.append(e)
    x = np.asarray(vecs)
    dists = np.sqrt(np.maximum(
        (x**2).sum(1)[:, None] + (x**2).sum(1)[None, :] - 2 * x @ x.T, 0.0
    ))
    np.fill_diagonal(dists, 0.0)
    coords = ana.classical_mds(dists, 2)
    rows = [
        [cid, it, sex, f"{c[0]:.9g}", f"{c[1]:.9g}"]
        for (cid, it, sex), c in zip(labels, coords)
    ]
    ana.write_csv(out / "fig3a_mds.csv", ["chain_id", "iteration", "sex", "x", "y"], rows)


def _analyze_pitch(histories, basis, out, *_):
    traj = ana.pitch_trajectories(histories, basis, cache={})
    rows = []
    for sex, means in sorted(traj.group_means.items()):
        for i, f0 in enumerate(means):
            rows.append([sex, i, f"{f0:.6g}"])
    ana.write_csv(out / "fig3b_pitch_trajectories.csv", ["sex", "iteration", "mean_f0_hz"], rows)


def _analyze_bootstrap(histories, basis, out, ratings_path, n_boot, seed):
    finals = {h.chain_id: h.embeddings[-1] for h in histories}
    speaker = {h.chain_id: h.meta.get("speaker_id", h.chain_id) for h in histories}
    sex = {h.chain_id: h.meta.get("sex", "") for h in histories}
    ids = sorted(finals)
    groups = {"within": [], "same_sex": [], "diff_sex": []}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            d = float(np.linalg.norm(finals[a] - finals[b]))
            if speaker[a] == speaker[b]:
                groups["within"].append(d)
            elif sex[a] == sex[b]:
                groups["same_sex"].append(d)
            else:
                groups["diff_sex"].append(d)
    groups = {k: v for k, v in groups.items() if v}
    stats = ana.bootstrap_contrast(groups, n_boot=n_boot, seed=seed)
    rows = [
        [s.name, f"{s.mean:.9g}", f"{s.ci_lo:.9g}", f"{s.ci_hi:.9g}", s.n]
        for s in stats.values()
    ]
    ana.write_csv(out / "fig3c_bootstrap.csv", ["group", "mean", "ci_lo", "ci_hi", "n"], rows)


def _analyze_mos(histories, basis, out, ratings_path, *_):
    with open(ratings_path) as fh:
        ratings = [
            ana.RatingRecord(
                chain_id=r["chain_id"],
                iteration=int(r["iteration"]),
                rater_id=r["rater_id"],
                score=int(r["score"]),
            )
            for r in json.load(fh)
        ]
    curve = ana.mos_curves(ratings, histories)
    rows = [
        [style, it, f"{mean:.6g}", count]
        for (style, it), (mean, count) in sorted(curve.items())
    ]
    ana.write_csv(out / "fig2e_mos.csv", ["style", "iteration", "mean_score", "count"], rows)


_ANALYSES = {
    "distances": _analyze_distances,
    "reference": _analyze_reference,
    "mds": _analyze_mds,
    "pitch": _analyze_pitch,
    "bootstrap": _analyze_bootstrap,
    "mos": _analyze_mos,
}


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.Abort:
        return 1
    except (GspError, FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
