import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from gspvoice.cli import export_tree_hash, main
from gspvoice.engine import ChainConfig
from gspvoice.latent import PcaBasis
from gspvoice.simulate import ChainSpec, Scenario


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A corpus, fitted basis, and scenario shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cliwork")
    corpus = root / "corpus.emb"
    assert main(["make-corpus", str(corpus), "--n", "400", "--d", "32", "--seed", "7"]) == 0
    basis_path = root / "basis.json"
    assert main(["fit-pca", str(corpus), "6", str(basis_path)]) == 0

    config = ChainConfig(
        k_dims=6, total_iterations=6, responses_per_iteration=3, rng_seed=0,
        cycle_order=tuple(range(6)),
    )
    rng = np.random.default_rng(0)
    specs = tuple(
        ChainSpec(
            chain_id=f"chain-{i:02d}",
            target_ref=f"face-{i}",
            sentence_id="s0",
            target=rng.normal(size=6) * 0.3,
            meta={"sex": "male" if i % 2 == 0 else "female", "speaker_id": f"spk{i // 2}"},
        )
        for i in range(4)
    )
    scenario_path = root / "scenario.json"
    Scenario(seed=11, config=config, noise_grid_steps=1.0, specs=specs).save(scenario_path)
    return root


class TestFitPca:
    def test_writes_loadable_basis(self, workdir, capsys):
        basis = PcaBasis.load(workdir / "basis.json")
        assert basis.k == 6

    def test_variance_table_output(self, workdir, capsys):
        corpus = workdir / "corpus.emb"
        out = workdir / "basis2.json"
        assert main(["fit-pca", str(corpus), "3", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "total explained variance" in captured
        assert len(captured.strip().splitlines()) == 5  # header + 3 rows + total

    def test_missing_corpus_is_usage_error(self, workdir):
        assert main(["fit-pca", str(workdir / "nope.emb"), "3", str(workdir / "x.json")]) == 1

    def test_k_too_large_is_data_error(self, workdir):
        rc = main(["fit-pca", str(workdir / "corpus.emb"), "99", str(workdir / "x.json")])
        assert rc == 2


class TestExitCodes:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_argument(self):
        assert main(["fit-pca"]) == 1

    def test_corrupt_scenario_is_data_error(self, workdir):
        bad = workdir / "bad.json"
        bad.write_text("{not json")
        rc = main(["simulate", str(bad), str(workdir / "o"), "--basis", str(workdir / "basis.json")])
        assert rc == 2


class TestSimulate:
    def test_export_layout(self, workdir):
        out = workdir / "run1"
        rc = main([
            "simulate", str(workdir / "scenario.json"), str(out),
            "--basis", str(workdir / "basis.json"),
        ])
        assert rc == 0
        assert (out / "basis.json").exists()
        assert (out / "summary.json").exists()
        chains = sorted((out / "chains").glob("*.json"))
        assert [p.stem for p in chains] == [f"chain-{i:02d}" for i in range(4)]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_chains"] == 4
        assert summary["full"] == 4

    def test_deterministic_tree_hash(self, workdir):
        outs = []
        for name in ("run2", "run3"):
            out = workdir / name
            assert main([
                "simulate", str(workdir / "scenario.json"), str(out),
                "--basis", str(workdir / "basis.json"),
            ]) == 0
            outs.append(export_tree_hash(out))
        assert outs[0] == outs[1]

    def test_seed_override_changes_hash(self, workdir):
        out = workdir / "run4"
        assert main([
            "simulate", str(workdir / "scenario.json"), str(out),
            "--basis", str(workdir / "basis.json"), "--seed", "99",
        ]) == 0
        assert export_tree_hash(out) != export_tree_hash(workdir / "run2")

    def test_hash_export_command(self, workdir, capsys):
        assert main(["hash-export", str(workdir / "run2")]) == 0
        printed = capsys.readouterr().out.strip()
        assert printed == export_tree_hash(workdir / "run2")


class TestAnalyze:
    def test_all_outputs(self, workdir, capsys):
        export = workdir / "run1"
        rc = main(["analyze", str(export), "all", "--n-boot", "200"])
        assert rc == 0
        out = export / "analysis"
        for fname in [
            "fig2c_consecutive_distances.csv",
            "fig2d_reference_distances.csv",
            "fig3a_mds.csv",
            "fig3b_pitch_trajectories.csv",
            "fig3c_bootstrap.csv",
        ]:
            path = out / fname
            assert path.exists(), fname
            assert len(path.read_text().splitlines()) > 1, fname
        # mos skipped without ratings under "all"
        assert not (out / "fig2e_mos.csv").exists()

    def test_mos_requires_ratings(self, workdir):
        assert main(["analyze", str(workdir / "run1"), "mos"]) == 2

    def test_mos_with_ratings(self, workdir):
        ratings = [
            {"chain_id": "chain-00", "iteration": 0, "rater_id": f"r{i}", "score": 3}
            for i in range(4)
        ]
        rpath = workdir / "ratings.json"
        rpath.write_text(json.dumps(ratings))
        rc = main(["analyze", str(workdir / "run1"), "mos", "--ratings", str(rpath)])
        assert rc == 0
        lines = (workdir / "run1" / "analysis" / "fig2e_mos.csv").read_text().splitlines()
        assert lines[1].split(",")[2] == "3"

    def test_empty_export_is_data_error(self, workdir):
        empty = workdir / "empty"
        (empty / "chains").mkdir(parents=True, exist_ok=True)
        (empty / "basis.json").write_bytes((workdir / "basis.json").read_bytes())
        assert main(["analyze", str(empty), "distances"]) == 2


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for_health(port, deadline_s=30.0):
    t0 = time.time()
    while time.time() - t0 < deadline_s:
        try:
            with urllib.request.urlopen(f"http://127.0.0.1:{port}/health", timeout=2) as r:
                return json.loads(r.read())
        except Exception:
            time.sleep(0.2)
    raise TimeoutError("service did not come up")


class TestServe:
    def test_serve_health_and_clean_shutdown(self, workdir):
        port = free_port()
        data_dir = workdir / "served"
        cfg = {
            "basis_path": str(workdir / "basis.json"),
            "chain_config": {"k_dims": 6, "total_iterations": 4, "cycle_order": list(range(6))},
            "chains": [{"chain_id": "chain-00", "target_ref": "f0"}],
            "port": port,
            "data_dir": str(data_dir),
        }
        cfg_path = workdir / "serve.json"
        cfg_path.write_text(json.dumps(cfg))
        proc = subprocess.Popen(
            [sys.executable, "-m", "gspvoice.cli", "serve", str(cfg_path)],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        try:
            health = wait_for_health(port)
            assert health["status"] == "ok"

            base = f"http://127.0.0.1:{port}"
            req = urllib.request.Request(
                f"{base}/participants",
                data=json.dumps({"participant_id": "p0"}).encode(),
                headers={"Content-Type": "application/json"},
            )
            with urllib.request.urlopen(req) as r:
                assert json.loads(r.read())["participant_id"] == "p0"
            with urllib.request.urlopen(f"{base}/trials/next?participant_id=p0") as r:
                manifest = json.loads(r.read())
            assert manifest["status"] == "trial"
            req = urllib.request.Request(
                f"{base}/trials/{manifest['trial_id']}/response",
                data=json.dumps({"slider_index": 10, "idempotency_key": "k0"}).encode(),
                headers={"Content-Type": "application/json"},
            )
            with urllib.request.urlopen(req) as r:
                assert json.loads(r.read())["trial_id"] == manifest["trial_id"]
        finally:
            proc.send_signal(signal.SIGINT)
            proc.wait(timeout=30)

        # the on-disk event log survives shutdown and replays the session
        from gspvoice.service import ChainSetup, ExperimentService, read_event_log

        events = read_event_log(data_dir / "events.jsonl")
        types = [e["type"] for e in events]
        assert types == ["participant_registered", "trial_allocated", "response_submitted"]
        basis = PcaBasis.load(workdir / "basis.json")
        chain_config = ChainConfig.from_dict(cfg["chain_config"])
        twin = ExperimentService.replay(
            basis, chain_config, [ChainSetup("chain-00", "f0", "s0")], events
        )
        assert len(twin.chains["chain-00"].pending) == 1
