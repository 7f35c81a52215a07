import json
from pathlib import Path

import pytest

from qew.adapt import AnsatzState
from qew.cli import main
from qew.integrals import read_fcidump
from qew.workflow import (
    ConfigError,
    SpeciesResult,
    apply_env_overrides,
    compare_to_statevector,
    config_from_dict,
    data_path,
    format_report,
    load_config,
    run_all_species,
    run_reaction,
    run_species,
)

CONFIGS = Path(__file__).parent.parent / "configs"

# exact CAS(2e,3o) energies of the reaction fixtures (core 0, active 1-3)
CAS_REFERENCE = {"R": -4.0165972050781065, "TS": -3.850780922591578, "P": -3.8074299962085476}

REACTION = {t: f"pkg:reaction_{t}.fcidump" for t in ("R", "TS", "P")}
CAS = {"n_electrons": 2, "n_orbitals": 3, "method": "cas"}


def make_config(tmp_path, name="run", **over):
    raw = {"species": dict(REACTION), "active_space": dict(CAS), "backend": {"kind": "statevector", "seed": 7}}
    raw.update(over)
    raw["output_dir"] = str(tmp_path / name)
    return config_from_dict(raw)


def shots_backend(**over):
    return {"kind": "shots", "shots": 10_000, "batches": 10, "seed": 7, **over}


def snapshot(root: Path) -> dict:
    out = {}
    for f in sorted(root.rglob("*")):
        if f.is_file():
            data = f.read_bytes()
            if f.name == "manifest.json":
                m = json.loads(data)
                m.pop("created_utc")
                data = json.dumps(m, sort_keys=True).encode()
            out[str(f.relative_to(root))] = data
    return out


@pytest.fixture(scope="module")
def statevector_run(tmp_path_factory):
    return run_reaction(make_config(tmp_path_factory.mktemp("sv")))


@pytest.fixture(scope="module")
def shots_run(tmp_path_factory):
    return run_reaction(make_config(tmp_path_factory.mktemp("shots"), backend=shots_backend()))


def test_statevector_energies_hit_active_space_fci(statevector_run):
    assert not statevector_run.failures
    for tag, res in statevector_run.results.items():
        assert abs(res.e_vqe - CAS_REFERENCE[tag]) < 1e-6
        assert abs(res.e_fci_active - CAS_REFERENCE[tag]) < 1e-9
        assert res.e_hf >= res.e_vqe >= res.e_vqe_pt2


def test_vqe_activation_energy_matches_fci(statevector_run):
    row = next(r for r in statevector_run.report["table_s1"] if r["method"] == "VQE")
    assert abs(row["E_a_Ha"] - (CAS_REFERENCE["TS"] - CAS_REFERENCE["R"])) < 1e-5
    assert abs(row["E_d_Ha"] - (CAS_REFERENCE["P"] - CAS_REFERENCE["R"])) < 1e-5
    assert row["eps_E_a_Ha"] == 0.0


def test_report_schema(shots_run):
    rep = shots_run.report
    assert rep["backend"] == "shots" and rep["bootstrap_batches"] == 10
    assert [r["method"] for r in rep["table_s1"]] == ["HF", "VQE", "VQE+PT2"]
    for row in rep["table_s1"]:
        for key in ("E_a_Ha", "E_d_Ha", "E_a_eV", "E_d_eV", "eps_E_a_Ha", "eps_E_d_Ha", "eps_E_a_eV", "eps_E_d_eV"):
            assert isinstance(row[key], float)
    vqe = rep["table_s1"][1]
    assert vqe["eps_E_a_Ha"] > 0 and vqe["eps_E_d_Ha"] > 0
    assert [r["species"] for r in rep["table_s2"]] == ["R", "TS", "P"]
    for row in rep["table_s2"]:
        assert row["eps_E_Ha"] > 0
        assert row["delta_E_minus_E_SV_Ha"] == pytest.approx(row["E_Ha"] - row["E_SV_Ha"], abs=1e-15)
        assert row["shots_kept"] == row["shots_total"] > 0
    text = format_report(rep)
    assert "VQE+PT2" in text and "E - E_SV" in text


def test_noiseless_shots_agree_with_statevector(shots_run, statevector_run):
    cmp = compare_to_statevector(shots_run.results, statevector_run.results)
    for row in cmp.values():
        assert abs(row["delta"]) <= 5 * row["stderr"]


def test_byte_identical_across_thread_counts(tmp_path):
    snaps = []
    for workers in (1, 3):
        out = tmp_path / "same"
        cfg = make_config(tmp_path, "same", backend=shots_backend(), workers=workers)
        assert not run_reaction(cfg).failures
        snaps.append(snapshot(out))
        for f in sorted(out.rglob("*"), reverse=True):
            f.unlink() if f.is_file() else f.rmdir()
    assert snaps[0].keys() == snaps[1].keys()
    assert snaps[0] == snaps[1]


def test_identical_species_give_zero_differences(tmp_path):
    same = {t: "pkg:reaction_TS.fcidump" for t in ("R", "TS", "P")}
    out = run_reaction(make_config(tmp_path, species=same))
    for row in out.report["table_s1"]:
        assert row["E_a_Ha"] == 0.0 and row["E_d_Ha"] == 0.0


def test_pt2_switch(tmp_path):
    res, _ = run_all_species(make_config(tmp_path, pt2=False), tags=["R"])
    r = res["R"]
    assert r.e_vqe_pt2 == r.e_vqe and r.pt2_delta == 0.0
    assert not (tmp_path / "run" / "R" / "pt2.json").exists()


def test_stages_persist_and_resume(tmp_path):
    cfg = make_config(tmp_path)
    assert run_species(cfg, "R", "active-space") is None
    d = tmp_path / "run" / "R"
    eff = read_fcidump(d / "effective.fcidump")
    assert (eff.n_orb, eff.n_elec) == (3, 2)
    assert run_species(cfg, "R", "vqe") is None
    saved = AnsatzState.from_json(json.loads((d / "ansatz.json").read_text()))
    resumed = run_species(cfg, "R", "pt2", resume=True)
    assert resumed.ansatz_labels == saved.labels
    back = SpeciesResult.from_json(json.loads((d / "result.json").read_text()))
    assert back == resumed
    with pytest.raises(ConfigError):
        run_species(cfg, "R", "measure")


def test_bad_input_is_a_stage_failure(tmp_path):
    bad = tmp_path / "bad.fcidump"
    bad.write_text("not an fcidump\n")
    species = dict(REACTION, TS=str(bad))
    out = run_reaction(make_config(tmp_path, species=species))
    assert set(out.failures) == {"TS"} and out.report is None
    assert out.failures["TS"].stage == "active-space"
    assert set(out.results) == {"R", "P"}
    assert json.loads((tmp_path / "run" / "TS" / "error.json").read_text())["stage"] == "active-space"


def test_env_overrides():
    raw = {"backend": {"seed": 1}}
    out = apply_env_overrides(raw, {"QEW_SEED": "9", "QEW_PT2": "off", "QEW_SHOTS": "50", "OTHER": "x"})
    assert out == {"backend": {"seed": 9, "shots": 50}, "pt2": False}
    assert raw == {"backend": {"seed": 1}}
    with pytest.raises(ConfigError):
        apply_env_overrides({}, {"QEW_PT2": "maybe"})
    with pytest.raises(ConfigError):
        apply_env_overrides({}, {"QEW_SEED": "abc"})


@pytest.mark.parametrize(
    "change",
    [
        {"species": {}},
        {"bogus": 1},
        {"species": {"R": "missing.fcidump"}},
        {"active_space": {"n_electrons": 2, "n_orbitals": 3, "method": "dmrg"}},
        {"active_space": {"n_electrons": 7, "n_orbitals": 3}},
        {"active_space": {"n_electrons": 2, "n_orbitals": 3, "method": "avas"}},
        {"backend": {"kind": "gpu"}},
        {"backend": {"kind": "shots", "batches": 1}},
        {"backend": {"flip_prob": 1.5}},
        {"workers": 0},
        {"rdm_order": 5},
    ],
)
def test_config_errors(tmp_path, change):
    with pytest.raises(ConfigError):
        make_config(tmp_path, **change)


def test_bundled_configs_parse():
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(path, env={})
        assert cfg.species and all(s.fcidump.is_file() for s in cfg.species.values())
    with pytest.raises(ConfigError):
        load_config(CONFIGS / "nope.json")


def test_cli_exit_codes(tmp_path, capsys):
    cfg = CONFIGS / "reaction_statevector.json"
    out = tmp_path / "cli"
    assert main(["reaction", "--config", str(cfg), "--output-dir", str(out)]) == 0
    assert "VQE+PT2" in capsys.readouterr().out
    assert main(["report", "--run-dir", str(out), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["backend"] == "statevector"
    assert main(["vqe", "--config", str(cfg), "--output-dir", str(out), "--species", "R"]) == 0

    assert main(["reaction", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["report", "--run-dir", str(tmp_path)]) == 2
    assert main(["neb", "--surface", "nowhere", "--out", str(tmp_path / "n")]) == 2

    bad = tmp_path / "bad.json"
    raw = json.loads(cfg.read_text())
    (tmp_path / "broken.fcidump").write_text("&FCI NORB=2\n")
    raw["species"]["P"] = "broken.fcidump"
    bad.write_text(json.dumps(raw))
    assert main(["reaction", "--config", str(bad), "--output-dir", str(tmp_path / "b")]) == 3
    assert "FAILED P" in capsys.readouterr().err


def test_cli_neb(tmp_path, capsys):
    out = tmp_path / "neb"
    assert main(["neb", "--surface", "muller_brown", "--out", str(out)]) == 0
    rep = json.loads((out / "neb.json").read_text())
    assert rep["converged"] and rep["E_a"] == pytest.approx(106.0346737, abs=1e-3)
    lo = rep["ts_index"] - 1
    args = ["neb", "--path", str(out / "path.csv"), "--window", str(lo), str(lo + 2), "--images", "7"]
    assert main(args + ["--out", str(tmp_path / "win"), "--max-steps", "400"]) == 0
    assert main(["neb", "--max-steps", "3", "--out", str(tmp_path / "short")]) == 3


def test_data_path_rejects_unknown():
    assert data_path("reaction_R.fcidump").is_file()
    with pytest.raises(ConfigError):
        data_path("nothing_here.fcidump")
