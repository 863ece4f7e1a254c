"""Command-line interface: argument parsing, exit codes, output files,
and manifest-driven replays."""

import json
import math
from pathlib import Path

import pytest

from lyapexp import cli
from lyapexp import distributions as dist
from lyapexp import lyapunov

SPECS = Path(__file__).resolve().parents[1] / "specs"
TWO_POINT = str(SPECS / "two_point.json")
CRITICAL = str(SPECS / "critical_two.json")
HEAVY = str(SPECS / "heavy_half.json")
UNIFORM = str(SPECS / "uniform_sub.json")
CONSTANT = str(SPECS / "constant_law.json")
BLOCKS_SCALAR = str(SPECS / "blocks_scalar.json")
BLOCKS_D2 = str(SPECS / "blocks_d2.json")


def run(capsys, *argv):
    code = cli.dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- token parsers ----------------------------------------------------------------

def test_parse_number_forms():
    assert cli._parse_number("2^-5") == 0.03125
    assert cli._parse_number("3/4") == 0.75
    assert cli._parse_number(" 0.25 ") == 0.25
    assert cli._parse_number("1e-3") == 0.001


def test_parse_grid_power_range():
    assert cli._parse_grid("2^-2..2^-5") == [0.25, 0.125, 0.0625, 0.03125]
    assert cli._parse_grid("2^-5..2^-2") == [0.03125, 0.0625, 0.125, 0.25]
    assert cli._parse_grid("0.1,0.2") == [0.1, 0.2]
    assert cli._parse_grid("2^-3,1/2") == [0.125, 0.5]
    with pytest.raises(cli._UsageError):
        cli._parse_grid("2^-2..3^-5")


def test_parse_steps_and_int_lists():
    assert cli._parse_steps("1e6") == 1_000_000
    assert cli._parse_steps("1000,2000") == [1000, 2000]
    with pytest.raises(cli._UsageError):
        cli._parse_steps(" , ")
    assert cli._parse_int_list("0..3") == [0, 1, 2, 3]
    assert cli._parse_int_list("4,7") == [4, 7]


def test_thread_resolution(monkeypatch):
    import argparse
    monkeypatch.delenv("LYAPEXP_THREADS", raising=False)
    assert cli._resolve_threads(argparse.Namespace(threads=0)) == 1
    assert cli._resolve_threads(argparse.Namespace(threads=3)) == 3
    monkeypatch.setenv("LYAPEXP_THREADS", "4")
    assert cli._resolve_threads(argparse.Namespace(threads=0)) == 4
    assert cli._resolve_threads(argparse.Namespace(threads=2)) == 2
    monkeypatch.setenv("LYAPEXP_THREADS", "many")
    with pytest.raises(cli._UsageError):
        cli._resolve_threads(argparse.Namespace(threads=0))


# -- exit codes -----------------------------------------------------------------------

def test_usage_errors_exit_one(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "alpha")[0] == 1  # missing required --spec
    assert run(capsys, "coeffs", "--order", "2")[0] == 1  # no law given
    code, _, err = run(capsys, "chain", "--spec", TWO_POINT,
                       "--steps", "1000,2000", "--eps", "0.5")
    assert code == 1 and "single --steps" in err


def test_help_and_version_exit_zero(capsys):
    assert run(capsys, "--version")[0] == 0
    assert run(capsys, "--help")[0] == 0
    assert run(capsys, "lyap", "--help")[0] == 0


def test_validation_errors_exit_two(capsys):
    code, _, err = run(capsys, "alpha", "--spec", "/nonexistent/law.json")
    assert code == 2
    code, _, err = run(capsys, "ising", "--range", "1", "--couplings", "1.0",
                       "--T", "-1", "--field-law", TWO_POINT,
                       "--steps", "1000")
    assert code == 2 and "InvalidSpec" in err


def test_numerical_errors_exit_three(capsys):
    code, _, err = run(capsys, "coeffs", "--spec", CRITICAL, "--order", "2")
    assert code == 3 and "DegenerateMoment" in err


# -- coeffs ---------------------------------------------------------------------------

def test_coeffs_exact_table(capsys):
    code, out, _ = run(capsys, "coeffs", "--spec", TWO_POINT,
                       "--order", "2", "--exact")
    assert code == 0
    assert "3" in out.split() and "165/2" in out.split()


def test_coeffs_from_moment_list(capsys):
    code, out, _ = run(capsys, "coeffs", "--moments", "3/4,3/4",
                       "--order", "2", "--exact", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["ell_exact"] == ["3", "165/2"]
    assert doc["ell_float"] == [3.0, 82.5]
    assert doc["exact_inputs"] is True


def test_coeffs_critical_first_order(capsys):
    code, out, _ = run(capsys, "coeffs", "--spec", CRITICAL,
                       "--order", "1", "--exact", "--json")
    assert code == 0
    assert json.loads(out)["ell_exact"] == ["4"]


# -- alpha ----------------------------------------------------------------------------

def test_alpha_exact_root(capsys):
    code, out, _ = run(capsys, "alpha", "--spec", CRITICAL, "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["alpha"] == 2.0
    assert doc["kind"] == "finite"
    assert doc["assumptions_pass"] is True

    code, out, _ = run(capsys, "alpha", "--spec", HEAVY, "--json")
    assert json.loads(out)["alpha"] == 0.5

    code, out, _ = run(capsys, "alpha", "--spec", UNIFORM, "--json")
    doc = json.loads(out)
    assert doc["kind"] == "infinite"
    assert doc["alpha"] == "inf"  # non-finite floats serialize as strings


# -- lyap -----------------------------------------------------------------------------

def test_lyap_both_methods_and_gap(capsys):
    code, out, _ = run(capsys, "lyap", "--spec", TWO_POINT, "--eps", "1/4",
                       "--steps", "30000", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["eps"] == 0.25
    assert set(("direct", "invariant", "gap", "gap_sigma")) <= set(doc)
    assert abs(doc["gap_sigma"]) < 5


def test_lyap_deterministic_oracle(capsys):
    code, out, _ = run(capsys, "lyap", "--spec", CONSTANT, "--eps", "1/2",
                       "--method", "invariant", "--steps", "20000", "--json")
    assert code == 0
    doc = json.loads(out)
    assert abs(doc["invariant"]["value"] - doc["oracle_deterministic"]) < 1e-9


def test_lyap_decoupled_oracle_at_full_damping(capsys):
    code, out, _ = run(capsys, "lyap", "--spec", TWO_POINT, "--eps", "1",
                       "--method", "invariant", "--steps", "50000", "--json")
    doc = json.loads(out)
    spec = dist.load_spec(TWO_POINT)
    assert doc["oracle_decoupled"] == lyapunov.decoupled_exponent(spec)
    se = doc["invariant"]["stderr"]
    assert abs(doc["invariant"]["value"] - doc["oracle_decoupled"]) < 5 * se


# -- chain ----------------------------------------------------------------------------

def test_chain_grid_csv_and_manifest(capsys, tmp_path):
    out_dir = tmp_path / "run"
    code, out, _ = run(capsys, "chain", "--spec", TWO_POINT,
                       "--eps-grid", "2^-2..2^-4", "--gamma", "1,2",
                       "--steps", "20000", "--emit-plot",
                       "--out", str(out_dir), "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["eps_grid"] == [0.25, 0.125, 0.0625]

    csv_text = (out_dir / "chain.csv").read_text()
    lines = csv_text.strip().split("\n")
    assert lines[0] == ("eps,gamma,moment,moment_stderr,trunc_moment,"
                        "trunc_stderr,max_x,n_kept")
    assert len(lines) == 1 + 3 * 2  # header + grid x gammas

    # 17 significant digits: CSV floats round-trip to the JSON doc exactly
    first = lines[1].split(",")
    assert float(first[0]) == 0.25
    assert float(first[6]) == doc["points"][0]["max_x"]
    stats = json.loads((out_dir / "chain.json").read_text())
    assert stats["points"][0]["max_x"] == doc["points"][0]["max_x"]

    assert (out_dir / "moment_g1.dat").exists()
    assert (out_dir / "moment_g2.dat").exists()
    pairs = [ln.split() for ln in
             (out_dir / "moment_g1.dat").read_text().strip().split("\n")]
    assert len(pairs) == 3 and all(len(p) == 2 for p in pairs)

    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert set(("subcommand", "config", "seed", "version", "wall_time_s",
                "outputs")) <= set(manifest)
    assert manifest["subcommand"] == "chain"
    assert set(manifest["outputs"]) == {"chain.csv", "chain.json",
                                        "moment_g1.dat", "moment_g2.dat"}
    assert all(len(h) == 64 for h in manifest["outputs"].values())


def test_chain_dominance_reports_zero_violations(capsys):
    code, out, _ = run(capsys, "chain", "--spec", TWO_POINT, "--dominance",
                       "--eps", "1/4", "--eps2", "1/2", "--steps", "20000",
                       "--seeds", "0..4", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["violations_pair"] == 0
    assert doc["violations_series"] == 0
    assert doc["seeds"] == [0, 1, 2, 3, 4]


def test_chain_dominance_needs_two_eps(capsys):
    code, _, err = run(capsys, "chain", "--spec", TWO_POINT, "--dominance",
                       "--eps", "1/4", "--steps", "1000")
    assert code == 1 and "eps2" in err


# -- fit ------------------------------------------------------------------------------

def test_fit_series_only(capsys, tmp_path):
    out_dir = tmp_path / "fit"
    code, out, _ = run(capsys, "fit", "--spec", TWO_POINT, "--order", "1",
                       "--eps-grid", "2^-2..2^-5", "--steps", "5000",
                       "--no-fit", "--emit-plot", "--out", str(out_dir),
                       "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["sign"] == -1  # odd number of subtracted terms
    assert doc["ell"] == [3.0]
    assert doc["bracket"]["kind"] == "regular"
    assert "fit" not in doc
    series = (out_dir / "series.csv").read_text().strip().split("\n")
    assert series[0] == "eps,lambda,lambda_stderr,regular,residual"
    assert len(series) == 5
    assert (out_dir / "residual.dat").exists()


# -- highdim --------------------------------------------------------------------------

def test_highdim_estimate_matches_scalar_engine(capsys):
    code, out, _ = run(capsys, "highdim", "--blocks", BLOCKS_SCALAR,
                       "--eps", "1/4", "--method", "invariant",
                       "--steps", "30000", "--seed", "3", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["d"] == 1
    assert doc["assumptions"]["passes"] is True
    ref = lyapunov.lyapunov_invariant(dist.load_spec(CRITICAL), 0.25,
                                      n_steps=30000, seed=3)
    assert doc["invariant"]["value"] == ref.value
    assert doc["invariant"]["stderr"] == ref.stderr


def test_highdim_estimate_d2_both_methods(capsys):
    code, out, _ = run(capsys, "highdim", "--blocks", BLOCKS_D2,
                       "--eps", "1/4", "--method", "both",
                       "--steps", "40000", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["d"] == 2
    gap = abs(doc["direct"]["value"] - doc["invariant"]["value"])
    sig = math.hypot(doc["direct"]["stderr"], doc["invariant"]["stderr"])
    assert gap < 5 * sig


def test_highdim_mode_errors(capsys):
    code, _, err = run(capsys, "highdim", "--blocks", BLOCKS_SCALAR,
                       "--steps", "1000")
    assert code == 1 and "--K" in err
    code, _, err = run(capsys, "highdim", "--blocks", BLOCKS_SCALAR,
                       "--K", "1", "--eps-grid", "2^-2..2^-4",
                       "--method", "both", "--steps", "1000")
    assert code == 1 and "single --method" in err
    code, _, err = run(capsys, "highdim", "--blocks", BLOCKS_SCALAR,
                       "--K", "1", "--steps", "1000")
    assert code == 1 and "--eps-grid" in err


# -- ising ----------------------------------------------------------------------------

def test_ising_free_energy_closed_form(capsys):
    code, out, _ = run(capsys, "ising", "--range", "1", "--couplings", "0.9",
                       "--T", "1", "--field-law", CONSTANT,
                       "--method", "invariant", "--steps", "30000", "--json")
    assert code == 0
    doc = json.loads(out)
    z, eps = 1.25, math.exp(-0.9)
    target = math.log(((1 + z) + math.sqrt((1 - z) ** 2
                                           + 4 * eps * eps * z)) / 2)
    assert abs(doc["f"] - target) < 1e-10
    assert doc["eps_l"] == [eps]
    assert doc["dim"] == 2


def test_ising_scan_needs_scales(capsys):
    code, _, err = run(capsys, "ising", "--range", "1", "--couplings", "1.0",
                       "--T", "1", "--field-law", TWO_POINT, "--scan",
                       "--steps", "1000")
    assert code == 1 and "--scales" in err


def test_ising_infinite_coupling_token(capsys):
    code, out, _ = run(capsys, "ising", "--range", "2",
                       "--couplings", "0.9,inf", "--T", "1",
                       "--field-law", CONSTANT, "--method", "invariant",
                       "--steps", "20000", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["eps_l"][1] == 0.0
    assert doc["couplings"][1] == "inf"


# -- selftest -------------------------------------------------------------------------

def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0
    assert "ok" in out
    assert "FAIL" not in out


# -- manifests and reruns --------------------------------------------------------------

@pytest.fixture()
def lyap_manifest(tmp_path, capsys):
    out_dir = tmp_path / "orig"
    code, _, _ = run(capsys, "lyap", "--spec", TWO_POINT, "--eps", "2^-3",
                     "--steps", "20000", "--out", str(out_dir))
    assert code == 0
    return out_dir


def test_rerun_verifies_checksums(capsys, lyap_manifest, tmp_path):
    manifest = lyap_manifest / "manifest.json"
    code, out, _ = run(capsys, "rerun", "--manifest", str(manifest), "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["match"] is True
    assert doc["mismatched"] == []


def test_rerun_reproduces_files_byte_for_byte(capsys, lyap_manifest,
                                              tmp_path):
    manifest = lyap_manifest / "manifest.json"
    replay = tmp_path / "replay"
    code, _, _ = run(capsys, "rerun", "--manifest", str(manifest),
                     "--out", str(replay), "--threads", "8")
    assert code == 0
    original = (lyap_manifest / "lyap.json").read_bytes()
    assert (replay / "lyap.json").read_bytes() == original


def test_rerun_detects_tampering(capsys, lyap_manifest):
    manifest = lyap_manifest / "manifest.json"
    doc = json.loads(manifest.read_text())
    name = next(iter(doc["outputs"]))
    doc["outputs"][name] = "0" * 64
    manifest.write_text(json.dumps(doc))
    code, _, err = run(capsys, "rerun", "--manifest", str(manifest))
    assert code == 3
    assert name in err


def test_rerun_rejects_malformed_manifest(capsys, tmp_path):
    bad = tmp_path / "manifest.json"
    bad.write_text(json.dumps({"subcommand": "lyap", "config": {}}))
    assert run(capsys, "rerun", "--manifest", str(bad))[0] == 2
    bad.write_text("{not json")
    assert run(capsys, "rerun", "--manifest", str(bad))[0] == 2
    assert run(capsys, "rerun", "--manifest",
               str(tmp_path / "absent.json"))[0] == 2


def test_manifest_config_resolves_paths(capsys, tmp_path, monkeypatch):
    out_dir = tmp_path / "rel"
    monkeypatch.chdir(SPECS.parent)
    code, _, _ = run(capsys, "alpha", "--spec", "specs/two_point.json",
                     "--out", str(out_dir))
    assert code == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert Path(manifest["config"]["spec"]).is_absolute()


def test_threads_do_not_change_outputs(capsys, tmp_path):
    outs = []
    for threads in ("1", "8"):
        d = tmp_path / f"t{threads}"
        code, _, _ = run(capsys, "chain", "--spec", TWO_POINT,
                         "--eps", "1/4", "--steps", "20000",
                         "--threads", threads, "--out", str(d))
        assert code == 0
        outs.append((d / "chain.csv").read_bytes())
    assert outs[0] == outs[1]


def test_env_threads_honored(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("LYAPEXP_THREADS", "junk")
    code, _, err = run(capsys, "lyap", "--spec", TWO_POINT, "--eps", "1/4",
                       "--steps", "2000")
    assert code == 1 and "LYAPEXP_THREADS" in err
    monkeypatch.setenv("LYAPEXP_THREADS", "2")
    code, _, _ = run(capsys, "lyap", "--spec", TWO_POINT, "--eps", "1/4",
                     "--steps", "2000")
    assert code == 0
