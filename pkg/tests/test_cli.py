import csv
import io
import json
import subprocess
import sys

import pytest

from wickgibbs import cli


def run(argv, capsys):
    code = cli.run(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_seed_is_mandatory(capsys):
    code, _, err = run(["gff-stats", "--samples", "10"], capsys)
    assert code == 2 and "seed" in err


def test_bad_arguments_exit_2(capsys):
    assert run(["g-convergence", "--seed", "1", "--n-list", "a,b"], capsys)[0] == 2
    assert run(["nonexistent"], capsys)[0] == 2
    # out-of-range order is a validation error from the library
    assert run(["tail-curve", "--seed", "1", "--N", "4", "--M", "2", "--samples", "10"], capsys)[0] == 2


def test_wick_identities_json(capsys):
    code, out, err = run(["wick-identities", "--seed", "3", "--samples", "1000"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["expansions_match"] is True
    assert max(o["max_rel_error"] for o in d["orders"]) < 1e-11
    assert err.startswith("wick-identities:")


def test_outputs_are_byte_identical(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        code, out, _ = run(["g-convergence", "--seed", "5", "--n-list", "2,4", "--samples", "100", "--output", str(p)], capsys)
        assert code == 0 and out.startswith("g-convergence:")
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = list(csv.reader(io.StringIO(paths[0].read_text())))
    assert rows[0] == ["N", "M", "exact_distance", "mc_estimate", "stderr"]
    assert rows[-1][0].startswith("# slope_exact=")


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tail settings\nseed = 2\nsamples = 200\npoints = 4\n")
    code, out, _ = run(["tail-curve", "--config", str(cfg)], capsys)
    assert code == 0
    assert len(out.strip().splitlines()) == 1 + 4
    code, out, _ = run(["tail-curve", "--config", str(cfg), "--points", "6"], capsys)
    assert len(out.strip().splitlines()) == 1 + 6
    cfg.write_text("bogus = 1\n")
    assert run(["tail-curve", "--config", str(cfg), "--seed", "1"], capsys)[0] == 2


def test_appendix_check_summary(capsys):
    code, out, err = run(["appendix-check", "--seed", "1", "--samples", "5"], capsys)
    assert code == 0
    assert "<= 1e-9" in err
    assert "regrouping_defect_max" in json.loads(out)


def test_evolve_and_gibbs_small(capsys):
    code, out, _ = run(["evolve", "--seed", "1", "--N", "2", "--t", "0.2", "--steps", "2"], capsys)
    assert code == 0 and out.splitlines()[0].startswith("t,mass_low,hamiltonian")
    code, out, _ = run(["gibbs-sample", "--seed", "1", "--N", "1", "--samples", "300"], capsys)
    assert code == 0 and json.loads(out)["nelson_violations"] == 0


def test_domain_covariance_needs_no_seed(capsys):
    code, out, _ = run(["domain-covariance", "--n-list", "4", "--format", "json"], capsys)
    assert code == 0
    assert json.loads(out)["rows"][0]["weyl_count"] == 8


def test_threads_flag_accepted(capsys):
    assert run(["gff-stats", "--seed", "1", "--samples", "50", "--threads", "1"], capsys)[0] == 0


def test_help_lists_output_schema():
    r = subprocess.run([sys.executable, "-m", "wickgibbs", "tail-curve", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "lambda,prob,wilson_low,wilson_high" in r.stdout


@pytest.mark.parametrize("cmd", list(cli.RUNNERS))
def test_every_subcommand_has_help(cmd):
    parser = cli.build_parser()
    with pytest.raises(SystemExit) as e:
        parser.parse_args([cmd, "--help"])
    assert e.value.code == 0
