import json
import subprocess
import sys

import pytest

from spectrum_futures.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from spectrum_futures.model import paper_default, paper_default_path


def write_config(path, **changes):
    data = paper_default().to_dict()
    for key, value in changes.items():
        section, name = key.split("__")
        data[section][name] = value
    path.write_text(json.dumps(data))
    return path


def test_validate_bundled_config(capsys):
    assert main(["validate-config"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "OK    owner.t_b" in out and "config valid" in out


def test_validate_reports_the_bad_field(tmp_path, capsys):
    path = write_config(tmp_path / "bad.json", requester__ber_target=0.3)
    assert main(["validate-config", "--config", str(path)]) == EXIT_CONFIG
    out = capsys.readouterr().out
    assert "ERROR requester.ber_target" in out
    assert "OK    requester.omega" in out


def test_validate_unknown_field_and_cross_field(tmp_path, capsys):
    data = paper_default().to_dict()
    data["owner"]["colour"] = "red"
    data["environment"]["snr_low_db"] = 25.0
    path = tmp_path / "c.json"
    path.write_text(json.dumps(data))
    assert main(["validate-config", "--config", str(path)]) == EXIT_CONFIG
    out = capsys.readouterr().out
    assert "ERROR owner.colour: unknown field" in out
    assert "ERROR environment.snr_" in out


def test_invalid_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    assert main(["validate-config", "--config", str(path)]) == EXIT_CONFIG


def test_negotiate_writes_contract(tmp_path, capsys):
    out = tmp_path / "neg"
    assert main(["negotiate", "--out", str(out)]) == EXIT_OK
    assert (out / "trace.csv").is_file() and (out / "effective_config.json").is_file()
    text = (out / "contract.txt").read_text()
    assert "termination: no_overlap" in text and "price: 13.9" in text
    assert capsys.readouterr().out == text


def test_negotiate_infeasible_exit_code(tmp_path):
    path = write_config(tmp_path / "inf.json", owner__t_b=0.0, owner__c1=0.5, owner__rho_b=0.99,
                        requester__t_d=0.0)
    out = tmp_path / "neg"
    assert main(["negotiate", "--config", str(path), "--out", str(out)]) == EXIT_INFEASIBLE
    assert "contract: none" in (out / "contract.txt").read_text()


def test_config_error_exit_code(tmp_path, capsys):
    path = write_config(tmp_path / "bad.json", owner__t_b=2.0)
    assert main(["negotiate", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "owner.t_b" in capsys.readouterr().err


def test_usage_errors():
    with pytest.raises(SystemExit) as err:
        main(["negotiate", "--bogus"])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["experiment", "--experiment", "figure9", "--out", "x"])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == EXIT_USAGE


def test_missing_config_is_io_error(tmp_path):
    assert main(["negotiate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["negotiate", "--out", str(blocker / "sub")]) == EXIT_IO


def test_bad_episode_count(tmp_path):
    args = ["experiment", "--experiment", "price_series", "--episodes", "0", "--out", str(tmp_path)]
    assert main(args) == EXIT_CONFIG


def test_experiment_is_reproducible_and_contained(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    before = cfg.read_bytes()
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / "runs" / name
        args = ["experiment", "--experiment", "price_series", "--episodes", "20", "--seed", "7",
                "--config", str(cfg), "--out", str(out)]
        assert main(args) == EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1]
    assert set(outputs[0]) == {"price_series.csv", "summary.txt", "effective_config.json"}
    assert cfg.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cfg.json", "runs"]
    assert b",7," in outputs[0]["price_series.csv"].splitlines()[1]


def test_seed_override_changes_output(tmp_path):
    runs = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        main(["experiment", "--experiment", "price_series", "--episodes", "30", "--seed", seed, "--out", str(out)])
        runs.append((out / "price_series.csv").read_text())
    assert runs[0] != runs[1]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spectrum_futures", "validate-config",
                           "--config", str(paper_default_path())], capture_output=True, text=True)
    assert proc.returncode == EXIT_OK, proc.stderr
