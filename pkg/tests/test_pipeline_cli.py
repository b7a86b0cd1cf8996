from dataclasses import replace
import json

import numpy as np
import pandas as pd
import pytest

from application.simulation_service import SimulationService
from domain.model.aggregates.panel_dataset import SeriesKey
from domain.model.aggregates.simulation import DgpSpec, InjectedBreak
from domain.model.valueobjects.pollutant import Pollutant
from domain.model.valueobjects.sector import Sector
from infrastructure.persistence.repositories.csv_panel_repository import CsvPanelRepository
from interface.cli.commands import EXIT_INPUT, EXIT_OK, build_parser, parse_break, run

BREAKS = ("1:6:-0.8", "4:9:-0.6", "7:11:0.5")
TRUE_BREAKS = {("XAB", 2005), ("XAE", 2008), ("XAH", 2010)}


@pytest.fixture
def simulated(tmp_path):
    data = tmp_path / "data"
    argv = ["simulate", "--countries", "10", "--periods", "15", "--sigma", "0", "--seed", "3", "--out", str(data)]
    for b in BREAKS:
        argv += ["--break", b]
    assert run(argv) == EXIT_OK
    return data


def pipeline_argv(data, out, *extra):
    return ["pipeline", "--data-dir", str(data), "--pollutant", "NOx", "--sector", "transport",
            "--out", str(out), *extra]


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


class TestParser:
    def test_parse_break(self):
        injected = parse_break("2:7:-0.4")
        assert (injected.country_index, injected.period, injected.tau) == (2, 7, -0.4)

    def test_bad_break_exits(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["simulate", "--break", "2-7"])

    def test_enum_flags_ignore_case(self):
        args = build_parser().parse_args(["detect", "--data-dir", "d", "--pollutant", "nox", "--sector", "Transport"])
        assert [p.value for p in args.pollutants] == ["NOx"]
        assert [s.value for s in args.sectors] == ["transport"]


class TestSimulate:
    def test_writes_inputs_and_truth(self, simulated):
        assert {p.name for p in simulated.iterdir()} >= {"emissions.csv", "covariates.csv", "groups.csv", "truth.csv"}
        truth = pd.read_csv(simulated / "truth.csv")
        assert set(zip(truth["country_iso3"], truth["break_year"])) == TRUE_BREAKS

    def test_break_outside_sample_is_an_input_error(self, tmp_path):
        argv = ["simulate", "--periods", "10", "--break", "1:12:-0.5", "--out", str(tmp_path / "x")]
        assert run(argv) == EXIT_INPUT


class TestPipeline:
    def test_recovers_every_injected_break(self, simulated, tmp_path):
        out = tmp_path / "out"

        assert run(pipeline_argv(simulated, out)) == EXIT_OK

        breaks = pd.read_csv(out / "breaks.csv")
        assert len(breaks) == 3
        assert set(zip(breaks["country"], breaks["break_year"])) == TRUE_BREAKS
        assert (breaks["ci99_lo"] == breaks["break_year"]).all()
        manifest = read_manifest(out)
        assert manifest["status"] == "ok"
        assert manifest["failure_stage"] is None
        assert {"breaks.csv", "selection.json", "attribution.csv", "summary_instruments.csv",
                "plotdata/NOx.transport.json", "selection_trace/NOx.transport.jsonl"} <= set(manifest["artifacts"])

    def test_no_policies_leaves_breaks_unmatched(self, simulated, tmp_path):
        out = tmp_path / "out"

        assert run(pipeline_argv(simulated, out)) == EXIT_OK

        attribution = pd.read_csv(out / "attribution.csv")
        assert (attribution["mix_label"] == "unmatched").all()

    def test_policy_inside_window_is_matched(self, simulated, tmp_path):
        (simulated / "policies.csv").write_text(
            "country_iso3,year,sector,instrument,action,eu_wide\n"
            "XAB,2007,transport,carbon tax,adoption,0\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"

        assert run(pipeline_argv(simulated, out)) == EXIT_OK

        attribution = pd.read_csv(out / "attribution.csv").set_index("country")
        assert attribution.loc["XAB", "instruments"] == "carbon tax"
        assert bool(attribution.loc["XAB", "includes_pricing"])
        assert attribution.loc["XAE", "mix_label"] == "unmatched"

    def test_detect_stops_after_selection(self, simulated, tmp_path):
        out = tmp_path / "out"

        assert run(["detect", "--data-dir", str(simulated), "--pollutant", "NOx", "--sector", "transport",
                    "--out", str(out)]) == EXIT_OK

        assert (out / "selection.json").is_file()
        assert not (out / "breaks.csv").exists()
        assert read_manifest(out)["until"] == "detect"

    def test_repeat_runs_are_byte_identical(self, simulated, tmp_path):
        assert run(pipeline_argv(simulated, tmp_path / "a")) == EXIT_OK
        assert run(pipeline_argv(simulated, tmp_path / "b")) == EXIT_OK

        assert read_manifest(tmp_path / "a")["artifacts"] == read_manifest(tmp_path / "b")["artifacts"]

    @pytest.mark.slow
    def test_parallel_run_matches_serial(self, simulated, tmp_path):
        assert run(pipeline_argv(simulated, tmp_path / "serial")) == EXIT_OK
        assert run(pipeline_argv(simulated, tmp_path / "parallel", "--jobs", "2")) == EXIT_OK

        assert read_manifest(tmp_path / "serial")["artifacts"] == read_manifest(tmp_path / "parallel")["artifacts"]


class TestScale:
    @pytest.mark.slow
    def test_full_size_panel_for_every_series(self, tmp_path):
        data, out = tmp_path / "data", tmp_path / "out"
        spec = DgpSpec(
            n_countries=41,
            n_periods=22,
            sigma=0.05,
            breaks=(InjectedBreak(5, 12, -0.5), InjectedBreak(20, 16, -0.4)),
            seed=41,
        )
        base = SimulationService.simulate_panel(spec).dataset
        keys = [SeriesKey(p, s) for p in Pollutant for s in Sector]
        datasets = []
        for i, key in enumerate(keys):
            noise = 0.05 * np.random.default_rng(i).standard_normal(base.emissions.shape)
            datasets.append(replace(base.with_emissions(base.emissions * np.exp(noise)), series_key=key))
        repository = CsvPanelRepository.from_directory(data)
        repository.save_panels(datasets)

        assert run(["pipeline", "--data-dir", str(data), "--out", str(out), "--jobs", "4"]) == EXIT_OK

        assert all(repository.load_panel(key).n_rows == 902 for key in keys)
        selection = json.loads((out / "selection.json").read_text(encoding="utf-8"))
        assert len(selection) == 12
        for payloads in selection.values():
            payload, = payloads
            assert payload["n_candidates"] == 861
            assert payload["config"]["block_size"] == 20
        artifacts = read_manifest(out)["artifacts"]
        assert len([a for a in artifacts if a.startswith("plotdata/")]) == 12
        assert len([a for a in artifacts if a.startswith("selection_trace/")]) == 12
        breaks = pd.read_csv(out / "breaks.csv")
        found = breaks[(breaks["country"] == "XAF") & (breaks["break_year"] == 2011)]
        assert found["series_key"].nunique() >= 10


class TestFailures:
    def test_missing_data_dir(self, tmp_path):
        out = tmp_path / "out"

        assert run(pipeline_argv(tmp_path / "absent", out)) == EXIT_INPUT

        manifest = read_manifest(out)
        assert manifest["status"] == "failed"
        assert manifest["failure_stage"] == "load"
        assert manifest["artifacts"] == {}

    def test_unknown_series_is_an_input_error(self, simulated, tmp_path):
        argv = ["estimate", "--data-dir", str(simulated), "--pollutant", "CO", "--sector", "transport",
                "--out", str(tmp_path / "out")]
        assert run(argv) == EXIT_INPUT
