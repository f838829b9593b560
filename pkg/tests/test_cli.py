import json
from pathlib import Path

import numpy as np
import pytest

from stfamix.cli import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    cmd_evaluate,
    cmd_simulate,
    ingest_csv,
    main,
    sim13_preset,
)
from stfamix.errors import DataError, FitFailureError


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


class TestIngestCsv:
    def test_small_matrix_with_header(self, tmp_path):
        path = write(tmp_path / "d.csv", "a,b\n1,2\n3,4\n5,6\n")
        dataset = ingest_csv(path)
        assert dataset.column_names == ("a", "b")
        np.testing.assert_array_equal(
            dataset.values, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
        )

    def test_blank_cell_reports_row_and_column(self, tmp_path):
        path = write(tmp_path / "d.csv", "a,b\n1,2\n3,\n")
        with pytest.raises(DataError, match=r"row 2.*'b'"):
            ingest_csv(path)

    def test_non_numeric_cell_reports_location(self, tmp_path):
        path = write(tmp_path / "d.csv", "a,b\n1,2\nx,4\n")
        with pytest.raises(DataError, match=r"row 2.*'a'"):
            ingest_csv(path)

    def test_non_finite_value_rejected(self, tmp_path):
        path = write(tmp_path / "d.csv", "a,b\n1,inf\n")
        with pytest.raises(DataError, match="non-finite"):
            ingest_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            ingest_csv(tmp_path / "absent.csv")

    def test_unknown_column(self, tmp_path):
        path = write(tmp_path / "d.csv", "a,b\n1,2\n")
        with pytest.raises(DataError, match="nope"):
            ingest_csv(path, ["a", "nope"])

    def test_label_column_held_out(self, tmp_path):
        path = write(tmp_path / "d.csv", "a,b,cls\n1,2,x\n3,4,y\n")
        with pytest.warns(UserWarning, match="only 2 rows"):
            dataset = ingest_csv(path, label_column="cls")
        assert dataset.column_names == ("a", "b")
        assert dataset.labels == ("x", "y")

    def test_round_trip_seventeen_digits(self, tmp_path):
        values = np.array(
            [[np.pi, 1.0 / 3.0], [1e-13, 123456.789012345678], [2.0 / 7.0, 1e17]]
        )
        rows = "\n".join(
            ",".join(f"{v:.17g}" for v in row) for row in values
        )
        path = write(tmp_path / "d.csv", "a,b\n" + rows + "\n")
        dataset = ingest_csv(path)
        np.testing.assert_array_equal(dataset.values, values)


class TestSimulate:
    def test_preset_shapes(self, tmp_path):
        features, labels = cmd_simulate(tmp_path, seed=1)
        data = ingest_csv(features)
        assert data.values.shape == (60, 13)
        lab = ingest_csv(labels)
        assert lab.values.shape == (60, 1)
        assert set(np.unique(lab.values)) == {1.0, 2.0}

    def test_byte_identical_given_seed(self, tmp_path):
        first_dir = tmp_path / "one"
        second_dir = tmp_path / "two"
        cmd_simulate(first_dir, seed=7)
        cmd_simulate(second_dir, seed=7)
        assert (first_dir / "features.csv").read_bytes() == (
            second_dir / "features.csv"
        ).read_bytes()
        assert (first_dir / "labels.csv").read_bytes() == (
            second_dir / "labels.csv"
        ).read_bytes()

    def test_component_means_match_first_moment(self, tmp_path):
        preset = sim13_preset()
        features, labels = cmd_simulate(tmp_path, seed=3)
        data = ingest_csv(features).values
        lab = ingest_csv(labels).values.ravel().astype(int)
        for index, comp in enumerate(preset["components"], start=1):
            block = data[lab == index]
            nu = comp["nu"]
            expected = np.asarray(comp["mu"]) + nu / (nu - 2.0) * np.asarray(
                comp["alpha"]
            )
            se = block.std(axis=0, ddof=1) / np.sqrt(block.shape[0])
            assert np.all(np.abs(block.mean(axis=0) - expected) < 5 * se)

    def test_manifest_written(self, tmp_path):
        cmd_simulate(tmp_path, seed=2)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 2

    def test_parameter_file_schema(self, tmp_path):
        params = {
            "q": 1,
            "components": [
                {
                    "n": 25,
                    "mu": [0.0, 0.0],
                    "loadings": [0.5, 0.25],
                    "psi_diag": [0.4, 0.4],
                    "alpha": [1.0, -0.5],
                    "nu": 6.0,
                }
            ],
        }
        params_path = tmp_path / "params.json"
        params_path.write_text(json.dumps(params))
        features, labels = cmd_simulate(
            tmp_path / "out", seed=4, preset=None, params_path=params_path
        )
        assert ingest_csv(features).values.shape == (25, 2)


class TestEvaluate:
    def test_identical_files_score_one(self, tmp_path, capsys):
        path = write(tmp_path / "labels.csv", "label\n1\n1\n2\n2\n")
        ari = cmd_evaluate(path, path)
        assert ari == pytest.approx(1.0)
        out = capsys.readouterr().out
        assert "ARI: 1.000" in out

    def test_confusion_table_printed_in_truth_rows(self, tmp_path, capsys):
        truth = write(tmp_path / "t.csv", "label\na\na\nb\n")
        pred = write(tmp_path / "p.csv", "label\n1\n2\n2\n")
        cmd_evaluate(pred, truth)
        out = capsys.readouterr().out
        assert "rows = true" in out

    def test_length_mismatch(self, tmp_path):
        truth = write(tmp_path / "t.csv", "label\n1\n2\n")
        pred = write(tmp_path / "p.csv", "label\n1\n")
        with pytest.raises(DataError, match="length"):
            cmd_evaluate(pred, truth)

    def test_output_files(self, tmp_path):
        truth = write(tmp_path / "t.csv", "label\n1\n1\n2\n")
        pred = write(tmp_path / "p.csv", "label\n1\n2\n2\n")
        out_dir = tmp_path / "out"
        cmd_evaluate(pred, truth, out_dir)
        assert (out_dir / "confusion.csv").exists()
        assert (out_dir / "metrics.csv").exists()
        assert (out_dir / "manifest.json").exists()

    def test_files_realizing_published_cross_tabs(self, tmp_path, capsys):
        # two-cluster athlete solution: (97,5 / 5,95) scores 0.811
        truth = ["m"] * 102 + ["f"] * 100
        pred = ["1"] * 97 + ["2"] * 5 + ["1"] * 5 + ["2"] * 95
        truth_path = write(tmp_path / "t.csv", "label\n" + "\n".join(truth))
        pred_path = write(tmp_path / "p.csv", "label\n" + "\n".join(pred))
        ari = cmd_evaluate(pred_path, truth_path)
        assert ari == pytest.approx(0.811, abs=0.005)
        assert "ARI: 0.811" in capsys.readouterr().out

        # three-cluster athlete solution: (82,16,4 / 1,9,90) scores 0.685
        pred3 = ["1"] * 82 + ["2"] * 16 + ["3"] * 4
        pred3 += ["1"] * 1 + ["2"] * 9 + ["3"] * 90
        pred3_path = write(tmp_path / "p3.csv", "label\n" + "\n".join(pred3))
        assert cmd_evaluate(pred3_path, truth_path) == pytest.approx(
            0.685, abs=0.005
        )


class TestMainDispatch:
    def make_two_blob_csv(self, tmp_path):
        rng = np.random.default_rng(5)
        data = np.vstack(
            [rng.normal(size=(40, 2)), rng.normal(size=(40, 2)) + 7.0]
        )
        rows = "\n".join(",".join(f"{v:.17g}" for v in row) for row in data)
        return write(tmp_path / "blobs.csv", "x,y\n" + rows + "\n")

    def test_fit_writes_all_outputs(self, tmp_path):
        data_path = self.make_two_blob_csv(tmp_path)
        out_dir = tmp_path / "run"
        code = main(
            [
                "fit",
                "--input", str(data_path),
                "--g-min", "2", "--g-max", "2",
                "--models", "UUU",
                "--max-iter", "60",
                "--out-dir", str(out_dir),
            ]
        )
        assert code == EXIT_OK
        model = json.loads((out_dir / "best_model.json").read_text())
        assert list(model.keys()) == [
            "g", "q", "constraint", "loglik", "bic", "rho", "components",
        ]
        assert model["g"] == 2
        assert len(model["components"]) == 2
        component_keys = list(model["components"][0].keys())
        assert component_keys == ["pi", "mu", "loadings", "psi_diag", "alpha", "nu"]
        table = (out_dir / "bic_table.csv").read_text().splitlines()
        assert table[0] == "g,q,model,bic,loglik,converged"
        assert len(table) == 2
        classification = (out_dir / "classification.csv").read_text().splitlines()
        assert classification[0] == "label,resp_1,resp_2"
        assert len(classification) == 81
        assert (out_dir / "manifest.json").exists()

    def test_fit_then_evaluate_round_trip(self, tmp_path, capsys):
        data_path = self.make_two_blob_csv(tmp_path)
        out_dir = tmp_path / "run"
        main(
            [
                "fit",
                "--input", str(data_path),
                "--g-min", "2", "--g-max", "2",
                "--models", "CCC,UUU",
                "--max-iter", "60",
                "--out-dir", str(out_dir),
            ]
        )
        truth = write(
            tmp_path / "truth.csv", "label\n" + "\n".join(["a"] * 40 + ["b"] * 40)
        )
        code = main(
            [
                "evaluate",
                "--predicted", str(out_dir / "classification.csv"),
                "--truth", str(truth),
            ]
        )
        assert code == EXIT_OK
        assert "ARI: 1.000" in capsys.readouterr().out

    def test_simulate_entry_point(self, tmp_path):
        code = main(["simulate", "--seed", "2", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "features.csv").exists()

    def test_fit_rerun_is_byte_identical(self, tmp_path):
        data_path = self.make_two_blob_csv(tmp_path)
        args = [
            "fit",
            "--input", str(data_path),
            "--g-min", "2", "--g-max", "2",
            "--models", "UUU",
            "--max-iter", "60",
            "--seed", "9",
        ]
        first, second = tmp_path / "one", tmp_path / "two"
        assert main(args + ["--out-dir", str(first)]) == EXIT_OK
        assert main(args + ["--out-dir", str(second)]) == EXIT_OK
        for name in ("best_model.json", "bic_table.csv", "classification.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_usage_error_exit_code(self, capsys):
        assert main(["fit", "--unknown-flag"]) == EXIT_USAGE
        assert main(["fit", "--input", "x.csv", "--g-min", "3", "--g-max", "1",
                     "--out-dir", "o"]) == EXIT_USAGE

    def test_data_error_exit_code(self, tmp_path, capsys):
        code = main(
            [
                "fit",
                "--input", str(tmp_path / "missing.csv"),
                "--out-dir", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_DATA

    def test_numerical_error_exit_code(self, tmp_path, monkeypatch, capsys):
        data_path = self.make_two_blob_csv(tmp_path)
        import stfamix.cli as cli_module

        def boom(*args, **kwargs):
            raise FitFailureError("every fit in the grid failed")

        monkeypatch.setattr(cli_module, "grid_search", boom)
        code = main(
            [
                "fit",
                "--input", str(data_path),
                "--out-dir", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_NUMERICAL
