import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from rpmag_plots.figures import (
    SchemaError,
    plot_comparison,
    plot_heatmap,
    plot_trace,
    plot_yield_profile,
    read_table,
)

SWEEP_HEADER = (
    "nu_d_MHz,J0_over_2pi_MHz,theta_rad,phi_rad,Phi_S,Gamma,"
    "F_theta,QFI_theta,ratio,ratio_mean,flags"
)
ORIENT_HEADER = "theta_rad,phi_rad,Phi_S,Theta_S,F_theta,QFI_theta,ratio,flags"


def write_sweep(path, rows, config_hash="abc123"):
    path.write_text(SWEEP_HEADER + "\n" + "".join(r + "\n" for r in rows))
    Path(str(path) + ".meta.json").write_text(
        json.dumps({"kind": "rpmag-sweep", "config_hash": config_hash})
    )


def write_orientation(path, thetas, phis, yields, shape, config_hash="abc123"):
    lines = [ORIENT_HEADER]
    for th, ph, y in zip(thetas, phis, yields):
        lines.append(f"{th},{ph},{y},0.6,0.01,0.1,0.1,")
    path.write_text("\n".join(lines) + "\n")
    Path(str(path) + ".meta.json").write_text(
        json.dumps({
            "kind": "rpmag-orientation-scan",
            "config_hash": config_hash,
            "grid_shape": list(shape),
        })
    )


def write_comparison(path, j0s, gammas, series="static", config_hash="abc123",
                     columns=("Gamma", "NF_theta", "NQFI_theta")):
    header = "J0_over_2pi_MHz," + ",".join(columns)
    lines = [header]
    for k, j0 in enumerate(j0s):
        vals = ",".join(str(gammas[k] * (i + 1)) for i in range(len(columns)))
        lines.append(f"{j0},{vals}")
    path.write_text("\n".join(lines) + "\n")
    Path(str(path) + ".meta.json").write_text(
        json.dumps({"kind": "rpmag-comparison", "series": series, "config_hash": config_hash})
    )


class TestHeatmap:
    def test_single_cell(self, tmp_path):
        csv = tmp_path / "one.csv"
        write_sweep(csv, ["2,0,0.5,0,0.16,0.02,0.001,0.01,0.1,0.1,"])
        out = tmp_path / "one.png"
        info = plot_heatmap(csv, out)
        assert out.exists()
        assert info["cells"] == 1 and info["masked"] == 0

    def test_all_zero_ratio_fixed_color_range(self, tmp_path):
        csv = tmp_path / "zero.csv"
        rows = [f"{nu},{j0},0.5,0,0.16,0.02,0,0.01,0,0," for nu in (1, 2) for j0 in (-5, 5)]
        write_sweep(csv, rows)
        info = plot_heatmap(csv, tmp_path / "zero.png")
        assert info["color_range"] == (0.0, 1.0)

    def test_filtered_rows_masked(self, tmp_path):
        csv = tmp_path / "filt.csv"
        rows = [
            "1,-5,0.5,0,0.16,0.02,0.001,0.01,0.1,0.1,",
            "1,5,0.5,0,0.16,0.02,0.001,0.01,0.1,0.1,filtered",
            "2,-5,0.5,0,0.16,0.02,0.001,0.01,0.2,0.2,",
            "2,5,0.5,0,0.16,0.02,,,,,ratio-undefined",
        ]
        write_sweep(csv, rows)
        info = plot_heatmap(csv, tmp_path / "filt.png")
        assert info["masked"] == 2

    def test_schema_mismatch_lists_missing_columns(self, tmp_path):
        csv = tmp_path / "bad.csv"
        csv.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError, match="missing columns"):
            plot_heatmap(csv, tmp_path / "bad.png")

    def test_config_hash_embedded(self, tmp_path):
        csv = tmp_path / "hash.csv"
        write_sweep(csv, ["2,0,0.5,0,0.16,0.02,0.001,0.01,0.1,0.1,"], config_hash="deadbeef")
        out = tmp_path / "hash.png"
        plot_heatmap(csv, out)
        assert Image.open(out).info.get("rpmag-config-hash") == "deadbeef"

    def test_inputs_not_mutated(self, tmp_path):
        csv = tmp_path / "ro.csv"
        write_sweep(csv, ["2,0,0.5,0,0.16,0.02,0.001,0.01,0.1,0.1,"])
        before = csv.read_bytes()
        plot_heatmap(csv, tmp_path / "ro.png")
        assert csv.read_bytes() == before


class TestYieldProfile:
    def test_constant_yields_flat_profile(self, tmp_path):
        csv = tmp_path / "const.csv"
        thetas = np.linspace(0, np.pi, 5)
        write_orientation(csv, thetas, np.zeros(5), np.full(5, 0.2), (5, 1))
        info = plot_yield_profile(csv, tmp_path / "const.png")
        assert info["gamma"] == 0.0
        assert info["kind"] == "line"

    def test_surface_grid(self, tmp_path):
        csv = tmp_path / "grid.csv"
        tt, pp = np.meshgrid(np.linspace(0, np.pi, 3), np.linspace(0, np.pi, 4), indexing="ij")
        yields = 0.2 + 0.01 * np.cos(tt.ravel()) * np.sin(pp.ravel() + 0.3)
        write_orientation(csv, tt.ravel(), pp.ravel(), yields, (3, 4))
        info = plot_yield_profile(csv, tmp_path / "grid.png")
        assert info["kind"] == "surface"
        assert info["gamma"] > 0

    def test_two_point_grid_rejected(self, tmp_path):
        csv = tmp_path / "two.csv"
        write_orientation(csv, [0.0, np.pi], [0.0, 0.0], [0.2, 0.3], (2, 1))
        with pytest.raises(SchemaError, match="at least 3"):
            plot_yield_profile(csv, tmp_path / "two.png")


class TestComparison:
    def test_two_series_three_panels(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        j0s = [-5, 0, 5]
        write_comparison(a, j0s, [0.01, 0.02, 0.03], series="static")
        write_comparison(b, j0s, [0.1, 0.2, 0.3], series="driven")
        info = plot_comparison([a, b], tmp_path / "cmp.png")
        assert info["panels"] == 3
        assert info["series"] == ["static", "driven"]

    def test_single_metric_single_panel(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_comparison(a, [0, 5], [0.1, 0.2], columns=("Gamma",))
        write_comparison(b, [0, 5], [0.3, 0.4], columns=("Gamma",))
        info = plot_comparison([a, b], tmp_path / "one.png")
        assert info["panels"] == 1

    def test_missing_column_diagnostic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_comparison(a, [0, 5], [0.1, 0.2])
        write_comparison(b, [0, 5], [0.3, 0.4], columns=("Gamma",))
        with pytest.raises(SchemaError, match="NF_theta"):
            plot_comparison([a, b], tmp_path / "missing.png")

    def test_length_mismatch_diagnostic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_comparison(a, [0, 5, 10], [0.1, 0.2, 0.3])
        write_comparison(b, [0, 5], [0.3, 0.4])
        with pytest.raises(SchemaError, match="length"):
            plot_comparison([a, b], tmp_path / "len.png")

    def test_needs_two_series(self, tmp_path):
        a = tmp_path / "a.csv"
        write_comparison(a, [0, 5], [0.1, 0.2])
        with pytest.raises(SchemaError, match="two series"):
            plot_comparison([a], tmp_path / "single.png")


class TestTraceAndIdempotence:
    def test_trace_plot(self, tmp_path):
        data = np.column_stack([
            np.linspace(0, 5, 50),
            np.exp(-np.linspace(0, 5, 50)),
            0.5 * np.exp(-np.linspace(0, 5, 50)),
            np.full(50, 17.2),
            np.ones(50),
        ])
        src = tmp_path / "trace.txt"
        np.savetxt(src, data, header="t_us trace p_S r_A kb_per_us")
        info = plot_trace(src, tmp_path / "trace.png")
        assert info["points"] == 50

    def test_rerender_identical_bytes(self, tmp_path):
        csv = tmp_path / "sweep.csv"
        write_sweep(csv, ["2,0,0.5,0,0.16,0.02,0.001,0.01,0.1,0.1,"])
        out1, out2 = tmp_path / "r1.png", tmp_path / "r2.png"
        info1 = plot_heatmap(csv, out1)
        info2 = plot_heatmap(csv, out2)
        assert info1 == info2
        assert out1.read_bytes() == out2.read_bytes()

    def test_read_table_roundtrip(self, tmp_path):
        csv = tmp_path / "t.csv"
        write_sweep(csv, ["2,0,0.5,0,0.16,0.02,0.001,0.01,,0.1,flagged"])
        table = read_table(csv, ("nu_d_MHz", "ratio", "flags"))
        assert np.isnan(table["ratio"][0])
        assert table["flags"] == ["flagged"]
