"""Tests for the CSV-to-figure renderer."""

import matplotlib.pyplot as plt
import pytest

from cranfh_figures.render import (FigureSpec, SchemaError, main, read_rows,
                                   render_figures)

SUMMARY_HEADER = ("point,scheme,delay_ms,delay_stderr_ms,capacity_mbps,"
                  "capacity_stderr_mbps,gamma_scale,objective,"
                  "convergence_failures,num_topologies\n")


def summary_csv(tmp_path, points=(20, 25, 30, 35)):
    lines = [SUMMARY_HEADER]
    for i, p in enumerate(points):
        for j, scheme in enumerate(("delay_aware", "throughput_optimal",
                                    "queue_weighted")):
            delay = 1.0 + 0.5 * i + 0.3 * j
            lines.append(f"{p},{scheme},{delay},0.1,350,2,1,0.5,0,20\n")
    path = tmp_path / "summary.csv"
    path.write_text("".join(lines))
    return path


def timing_csv(tmp_path):
    lines = ["point,scheme,median_slot_ms,num_slots\n"]
    for p in (20, 25):
        lines.append(f"{p},delay_aware,8.5,2000\n")
        lines.append(f"{p},throughput_optimal,2.1,2000\n")
        lines.append(f"{p},queue_weighted,2.4,2000\n")
    path = tmp_path / "timing.csv"
    path.write_text("".join(lines))
    return path


class TestReadRows:
    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("point,scheme,delay_ms\n20,delay_aware,1.0\n")
        with pytest.raises(SchemaError, match="delay_stderr_ms"):
            read_rows(str(path), ("point", "scheme", "delay_ms",
                                  "delay_stderr_ms"))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(SchemaError, match="empty"):
            read_rows(str(path), ("point",))

    def test_header_only(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text(SUMMARY_HEADER)
        with pytest.raises(SchemaError, match="no data rows"):
            read_rows(str(path), ("point", "scheme"))

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("point,scheme,delay_ms\nfast,delay_aware,1.0\n")
        with pytest.raises(SchemaError, match="point"):
            read_rows(str(path), ("point", "scheme", "delay_ms"))


class TestRenderFigures:
    def test_line_figure_structure(self, tmp_path):
        spec = FigureSpec(input_csv=str(summary_csv(tmp_path)),
                          kind="fig_delay_vs_arrival",
                          output_path=str(tmp_path / "fig3.png"))
        fig = render_figures(spec)
        ax = fig.axes[0]
        # One error-bar line per scheme, four markers each.
        containers = ax.containers
        assert len(containers) == 3
        for container in containers:
            assert len(container[0].get_xdata()) == 4
        labels = [t.get_text() for t in ax.get_legend().get_texts()]
        assert len(labels) == 3 and any("Delay-aware" in t for t in labels)
        assert "Mbps" in ax.get_xlabel() and "ms" in ax.get_ylabel()
        assert (tmp_path / "fig3.png").stat().st_size > 0
        plt.close(fig)

    def test_kind_aliases(self, tmp_path):
        spec = FigureSpec(input_csv=str(summary_csv(tmp_path)), kind="fig4",
                          output_path=str(tmp_path / "fig4.png"))
        assert spec.kind == "fig_delay_vs_capacity"
        assert "capacity" in spec.xlabel.lower()
        plt.close(render_figures(spec))

    def test_timing_bars(self, tmp_path):
        spec = FigureSpec(input_csv=str(timing_csv(tmp_path)), kind="timing",
                          output_path=str(tmp_path / "timing.png"))
        fig = render_figures(spec)
        ax = fig.axes[0]
        bars = ax.patches
        assert len(bars) == 3
        assert bars[0].get_height() == pytest.approx(8.5)
        plt.close(fig)

    def test_rerender_identical_bytes(self, tmp_path):
        csv_path = summary_csv(tmp_path)
        images = []
        for name in ("one.png", "two.png"):
            spec = FigureSpec(input_csv=str(csv_path),
                              kind="fig_delay_vs_arrival",
                              output_path=str(tmp_path / name))
            plt.close(render_figures(spec))
            images.append((tmp_path / name).read_bytes())
        assert images[0] == images[1]

    def test_input_not_mutated(self, tmp_path):
        csv_path = summary_csv(tmp_path)
        before = csv_path.read_bytes()
        spec = FigureSpec(input_csv=str(csv_path),
                          kind="fig_delay_vs_arrival",
                          output_path=str(tmp_path / "f.png"))
        plt.close(render_figures(spec))
        assert csv_path.read_bytes() == before

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            FigureSpec(input_csv="x.csv", kind="fig5", output_path="y.png")


class TestMain:
    def test_cli_roundtrip(self, tmp_path, capsys):
        csv_path = summary_csv(tmp_path)
        out = tmp_path / "cli.png"
        assert main(["fig3", str(csv_path), str(out)]) == 0
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

    def test_cli_schema_error(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("point,scheme\n20,delay_aware\n")
        rc = main(["fig3", str(path), str(tmp_path / "x.png")])
        assert rc == 2
        assert "delay_ms" in capsys.readouterr().err
