import os

import pytest

from jumprev_plots.render import FigureSpec, SchemaError, main, render

REPORT_HEADER = ("t_lo,t_hi,from,to,empirical,theoretical,theory_mid,"
                 "stderr,z,usable,count,occupancy\n")


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def report_csv(tmp_path):
    rows = [REPORT_HEADER]
    for tb, (lo, hi) in enumerate([(0.2, 0.4), (0.4, 0.6), (0.6, 0.8)]):
        for k in (1, 2):
            mid = 0.5 * (lo + hi)
            rows.append(f"{lo},{hi},{k},{k - 1},{k / mid + 0.01},{k / mid},"
                        f"{k / mid},0.02,0.5,1,400,200\n")
    return write(tmp_path / "reversal_report.csv", "".join(rows))


@pytest.fixture
def marginals_csv(tmp_path):
    rows = ["t,c0,mass\n"]
    for i, t in enumerate((0.0, 0.5, 1.0)):
        for state in range(4):
            rows.append(f"{t},{state},{0.25 + 0.01 * i * state}\n")
    return write(tmp_path / "marginals.csv", "".join(rows))


@pytest.fixture
def entropy_csv(tmp_path):
    return write(tmp_path / "entropy.csv",
                 "n_time_points,initial_term,running_term,total,quadrature_error\n"
                 "26,0,0.3863,0.3863,1e-3\n"
                 "51,0,0.38629,0.38629,2e-4\n"
                 "101,0,0.386294,0.386294,5e-5\n")


@pytest.mark.parametrize("ext", ["png", "svg"])
def test_marginal_heatmap(marginals_csv, tmp_path, ext):
    out = tmp_path / f"heat.{ext}"
    assert main(["--in", marginals_csv, "--kind", "marginal_heatmap",
                 "--out", str(out)]) == 0
    assert out.exists() and out.stat().st_size > 0


def test_backward_intensity(report_csv, tmp_path):
    out = tmp_path / "rates.png"
    assert main(["--in", report_csv, "--kind", "backward_intensity",
                 "--out", str(out)]) == 0
    assert out.exists() and out.stat().st_size > 0


def test_zscore_hist(report_csv, tmp_path):
    out = tmp_path / "z.png"
    assert main(["--in", report_csv, "--kind", "zscore_hist",
                 "--out", str(out)]) == 0
    assert out.exists()


def test_entropy_curve(entropy_csv, tmp_path):
    out = tmp_path / "entropy.svg"
    assert main(["--in", entropy_csv, "--kind", "entropy_curve",
                 "--out", str(out)]) == 0
    assert out.exists()


def test_header_only_csv_renders_empty_axes(tmp_path):
    src = write(tmp_path / "empty.csv", REPORT_HEADER)
    out = tmp_path / "empty.png"
    assert main(["--in", src, "--kind", "zscore_hist", "--out", str(out)]) == 0
    assert out.exists() and out.stat().st_size > 0


def test_missing_column_named(tmp_path, capsys):
    src = write(tmp_path / "bad.csv", "t_lo,t_hi,from,to\n0,1,0,1\n")
    rc = main(["--in", src, "--kind", "backward_intensity",
               "--out", str(tmp_path / "x.png")])
    err = capsys.readouterr().err
    assert rc != 0
    assert "empirical" in err


def test_missing_file_is_schema_error(tmp_path):
    rc = main(["--in", str(tmp_path / "nope.csv"), "--kind", "zscore_hist",
               "--out", str(tmp_path / "x.png")])
    assert rc != 0


def test_render_does_not_mutate_input(report_csv, tmp_path):
    before = open(report_csv, "rb").read()
    render(FigureSpec(inputs=[report_csv], kind="zscore_hist",
                      out=str(tmp_path / "z.png")))
    assert open(report_csv, "rb").read() == before


def test_overwrite_is_atomic_replacement(report_csv, tmp_path):
    out = tmp_path / "z.png"
    spec = FigureSpec(inputs=[report_csv], kind="zscore_hist", out=str(out))
    render(spec)
    first = out.stat().st_mtime_ns
    render(spec)
    assert out.exists()
    assert out.stat().st_mtime_ns >= first
    leftovers = [p for p in os.listdir(tmp_path) if p.startswith("tmp")]
    assert not leftovers


def test_unknown_kind_rejected(report_csv, tmp_path):
    with pytest.raises(SchemaError):
        FigureSpec(inputs=[report_csv], kind="pie", out=str(tmp_path / "x.png"))


def test_render_from_real_pipeline_outputs(tmp_path):
    # integration: drive the primary CLI, then render every figure kind
    import subprocess
    import sys
    run = subprocess.run(
        [sys.executable, "-m", "jumprev.cli", "demo", "cycle3", "--seed", "3",
         "--n-paths", "2000", "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert run.returncode == 0, run.stderr
    ent = subprocess.run(
        [sys.executable, "-m", "jumprev.cli", "entropy", "--demo", "tilt",
         "--out", str(tmp_path)], capture_output=True, text=True)
    assert ent.returncode == 0, ent.stderr
    pairs = [("marginals.csv", "marginal_heatmap"),
             ("reversal_report.csv", "backward_intensity"),
             ("reversal_report.csv", "zscore_hist"),
             ("entropy.csv", "entropy_curve")]
    for src, kind in pairs:
        out = tmp_path / f"{kind}.png"
        assert main(["--in", str(tmp_path / src), "--kind", kind,
                     "--out", str(out)]) == 0
        assert out.exists() and out.stat().st_size > 0
