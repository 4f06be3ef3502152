import csv
import statistics

import numpy as np
import pytest

from seqlab import cli
from seqlab.image import Image, read_pnm, write_pnm
from seqlab.train import METRIC_COLUMNS, write_metrics_csv

TINY = """\
# two short FixMatch runs on a small synthetic pool
seeds=0,1
train.algorithm=FixMatch
train.total_iters=12
train.eval_every=6
train.B=4
train.mu=2
data.per_class=20
data.test_per_class=10
split.n_labels=8
"""


def write_config(tmp_path, text, name="exp.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def files_of(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestConfig:
    def test_defaults_are_desk_preset(self):
        cfg = cli.parse_config("")
        tc = cfg.train_config(3)
        assert (tc.algorithm, tc.B, tc.mu, tc.total_iters, tc.seed) == ("SequenceMatch", 8, 7, 2000, 3)
        assert tc.lr0 == 0.03 and tc.tau == 0.95

    def test_every_train_field_overridable(self):
        cfg = cli.parse_config("train.tau=0.7\ntrain.kl_weights=1,0,0.5\ntrain.weak_from_ema=true\ntrain.algorithm=UDA")
        tc = cfg.train_config(0)
        assert tc.tau == 0.7 and tc.kl_weights == (1.0, 0.0, 0.5) and tc.weak_from_ema
        assert tc.T == 0.4  # UDA table value survives when not overridden

    def test_unknown_key_line_number(self):
        with pytest.raises(cli.CLIError, match=r"exp:3: unknown key 'train.lrr'"):
            cli.parse_config("seeds=1\n\ntrain.lrr=0.1\n", "exp")

    def test_bad_value(self):
        with pytest.raises(cli.CLIError, match=r"exp:1: bad value for train.B"):
            cli.parse_config("train.B=eight", "exp")

    def test_missing_equals(self):
        with pytest.raises(cli.CLIError, match=r":2: expected key=value"):
            cli.parse_config("seeds=0\nnonsense\n")

    def test_invalid_train_value(self):
        with pytest.raises(cli.CLIError, match="tau"):
            cli.parse_config("train.tau=1.5")


class TestRun:
    def test_zero_iterations(self, tmp_path):
        cfg = write_config(tmp_path, TINY.replace("total_iters=12", "total_iters=0"))
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.reader(open(tmp_path / "o" / "summary.csv")))
        assert rows[0] == ["metric", "mean", "std", "n"]
        assert all(r[1:] == ["", "", "0"] for r in rows[1:])

    def test_two_seeds_and_summary(self, tmp_path):
        cfg = write_config(tmp_path, TINY)
        out = tmp_path / "o"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        a, b = (out / "metrics_0.csv").read_bytes(), (out / "metrics_1.csv").read_bytes()
        assert a != b
        assert {"ckpt_0_6.bin", "ckpt_0_12.bin", "ckpt_1_12.bin"} <= set(files_of(out))
        # recompute from the per-seed CSVs with the csv module and statistics
        finals, utils = [], []
        for seed in (0, 1):
            rows = list(csv.DictReader(open(out / f"metrics_{seed}.csv")))
            finals.append([float(r["eval_error"]) for r in rows if r["eval_error"]][-1])
            utils.append(statistics.fmean(float(r["utilization"]) for r in rows))
        summary = {r["metric"]: r for r in csv.DictReader(open(out / "summary.csv"))}
        assert float(summary["final_error"]["mean"]) == pytest.approx(statistics.fmean(finals), abs=1e-15)
        assert float(summary["final_error"]["std"]) == pytest.approx(statistics.pstdev(finals), abs=1e-15)
        assert float(summary["utilization"]["mean"]) == pytest.approx(statistics.fmean(utils), abs=1e-15)
        assert summary["final_error"]["n"] == "2"

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, TINY)
        for d in ("a", "b"):
            cli.run(cfg, tmp_path / d)
        assert files_of(tmp_path / "a") == files_of(tmp_path / "b")

    def test_parallel_matches_sequential(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, TINY)
        cli.run(cfg, tmp_path / "seq")
        monkeypatch.setenv("SEQLAB_THREADS", "2")
        cli.run(cfg, tmp_path / "par")
        assert files_of(tmp_path / "seq") == files_of(tmp_path / "par")

    def test_bad_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SEQLAB_THREADS", "zero")
        cfg = write_config(tmp_path, TINY)
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path, TINY)
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed-override", "7"])
        assert sorted(p.name for p in (tmp_path / "o").glob("metrics_*.csv")) == ["metrics_7.csv"]

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "none.txt"), "--out", str(tmp_path)]) == 2
        assert "none.txt" in capsys.readouterr().err

    def test_directory_source(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        rng = np.random.default_rng(0)
        lines = ["#classes=2"]
        for i in range(12):
            write_pnm(data / f"{i}.pgm", Image(rng.integers(0, 256, (4, 4), dtype=np.uint8)))
            lines.append(f"{i}.pgm\t{i % 2}")
        (data / "labels.tsv").write_text("\n".join(lines) + "\n")
        cfg = write_config(
            tmp_path,
            f"data.source=directory\ndata.path={data}\ndata.test_path={data}\nsplit.n_labels=4\n"
            "train.B=2\ntrain.mu=2\ntrain.total_iters=3\ntrain.eval_every=3\n",
        )
        cli.run(cfg, tmp_path / "o")
        assert (tmp_path / "o" / "ckpt_0_3.bin").exists()

    def test_long_tail_requires_all_keys(self, tmp_path):
        cfg = write_config(tmp_path, "longtail.lambda=10\n")
        with pytest.raises(cli.CLIError, match="longtail.N1"):
            cli.run(cfg, tmp_path / "o")


class TestCompare:
    @pytest.fixture
    def run_dir(self, tmp_path):
        cli.run(write_config(tmp_path, TINY), tmp_path / "r")
        return tmp_path / "r"

    def test_self_zero(self, run_dir, capsys):
        rows = cli.compare(run_dir, run_dir)
        assert all(d == 0.0 for _, a, b, d in rows if d is not None)
        assert cli.main(["compare", str(run_dir), str(run_dir)]) == 0
        assert "final_error" in capsys.readouterr().out

    def test_missing(self, run_dir, tmp_path, capsys):
        assert cli.main(["compare", str(run_dir), str(tmp_path / "gone")]) != 0
        assert str(tmp_path / "gone" / "summary.csv") in capsys.readouterr().err

    def test_schema_mismatch(self, run_dir, tmp_path):
        other = tmp_path / "other"
        other.mkdir()
        (other / "summary.csv").write_text("metric,mean,std,n\nfinal_error,0.1,0.0,1\n")
        with pytest.raises(cli.CLIError, match="schemas differ"):
            cli.compare(run_dir, other)

    def test_csv_output(self, run_dir, tmp_path):
        out = tmp_path / "cmp.csv"
        cli.main(["compare", str(run_dir), str(run_dir), "--out", str(out)])
        assert out.read_text().splitlines()[0] == "metric,a_mean,b_mean,diff"


def metrics_file(tmp_path, rows):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    return path


class TestPlot:
    def test_empty_axes_only(self, tmp_path):
        svg = cli.plot(metrics_file(tmp_path, []), "loss").read_text()
        assert svg.count('class="axis"') == 2 and "polyline" not in svg

    def test_two_point_polyline(self, tmp_path):
        rows = [dict.fromkeys(METRIC_COLUMNS) for _ in range(2)]
        rows[0].update(iter=1, total=2.0)
        rows[1].update(iter=3, total=1.0)
        svg = cli.plot(metrics_file(tmp_path, rows), "loss", columns=("total",)).read_text()
        # x spans [1, 3] over pixels [56, 464]; y spans [0, 2] over [280, 24]
        assert 'points="56.00,24.00 464.00,152.00"' in svg

    def test_accuracy_uses_eval_rows(self, tmp_path):
        rows = [dict.fromkeys(METRIC_COLUMNS) for _ in range(3)]
        for i, r in enumerate(rows):
            r["iter"] = i + 1
        rows[1]["eval_error"] = 0.25
        rows[2]["eval_error"] = 0.5
        svg = cli.plot(metrics_file(tmp_path, rows), "accuracy").read_text()
        assert 'points="56.00,88.00 464.00,152.00"' in svg

    def test_deterministic(self, tmp_path):
        rows = [dict.fromkeys(METRIC_COLUMNS, 0.5) for _ in range(4)]
        for i, r in enumerate(rows):
            r["iter"] = i
        path = metrics_file(tmp_path, rows)
        a = cli.plot(path, "mask", tmp_path / "a.svg").read_bytes()
        b = cli.plot(path, "mask", tmp_path / "b.svg").read_bytes()
        assert a == b

    def test_unknown_column(self, tmp_path):
        with pytest.raises(cli.PlotError, match="unknown column"):
            cli.plot(metrics_file(tmp_path, []), "loss", columns=("nope",))
        assert cli.main(["plot", str(tmp_path / "m.csv"), "--kind", "loss", "--columns", "nope"]) == 2

    def test_reliability(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("bin_low,bin_high,count,mean_conf,mean_acc\n0.0,0.5,0,0.0,0.0\n0.5,1.0,4,0.75,0.5\n")
        svg = cli.plot(path, "reliability").read_text()
        assert svg.count('class="bar"') == 1
        assert 'x="260.00" y="152.00" width="204.00" height="128.00"' in svg

    def test_reliability_schema(self, tmp_path):
        with pytest.raises(cli.PlotError):
            cli.plot(metrics_file(tmp_path, []), "reliability")


class TestAugmentPreview:
    @pytest.fixture
    def image(self, tmp_path):
        path = tmp_path / "in.ppm"
        rng = np.random.default_rng(0)
        write_pnm(path, Image(rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)))
        return path

    def test_identity(self, image, tmp_path):
        out = cli.augment_preview(image, "Identity", out=tmp_path / "o.ppm")
        assert read_pnm(out) == read_pnm(image)

    def test_policy_deterministic(self, image, tmp_path):
        a = cli.augment_preview(image, "strong", seed=3, out=tmp_path / "a.ppm").read_bytes()
        b = cli.augment_preview(image, "strong", seed=3, out=tmp_path / "b.ppm").read_bytes()
        assert a == b

    def test_explicit_magnitude(self, image):
        out = cli.augment_preview(image, "Solarize:0")
        assert out.name == "in.Solarize_0.ppm"
        src = read_pnm(image).pixels.astype(int)
        np.testing.assert_array_equal(read_pnm(out).pixels, np.where(src > 0, 255 - src, src))

    def test_unknown(self, image):
        assert cli.main(["augment-preview", str(image), "--kind", "Blur"]) == 2


@pytest.mark.slow
def test_compare_desk_preset(tmp_path, capsys):
    """One desk-preset seed per algorithm through the CLI: SequenceMatch wins."""
    for alg in ("SupervisedOnly", "SequenceMatch"):
        cli.run(write_config(tmp_path, f"seeds=0\ntrain.algorithm={alg}\n", f"{alg}.txt"), tmp_path / alg)
    rows = {r[0]: r for r in cli.compare(tmp_path / "SupervisedOnly", tmp_path / "SequenceMatch")}
    assert rows["final_error"][3] < 0
