"""The fast narrative demos run to completion."""

import runpy
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize(
    "script,args",
    [("01_losses.py", []), ("02_augmentation.py", ["OUT"]), ("04_long_tail_and_calibration.py", ["20"])],
)
def test_demo_runs(script, args, tmp_path, monkeypatch, capsys):
    argv = [str(tmp_path / "out") if a == "OUT" else a for a in args]
    monkeypatch.setattr(sys, "argv", [script, *argv])
    monkeypatch.chdir(tmp_path)
    runpy.run_path(str(DEMOS / script), run_name="__main__")
    assert capsys.readouterr().out


def test_augmentation_demo_files(tmp_path, monkeypatch):
    monkeypatch.setattr(sys, "argv", ["02_augmentation.py", str(tmp_path)])
    runpy.run_path(str(DEMOS / "02_augmentation.py"), run_name="__main__")
    assert len(list(tmp_path.glob("t_*.pgm"))) == 14
