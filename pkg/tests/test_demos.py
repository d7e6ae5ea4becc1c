import runpy
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"
FAST = ["01_dot_steady_state.py", "02_counting_and_filtering.py", "03_photodetector.py"]


@pytest.mark.parametrize("name", FAST)
def test_demo_runs(name, capsys):
    runpy.run_path(str(DEMOS / name), run_name="__main__")
    assert capsys.readouterr().out
