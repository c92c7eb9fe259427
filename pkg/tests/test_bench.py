import subprocess
import sys
from pathlib import Path

SCRIPT = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs():
    out = subprocess.run([sys.executable, str(SCRIPT), "--repeat", "2"], capture_output=True, text=True,
                         check=True).stdout
    assert "im2col" in out or "unavailable" in out
