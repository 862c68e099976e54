"""Smoke test for the zoomsr_py extension.

Builds the extension with cargo (unless ZOOMSR_PY_LIB points at a built
library), imports it and runs simulate -> train -> infer -> evaluate on a
tiny configuration.
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

TINY = {
    "steps": "3",
    "batch_size": "2",
    "lr_patch": "8",
    "restoration.channels": "8",
    "restoration.blocks": "2",
    "restoration.split": "1",
    "restoration.encoder_width": "8",
    "aux_width": "4",
    "match_channels": "8",
    "perceptual": "4,1,4,2,4,2",
}


def locate_library() -> Path:
    env = os.environ.get("ZOOMSR_PY_LIB")
    if env:
        return Path(env)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "zoomsr-py"],
        cwd=ROOT,
        check=True,
    )
    for name in ("libzoomsr_py.so", "libzoomsr_py.dylib", "zoomsr_py.dll"):
        p = ROOT / "target" / "release" / name
        if p.exists():
            return p
    raise FileNotFoundError("built zoomsr_py library not found")


def load_module(lib: Path, work: Path):
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    target = work / f"zoomsr_py{suffix}"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("zoomsr_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        zsr = load_module(locate_library(), work)
        print("zoomsr_py", zsr.version())

        cfg = zsr.resolve_config({"preset": "paper"})
        assert cfg["batch_size"] == "16" and cfg["lr_patch"] == "48", cfg

        data = work / "data"
        ids = zsr.simulate(str(data), scenes=3, seed=7, config={"scene_size": "128"})
        assert len(ids) == 3, ids

        run = work / "run"
        losses = zsr.train(str(run), str(data), TINY)
        assert len(losses) == 3 and all(math.isfinite(v) for v in losses), losses
        again = zsr.train(str(work / "run2"), str(data), TINY)
        assert again == losses, "same seed must reproduce the loss trace"

        scene = data / ids[0]
        out = work / "u_sr.png"
        h, w = zsr.infer(
            str(run / "model.ckpt"),
            str(scene / "ultrawide.png"),
            str(scene / "tele.png"),
            str(out),
        )
        assert (h, w) == (128, 128) and out.exists(), (h, w)

        metrics = zsr.evaluate(str(run / "model.ckpt"), str(data))
        assert metrics["excluded"] == 0, metrics
        for key in ("psnr_full", "psnr_corner", "bicubic_psnr_corner"):
            assert math.isfinite(metrics[key]), metrics

        try:
            zsr.resolve_config({"no_such_key": "1"})
        except ValueError as e:
            assert "config" in str(e)
        else:
            raise AssertionError("unknown keys must raise ValueError")

        print(
            "ok: corner PSNR %.3f dB (bicubic %.3f dB)"
            % (metrics["psnr_corner"], metrics["bicubic_psnr_corner"])
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
