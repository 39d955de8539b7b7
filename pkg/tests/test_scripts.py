import argparse
import dataclasses
import importlib.util
from pathlib import Path
from types import ModuleType

import polars
import pytest
import yaml

from pefnn.cli import main
from pefnn.kernels import KernelMode
from pefnn.network import ModelConfig, count_parameters
from pefnn.utils import read_sidecar

SCRIPTS = Path(__file__).parent.parent / "scripts"

CONFIG = """\
model:
  layers: 1
  width: 4
  modes: 2
  dt: 0.04
swe:
  grid: 16
  n_records: 6
data:
  count: 4
  max_at_once: 2
train:
  batch_size: 4
  epochs: 1
"""


def load_script(name: str) -> ModuleType:
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    assert spec is not None and spec.loader is not None
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def config(tmp_path: Path) -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(CONFIG)
    return path


class TestCompareKernelModes:
    @staticmethod
    def test_variants_cover_every_mode() -> None:
        script = load_script("compare_kernel_modes")

        assert {mode for mode, _ in script.VARIANTS} == set(KernelMode)
        assert (KernelMode.MULTIPLE_ROTATION, 4) in script.VARIANTS

    @staticmethod
    def test_matched_width() -> None:
        script = load_script("compare_kernel_modes")
        config = ModelConfig(layers=2, width=2, modes=2)
        budget = count_parameters(dataclasses.replace(config, width=5))

        assert script.matched_width(config, budget, 16).width == 5
        assert script.matched_width(config, budget, 3).width == 3

    @staticmethod
    def test_cell() -> None:
        script = load_script("compare_kernel_modes")

        assert script.cell(0.123456) == "0.1235"
        assert script.cell(7) == "7"
        assert script.cell("dense") == "dense"

    @staticmethod
    @pytest.mark.slow
    def test_table(config: Path, tmp_path: Path) -> None:
        dataset = tmp_path / "swe.pefn"
        out = tmp_path / "modes.csv"
        main(["gen-swe", "--config", str(config), "--out", str(dataset)])
        script = load_script("compare_kernel_modes")

        script.main(
            argparse.Namespace(config=config, dataset=dataset, out=out, max_width=8)
        )
        table = polars.read_csv(out)

        assert table.height == len(script.VARIANTS)
        assert table["kernel_mode"].to_list() == [
            mode.value for mode, _ in script.VARIANTS
        ]


@pytest.mark.slow
def test_desk_pipeline(config: Path, tmp_path: Path) -> None:
    workdir = tmp_path / "desk"
    script = load_script("desk_pipeline")

    script.main(
        argparse.Namespace(
            config=config, workdir=workdir, upscale=2, fine_count=1, fine_seed=None
        )
    )
    fine = yaml.safe_load((workdir / "fine.yaml").read_text())
    rollout = read_sidecar(workdir / "rollout.csv")
    superres = read_sidecar(workdir / "superres.csv")

    assert fine["swe"]["seed"] == 1
    assert fine["swe"]["grid"] == 32
    assert rollout is not None and superres is not None
    assert rollout["split"] == "test"
    assert superres["split"] == "all"
    assert superres["grid"] == [32, 32]
