"""Test-time input optimization via model feedback learning.

A lightweight reverse model is trained to map desired process targets to
machine inputs, first against a learned emulator of the machine and then
against the machine itself, without ever touching the machine's own
parameters. The package bundles synthetic ground-truth machines for plasma
etching, chemical vapor deposition and wire bonding, baseline optimizers,
and an experiment harness with a CLI.
"""

from .emulator import EmulatorConfig, TrainedEmulator, train_emulator
from .loops import MflConfig, MflResult, ReverseModel, mfl_train
from .nn import DenseNet, load_net, save_net
from .process import (
    Dataset,
    GroundTruthMachine,
    ProcessSpec,
    TargetSet,
    build_machine,
    load_spec,
    sample_dataset,
    sample_targets,
)

__version__ = "0.1.0"

__all__ = [
    "DenseNet",
    "Dataset",
    "EmulatorConfig",
    "GroundTruthMachine",
    "MflConfig",
    "MflResult",
    "ProcessSpec",
    "ReverseModel",
    "TargetSet",
    "TrainedEmulator",
    "build_machine",
    "load_net",
    "load_spec",
    "mfl_train",
    "sample_dataset",
    "sample_targets",
    "save_net",
    "train_emulator",
    "__version__",
]
