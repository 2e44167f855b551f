from .data import READ_PROMPT, TaskConfig, ToyExample, make_dataset, regrid
from .model import ToyConfig, embed_image, forward, init_params
from .train import (
    TrainReport, evaluate, evaluate_extraction, greedy_decode, load_params, probe_table,
    probe_visual_logits, save_params, train,
)

__all__ = [
    "READ_PROMPT", "TaskConfig", "ToyConfig", "ToyExample", "TrainReport", "embed_image", "evaluate",
    "evaluate_extraction", "forward", "greedy_decode", "init_params", "load_params", "make_dataset",
    "probe_table", "probe_visual_logits", "regrid", "save_params", "train",
]
