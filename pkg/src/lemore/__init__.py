"""lemore: a lightweight multi-view segmentation network built on a small
numpy tensor library with reverse-mode autodiff, plus static cost accounting,
synthetic-data training, and portable weight/image formats."""

from .analysis import ablation_ladder, analyze_config, count_costs
from .autodiff import GradientMap, Tape, active_tape
from .gradcheck import finite_diff_check, sweep_registry
from .io_formats import load_weights, read_ppm, save_weights, write_label_pgm
from .model import LeMoReModel, ModelConfig, build, toy_config
from .tensor import (Tensor, add, avg_pool_to_grid, bilinear_upsample,
                     elementwise, global_avg_pool, matmul, mean_all, mul,
                     permute, relu, reshape, scale, sigmoid, softmax_rows,
                     sum_all)
from .training import (TrainState, cross_entropy_loss, evaluate,
                       generate_scene, make_dataset, miou, train_loop,
                       train_step)

__all__ = [
    "GradientMap", "Tape", "active_tape",
    "Tensor", "add", "avg_pool_to_grid", "bilinear_upsample", "elementwise",
    "global_avg_pool", "matmul", "mean_all", "mul", "permute", "relu",
    "reshape", "scale", "sigmoid", "softmax_rows", "sum_all",
    "LeMoReModel", "ModelConfig", "build", "toy_config",
    "ablation_ladder", "analyze_config", "count_costs",
    "finite_diff_check", "sweep_registry",
    "load_weights", "read_ppm", "save_weights", "write_label_pgm",
    "TrainState", "cross_entropy_loss", "evaluate", "generate_scene",
    "make_dataset", "miou", "train_loop", "train_step",
]

__version__ = "0.1.0"
