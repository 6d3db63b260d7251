"""Generative binary memory for class-incremental learning.

Per-class Bernoulli mixture models over binary embeddings serve as a compact
replay memory: prototypes are fitted by EM, quantized to q bits, and sampled
to produce pseudo-exemplars while a linear head learns new classes.
"""

from .bitmatrix import BitMatrix, column_means, pack_rows
from .bmm import BmmParams, EmConfig, FitReport, QuantizedBmm, dequantize, fit, quantize, sample
from .classifier import LinearClassifier, TrainConfig, evaluate, extend_outputs, train_task
from .datasets import LabeledEmbeddings, load_embeddings, save_embeddings, split_by_class
from .harness import CilScenario, MetricsReport, RunConfig, SynthSpec, make_scenario, run, sweep_memory
from .memory import GbmStore, LatentReplayBuffer, compose_batch, generate, memory_bits_gbm, memory_bits_lr
from .rng import SeededRng

__version__ = "0.1.0"
