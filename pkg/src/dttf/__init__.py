"""Deep transfer tensor factorization.

Cross-domain CP factorization of sparse user x item x view rating tensors
with a view factor matrix shared by both domains, jointly trained with
denoising autoencoders over user and item side information.
"""
from .data import DatasetBundle, SynthSpec, load_bundle, synth_generate
from .model import AblationMode, Hyperparams, TrainState, objective, predict, train
from .tensor import Domain, SparseTensor3, build_tensor

__version__ = "0.1.0"

__all__ = ["AblationMode", "DatasetBundle", "Domain", "Hyperparams", "SparseTensor3",
           "SynthSpec", "TrainState", "build_tensor", "load_bundle", "objective", "predict",
           "synth_generate", "train"]
