"""Progressive binarization with semi-structured (N:M) pruning for small layer stacks."""

from .binarize import (
    BinaryFactorization,
    binary,
    grouped_binarize,
    refine,
    residual_binarize,
    update_alpha,
    update_mu,
)
from .cfs import LayerRedundancy, allocate, lr_score
from .compensate import CompensationState, compensate_block
from .errors import BinpruneError, ConfigError, DataError, NumericalError, TensorFormatError
from .gram import damped_hessian, decoupled_error, x2s
from .maskgen import hessian_scores, select_salient, split_mask
from .metrics import average_bits, bd_error_correlation, bd_score, l1_error, l2_error
from .pipeline import RunConfig, evaluate, quantize_model, sweep
from .spbo import SpboConfig, oneshot_prune_binarize, spbo
from .tensorio import SyntheticSpec, TensorFile, gen_synthetic, read_tensor, write_tensor

__version__ = "0.1.0"
