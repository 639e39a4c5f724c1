"""Soft-reset spiking neurons with a membrane potential rectifier, trained by BPTT."""

from .errors import (ContractError, DegenerateChannelError, DomainError, FormatError, ShapeError,
                     SpecError, StateError, TruncatedFileError)
from .network import (LayerSpec, Network, NetworkSpec, TemporalActivations, build_network,
                      encode_input, forward_temporal, mlp_spec, readout_accumulate)
from .neurons import (NeuronConfig, NeuronKind, NeuronState, heaviside, if_step, lif_step, mpr,
                      mpr_grad, quantization_error, srif_mpr_step, srif_step, surrogate_grad)
from .tdbn import TdBN, tdbn_forward_infer, tdbn_forward_train
from .tensor import Tensor, conv2d, elementwise, matmul, reduce

__version__ = "0.1.0"
