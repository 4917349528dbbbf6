"""SNN vs. CNN inference energy laboratory.

Hardware-agnostic (equivalent-MAC) and hardware-aware (classical vs.
neuromorphic dataflow) energy estimates for a spiking network and a matched
convolutional network on a synthetic position-regression task.
"""

from .energy import (EnergyCostTable, EnergyReport, HardwareModel, emac_estimate, energy_cnn_ca,
                     energy_lif_nda, energy_snn_ca, energy_snn_nda, normalize_report)
from .metrics import DarkRatioConfig, dark_pixel_ratio, mse, sparsity
from .network import (LayerSpec, NetworkSpec, SparsityProfile, build_pair, cnn_forward,
                      default_spec, snn_forward)
from .neuron import LifParams, MembraneState, lif_step, readout_step, surrogate_grad
from .training import TrainConfig, grad_check, train

__version__ = "0.1.0"
