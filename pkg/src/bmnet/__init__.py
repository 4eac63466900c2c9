"""Multiplication-free bipolar morphological network engine.

Classical and BM conv/fc layers with manual backprop, exact
standard-to-BM conversion with incremental fine-tuning, polynomial
float32 ln/exp approximations, and a gate/latency hardware cost model.
"""

from .convert import (ConversionPlan, ConversionResult, StageRecord, convert_layer,
                      convert_weights, incremental_convert_and_train,
                      partial_conversion_accuracy_curve, plan_for_network,
                      reconstruct_weights)
from .cost_model import (ConvShape, CostReport, GateConstants, OpCost, gate_sweep,
                         network_gate_report, opcount_conv, opcount_fc, ratio_conv, ratio_fc)
from .layers import (NEG_SENTINEL, BatchNorm, BMConv2D, BMDense, BMWeights, Conv2D,
                     Dense, GlobalAvgPool, MaxPool2, ReLU, ResidualBlock, Softmax,
                     softmax_cross_entropy)
from .netspec import NetworkSpec, build_lenet_like, build_resnet22, load_spec, save_spec
from .network import Network, instantiate
from .opcount import OpCount
from .optim import Adam, AdamConfig, adam_step
from .train import evaluate, train_epochs, train_until_no_improvement

__version__ = "0.1.0"
