"""MaxMin CNN: channel-duplicating convolutional blocks with from-scratch backprop."""
from .data import LabeledImages, load_cifar10, load_mnist, split_train_val, zca_apply, zca_fit
from .errors import (ConfigError, DataError, DivergenceError, LayerStateError, MaxMinError,
                     ShapeError, WeightFileError)
from .models import (Network, NetworkSpec, build_cifar, build_mnist, build_network, cifar_spec,
                     load_weights, mnist_spec, param_count, reduce_to_baseline, save_weights)
from .optim import SGD, PlateauScheduler, SGDConfig, plateau_schedule
from .train import TrainConfig, evaluate, grad_check, grad_check_layer, train

__version__ = "0.1.0"
