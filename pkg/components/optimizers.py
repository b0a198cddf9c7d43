"""Batch optimizers over flat parameter vectors.

Every optimizer consumes the MEAN gradient of the current batch and returns
the updated parameter vector. FTRL-Proximal is solved per coordinate in
closed form; Adam, RMSprop and FOBOS are the comparison baselines.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from utils.exceptions import NonFiniteError, ValidationError
from utils.helpers import OptimizerConfig

logger = logging.getLogger(__name__)


def _check_gradient(gradient: np.ndarray, params: np.ndarray, where: str) -> np.ndarray:
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != np.shape(params):
        raise ValidationError(f"{where}: gradient shape {gradient.shape} does not match parameters {np.shape(params)}")
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteError(f"{where} gradient")
    return gradient


@dataclass
class FtrlState:
    """Per-coordinate accumulators of FTRL-Proximal"""

    z: np.ndarray
    n: np.ndarray
    alpha: float = 0.1
    beta: float = 1.0
    l1: float = 0.0
    l2: float = 0.0

    @classmethod
    def fresh(cls, size: int, alpha: float = 0.1, beta: float = 1.0, l1: float = 0.0, l2: float = 0.0) -> "FtrlState":
        if alpha <= 0:
            raise ValidationError(f"FTRL alpha must be positive, got {alpha}")
        return cls(np.zeros(size), np.zeros(size), alpha, beta, l1, l2)

    def denominator(self) -> np.ndarray:
        return (self.beta + np.sqrt(self.n)) / self.alpha + self.l2

    def weights(self) -> np.ndarray:
        """Closed-form minimizer; exactly 0 wherever |z| <= l1"""
        with np.errstate(divide="ignore", invalid="ignore"):
            w = -(self.z - np.sign(self.z) * self.l1) / self.denominator()
        return np.where(np.abs(self.z) <= self.l1, 0.0, w)

    def warm_start(self, w0: np.ndarray) -> None:
        """Set z so that the closed form returns w0 before any gradient arrives"""
        w0 = np.asarray(w0, dtype=float)
        self.z = -(w0 * self.denominator() + np.sign(w0) * self.l1)

    def learning_rate(self) -> np.ndarray:
        return self.alpha / (self.beta + np.sqrt(self.n))


def ftrl_step(state: FtrlState, g_t: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    g = _check_gradient(g_t, w_t, "ftrl")
    sigma = (np.sqrt(state.n + g * g) - np.sqrt(state.n)) / state.alpha
    state.z = state.z + g - sigma * np.asarray(w_t, dtype=float)
    state.n = state.n + g * g
    return state.weights()


def soft_threshold(x: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


@dataclass
class FobosState:
    eta: float = 0.01
    l1: float = 0.0
    t: int = 0


def fobos_step(
    state: FobosState,
    g_t: np.ndarray,
    w_t: np.ndarray,
    eta: Optional[float] = None,
    l1: Optional[float] = None,
) -> np.ndarray:
    """Gradient step followed by L1 soft-thresholding"""
    eta = state.eta if eta is None else eta
    l1 = state.l1 if l1 is None else l1
    if eta <= 0:
        raise ValidationError(f"FOBOS step size must be positive, got {eta}")
    g = _check_gradient(g_t, w_t, "fobos")
    state.t += 1
    return soft_threshold(np.asarray(w_t, dtype=float) - eta * g, eta * l1)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    learning_rate: float = 0.001
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0

    @classmethod
    def fresh(cls, size: int, **hyper) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **hyper)


def adam_step(state: AdamState, g_t: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    g = _check_gradient(g_t, w_t, "adam")
    state.t += 1
    state.m = state.beta_1 * state.m + (1.0 - state.beta_1) * g
    state.v = state.beta_2 * state.v + (1.0 - state.beta_2) * g * g
    m_hat = state.m / (1.0 - state.beta_1 ** state.t)
    v_hat = state.v / (1.0 - state.beta_2 ** state.t)
    return np.asarray(w_t, dtype=float) - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class RmspropState:
    v: np.ndarray
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    t: int = 0

    @classmethod
    def fresh(cls, size: int, **hyper) -> "RmspropState":
        return cls(np.zeros(size), **hyper)


def rmsprop_step(state: RmspropState, g_t: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    g = _check_gradient(g_t, w_t, "rmsprop")
    state.t += 1
    state.v = state.decay * state.v + (1.0 - state.decay) * g * g
    return np.asarray(w_t, dtype=float) - state.learning_rate * g / (np.sqrt(state.v) + state.epsilon)


@dataclass
class Optimizer:
    """Common step contract; state is created lazily from the first parameters seen"""

    name: str
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    state: object = None

    def init_state(self, params: np.ndarray):
        raise NotImplementedError

    def apply(self, gradient: np.ndarray, params: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, gradient: np.ndarray, params: np.ndarray) -> np.ndarray:
        if self.state is None:
            self.state = self.init_state(np.asarray(params, dtype=float))
        return self.apply(gradient, params)

    def reset(self) -> None:
        self.state = None


class FtrlProximal(Optimizer):
    def __init__(self, config: OptimizerConfig = OptimizerConfig()):
        super().__init__("ftrl", config)

    def init_state(self, params):
        c = self.config
        state = FtrlState.fresh(params.size, c.alpha, c.beta, c.l1, c.l2)
        state.warm_start(params)
        return state

    def apply(self, gradient, params):
        return ftrl_step(self.state, gradient, params)


class Adam(Optimizer):
    def __init__(self, config: OptimizerConfig = OptimizerConfig()):
        super().__init__("adam", config)

    def init_state(self, params):
        c = self.config
        return AdamState.fresh(params.size, learning_rate=c.learning_rate, beta_1=c.beta_1, beta_2=c.beta_2,
                               epsilon=c.epsilon)

    def apply(self, gradient, params):
        return adam_step(self.state, gradient, params)


class RMSprop(Optimizer):
    def __init__(self, config: OptimizerConfig = OptimizerConfig()):
        super().__init__("rmsprop", config)

    def init_state(self, params):
        c = self.config
        return RmspropState.fresh(params.size, learning_rate=c.learning_rate, decay=c.rmsprop_decay,
                                  epsilon=c.epsilon)

    def apply(self, gradient, params):
        return rmsprop_step(self.state, gradient, params)


class Fobos(Optimizer):
    def __init__(self, config: OptimizerConfig = OptimizerConfig()):
        super().__init__("fobos", config)

    def init_state(self, params):
        return FobosState(eta=self.config.fobos_learning_rate, l1=self.config.l1)

    def apply(self, gradient, params):
        return fobos_step(self.state, gradient, params)


OPTIMIZERS: Dict[str, Callable[[OptimizerConfig], Optimizer]] = {
    "ftrl": FtrlProximal,
    "adam": Adam,
    "rmsprop": RMSprop,
    "fobos": Fobos,
}


def build_optimizer(config: OptimizerConfig, name: Optional[str] = None) -> Optimizer:
    """Fresh optimizer named by `name` (default: config.name)"""
    name = name or config.name
    if name not in OPTIMIZERS:
        raise ValidationError(f"unknown optimizer '{name}'. Allowed: {', '.join(OPTIMIZERS)}")
    return OPTIMIZERS[name](config)
