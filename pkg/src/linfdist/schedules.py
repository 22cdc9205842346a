"""Training plan and the three coupled schedules.

Phases over e1 + e2 + e3 epochs:
  [0, e1):        p fixed at p_start, full learning rate, eps warming up
  [e1, e1+e2):    p grows exponentially p_start -> p_end, advanced every
                  iteration; cosine learning-rate decay; eps at its target
  [e1+e2, end):   p = inf; cosine decay continues
"""

import math
from dataclasses import dataclass, field


@dataclass
class TrainPlan:
    e1: int = 50
    e2: int = 300
    e3: int = 50
    p_start: float = 8.0
    p_end: float = 1000.0
    lr0: float = 0.02
    eps_train: float = 0.0
    kappa: float = 0.5
    hinge_t: float = 0.9
    weight_decay: float = 0.005
    batch_size: int = 512
    seed: int = 0
    hinge_variant: str = "max"

    def __post_init__(self):
        if min(self.e1, self.e2, self.e3) < 0:
            raise ValueError("epoch counts must be nonnegative")
        if not (self.p_end >= self.p_start >= 1.0):
            raise ValueError("need p_end >= p_start >= 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def total_epochs(self):
        return self.e1 + self.e2 + self.e3


def p_schedule(plan, epoch, iter_in_epoch=0, iters_per_epoch=1):
    """Exponent for a given iteration; grows per iteration during e2."""
    if epoch < 0:
        raise ValueError("negative epoch")
    if epoch < plan.e1:
        return plan.p_start
    if epoch < plan.e1 + plan.e2:
        done = (epoch - plan.e1) * iters_per_epoch + iter_in_epoch
        tau = done / (plan.e2 * iters_per_epoch)
        return plan.p_start * (plan.p_end / plan.p_start) ** tau
    return math.inf


def lr_schedule(plan, epoch):
    """Constant for e1 epochs, then cosine annealing to zero."""
    if epoch < 0:
        raise ValueError("negative epoch")
    if epoch < plan.e1 or plan.e2 + plan.e3 == 0:
        return plan.lr0
    s = (epoch - plan.e1) / (plan.e2 + plan.e3)
    return 0.5 * plan.lr0 * (1.0 + math.cos(math.pi * min(s, 1.0)))


def eps_schedule(plan, epoch):
    """Linear warmup of the training perturbation radius over e1 epochs."""
    if epoch < 0:
        raise ValueError("negative epoch")
    if plan.e1 <= 0 or epoch >= plan.e1:
        return plan.eps_train
    return plan.eps_train * epoch / plan.e1
