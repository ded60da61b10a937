"""The momentum family of L-infinity sign attacks.

All variants perturb within an eps-ball around the clean image, step by
alpha = eps / iters, and clip to the ball intersected with [0, 1] after
every step. They differ only in which gradient feeds the momentum
accumulator g_t:

- fgsm      single step along sign(grad).
- ifgsm     iterative steps along sign(grad), no momentum.
- mifgsm    g_t = mu * g_{t-1} + grad / ||grad||_1, step along sign(g_t).
- nifgsm    the mifgsm update, but the gradient is taken at the
            lookahead point x_t + alpha * mu * g_{t-1}.
- pifgsm    the gradient is taken at x_t + alpha * grad_{t-1} where
            grad_{t-1} is the previous raw (un-normalized) gradient.
- emifgsm   the gradient is the average over N points x_t + c_i * gbar_{t-1},
            where gbar_{t-1} is the previous averaged gradient (raw, not
            normalized) and the c_i come from the coefficient sampler.
- enifgsm   like emifgsm but sampling along the accumulated momentum
            g_{t-1} instead of the previous average.
- erifgsm   like emifgsm but each point is x_t + alpha * u with a fresh
            u ~ U([-1,1]^d) per point per step; the coefficient sampler
            contributes only its count N.

Momentum and the averaged-gradient memories start at zero, so a zero
coefficient or mu=0 reproduces the simpler family members exactly.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroGradient
from .sampling import SamplingSpec, derive_rng, make_rng, sample_coefficients, sample_uniform_cube
from .tensor import l1_normalize, project_linf, sign, validate_image
from .transforms import TransformConfig, make_estimator

VARIANTS = (
    "fgsm",
    "ifgsm",
    "mifgsm",
    "nifgsm",
    "pifgsm",
    "emifgsm",
    "enifgsm",
    "erifgsm",
)


@dataclass(frozen=True)
class AttackConfig:
    variant: str = "emifgsm"
    eps: float = 16.0 / 255.0
    iters: int = 10
    mu: float = 1.0
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    transforms: TransformConfig = field(default_factory=TransformConfig)
    normalize_sample_dir: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attack variant {self.variant!r}")
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")

    @property
    def alpha(self) -> float:
        return self.eps / self.iters

    def canonical(self) -> dict:
        return {
            "variant": self.variant,
            "eps": self.eps,
            "iters": self.iters,
            "mu": self.mu,
            "sampling": {
                "method": self.sampling.method,
                "count": self.sampling.count,
                "eta": self.sampling.eta,
            },
            "transforms": {
                "enabled": list(self.transforms.enabled),
                "dim_prob": self.transforms.dim_prob,
                "dim_resize_low": self.transforms.dim_resize_low,
                "dim_pad_to": self.transforms.dim_pad_to,
                "tim_kernel_size": self.transforms.tim_kernel_size,
                "tim_sigma": self.transforms.tim_sigma,
                "sim_copies": self.transforms.sim_copies,
            },
            "normalize_sample_dir": self.normalize_sample_dir,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class StepState:
    """Engine internals after one iteration, for trace comparison."""

    x: np.ndarray
    g: np.ndarray | None = None        # momentum accumulator g_t
    g_avg: np.ndarray | None = None    # averaged sampled gradient gbar_t
    g_prev: np.ndarray | None = None   # previous raw gradient (pre-gradient variant)


@dataclass(frozen=True)
class AttackResult:
    adv: np.ndarray
    white_box_success: bool
    loss_trace: tuple
    config_hash: str
    state_trace: tuple = ()


def _l1_direction(g: np.ndarray) -> np.ndarray:
    """grad / ||grad||_1, with an exactly-zero gradient passed through as zeros."""
    try:
        return l1_normalize(g)
    except ZeroGradient:
        return np.zeros_like(g)


def _finish(oracle, x, y, adv, losses, cfg, states):
    return AttackResult(
        adv=adv,
        white_box_success=oracle.predict(adv) != y,
        loss_trace=tuple(losses),
        config_hash=cfg.config_hash(),
        state_trace=tuple(states),
    )


def fgsm(oracle, x, y, eps: float) -> AttackResult:
    """One signed-gradient step of size eps."""
    return _fgsm_with_cfg(oracle, x, y, AttackConfig(variant="fgsm", eps=eps, iters=1))


def _fgsm_with_cfg(oracle, x, y, cfg: AttackConfig) -> AttackResult:
    validate_image(x, pixel_domain=True)
    loss, g = oracle.loss_and_grad(x, y)
    adv = project_linf(x + cfg.eps * sign(g), x, cfg.eps)
    return _finish(oracle, x, y, adv, [loss], cfg, [StepState(x=adv)])


def ifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Iterated signed-gradient steps; the raw gradient, no momentum."""
    validate_image(x, pixel_domain=True)
    alpha = cfg.alpha
    adv = x
    losses, states = [], []
    for _ in range(cfg.iters):
        loss, g = oracle.loss_and_grad(adv, y)
        adv = project_linf(adv + alpha * sign(g), x, cfg.eps)
        losses.append(loss)
        if record_state:
            states.append(StepState(x=adv))
    return _finish(oracle, x, y, adv, losses, cfg, states)


def mifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    validate_image(x, pixel_domain=True)
    alpha = cfg.alpha
    adv = x
    g_acc = np.zeros_like(x)
    losses, states = [], []
    for _ in range(cfg.iters):
        loss, grad = oracle.loss_and_grad(adv, y)
        g_acc = cfg.mu * g_acc + _l1_direction(grad)
        adv = project_linf(adv + alpha * sign(g_acc), x, cfg.eps)
        losses.append(loss)
        if record_state:
            states.append(StepState(x=adv, g=g_acc))
    return _finish(oracle, x, y, adv, losses, cfg, states)


def nifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Momentum with the gradient taken at the unprojected lookahead point."""
    validate_image(x, pixel_domain=True)
    alpha = cfg.alpha
    adv = x
    g_acc = np.zeros_like(x)
    losses, states = [], []
    for _ in range(cfg.iters):
        lookahead = adv + alpha * cfg.mu * g_acc
        loss, grad = oracle.loss_and_grad(lookahead, y)
        g_acc = cfg.mu * g_acc + _l1_direction(grad)
        adv = project_linf(adv + alpha * sign(g_acc), x, cfg.eps)
        losses.append(loss)
        if record_state:
            states.append(StepState(x=adv, g=g_acc))
    return _finish(oracle, x, y, adv, losses, cfg, states)


def pifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Momentum with the gradient taken one raw-gradient step ahead."""
    validate_image(x, pixel_domain=True)
    alpha = cfg.alpha
    adv = x
    g_acc = np.zeros_like(x)
    g_prev = np.zeros_like(x)
    losses, states = [], []
    for _ in range(cfg.iters):
        lookahead = adv + alpha * g_prev
        loss, grad = oracle.loss_and_grad(lookahead, y)
        g_prev = grad
        g_acc = cfg.mu * g_acc + _l1_direction(grad)
        adv = project_linf(adv + alpha * sign(g_acc), x, cfg.eps)
        losses.append(loss)
        if record_state:
            states.append(StepState(x=adv, g=g_acc, g_prev=g_prev))
    return _finish(oracle, x, y, adv, losses, cfg, states)


def _sampled_variant(oracle, x, y, cfg, rng, record_state, direction_source):
    """Shared loop for the sampled-gradient variants.

    direction_source picks what the coefficients multiply:
      "avg"      the previous averaged gradient (raw)
      "momentum" the accumulated momentum
      "random"   fresh U([-1,1]^d) noise per point, scaled by alpha
    """
    validate_image(x, pixel_domain=True)
    if rng is None:
        rng = make_rng(cfg.seed)
    alpha = cfg.alpha
    n = cfg.sampling.count
    adv = x
    g_acc = np.zeros_like(x)
    g_avg = np.zeros_like(x)
    losses, states = [], []
    for _ in range(cfg.iters):
        if direction_source == "random":
            points = [adv + alpha * sample_uniform_cube(rng, x.shape) for _ in range(n)]
        else:
            base_dir = g_avg if direction_source == "avg" else g_acc
            if cfg.normalize_sample_dir:
                base_dir = _l1_direction(base_dir)
            coeffs = sample_coefficients(cfg.sampling, rng)
            points = [adv + c * base_dir for c in coeffs]
        loss_sum = 0.0
        grad_sum = None
        for pt in points:
            loss_i, g_i = oracle.loss_and_grad(pt, y)
            loss_sum += loss_i
            grad_sum = g_i if grad_sum is None else grad_sum + g_i
        g_avg = grad_sum / n
        g_acc = cfg.mu * g_acc + _l1_direction(g_avg)
        adv = project_linf(adv + alpha * sign(g_acc), x, cfg.eps)
        losses.append(loss_sum / n)
        if record_state:
            states.append(StepState(x=adv, g=g_acc, g_avg=g_avg))
    return _finish(oracle, x, y, adv, losses, cfg, states)


def emifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Momentum fed by the gradient averaged over points sampled along the
    previous averaged gradient."""
    return _sampled_variant(oracle, x, y, cfg, rng, record_state, "avg")


def enifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Sampled averaging along the accumulated momentum direction."""
    return _sampled_variant(oracle, x, y, cfg, rng, record_state, "momentum")


def erifgsm(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Sampled averaging over fresh random directions in the step-sized cube."""
    return _sampled_variant(oracle, x, y, cfg, rng, record_state, "random")


_DISPATCH = {
    "ifgsm": ifgsm,
    "mifgsm": mifgsm,
    "nifgsm": nifgsm,
    "pifgsm": pifgsm,
    "emifgsm": emifgsm,
    "enifgsm": enifgsm,
    "erifgsm": erifgsm,
}


def run_attack(oracle, x, y, cfg: AttackConfig, rng=None, record_state=False) -> AttackResult:
    """Dispatch one attack on one example."""
    if cfg.variant == "fgsm":
        return _fgsm_with_cfg(oracle, x, y, cfg)
    return _DISPATCH[cfg.variant](oracle, x, y, cfg, rng, record_state)


def attack_one(oracle, x, y, cfg: AttackConfig, example_index: int) -> AttackResult:
    """One example with its own derived stream: transform draws and attack
    sampling share the stream serially, so results are independent of how
    examples are scheduled across workers."""
    rng = derive_rng(cfg.seed, example_index)
    estimator = make_estimator(oracle, cfg.transforms, rng)
    return run_attack(estimator, x, y, cfg, rng)


def attack_batch(oracle, images, labels, cfg: AttackConfig, jobs: int = 1) -> list:
    """Attack a batch; any jobs width reproduces the jobs=1 results bit for bit."""
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    indexed = list(enumerate(zip(images, labels)))
    if jobs == 1:
        return [attack_one(oracle, x, y, cfg, i) for i, (x, y) in indexed]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(attack_one, oracle, x, y, cfg, i) for i, (x, y) in indexed]
        return [f.result() for f in futures]
