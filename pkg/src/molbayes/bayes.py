"""Seven ways to learn weights and one way to predict with them.

Modes: "none" (a MAP point), "ensemble" (MAP from several seeds),
"mcdo" (a point queried under fresh dropout masks), "bbb" (a diagonal
Gaussian over weights trained by reparameterized draws), "sgld"
(posterior samples from preconditioned Langevin dynamics), "swa"
(an averaged point) and "swag" (Gaussian moments around that average).
Every mode ends in a PosteriorRepresentation; `marginalize` turns one
into mean probabilities plus the spread-based uncertainty
u = sqrt(p(1-p)).

Models are anything exposing `n_params`, `init_params(rng)` and
`nll(tape, theta, batch, train=, rng=)`; training data is a callable
producing one epoch's batches from a seeded generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import artifacts
from . import autodiff as ad
from .errors import ConfigError, NumericError

MODES = ("none", "ensemble", "mcdo", "bbb", "sgld", "swa", "swag")

SIGMA_FLOOR = 1e-8
DIAG_FLOOR = 1e-30

# one generator per purpose, all derived from the run seed
STREAM_IDS = {
    "init": 0,
    "shuffle": 1,
    "dropout": 2,
    "sgld-noise": 3,
    "swag-draw": 4,
    "bbb-noise": 5,
    "split": 6,
    "eval-draw": 7,
}


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Named RNG stream; streams never overlap across purposes or seeds."""
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), STREAM_IDS[purpose])))


def member_seed(seed: int, index: int) -> int:
    """Derived integer seed for ensemble member ``index``."""
    ss = np.random.SeedSequence((int(seed), 1000, int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class FlatModel(Protocol):
    n_params: int

    def init_params(self, rng: np.random.Generator) -> np.ndarray: ...

    def nll(self, tape: ad.Tape, theta: ad.Tensor, batch,
            train: bool = False,
            rng: Optional[np.random.Generator] = None) -> ad.Tensor: ...


@dataclass
class TrainData:
    """Epoch batches come from a callable so shuffling stays seeded."""

    epoch_batches: Callable[[np.random.Generator], Sequence]
    n_examples: int


# ---------------------------------------------------------------------------
# schedules


@dataclass
class TrainSchedule:
    mode: str
    epochs: int
    optimizer: str            # "adam" or "sgd"
    lr: float
    decay_points: tuple[int, ...] = ()
    weight_decay: float = 1e-4
    burn_in: int = 0          # sgld: epochs before sampling starts
    cadence: int = 1          # sample every this many epochs
    cyclic_from: int = 0      # swa/swag: cyclic lr after this epoch (0 = off)
    cyclic_high: float = 0.01
    cyclic_low: float = 0.001
    cycle_len: int = 4
    train_samples: int = 5    # bbb reparameterized draws per step
    eval_samples: int = 30    # marginalization draws (bbb overrides to 100)
    swag_rank: int = 20

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; one of {MODES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.burn_in < self.epochs:
            raise ConfigError("burn-in must be < total epochs")
        if self.cadence < 1:
            raise ConfigError("sampling cadence must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def default_schedule(mode: str, epochs: Optional[int] = None) -> TrainSchedule:
    """Per-mode training recipes; ``epochs`` rescales proportionally.

    Adam modes run 200 epochs at 1e-3 with tenfold decays after epochs 80
    and 160. SWA/SWAG run SGD 250 epochs: 0.1, then 0.01 after epoch 74,
    then a 4-epoch sawtooth between 0.01 and 0.001 after epoch 150, with a
    snapshot at each cycle end. SGLD runs 200 epochs at a constant 1e-3,
    sampling every 2nd epoch after 100 burn-in epochs.
    """
    if mode in ("none", "ensemble", "mcdo", "bbb"):
        base = TrainSchedule(mode=mode, epochs=200, optimizer="adam",
                             lr=1e-3, decay_points=(80, 160))
    elif mode == "sgld":
        base = TrainSchedule(mode=mode, epochs=200, optimizer="sgd", lr=1e-3,
                             burn_in=100, cadence=2)
    elif mode in ("swa", "swag"):
        base = TrainSchedule(mode=mode, epochs=250, optimizer="sgd", lr=0.1,
                             decay_points=(74,), cyclic_from=150, cadence=4)
    else:
        raise ConfigError(f"unknown mode {mode!r}; one of {MODES}")
    if mode == "bbb":
        base.eval_samples = 100
    if epochs is None or epochs == base.epochs:
        return base
    scale = epochs / base.epochs
    base.epochs = epochs
    base.decay_points = tuple(max(1, int(round(p * scale)))
                              for p in base.decay_points)
    base.burn_in = int(round(base.burn_in * scale))
    base.cyclic_from = int(round(base.cyclic_from * scale))
    if base.burn_in >= epochs:
        base.burn_in = max(0, epochs - 1)
    return base


def lr_at(s: TrainSchedule, epoch: int) -> float:
    """Learning rate for a 1-indexed epoch."""
    if epoch < 1 or epoch > s.epochs:
        raise ConfigError(f"epoch {epoch} outside schedule 1..{s.epochs}")
    if s.cyclic_from and epoch > s.cyclic_from:
        f = ((epoch - s.cyclic_from - 1) % s.cycle_len) / (s.cycle_len - 1)
        return (1.0 - f) * s.cyclic_high + f * s.cyclic_low
    lr = s.lr
    for p in s.decay_points:
        if epoch > p:
            lr *= 0.1
    return lr


def is_snapshot_epoch(s: TrainSchedule, epoch: int) -> bool:
    """Whether this 1-indexed epoch contributes a posterior sample."""
    if s.mode == "sgld":
        return epoch > s.burn_in and (epoch - s.burn_in) % s.cadence == 0
    if s.mode in ("swa", "swag"):
        start = s.cyclic_from
        return epoch > start and (epoch - start) % s.cadence == 0
    return False


# ---------------------------------------------------------------------------
# posterior representations


@dataclass
class PosteriorRepresentation:
    mode: str                 # "point" | "samples" | "bbb" | "swag"
    digest: str
    point: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None      # (S, n)
    mu: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    swag_mean: Optional[np.ndarray] = None
    swag_sq_mean: Optional[np.ndarray] = None
    swag_dev: Optional[np.ndarray] = None     # (n, K)
    swag_rank: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode == "point":
            if self.point is None:
                raise ConfigError("point posterior needs parameters")
        elif self.mode == "samples":
            if self.samples is None or len(self.samples) == 0:
                raise ConfigError("sample posterior needs >= 1 sample")
        elif self.mode == "bbb":
            if self.mu is None or self.rho is None:
                raise ConfigError("bbb posterior needs mu and rho")
        elif self.mode == "swag":
            if self.swag_mean is None or self.swag_sq_mean is None \
                    or self.swag_dev is None:
                raise ConfigError("swag posterior needs mean/sq_mean/dev")
            if self.swag_dev.shape[1] > self.swag_rank:
                raise ConfigError("deviation columns exceed the stated rank")
        else:
            raise ConfigError(f"unknown posterior mode {self.mode!r}")

    @property
    def bbb_sigma(self) -> np.ndarray:
        return np.maximum(_softplus(self.rho), SIGMA_FLOOR)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


def save_posterior(path: str, post: PosteriorRepresentation) -> None:
    arrays = {}
    for name in ("point", "samples", "mu", "rho", "swag_mean",
                 "swag_sq_mean", "swag_dev"):
        value = getattr(post, name)
        if value is not None:
            arrays[name] = np.asarray(value, dtype=np.float64)
    meta = {"mode": post.mode, "digest": post.digest,
            "swag_rank": post.swag_rank, "extra": post.meta}
    artifacts.write_container(path, "posterior", meta, arrays)


def load_posterior(path: str) -> PosteriorRepresentation:
    _, meta, arrays = artifacts.read_container(path, expect_kind="posterior")
    return PosteriorRepresentation(
        mode=meta["mode"], digest=meta["digest"],
        swag_rank=int(meta.get("swag_rank", 0)),
        meta=meta.get("extra", {}), **arrays)


# ---------------------------------------------------------------------------
# predictive distributions


@dataclass
class PredictiveDistribution:
    mean: np.ndarray          # (B, T) probabilities
    n_samples: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if not np.all(np.isfinite(self.mean)):
            raise NumericError("non-finite predictive probabilities")
        if self.mean.min(initial=0.0) < 0 or self.mean.max(initial=0.0) > 1:
            raise NumericError("predictive probabilities outside [0, 1]")

    @property
    def uncertainty(self) -> np.ndarray:
        return np.sqrt(self.mean * (1.0 - self.mean))


def combine_predictive(parts: Sequence[PredictiveDistribution]
                       ) -> PredictiveDistribution:
    """Average the member means; the multi-posterior ensemble rule."""
    if not parts:
        raise ConfigError("nothing to combine")
    stack = np.stack([p.mean for p in parts])
    return PredictiveDistribution(stack.mean(axis=0),
                                  sum(p.n_samples for p in parts))


# ---------------------------------------------------------------------------
# shared training loop pieces


def _grad_flat(model: FlatModel, flat: np.ndarray, batch,
               train: bool = False,
               rng: Optional[np.random.Generator] = None
               ) -> tuple[float, np.ndarray]:
    tape = ad.Tape()
    theta = tape.parameter("theta", flat)
    loss = model.nll(tape, theta, batch, train=train, rng=rng)
    grads = ad.backward(tape, loss)
    return loss.item(), grads["theta"]


def _check_finite(loss: float, epoch: int):
    if not np.isfinite(loss):
        raise NumericError(f"training diverged (loss {loss}) at epoch "
                           f"{epoch}")


def train_map(model: FlatModel, data: TrainData, schedule: TrainSchedule,
              seed: int, dropout: bool = False,
              valid_eval: Optional[Callable[[np.ndarray], dict]] = None
              ) -> tuple[PosteriorRepresentation, list[dict]]:
    """Point estimate by stochastic optimization of the penalized NLL.

    ``dropout=True`` activates the model's residual dropout during
    training (the mc-dropout recipe); prediction-time dropout is the
    mc_dropout_predict op's business.
    """
    init_rng = stream(seed, "init")
    shuffle_rng = stream(seed, "shuffle")
    dropout_rng = stream(seed, "dropout") if dropout else None
    flat = model.init_params(init_rng)
    opt = ad.OptimizerState(mode=schedule.optimizer, lr=schedule.lr,
                            weight_decay=schedule.weight_decay)
    log: list[dict] = []
    for epoch in range(1, schedule.epochs + 1):
        opt.lr = lr_at(schedule, epoch)
        losses = []
        for batch in data.epoch_batches(shuffle_rng):
            loss, grad = _grad_flat(model, flat, batch, train=dropout,
                                    rng=dropout_rng)
            _check_finite(loss, epoch)
            try:
                flat = ad.optimizer_step(opt, flat, grad)
            except NumericError as e:
                raise NumericError(f"{e} at epoch {epoch}") from None
            losses.append(loss)
        entry = {"epoch": epoch, "lr": opt.lr,
                 "loss": float(np.mean(losses))}
        if valid_eval is not None:
            entry.update(valid_eval(flat))
        log.append(entry)
    digest = getattr(model, "digest", "")
    post = PosteriorRepresentation(mode="point", digest=digest, point=flat,
                                   meta={"trained": schedule.mode,
                                         "seed": int(seed)})
    return post, log


def train_ensemble(model: FlatModel, data: TrainData,
                   schedule: TrainSchedule, seed: int, m_members: int = 10,
                   member_seeds: Optional[Sequence[int]] = None,
                   valid_eval: Optional[Callable] = None
                   ) -> tuple[PosteriorRepresentation, list[dict]]:
    """Independent MAP runs differing only in derived member seeds."""
    if member_seeds is None:
        if m_members < 2:
            raise ConfigError("an ensemble needs at least 2 members")
        member_seeds = [member_seed(seed, i) for i in range(m_members)]
    elif len(member_seeds) < 2:
        raise ConfigError("an ensemble needs at least 2 members")
    members, logs, failed = [], [], []
    for i, s in enumerate(member_seeds):
        try:
            post, log = train_map(model, data, schedule, s,
                                  valid_eval=valid_eval)
        except NumericError as e:
            failed.append({"member": i, "error": str(e)})
            continue
        members.append(post.point)
        logs.append({"member": i, "seed": int(s), "log": log})
    if len(members) < 2:
        raise NumericError(
            f"only {len(members)} ensemble members survived training; "
            f"failures: {failed}")
    post = PosteriorRepresentation(
        mode="samples", digest=getattr(model, "digest", ""),
        samples=np.stack(members),
        meta={"trained": "ensemble", "seed": int(seed), "failed": failed})
    return post, logs


# ---------------------------------------------------------------------------
# mc-dropout


def mc_dropout_predict(predict: Callable[[np.random.Generator], np.ndarray],
                       n_passes: int,
                       rng: np.random.Generator) -> PredictiveDistribution:
    """Average ``n_passes`` stochastic forward passes.

    ``predict`` maps a generator (supplying fresh dropout masks) to a
    probability array; the caller closes it over params and batch.
    """
    if n_passes < 1:
        raise ConfigError("mc-dropout needs at least one pass")
    draws = np.stack([predict(rng) for _ in range(n_passes)])
    return PredictiveDistribution(draws.mean(axis=0), n_passes)


# ---------------------------------------------------------------------------
# bayes by backprop


def kl_diag_gaussians(mu: np.ndarray, sigma: np.ndarray,
                      sigma0: float) -> float:
    """KL( N(mu, diag sigma^2) || N(0, sigma0^2 I) ), closed form."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or sigma0 <= 0:
        raise ValueError("standard deviations must be positive")
    return float(np.sum(np.log(sigma0 / sigma)
                        + (sigma * sigma + mu * mu) / (2.0 * sigma0 * sigma0)
                        - 0.5))


def _kl_tensor(mu_t: ad.Tensor, sigma_t: ad.Tensor,
               sigma0: float) -> ad.Tensor:
    quad = ad.div(ad.add(ad.mul(sigma_t, sigma_t), ad.mul(mu_t, mu_t)),
                  2.0 * sigma0 * sigma0)
    per_coord = ad.sub(ad.add(ad.sub(float(np.log(sigma0)),
                                     ad.log(sigma_t)), quad), 0.5)
    return ad.tsum(per_coord)


def train_bbb(model: FlatModel, data: TrainData, schedule: TrainSchedule,
              seed: int, kl_scale: float = 0.01, prior_sigma: float = 10.0,
              sigma_init: float = 0.05,
              noise_rng: Optional[np.random.Generator] = None,
              valid_eval: Optional[Callable[[np.ndarray], dict]] = None
              ) -> tuple[PosteriorRepresentation, list[dict]]:
    """Fit a diagonal Gaussian over weights by reparameterized draws.

    Per step the objective is the mean NLL over ``schedule.train_samples``
    draws w = mu + softplus(rho) * z plus kl_scale * KL / n_examples, so
    the prior's pull is per-example and batch-size independent.
    """
    n = model.n_params
    init_rng = stream(seed, "init")
    shuffle_rng = stream(seed, "shuffle")
    if noise_rng is None:
        noise_rng = stream(seed, "bbb-noise")
    mu = model.init_params(init_rng)
    rho = np.full(n, _softplus_inv(sigma_init))
    opt = ad.OptimizerState(mode=schedule.optimizer, lr=schedule.lr,
                            weight_decay=0.0)  # the KL term is the prior
    n_draws = max(1, schedule.train_samples)
    log: list[dict] = []
    for epoch in range(1, schedule.epochs + 1):
        opt.lr = lr_at(schedule, epoch)
        losses = []
        for batch in data.epoch_batches(shuffle_rng):
            tape = ad.Tape()
            mu_t = tape.parameter("mu", mu)
            rho_t = tape.parameter("rho", rho)
            sigma_t = ad.clip_min(ad.softplus(rho_t), SIGMA_FLOOR)
            total = None
            for _ in range(n_draws):
                z = noise_rng.standard_normal(n)
                theta = ad.add(mu_t, ad.mul(sigma_t, z))
                nll = model.nll(tape, theta, batch)
                total = nll if total is None else ad.add(total, nll)
            loss_t = ad.div(total, float(n_draws))
            if kl_scale != 0.0:
                kl = _kl_tensor(mu_t, sigma_t, prior_sigma)
                loss_t = ad.add(loss_t,
                                ad.mul(kl, kl_scale / data.n_examples))
            _check_finite(loss_t.item(), epoch)
            grads = ad.backward(tape, loss_t)
            joint = np.concatenate([grads["mu"], grads["rho"]])
            try:
                new = ad.optimizer_step(opt, np.concatenate([mu, rho]),
                                        joint)
            except NumericError as e:
                raise NumericError(f"{e} at epoch {epoch}") from None
            mu, rho = new[:n], new[n:]
            losses.append(loss_t.item())
        entry = {"epoch": epoch, "lr": opt.lr,
                 "loss": float(np.mean(losses))}
        if valid_eval is not None:
            entry.update(valid_eval(mu))
        log.append(entry)
    n_clamped = int(np.sum(_softplus(rho) < SIGMA_FLOOR))
    if n_clamped:
        warnings.warn(f"{n_clamped} posterior scales collapsed below "
                      f"{SIGMA_FLOOR} and were clamped")
    post = PosteriorRepresentation(
        mode="bbb", digest=getattr(model, "digest", ""), mu=mu, rho=rho,
        meta={"trained": "bbb", "seed": int(seed), "kl_scale": kl_scale,
              "prior_sigma": prior_sigma, "n_sigma_clamped": n_clamped})
    return post, log


# ---------------------------------------------------------------------------
# stochastic gradient langevin dynamics


@dataclass
class PsgldState:
    """RMS preconditioner accumulator for pSGLD."""

    v: np.ndarray
    alpha: float = 0.99
    lam: float = 1e-8


def psgld_step(state: PsgldState, params: np.ndarray,
               grad_log_post: np.ndarray, lr: float,
               rng: np.random.Generator, precondition: bool = True,
               noise: bool = True) -> np.ndarray:
    """One Langevin step ascending the log posterior.

    delta = (lr/2) G grad + sqrt(lr G) z with G the RMS preconditioner
    (identity when ``precondition`` is off). ``noise=False`` reduces the
    step to plain gradient ascent, i.e. SGD on the negative log posterior
    at rate lr/2.
    """
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad_log_post, dtype=np.float64)
    if g.shape != params.shape or state.v.shape != params.shape:
        raise ad.ShapeError(f"shape mismatch: params {params.shape}, "
                            f"grad {g.shape}, v {state.v.shape}")
    if precondition:
        state.v = state.alpha * state.v + (1.0 - state.alpha) * g * g
        G = 1.0 / (np.sqrt(state.v) + state.lam)
    else:
        G = np.ones_like(params)
    delta = 0.5 * lr * G * g
    if noise:
        delta = delta + np.sqrt(lr * G) * rng.standard_normal(params.shape)
    new = params + delta
    if not np.all(np.isfinite(new)):
        raise NumericError("sgld update produced non-finite parameters")
    return new


def train_sgld(model: FlatModel, data: TrainData, schedule: TrainSchedule,
               seed: int, precondition: bool = True,
               valid_eval: Optional[Callable[[np.ndarray], dict]] = None
               ) -> tuple[PosteriorRepresentation, list[dict]]:
    """Collect end-of-epoch weight samples after burn-in.

    The log-posterior gradient is assembled from the batch mean NLL as
    -(N * grad_nll + weight_decay * w): the decay coefficient doubles as
    an isotropic Gaussian prior precision.
    """
    init_rng = stream(seed, "init")
    shuffle_rng = stream(seed, "shuffle")
    noise_rng = stream(seed, "sgld-noise")
    flat = model.init_params(init_rng)
    state = PsgldState(v=np.zeros(model.n_params))
    n = float(data.n_examples)
    samples: list[np.ndarray] = []
    log: list[dict] = []
    for epoch in range(1, schedule.epochs + 1):
        lr = lr_at(schedule, epoch)
        losses = []
        for batch in data.epoch_batches(shuffle_rng):
            loss, grad = _grad_flat(model, flat, batch)
            _check_finite(loss, epoch)
            glp = -(n * grad + schedule.weight_decay * flat)
            try:
                flat = psgld_step(state, flat, glp, lr, noise_rng,
                                  precondition=precondition)
            except NumericError as e:
                raise NumericError(f"{e} at epoch {epoch}") from None
            losses.append(loss)
        if is_snapshot_epoch(schedule, epoch):
            samples.append(flat.copy())
        entry = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)),
                 "n_samples": len(samples)}
        if valid_eval is not None:
            entry.update(valid_eval(flat))
        log.append(entry)
    if not samples:
        raise ConfigError("schedule produced zero posterior samples")
    post = PosteriorRepresentation(
        mode="samples", digest=getattr(model, "digest", ""),
        samples=np.stack(samples),
        meta={"trained": "sgld", "seed": int(seed),
              "precondition": bool(precondition)})
    return post, log


# ---------------------------------------------------------------------------
# weight averaging


def swa_update(mean: np.ndarray, snapshot: np.ndarray, k: int) -> np.ndarray:
    """Running mean after k previous snapshots: (k*mean + w) / (k+1)."""
    mean = np.asarray(mean, dtype=np.float64)
    snapshot = np.asarray(snapshot, dtype=np.float64)
    if mean.shape != snapshot.shape:
        raise ad.ShapeError(f"mean {mean.shape} vs snapshot "
                            f"{snapshot.shape}")
    if k < 0:
        raise ConfigError("snapshot count cannot be negative")
    return (k * mean + snapshot) / (k + 1.0)


def train_swa_swag(model: FlatModel, data: TrainData,
                   schedule: TrainSchedule, seed: int, variant: str = "swag",
                   valid_eval: Optional[Callable[[np.ndarray], dict]] = None
                   ) -> tuple[PosteriorRepresentation, list[dict]]:
    """SGD with a cyclic tail; cycle-end snapshots feed running moments."""
    if variant not in ("swa", "swag"):
        raise ConfigError(f"variant must be swa or swag, got {variant!r}")
    init_rng = stream(seed, "init")
    shuffle_rng = stream(seed, "shuffle")
    flat = model.init_params(init_rng)
    opt = ad.OptimizerState(mode=schedule.optimizer, lr=schedule.lr,
                            weight_decay=schedule.weight_decay)
    mean = np.zeros(model.n_params)
    sq_mean = np.zeros(model.n_params)
    dev_cols: list[np.ndarray] = []
    k = 0
    log: list[dict] = []
    for epoch in range(1, schedule.epochs + 1):
        opt.lr = lr_at(schedule, epoch)
        losses = []
        for batch in data.epoch_batches(shuffle_rng):
            loss, grad = _grad_flat(model, flat, batch)
            _check_finite(loss, epoch)
            try:
                flat = ad.optimizer_step(opt, flat, grad)
            except NumericError as e:
                raise NumericError(f"{e} at epoch {epoch}") from None
            losses.append(loss)
        if is_snapshot_epoch(schedule, epoch):
            mean = swa_update(mean, flat, k)
            sq_mean = swa_update(sq_mean, flat * flat, k)
            k += 1
            dev_cols.append(flat - mean)
            if len(dev_cols) > schedule.swag_rank:
                dev_cols.pop(0)
        entry = {"epoch": epoch, "lr": opt.lr, "loss": float(np.mean(losses)),
                 "n_snapshots": k}
        if valid_eval is not None:
            entry.update(valid_eval(flat if k == 0 else mean))
        log.append(entry)
    if k == 0:
        raise ConfigError("schedule produced zero snapshots to average")
    meta = {"trained": variant, "seed": int(seed), "n_snapshots": k}
    if variant == "swa":
        post = PosteriorRepresentation(mode="point",
                                       digest=getattr(model, "digest", ""),
                                       point=mean, meta=meta)
        return post, log
    if k < 2:
        raise ConfigError("swag needs at least 2 snapshots")
    post = PosteriorRepresentation(
        mode="swag", digest=getattr(model, "digest", ""), swag_mean=mean,
        swag_sq_mean=sq_mean, swag_dev=np.stack(dev_cols, axis=1),
        swag_rank=schedule.swag_rank, meta=meta)
    return post, log


def swag_sample(post: PosteriorRepresentation, rng: np.random.Generator,
                scale: float = 1.0) -> np.ndarray:
    """Draw weights from the half-diagonal plus low-rank Gaussian."""
    if post.mode != "swag":
        raise ConfigError("swag_sample needs a swag posterior")
    mean = post.swag_mean
    diag = np.maximum(post.swag_sq_mean - mean * mean, DIAG_FLOOR)
    draw = np.sqrt(0.5 * diag) * rng.standard_normal(mean.shape)
    K = post.swag_dev.shape[1]
    if K >= 2:
        z2 = rng.standard_normal(K)
        draw = draw + (post.swag_dev @ z2) / np.sqrt(2.0 * (K - 1))
    else:
        warnings.warn("fewer than 2 deviation columns; "
                      "sampling the diagonal only")
    return mean + scale * draw


# ---------------------------------------------------------------------------
# marginalization


def marginalize(predict: Callable[[np.ndarray], np.ndarray],
                post: PosteriorRepresentation, n_samples: int = 30,
                rng: Optional[np.random.Generator] = None,
                scale: float = 1.0) -> PredictiveDistribution:
    """Probability-space average of per-draw predictions.

    ``predict`` maps one flat weight vector to probabilities. Point
    posteriors ignore n_samples; sample sets use every stored member;
    bbb and swag draw ``n_samples`` fresh weight vectors from ``rng``.
    """
    if post.mode == "point":
        draws = [predict(post.point)]
    elif post.mode == "samples":
        draws = [predict(s) for s in post.samples]
    else:
        if n_samples < 1:
            raise ConfigError("need at least one marginalization draw")
        if rng is None:
            raise ConfigError(f"{post.mode} marginalization needs an rng")
        if post.mode == "bbb":
            sigma = post.bbb_sigma
            draws = [predict(post.mu + sigma * rng.standard_normal(
                post.mu.shape)) for _ in range(n_samples)]
        else:
            draws = [predict(swag_sample(post, rng, scale=scale))
                     for _ in range(n_samples)]
    probs = np.stack(draws)
    return PredictiveDistribution(probs.mean(axis=0), len(draws))
