"""Multi-task encoder/decoder/classifier network with the three-phase
training protocol (autoencoder cold start, frozen-decoder supervised phase,
end-to-end multi-task phase). Plain mini-batch SGD, numpy throughout."""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .baselines import _binary_targets, _check_features


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 2.0
    lambda2: float = 0.5
    class_weights: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambdas must be positive")
        if any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")


@dataclass(frozen=True)
class TrainSchedule:
    phase1_epochs: int = 10
    phase1_lr: float = 1e-8
    phase2_epochs: int = 10
    phase2_lr: float = 4e-4
    phase3_epochs: int = 15
    phase3_lr: float = 4e-5
    batch_size: int = 32
    seed: int = 0
    # global gradient-norm ceiling per batch; stabilizes the joint phase
    # without touching the pinned learning rates
    clip_norm: float = 10.0

    @classmethod
    def small(cls, seed: int = 0) -> "TrainSchedule":
        return cls(batch_size=32, seed=seed)

    @classmethod
    def large(cls, seed: int = 0) -> "TrainSchedule":
        return cls(batch_size=1024, seed=seed)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias_init: float = 0.0):
        # He-style init suits the ReLU stacks used here; hidden layers take a
        # small positive bias so narrow ReLU units start alive.
        self.W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.b = np.full(n_out, bias_init, dtype=float)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad: np.ndarray, accumulate: bool = True) -> np.ndarray:
        if accumulate:
            self.gW += self._x.T @ grad
            self.gb += grad.sum(axis=0)
        return grad @ self.W.T

    def params(self):
        return [("W", self.W, self.gW), ("b", self.b, self.gb)]

    def zero_grad(self):
        self.gW[:] = 0.0
        self.gb[:] = 0.0


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad: np.ndarray, accumulate: bool = True) -> np.ndarray:
        return grad * self._mask

    def params(self):
        return []

    def zero_grad(self):
        pass


class Dropout:
    """Inverted dropout: active only in train mode, identity at eval."""

    def __init__(self, p: float = 0.5):
        self.p = p
        self._mask = None

    def forward(self, x: np.ndarray, rng: Optional[np.random.Generator] = None,
                mask: np.ndarray = None) -> np.ndarray:
        if mask is not None:
            self._mask = mask
        elif rng is not None and self.p > 0:
            self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        else:
            self._mask = None
        return x if self._mask is None else x * self._mask

    def backward(self, grad: np.ndarray, accumulate: bool = True) -> np.ndarray:
        return grad if self._mask is None else grad * self._mask

    def params(self):
        return []

    def zero_grad(self):
        pass


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss_grad(
    logits: np.ndarray, targets: np.ndarray, class_weights: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Class-weighted softmax cross entropy, mean over the batch."""
    B = logits.shape[0]
    probs = softmax(logits)
    w = class_weights[targets]
    ll = -np.log(probs[np.arange(B), targets] + 1e-300)
    loss = float((w * ll).mean())
    grad = probs.copy()
    grad[np.arange(B), targets] -= 1.0
    grad *= (w / B)[:, None]
    return loss, grad


def reconstruction_loss_grad(recon: np.ndarray, x: np.ndarray) -> Tuple[float, np.ndarray]:
    """Squared L2 distance summed over dimensions, mean over the batch."""
    diff = recon - x
    loss = float((diff ** 2).sum(axis=1).mean())
    grad = 2.0 * diff / x.shape[0]
    return loss, grad


def multitask_loss(
    logits: np.ndarray,
    reconstruction: np.ndarray,
    x: np.ndarray,
    targets: np.ndarray,
    cfg: LossConfig,
) -> Tuple[float, Dict[str, float]]:
    """total = lambda1 * L_ce + lambda2 * L_rc, plus the per-term breakdown."""
    l_ce, _ = cross_entropy_loss_grad(logits, targets, np.asarray(cfg.class_weights))
    l_rc, _ = reconstruction_loss_grad(reconstruction, x)
    total = cfg.lambda1 * l_ce + cfg.lambda2 * l_rc
    return total, {"l_ce": l_ce, "l_rc": l_rc, "total": total}


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def encoder_widths(n: int) -> List[int]:
    """Five halvings with integer floor, clamped at width 2."""
    widths = [n]
    for _ in range(5):
        widths.append(max(2, widths[-1] // 2))
    return widths


class MultiTaskNetwork:
    """Encoder (5 dense layers, each halving, ReLU + dropout 0.5), decoder
    (2 dense layers back to n), classifier (2 dense layers to 2 logits)."""

    def __init__(self, input_dim: int, seed: int = 0, dropout: float = 0.5,
                 with_decoder: bool = True):
        rng = np.random.default_rng([seed, 1])
        widths = encoder_widths(input_dim)
        self.input_dim = input_dim
        self.latent_dim = widths[-1]
        self.dropout_p = dropout
        self.with_decoder = with_decoder

        self.encoder: List = []
        for a, b in zip(widths, widths[1:]):
            self.encoder.extend([Dense(a, b, rng, bias_init=0.01), ReLU(), Dropout(dropout)])
        if with_decoder:
            mid = max(2, input_dim // 2)
            out = Dense(mid, input_dim, rng)
            # Zero-init the reconstruction output layer: an untrained decoder
            # then contributes no gradient pressure on the latent code, so the
            # joint phase cannot shrink the latent before the decoder has
            # learned anything useful.
            out.W[:] = 0.0
            self.decoder = [Dense(self.latent_dim, mid, rng, bias_init=0.01), ReLU(), out]
        else:
            self.decoder = []
        hid = max(4, self.latent_dim)
        self.classifier = [Dense(self.latent_dim, hid, rng, bias_init=0.01), ReLU(), Dense(hid, 2, rng)]

    # -- forward/backward --------------------------------------------------

    def forward(self, x: np.ndarray, train_mode: bool = False,
                rng: Optional[np.random.Generator] = None):
        x = np.atleast_2d(x)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} features, got {x.shape[1]}")
        h = x
        for layer in self.encoder:
            if isinstance(layer, Dropout):
                h = layer.forward(h, rng=rng if train_mode else None)
            else:
                h = layer.forward(h)
        latent = h
        recon = latent
        for layer in self.decoder:
            recon = layer.forward(recon)
        if not self.with_decoder:
            recon = np.zeros_like(x)
        logits = latent
        for layer in self.classifier:
            logits = layer.forward(logits)
        return logits, recon, latent

    def backward(self, grad_logits: np.ndarray, grad_recon: np.ndarray,
                 frozen: frozenset = frozenset()):
        """Backprop both heads; gradients of frozen module groups are not
        accumulated (their buffers stay zero)."""
        g_cls = grad_logits
        for layer in reversed(self.classifier):
            g_cls = layer.backward(g_cls, accumulate="classifier" not in frozen)
        g_dec = None
        if self.with_decoder and grad_recon is not None:
            g_dec = grad_recon
            for layer in reversed(self.decoder):
                g_dec = layer.backward(g_dec, accumulate="decoder" not in frozen)
        g = g_cls if g_dec is None else g_cls + g_dec
        for layer in reversed(self.encoder):
            g = layer.backward(g, accumulate="encoder" not in frozen)
        return g

    # -- parameter plumbing -------------------------------------------------

    def modules(self) -> Dict[str, list]:
        return {"encoder": self.encoder, "decoder": self.decoder,
                "classifier": self.classifier}

    def parameters(self, groups: Sequence[str] = ("encoder", "decoder", "classifier")):
        for name, layers in self.modules().items():
            if name not in groups:
                continue
            for layer in layers:
                for pname, p, g in layer.params():
                    yield f"{name}.{pname}", p, g

    def zero_grad(self):
        for layers in self.modules().values():
            for layer in layers:
                layer.zero_grad()

    def sgd_step(self, lr: float, frozen: frozenset = frozenset(),
                 clip_norm: Optional[float] = None):
        groups = tuple(g for g in ("encoder", "decoder", "classifier") if g not in frozen)
        scale = 1.0
        if clip_norm is not None and clip_norm > 0:
            sq = sum(float(np.sum(g * g)) for _, _, g in self.parameters(groups))
            norm = np.sqrt(sq)
            if norm > clip_norm:
                scale = clip_norm / norm
        for _, p, g in self.parameters(groups):
            p -= lr * scale * g

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for _, p, _ in self.parameters()])

    def load_flat_parameters(self, flat: np.ndarray):
        i = 0
        for _, p, _ in self.parameters():
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ValueError("parameter blob size mismatch")


# ---------------------------------------------------------------------------
# Training protocol
# ---------------------------------------------------------------------------

VARIANTS = ("multitask", "classifier_only", "no_decoder")

# Phase 2 trains encoder and classifier with the decoder frozen; with the
# warm-started head the classification gradient refines the code instead of
# eroding it.
_PHASE2_FROZEN = frozenset({"decoder"})


def pca_passthrough_init(net: MultiTaskNetwork, X: np.ndarray) -> None:
    """Unsupervised data-dependent initialization of the encoder stack.

    The first layer splits each of the top principal projections of ``X``
    (scaled to unit variance) into a rectified pair (+p, -p); every later
    layer routes those pairs through unchanged. The latent code therefore
    starts as the sign-split top principal projections of the input — a
    lossless rectified encoding of what a trained linear autoencoder would
    produce — so the supervised phases start from an informative code
    instead of a random rectified cascade. The pairs are zero-mean-heavy
    and small in magnitude, which keeps the latent dropout noise on the
    same scale as the signal. Columns not needed for the passthrough are
    zero-weight with a small alive bias so gradients can recruit them.
    """
    Xc = X - X.mean(axis=0)
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    n = X.shape[0]
    floor = max(S[0] * 1e-6, 1e-12) if S.size else 1e-12
    proj = Vt * (np.sqrt(n) / np.maximum(S, floor))[:, None]
    dense = [layer for layer in net.encoder if isinstance(layer, Dense)]
    # number of principal components carried: limited by the pair capacity
    # of every encoder layer (including the latent) and the available PCs
    m = min(min(layer.W.shape[1] for layer in dense) // 2, proj.shape[0])

    first = dense[0]
    first.W[:] = 0.0
    first.b[:] = 0.01
    for i in range(m):
        first.W[:, 2 * i] = proj[i]
        first.W[:, 2 * i + 1] = -proj[i]
        first.b[2 * i : 2 * i + 2] = 0.0
    for layer in dense[1:]:
        layer.W[:] = 0.0
        layer.b[:] = 0.01
        for i in range(2 * m):
            layer.W[i, i] = 1.0
            layer.b[i] = 0.0


def linear_probe_head_init(net: MultiTaskNetwork, latent: np.ndarray,
                           targets: np.ndarray) -> None:
    """Warm-start the classifier head from a logistic fit on the initial
    latent code (a linear probe). The first head layer routes the latent
    through unchanged (the latent is non-negative, so its ReLU is exact)
    and the output layer carries the probe's decision function in logit
    column 1. Training then refines an already-informative head instead of
    escaping a random one under the protocol's fixed learning rates.
    """
    from .baselines import LogisticRegressionClassifier

    first, out = [l for l in net.classifier if isinstance(l, Dense)]
    d = first.W.shape[0]
    first.W[:] = 0.0
    first.b[:] = 0.01
    for i in range(d):
        first.W[i, i] = 1.0
        first.b[i] = 0.0
    probe = LogisticRegressionClassifier(C=10.0).fit(latent, targets)
    out.W[:] = 0.0
    out.b[:] = 0.0
    out.W[:d, 1] = probe.weights_ * (1.0 if probe.classes_[1] == 1 else -1.0)
    out.b[1] = probe.bias_ * (1.0 if probe.classes_[1] == 1 else -1.0)


@dataclass
class EpochMetrics:
    phase: int
    epoch: int
    l_ce: float
    l_rc: float
    accuracy: float


class MultiTaskClassifier(BaseEstimator, ClassifierMixin):
    """Multi-task deep classifier over embedding features.

    Variants share one code path:
      * ``multitask``        - phase 1 (autoencoder cold start), phase 2
        (decoder frozen, classification loss), phase 3 (full joint loss).
      * ``classifier_only``  - same phases but lambda2 = 0 after phase 1
        (the plain-NN ablation).
      * ``no_decoder``       - no decoder and no phase 1; phases 2 and 3 run
        with the classification loss only.

    Features are standardized per dimension with training-split statistics.
    """

    def __init__(
        self,
        schedule: TrainSchedule = None,
        loss_cfg: LossConfig = None,
        variant: str = "multitask",
        dropout: float = 0.5,
        auto_class_weights: bool = False,
        standardize: bool = True,
        encoder_init: str = "pca",
    ):
        self.schedule = schedule
        self.loss_cfg = loss_cfg
        self.variant = variant
        self.dropout = dropout
        self.auto_class_weights = auto_class_weights
        self.standardize = standardize
        self.encoder_init = encoder_init

    # -- fitting -------------------------------------------------------------

    def fit(self, X, y):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        X = _check_features(X)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        t, self.classes_ = _binary_targets(y)
        schedule = self.schedule or TrainSchedule()
        loss_cfg = self.loss_cfg or LossConfig()
        if self.auto_class_weights:
            freq = np.bincount(t, minlength=2) / t.shape[0]
            w = 1.0 / np.maximum(freq, 1e-12)
            w = w / w.mean()  # normalized to mean 1
            loss_cfg = LossConfig(loss_cfg.lambda1, loss_cfg.lambda2, tuple(w))
        self.loss_cfg_ = loss_cfg

        self.mean_ = X.mean(axis=0) if self.standardize else np.zeros(X.shape[1])
        sd = X.std(axis=0) if self.standardize else np.ones(X.shape[1])
        self.sd_ = np.where(sd > 0, sd, 1.0)
        Xs = (X - self.mean_) / self.sd_

        with_decoder = self.variant != "no_decoder"
        self.network_ = MultiTaskNetwork(
            X.shape[1], seed=schedule.seed, dropout=self.dropout, with_decoder=with_decoder
        )
        if self.encoder_init == "pca":
            # The passthrough init stands in for what the autoencoder cold
            # start achieves (a reconstruction-optimal code), so the
            # no-decoder variant — which removes the reconstruction pathway
            # and phase 1 entirely — keeps a randomly initialized encoder.
            if with_decoder:
                pca_passthrough_init(self.network_, Xs)
            _, _, z0 = self.network_.forward(Xs, train_mode=False)
            linear_probe_head_init(self.network_, z0, t)
        elif self.encoder_init != "random":
            raise ValueError(f"unknown encoder_init {self.encoder_init!r}")
        self.history_: List[EpochMetrics] = []
        rng = np.random.default_rng([schedule.seed, 2])

        if self.variant != "no_decoder":
            self._run_phase(1, Xs, t, schedule.phase1_epochs, schedule.phase1_lr,
                            mode="reconstruction", frozen=frozenset({"classifier"}),
                            schedule=schedule, rng=rng)
        self._run_phase(2, Xs, t, schedule.phase2_epochs, schedule.phase2_lr,
                        mode="classification", frozen=_PHASE2_FROZEN,
                        schedule=schedule, rng=rng)
        phase3_mode = "joint" if self.variant == "multitask" else "classification"
        phase3_frozen = frozenset() if self.variant == "multitask" else frozenset({"decoder"})
        self._run_phase(3, Xs, t, schedule.phase3_epochs, schedule.phase3_lr,
                        mode=phase3_mode, frozen=phase3_frozen,
                        schedule=schedule, rng=rng)
        return self

    def _run_phase(self, phase, Xs, t, epochs, lr, mode, frozen, schedule, rng):
        net = self.network_
        cfg = self.loss_cfg_
        weights = np.asarray(cfg.class_weights)
        n = Xs.shape[0]
        for epoch in range(epochs):
            order = rng.permutation(n)
            sum_ce = sum_rc = 0.0
            correct = 0
            for lo in range(0, n, schedule.batch_size):
                idx = order[lo : lo + schedule.batch_size]
                xb, tb = Xs[idx], t[idx]
                net.zero_grad()
                logits, recon, _ = net.forward(xb, train_mode=True, rng=rng)
                l_ce, g_ce = cross_entropy_loss_grad(logits, tb, weights)
                if net.with_decoder:
                    l_rc, g_rc = reconstruction_loss_grad(recon, xb)
                else:
                    l_rc, g_rc = 0.0, None
                # The per-batch update applies the learning rate to the sum of
                # per-example gradients (the loss helpers return batch means).
                scale = float(len(idx))
                if mode == "reconstruction":
                    g_logits = np.zeros_like(logits)
                    g_recon = scale * g_rc  # plain autoencoder loss
                elif mode == "classification":
                    g_logits = scale * cfg.lambda1 * g_ce
                    g_recon = None
                else:  # joint
                    g_logits = scale * cfg.lambda1 * g_ce
                    g_recon = scale * cfg.lambda2 * g_rc
                net.backward(g_logits, g_recon, frozen=frozen)
                net.sgd_step(lr, frozen=frozen, clip_norm=schedule.clip_norm)
                sum_ce += l_ce * len(idx)
                sum_rc += l_rc * len(idx)
                correct += int((np.argmax(logits, axis=1) == tb).sum())
            self.history_.append(EpochMetrics(
                phase=phase, epoch=epoch, l_ce=sum_ce / n, l_rc=sum_rc / n,
                accuracy=correct / n,
            ))

    # -- inference -----------------------------------------------------------

    def _standardized(self, X) -> np.ndarray:
        X = _check_features(X)
        return (X - self.mean_) / self.sd_

    def decision_scores(self, X) -> np.ndarray:
        logits, _, _ = self.network_.forward(self._standardized(X), train_mode=False)
        return logits

    def predict(self, X):
        # np.argmax resolves ties toward class index 0
        return self.classes_[np.argmax(self.decision_scores(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_scores(X))

    # -- checkpointing --------------------------------------------------------

    def save(self, path: Union[str, Path]) -> None:
        schedule = self.schedule or TrainSchedule()
        header = {
            "dims": self.network_.input_dim,
            "variant": self.variant,
            "schedule": asdict(schedule),
            "cfg": {
                "lambda1": self.loss_cfg_.lambda1,
                "lambda2": self.loss_cfg_.lambda2,
                "class_weights": list(self.loss_cfg_.class_weights),
            },
            "seed": schedule.seed,
            "standardization": {"mean": self.mean_.tolist(), "sd": self.sd_.tolist()},
            "classes": [str(c) for c in self.classes_],
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(self.network_.flat_parameters().astype("<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MultiTaskClassifier":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            blob = np.frombuffer(fh.read(), dtype="<f8")
        schedule = TrainSchedule(**header["schedule"])
        cfg = LossConfig(
            header["cfg"]["lambda1"], header["cfg"]["lambda2"],
            tuple(header["cfg"]["class_weights"]),
        )
        model = cls(schedule=schedule, loss_cfg=cfg, variant=header["variant"])
        model.loss_cfg_ = cfg
        model.network_ = MultiTaskNetwork(
            header["dims"], seed=header["seed"],
            with_decoder=header["variant"] != "no_decoder",
        )
        model.network_.load_flat_parameters(blob)
        model.mean_ = np.array(header["standardization"]["mean"])
        model.sd_ = np.array(header["standardization"]["sd"])
        model.classes_ = np.array(header["classes"])
        model.history_ = []
        return model
