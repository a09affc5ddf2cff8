"""Recurrent local-wind estimator and a physics drag-inversion baseline.

A two-layer bidirectional LSTM reads 40-step windows of normalized flight
features; a small ReLU head with dropout maps the final concatenated
hidden state to the three NED wind components (normalized).  Training
minimizes component-weighted MSE with Adam, global-norm clipping, and a
reduce-on-plateau schedule; the best-validation parameters are kept.

The drag-inversion baseline recovers wind algebraically from logged
accelerations, thrust, and attitude by inverting the quadratic drag law.
It shares no machinery with the network, which makes it an independent
check on the simulator's wind-to-dynamics coupling.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .mission import FlightLog, SequenceDataset, median_filter, stats_from_dict
from .metrics import relative_error, rmse
from .vehicle import VehicleParams


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    weights: tuple = (1.0, 1.0, 0.3)
    lr: float = 2e-3
    batch_size: int = 128
    epochs: int = 12
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if any(not w > 0 for w in self.weights) or len(self.weights) != 3:
            raise EstimatorError("loss weights must be three positive numbers")
        if not 0.0 < self.val_fraction < 1.0:
            raise EstimatorError("validation fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise EstimatorError("epochs and batch size must be positive")
        if not self.lr > 0 or not self.clip_norm > 0:
            raise EstimatorError("lr and clip norm must be positive")


class WindNet:
    """Stacked bidirectional LSTM with a dropout-regularized linear head."""

    def __init__(self, hidden: int = 256, head_width: int = 64, in_dim: int = 11,
                 window: int = 40, dropout: float = 0.2, seed: int = 0,
                 stats=None):
        if hidden < 1 or head_width < 1:
            raise EstimatorError("layer sizes must be positive")
        self.hidden = hidden
        self.head_width = head_width
        self.in_dim = in_dim
        self.window = window
        self.dropout = dropout
        self.training = False
        self._rng = np.random.default_rng(seed)
        self.stats = stats  # (feat_mean, feat_std, tgt_mean, tgt_std)

        h = hidden
        rng = np.random.default_rng(seed + 1)

        def lstm_params(d_in):
            wx = rng.normal(size=(d_in, 4 * h)) / np.sqrt(d_in)
            wh = rng.normal(size=(h, 4 * h)) / np.sqrt(h)
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget gate opens by default
            return wx, wh, b

        self.params = {}
        for layer, d_in in ((1, in_dim), (2, 2 * h)):
            for direction in ("f", "b"):
                wx, wh, b = lstm_params(d_in)
                self.params[f"l{layer}{direction}_wx"] = Tensor(wx, requires_grad=True)
                self.params[f"l{layer}{direction}_wh"] = Tensor(wh, requires_grad=True)
                self.params[f"l{layer}{direction}_b"] = Tensor(b, requires_grad=True)
        self.params["head_w1"] = Tensor(
            rng.normal(size=(2 * h, head_width)) / np.sqrt(2 * h), requires_grad=True
        )
        self.params["head_b1"] = Tensor(np.zeros(head_width), requires_grad=True)
        self.params["head_w2"] = Tensor(
            rng.normal(size=(head_width, 3)) / np.sqrt(head_width), requires_grad=True
        )
        self.params["head_b2"] = Tensor(np.zeros(3), requires_grad=True)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def _direction_pass(self, xw: Tensor, order, batch: int, layer: int, direction: str):
        """One LSTM direction; xw is the time-major input projection (L*B, 4h)."""
        h = self.hidden
        wh = self.params[f"l{layer}{direction}_wh"]
        hs = Tensor(np.zeros((batch, h)))
        cs = Tensor(np.zeros((batch, h)))
        outputs = [None] * len(order)
        for t in order:
            z = ad.add(xw[t * batch:(t + 1) * batch], ad.matmul(hs, wh))
            gi = ad.sigmoid(z[:, 0:h])
            gf = ad.sigmoid(z[:, h:2 * h])
            gg = ad.tanh(z[:, 2 * h:3 * h])
            go = ad.sigmoid(z[:, 3 * h:4 * h])
            cs = ad.add(ad.mul(gf, cs), ad.mul(gi, gg))
            hs = ad.mul(go, ad.tanh(cs))
            outputs[t] = hs
        return outputs, hs

    def _layer(self, seq: Tensor, window: int, batch: int, layer: int):
        """seq: time-major (L*B, d_in) Tensor; returns (sequence, final states)."""
        b = self.params[f"l{layer}f_b"]
        xw_f = ad.add(ad.matmul(seq, self.params[f"l{layer}f_wx"]), b)
        xw_b = ad.add(ad.matmul(seq, self.params[f"l{layer}b_wx"]),
                      self.params[f"l{layer}b_b"])
        fwd = range(window)
        bwd = range(window - 1, -1, -1)
        out_f, last_f = self._direction_pass(xw_f, fwd, batch, layer, "f")
        out_b, last_b = self._direction_pass(xw_b, bwd, batch, layer, "b")
        per_t = [ad.concat([out_f[t], out_b[t]], axis=1) for t in range(window)]
        return ad.concat(per_t, axis=0), ad.concat([last_f, last_b], axis=1)

    def forward(self, windows: np.ndarray) -> Tensor:
        """windows: (B, L, in_dim) normalized features -> (B, 3) normalized."""
        w = np.asarray(windows, dtype=np.float64)
        if w.ndim != 3 or w.shape[1] != self.window or w.shape[2] != self.in_dim:
            raise EstimatorError(
                f"expected (batch, {self.window}, {self.in_dim}) windows, got {w.shape}"
            )
        batch = w.shape[0]
        seq = Tensor(np.ascontiguousarray(w.transpose(1, 0, 2)).reshape(-1, self.in_dim))

        seq2, _ = self._layer(seq, self.window, batch, layer=1)
        _, state = self._layer(seq2, self.window, batch, layer=2)

        hh = ad.relu(ad.add(ad.matmul(state, self.params["head_w1"]),
                            self.params["head_b1"]))
        if self.training and self.dropout > 0:
            keep = 1.0 - self.dropout
            mask = (self._rng.random(hh.shape) < keep) / keep
            hh = ad.mul(hh, Tensor(mask))
        return ad.add(ad.matmul(hh, self.params["head_w2"]), self.params["head_b2"])

    def predict(self, windows: np.ndarray, batch: int = 512) -> np.ndarray:
        """Eval-mode forward in chunks; plain array out."""
        was = self.training
        self.training = False
        try:
            parts = [
                self.forward(windows[i:i + batch]).data
                for i in range(0, len(windows), batch)
            ]
        finally:
            self.training = was
        return np.concatenate(parts, axis=0)


def weighted_mse(pred: Tensor, target, weights) -> Tensor:
    err = ad.add(pred, ad.mul(Tensor(np.asarray(target, dtype=float)), Tensor(-1.0)))
    per_row = ad.sum_(ad.mul(ad.square(err), Tensor(np.asarray(weights, dtype=float))), axis=1)
    return ad.mean_(per_row)


def _group_windows(dataset: SequenceDataset):
    """Window indices grouped by (flight, uas) provenance."""
    keys = dataset.provenance[:, 0].astype(np.int64) << 32 | dataset.provenance[:, 1]
    order = {}
    for idx, key in enumerate(keys):
        order.setdefault(int(key), []).append(idx)
    return [np.asarray(v) for _, v in sorted(order.items())]


def train(dataset: SequenceDataset, config: TrainConfig = None, hidden: int = 48,
          head_width: int = 64, verbose: bool = False):
    """Fit a WindNet on the dataset; returns (net, history)."""
    config = config or TrainConfig()
    groups = _group_windows(dataset)
    if len(groups) < 2:
        raise EstimatorError("need at least two flights to split train/validation")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(groups))
    n_val = max(1, int(round(config.val_fraction * len(groups))))
    n_val = min(n_val, len(groups) - 1)
    val_idx = np.concatenate([groups[i] for i in perm[:n_val]])
    train_idx = np.concatenate([groups[i] for i in perm[n_val:]])

    stats = (dataset.feature_mean, dataset.feature_std,
             dataset.target_mean, dataset.target_std)
    net = WindNet(hidden=hidden, head_width=head_width,
                  in_dim=dataset.windows.shape[2], window=dataset.windows.shape[1],
                  seed=config.seed, stats=stats)
    params = net.parameters()
    opt = ad.Adam(params, lr=config.lr)
    sched = ad.ReduceOnPlateau(opt, factor=0.5, patience=5)
    weights = np.asarray(config.weights)

    def eval_loss(indices):
        total, count = 0.0, 0
        for i in range(0, len(indices), 1024):
            chunk = indices[i:i + 1024]
            pred = net.predict(dataset.windows[chunk])
            err = pred - dataset.targets[chunk]
            total += float(np.sum((err * err) @ weights))
            count += len(chunk)
        return total / count

    history = {"train": [], "val": [], "lr": []}
    best_val = np.inf
    best_params = None
    for epoch in range(config.epochs):
        net.training = True
        order = rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            batch = order[i:i + config.batch_size]
            with Tape():
                pred = net.forward(dataset.windows[batch])
                loss = weighted_mse(pred, dataset.targets[batch], weights)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise EstimatorError(
                        f"training diverged: loss={value} at epoch {epoch}, "
                        f"step {i // config.batch_size}, lr={opt.lr}"
                    )
                backward(loss)
            ad.clip_global_norm(params, config.clip_norm)
            opt.step()
            opt.zero_grad()
            epoch_loss += value * len(batch)
            seen += len(batch)
        net.training = False
        val_loss = eval_loss(val_idx)
        history["train"].append(epoch_loss / seen)
        history["val"].append(val_loss)
        history["lr"].append(opt.lr)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.data.copy() for k, v in net.params.items()}
        sched.update(val_loss)
        if verbose:
            print(f"epoch {epoch}: train {history['train'][-1]:.5f} "
                  f"val {val_loss:.5f} lr {opt.lr:.2e}")

    if best_params is not None:
        for k, v in best_params.items():
            net.params[k].data = v
    return net, history


@dataclass
class PredictionResult:
    times: np.ndarray
    predicted: np.ndarray   # (n, 3) NED, physical units
    truth: np.ndarray       # (n, 3) filtered labels
    rmse: np.ndarray
    overall: float
    relative: np.ndarray
    relative_defined: np.ndarray


def predict_flight(net: WindNet, log: FlightLog, filter_width: int = 21) -> PredictionResult:
    """Slide the net along one flight; metrics against filtered truth."""
    if net.stats is None:
        raise EstimatorError("net carries no normalization stats")
    f_mean, f_std, t_mean, t_std = net.stats
    feats = log.feature_matrix()
    n = feats.shape[0]
    window = net.window
    if n <= window:
        raise EstimatorError("flight shorter than one window")
    normed = (feats - f_mean) / f_std
    view = np.lib.stride_tricks.sliding_window_view(normed, window, axis=0)
    windows = view[:-1].transpose(0, 2, 1)
    pred = net.predict(windows) * t_std + t_mean
    truth = np.column_stack(
        [median_filter(log.label_matrix()[:, j], filter_width) for j in range(3)]
    )[window:]
    per, overall = rmse(pred, truth)
    rel, defined = relative_error(pred, truth)
    return PredictionResult(
        times=log.column("t")[window:], predicted=pred, truth=truth,
        rmse=per, overall=overall, relative=rel, relative_defined=defined,
    )


def save_estimator(net: WindNet, path) -> None:
    if net.stats is None:
        raise EstimatorError("refusing to save a net without normalization stats")
    meta = {
        "hidden": net.hidden, "head_width": net.head_width,
        "in_dim": net.in_dim, "window": net.window, "dropout": net.dropout,
        "feature_mean": net.stats[0].tolist(), "feature_std": net.stats[1].tolist(),
        "target_mean": net.stats[2].tolist(), "target_std": net.stats[3].tolist(),
    }
    ad.save_arrays(path, {k: v.data for k, v in net.params.items()}, meta)


def load_estimator(path) -> WindNet:
    arrays, meta = ad.load_arrays(path)
    stats = stats_from_dict({
        "feature_mean": meta["feature_mean"], "feature_std": meta["feature_std"],
        "target_mean": meta["target_mean"], "target_std": meta["target_std"],
    })
    net = WindNet(hidden=meta["hidden"], head_width=meta["head_width"],
                  in_dim=meta["in_dim"], window=meta["window"],
                  dropout=meta["dropout"], stats=stats)
    for k, v in arrays.items():
        if k not in net.params or net.params[k].data.shape != v.shape:
            raise EstimatorError(f"checkpoint parameter {k} does not fit the net")
        net.params[k].data = v.copy()
    return net


def drag_inversion_estimate(rows, params: VehicleParams = None):
    """Algebraic wind recovery from logged dynamics; NED output.

    Accepts one 18-column log row or an (n, 18) block.  Returns
    (estimates, converged) where non-convergent fixed-point solves are
    flagged False.
    """
    params = params or VehicleParams()
    data = np.atleast_2d(np.asarray(rows, dtype=float))
    v = data[:, 4:7]
    a = data[:, 7:10]
    thrust = data[:, 10]
    phi, theta = data[:, 11], data[:, 12]

    z_b = np.stack(
        [np.sin(theta) * np.cos(phi), -np.sin(phi), np.cos(theta) * np.cos(phi)],
        axis=1,
    )
    grav = np.array([0.0, 0.0, params.mass * params.g])
    f_drag = params.mass * a - thrust[:, None] * z_b + grav
    coeff = np.array([params.cd_xy, params.cd_xy, params.cd_z])
    d = -2.0 * f_drag / (params.rho * coeff)

    dn = np.linalg.norm(d, axis=1)
    s = np.sqrt(np.maximum(dn, 1e-30))
    ok = np.ones(len(data), dtype=bool)
    live = dn > 0
    for _ in range(50):
        s_new = 0.5 * (s + dn / s)
        done = np.abs(s_new - s) <= 1e-8 * np.maximum(1.0, s_new)
        s = s_new
        if np.all(done | ~live):
            break
    else:
        ok = done | ~live

    v_air = np.where(live[:, None], d / s[:, None], 0.0)
    wind_up = v - v_air
    est = np.column_stack([wind_up[:, 0], wind_up[:, 1], -wind_up[:, 2]])
    if np.asarray(rows).ndim == 1:
        return est[0], bool(ok[0])
    return est, ok
