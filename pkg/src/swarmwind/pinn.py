"""Physics-informed wind field reconstruction.

A tanh MLP maps embedded (x, y, z, t) to the three wind components.
Horizontal coordinates enter z-scored; time and altitude additionally
carry sinusoidal harmonics so the net can express periodic-ish structure
without high-frequency weight growth.  Training fits trajectory wind
estimates under two weak regularizers evaluated at freshly resampled
collocation points: a squared divergence penalty and a near-ground
vertical-gradient penalty on the down component.  Derivatives use
central finite differences of the network itself (step 1 m), which keeps
the gradient engine strictly first-order.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward


class PinnError(ValueError):
    pass


@dataclass(frozen=True)
class ReconDomain:
    x: tuple = (-105.0, 105.0)
    y: tuple = (-105.0, 105.0)
    z: tuple = (0.0, 1010.0)
    t: tuple = (0.0, 400.0)
    k: int = 4

    def __post_init__(self):
        for lo, hi in (self.x, self.y, self.z, self.t):
            if not hi > lo:
                raise PinnError("domain bounds must be non-degenerate")
        if self.k < 0:
            raise PinnError("harmonic count must be non-negative")

    @property
    def bounds(self):
        return np.array([self.x, self.y, self.z, self.t])

    @property
    def embed_dim(self):
        return 4 + 4 * self.k

    def contains(self, coords) -> np.ndarray:
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        b = self.bounds
        return np.all((c >= b[:, 0]) & (c <= b[:, 1]), axis=1)


def embed(domain: ReconDomain, coords, clamp: bool = False) -> np.ndarray:
    """(n, 4) physical coordinates -> (n, 4 + 4K) network inputs.

    Spatial coordinates are z-scored against a uniform density over the
    box (sigma = extent / sqrt(12)); time maps affinely onto [-1, 1] so
    the window endpoints land exactly on -1 and +1.
    """
    c = np.atleast_2d(np.asarray(coords, dtype=float))
    if c.ndim != 2 or c.shape[1] != 4:
        raise PinnError(f"expected (n, 4) coordinates, got {c.shape}")
    b = domain.bounds
    if clamp:
        c = np.clip(c, b[:, 0], b[:, 1])
    elif not np.all(domain.contains(c)):
        raise PinnError("coordinates outside the reconstruction domain")

    center = 0.5 * (b[:3, 0] + b[:3, 1])
    sigma = (b[:3, 1] - b[:3, 0]) / np.sqrt(12.0)
    spatial = (c[:, :3] - center) / sigma
    t_hat = 2.0 * (c[:, 3] - b[3, 0]) / (b[3, 1] - b[3, 0]) - 1.0

    parts = [spatial, t_hat[:, None]]
    z_frac = (c[:, 2] - b[2, 0]) / (b[2, 1] - b[2, 0])
    for k in range(1, domain.k + 1):
        arg_t = np.pi * k * t_hat
        parts.append(np.sin(arg_t)[:, None])
        parts.append(np.cos(arg_t)[:, None])
    for k in range(1, domain.k + 1):
        arg_z = 2.0 * np.pi * k * z_frac
        parts.append(np.sin(arg_z)[:, None])
        parts.append(np.cos(arg_z)[:, None])
    return np.concatenate(parts, axis=1)


class ReconModel:
    """MLP over embedded coordinates; depth hidden tanh layers, linear out."""

    def __init__(self, domain: ReconDomain, width: int = 128, depth: int = 4,
                 seed: int = 0, output_bias=None):
        if width < 1 or depth < 1:
            raise PinnError("width and depth must be positive")
        self.domain = domain
        self.width = width
        self.depth = depth
        rng = np.random.default_rng(seed + 1)
        dims = [domain.embed_dim] + [width] * depth + [3]
        self.params = {}
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"w{i}"] = Tensor(
                rng.normal(size=(d_in, d_out)) / np.sqrt(d_in), requires_grad=True
            )
            self.params[f"b{i}"] = Tensor(np.zeros(d_out), requires_grad=True)
        if output_bias is not None:
            self.params[f"b{depth}"].data[:] = np.asarray(output_bias, dtype=float)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def output(self, coords, clamp: bool = False) -> Tensor:
        """Tape-aware forward pass from physical coordinates."""
        h = Tensor(embed(self.domain, coords, clamp=clamp))
        for i in range(self.depth):
            h = ad.tanh(ad.add(ad.matmul(h, self.params[f"w{i}"]),
                               self.params[f"b{i}"]))
        return ad.add(ad.matmul(h, self.params[f"w{self.depth}"]),
                      self.params[f"b{self.depth}"])


def query(model, coords, chunk: int = 16384) -> np.ndarray:
    """Deterministic evaluation at in-domain points; (n, 3) out."""
    c = np.atleast_2d(np.asarray(coords, dtype=float))
    if not np.all(model.domain.contains(c)):
        raise PinnError("query coordinates outside the reconstruction domain")
    parts = [model.output(c[i:i + chunk]).data for i in range(0, len(c), chunk)]
    out = np.concatenate(parts, axis=0)
    return out[0] if np.asarray(coords).ndim == 1 else out


def loss_data(model, coords, targets) -> Tensor:
    """Mean squared 3-vector misfit against the wind estimates."""
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(t) == 0:
        raise PinnError("empty observation batch")
    err = ad.add(model.output(coords), ad.mul(Tensor(t), Tensor(-1.0)))
    return ad.mean_(ad.sum_(ad.square(err), axis=1))


def _fd_component(model, points, axis: int, h: float):
    """Central-difference outputs along one spatial axis; (plus, minus)."""
    shift = np.zeros(4)
    shift[axis] = h
    return (model.output(points + shift, clamp=True),
            model.output(points - shift, clamp=True))


def loss_divergence(model, points, h: float = 1.0) -> Tensor:
    """Mean squared finite-difference divergence at the collocation points."""
    inv = 1.0 / (2.0 * h)
    terms = []
    for axis, comp in ((0, 0), (1, 1), (2, 2)):
        plus, minus = _fd_component(model, points, axis, h)
        diff = ad.add(plus[:, comp], ad.mul(minus[:, comp], Tensor(-1.0)))
        terms.append(ad.mul(diff, Tensor(inv)))
    div = ad.add(ad.add(terms[0], terms[1]), terms[2])
    return ad.mean_(ad.square(div))


def loss_smooth(model, points, threshold: float = 50.0, h: float = 1.0) -> Tensor:
    """Mean squared vertical gradient of the down component below threshold."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    low = pts[pts[:, 2] < threshold]
    if len(low) == 0:
        return Tensor(np.zeros(()))
    plus, minus = _fd_component(model, low, 2, h)
    grad = ad.mul(ad.add(plus[:, 2], ad.mul(minus[:, 2], Tensor(-1.0))),
                  Tensor(1.0 / (2.0 * h)))
    return ad.mean_(ad.square(grad))


@dataclass(frozen=True)
class PinnLossWeights:
    lambda_phys: float = 1e-3
    lambda_smooth: float = 1e-3
    z_smooth_threshold: float = 50.0
    collocation: int = 1024

    def __post_init__(self):
        if self.lambda_phys < 0 or self.lambda_smooth < 0:
            raise PinnError("loss weights must be non-negative")
        if self.collocation < 1:
            raise PinnError("collocation batch must be positive")


def _shared_physics_losses(model, points, weights: PinnLossWeights, h: float):
    """Divergence and smoothness from one set of six shifted evaluations."""
    evals = {axis: _fd_component(model, points, axis, h) for axis in range(3)}
    inv = Tensor(1.0 / (2.0 * h))
    terms = []
    for axis in range(3):
        plus, minus = evals[axis]
        terms.append(ad.mul(
            ad.add(plus[:, axis], ad.mul(minus[:, axis], Tensor(-1.0))), inv))
    div = ad.add(ad.add(terms[0], terms[1]), terms[2])
    l_div = ad.mean_(ad.square(div))

    below = points[:, 2] < weights.z_smooth_threshold
    if not np.any(below):
        return l_div, Tensor(np.zeros(()))
    plus, minus = evals[2]
    idx = np.flatnonzero(below)
    grad = ad.mul(ad.add(plus[idx, 2], ad.mul(minus[idx, 2], Tensor(-1.0))), inv)
    return l_div, ad.mean_(ad.square(grad))


def train_pinn(obs_coords, obs_values, domain: ReconDomain = None,
               weights: PinnLossWeights = None, steps: int = 2000,
               lr: float = 2e-3, obs_batch: int = 512, fd_step: float = 1.0,
               width: int = 128, depth: int = 4, seed: int = 0,
               verbose: bool = False):
    """Fit a ReconModel to trajectory wind estimates; returns (model, history).

    Collocation points are drawn fresh every step, uniformly over the
    domain inset by the finite-difference step so shifted evaluations
    stay inside.  The returned model carries the parameters of the
    lowest total loss seen (running-best checkpoint rule).
    """
    coords = np.atleast_2d(np.asarray(obs_coords, dtype=float))
    values = np.atleast_2d(np.asarray(obs_values, dtype=float))
    if len(coords) == 0 or coords.shape != (len(values), 4) or values.shape[1] != 3:
        raise PinnError("need matching (n, 4) coordinates and (n, 3) estimates")
    if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(values))):
        raise PinnError("observations must be finite")
    domain = domain or ReconDomain()
    if not np.all(domain.contains(coords)):
        raise PinnError("observations fall outside the reconstruction domain")
    weights = weights or PinnLossWeights()

    model = ReconModel(domain, width=width, depth=depth, seed=seed,
                       output_bias=values.mean(axis=0))
    params = model.parameters()
    opt = ad.Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    b = domain.bounds
    lo = b[:, 0] + np.array([fd_step, fd_step, fd_step, 0.0])
    hi = b[:, 1] - np.array([fd_step, fd_step, fd_step, 0.0])

    history = {"data": [], "div": [], "smooth": [], "total": [], "best": []}
    best = np.inf
    best_params = None
    for step in range(steps):
        batch = rng.choice(len(coords), size=min(obs_batch, len(coords)),
                           replace=False)
        colloc = rng.uniform(lo, hi, size=(weights.collocation, 4))
        with Tape():
            l_data = loss_data(model, coords[batch], values[batch])
            # physics terms cost six extra net evaluations; skip when off
            if weights.lambda_phys > 0 or weights.lambda_smooth > 0:
                l_div, l_sm = _shared_physics_losses(model, colloc, weights, fd_step)
            else:
                l_div, l_sm = Tensor(np.zeros(())), Tensor(np.zeros(()))
            total = ad.add(l_data, ad.add(
                ad.mul(l_div, Tensor(weights.lambda_phys)),
                ad.mul(l_sm, Tensor(weights.lambda_smooth))))
            value = float(total.data)
            if not np.isfinite(value):
                raise PinnError(
                    f"training diverged: total loss {value} at step {step}, lr={lr}"
                )
            backward(total)
        opt.step()
        opt.zero_grad()
        history["data"].append(float(l_data.data))
        history["div"].append(float(l_div.data))
        history["smooth"].append(float(l_sm.data))
        history["total"].append(value)
        if value < best:
            best = value
            best_params = {k: v.data.copy() for k, v in model.params.items()}
        history["best"].append(best)
        if verbose and step % 200 == 0:
            print(f"step {step}: data {history['data'][-1]:.5f} "
                  f"div {history['div'][-1]:.5f} total {value:.5f}")

    if best_params is not None:
        for k, v in best_params.items():
            model.params[k].data = v
    return model, history


def mean_abs_divergence(model, n_per_axis: int = 10, t: float = None,
                        h: float = 1.0) -> float:
    """Mean |finite-difference divergence| over a fixed probe grid."""
    b = model.domain.bounds
    if t is None:
        t = 0.5 * (b[3, 0] + b[3, 1])
    axes = [np.linspace(b[i, 0] + h, b[i, 1] - h, n_per_axis) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel(),
                           np.full(gx.size, t)])
    div = np.zeros(len(pts))
    for axis in range(3):
        shift = np.zeros(4)
        shift[axis] = h
        plus = query(model, np.clip(pts + shift, b[:, 0], b[:, 1]))
        minus = query(model, np.clip(pts - shift, b[:, 0], b[:, 1]))
        div += (plus[:, axis] - minus[:, axis]) / (2.0 * h)
    return float(np.mean(np.abs(div)))


def loss_report(model, obs_coords, obs_values, weights: PinnLossWeights = None,
                fd_step: float = 1.0, seed: int = 0) -> dict:
    """Loss components on the full observation set plus fixed collocation."""
    weights = weights or PinnLossWeights()
    rng = np.random.default_rng(seed)
    b = model.domain.bounds
    lo = b[:, 0] + np.array([fd_step] * 3 + [0.0])
    hi = b[:, 1] - np.array([fd_step] * 3 + [0.0])
    colloc = rng.uniform(lo, hi, size=(weights.collocation, 4))
    l_data = float(loss_data(model, obs_coords, obs_values).data)
    l_div = float(loss_divergence(model, colloc, h=fd_step).data)
    l_sm = float(loss_smooth(model, colloc, weights.z_smooth_threshold, fd_step).data)
    return {
        "data": l_data, "div": l_div, "smooth": l_sm,
        "weighted_physics": weights.lambda_phys * l_div + weights.lambda_smooth * l_sm,
        "total": l_data + weights.lambda_phys * l_div + weights.lambda_smooth * l_sm,
    }


def save_recon(model: ReconModel, path) -> None:
    d = model.domain
    meta = {"width": model.width, "depth": model.depth, "k": d.k,
            "x": list(d.x), "y": list(d.y), "z": list(d.z), "t": list(d.t)}
    ad.save_arrays(path, {k: v.data for k, v in model.params.items()}, meta)


def load_recon(path) -> ReconModel:
    arrays, meta = ad.load_arrays(path)
    domain = ReconDomain(x=tuple(meta["x"]), y=tuple(meta["y"]),
                         z=tuple(meta["z"]), t=tuple(meta["t"]), k=meta["k"])
    model = ReconModel(domain, width=meta["width"], depth=meta["depth"])
    for k, v in arrays.items():
        if k not in model.params or model.params[k].data.shape != v.shape:
            raise PinnError(f"checkpoint parameter {k} does not fit the model")
        model.params[k].data = v.copy()
    return model


def extract_products(model, t_slice: float, z_slice: float, x_slice: float = 0.0,
                     y_slice: float = 0.0, n: int = 41, nz: int = 41,
                     profile_xy=(0.0, 0.0), series_point=None,
                     n_times: int = 81) -> dict:
    """Standard comparison products: plane slices, a profile, a time series.

    Returns {name: (coords (m, 4), values (m, 3))} with rows in grid
    order (first named axis varies fastest).
    """
    d = model.domain
    xs = np.linspace(d.x[0], d.x[1], n)
    ys = np.linspace(d.y[0], d.y[1], n)
    zs = np.linspace(d.z[0], d.z[1], nz)
    ts = np.linspace(d.t[0], d.t[1], n_times)

    def grid(a_vals, b_vals, assemble):
        bb, aa = np.meshgrid(b_vals, a_vals, indexing="ij")
        coords = assemble(aa.ravel(), bb.ravel())
        return coords, query(model, coords)

    products = {
        "xy": grid(xs, ys, lambda a, b: np.column_stack(
            [a, b, np.full_like(a, z_slice), np.full_like(a, t_slice)])),
        "yz": grid(ys, zs, lambda a, b: np.column_stack(
            [np.full_like(a, x_slice), a, b, np.full_like(a, t_slice)])),
        "zx": grid(zs, xs, lambda a, b: np.column_stack(
            [b, np.full_like(a, y_slice), a, np.full_like(a, t_slice)])),
    }
    px, py = profile_xy
    prof = np.column_stack([np.full(nz, px), np.full(nz, py), zs,
                            np.full(nz, t_slice)])
    products["profile"] = (prof, query(model, prof))
    sp = series_point if series_point is not None else (px, py, z_slice)
    series = np.column_stack([np.full(n_times, sp[0]), np.full(n_times, sp[1]),
                              np.full(n_times, sp[2]), ts])
    products["series"] = (series, query(model, series))
    return products
