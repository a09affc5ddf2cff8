"""Synthetic atmospheric turbulence on a periodic-column grid.

A zero-mean, solenoidal velocity fluctuation field is built by superposing
random Fourier modes whose shell amplitudes follow the von Karman energy
spectrum

    E(k) ~ k^4 / (1 + k^2 L^2)^(17/6)

so the inertial range rolls off at the Kolmogorov -5/3 rate.  The field is
stored on a regular grid that is periodic in x and y and a clamped column in
z, and is meant to be advected past the vehicles as a frozen pattern.

Component spectra follow the standard single-sided von Karman forms with
longitudinal/lateral distinction (``von_karman_psd``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_VK_A = 1.339  # von Karman scale constant in the frequency-domain spectra


class TurbulenceConfigError(ValueError):
    """Raised when a turbulence specification cannot be realized."""


@dataclass(frozen=True)
class TurbulenceSpec:
    """Parameters of one synthesized fluctuation field.

    domain_size : (Lx, Ly, Lz) extents in meters
    grid        : (Nx, Ny, Nz) node counts
    n_modes     : number of random Fourier modes superposed
    length_scale: integral length scale L of the energy spectrum, meters
    target_sigma: per-component standard deviation to scale to, m/s
    rng_seed    : seed making the realization reproducible
    """

    domain_size: tuple[float, float, float] = (210.0, 210.0, 1010.0)
    grid: tuple[int, int, int] = (64, 64, 128)
    n_modes: int = 512
    length_scale: float = 50.0
    target_sigma: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.domain_size) != 3 or any(e <= 0 for e in self.domain_size):
            raise TurbulenceConfigError("domain extents must be three positive lengths")
        if len(self.grid) != 3 or any(int(n) < 8 for n in self.grid):
            raise TurbulenceConfigError("grid needs at least 8 nodes per axis")
        if int(self.n_modes) < 1:
            raise TurbulenceConfigError("n_modes must be >= 1")
        if self.target_sigma < 0:
            raise TurbulenceConfigError("target_sigma must be >= 0")

    @property
    def spacing(self) -> tuple[float, float, float]:
        """Node spacing (hx, hy, hz); x,y periodic, z an inclusive column."""
        lx, ly, lz = self.domain_size
        nx, ny, nz = self.grid
        return (lx / nx, ly / ny, lz / (nz - 1))


@dataclass
class TurbulentField:
    """A realized fluctuation field: three scalar grids plus its spec.

    Grids are float32, indexed [ix, iy, iz].  ``sigma0`` is the pooled
    standard deviation before rescaling to ``spec.target_sigma``.
    """

    spec: TurbulenceSpec
    grid_u: np.ndarray
    grid_v: np.ndarray
    grid_w: np.ndarray
    sigma0: float


def von_karman_psd(component: str, omega, sigma: float, length: float, u0: float):
    """Single-sided von Karman velocity PSD at angular frequency omega.

    component "u" is longitudinal (along the mean wind); "v" and "w" share
    the lateral form.  sigma is the component standard deviation, length the
    integral scale, u0 the advection speed.
    """
    if u0 <= 0:
        raise ValueError("advection speed u0 must be positive")
    if length <= 0:
        raise ValueError("length scale must be positive")
    omega = np.asarray(omega, dtype=float)
    a = _VK_A * length * omega / u0
    base = sigma * sigma * length / (np.pi * u0)
    if component == "u":
        return 2.0 * base * (1.0 + a * a) ** (-5.0 / 6.0)
    if component in ("v", "w"):
        return base * (1.0 + (8.0 / 3.0) * a * a) / (1.0 + a * a) ** (11.0 / 6.0)
    raise ValueError("component must be one of 'u', 'v', 'w'")


def von_karman_energy(k, length: float):
    """Relative von Karman energy spectrum E(k); normalization is arbitrary."""
    k = np.asarray(k, dtype=float)
    kl2 = (k * length) ** 2
    return k ** 4 / (1.0 + kl2) ** (17.0 / 6.0)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix from a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _axis_mean(w, npts: int):
    """Exact grid mean of exp(i*w*j) over j = 0..npts-1 for step phase w."""
    r = np.mod(np.asarray(w, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    tiny = np.abs(r) < 1e-12
    den = np.where(tiny, 1.0, np.exp(1j * r) - 1.0)
    out = (np.exp(1j * r * npts) - 1.0) / (den * npts)
    return np.where(tiny, 1.0 + 0.0j, out)


def _grid_moments(k_vecs, phases, spacing, grid):
    """Closed-form first and second grid moments of every mode pattern pair.

    Returns (gpp, gqq, gpq, pbar, qbar) where gpp[m, m'] is the grid mean of
    cos(theta_m) cos(theta_m'), gqq the sine pair, gpq[m, m'] the mean of
    cos(theta_m) sin(theta_m'), and pbar/qbar the single-pattern means.
    Axis sums are geometric series, so every entry is exact; with kx and ky
    on the periodic lattice the horizontal factors collapse to 0/1
    indicators and only the clamped z column contributes partial sums.
    """
    hx, hy, hz = spacing
    nx, ny, nz = grid
    wx = k_vecs[:, 0] * hx
    wy = k_vecs[:, 1] * hy
    wz = k_vecs[:, 2] * hz
    diff = (
        _axis_mean(wx[:, None] - wx[None, :], nx)
        * _axis_mean(wy[:, None] - wy[None, :], ny)
        * _axis_mean(wz[:, None] - wz[None, :], nz)
        * np.exp(1j * (phases[:, None] - phases[None, :]))
    )
    summ = (
        _axis_mean(wx[:, None] + wx[None, :], nx)
        * _axis_mean(wy[:, None] + wy[None, :], ny)
        * _axis_mean(wz[:, None] + wz[None, :], nz)
        * np.exp(1j * (phases[:, None] + phases[None, :]))
    )
    gpp = 0.5 * (diff.real + summ.real)
    gqq = 0.5 * (diff.real - summ.real)
    gpq = 0.5 * (summ.imag - diff.imag)
    single = (
        _axis_mean(wx, nx) * _axis_mean(wy, ny) * _axis_mean(wz, nz) * np.exp(1j * phases)
    )
    return gpp, gqq, gpq, single.real, single.imag


def _balance_polarization(amps, e1, e2, hand, moments, psi):
    """Solve per-mode polarization angles equalizing realized grid variances.

    The demeaned grid variance of each velocity component is an exact
    quadratic form in the cosine/sine coefficient vectors, so the two
    equal-variance constraints are driven to round-off with damped
    minimum-norm Newton steps.  Mode energies are invariant in psi, which
    keeps the spectrum untouched.
    """
    gpp, gqq, gpq, pbar, qbar = moments
    root2 = np.sqrt(2.0)
    for _ in range(20):
        ca = root2 * np.cos(psi)
        sb = root2 * np.sin(psi)
        a = amps[:, None] * ca[:, None] * e1
        b = amps[:, None] * sb[:, None] * hand[:, None] * e2
        v = np.empty(3)
        dv = np.empty((3, len(psi)))
        for i in range(3):
            al = a[:, i]
            be = b[:, i]
            u1 = gpp @ al + gpq @ be
            u2 = gqq @ be + gpq.T @ al
            mbar = al @ pbar + be @ qbar
            v[i] = al @ u1 + be @ u2 - mbar * mbar
            dal = -amps * sb * e1[:, i]
            dbe = amps * ca * hand * e2[:, i]
            dv[i] = 2.0 * (u1 - mbar * pbar) * dal + 2.0 * (u2 - mbar * qbar) * dbe
        resid = np.array([v[0] - v[1], v[1] - v[2]])
        if np.max(np.abs(resid)) < 1e-10 * max(float(v.mean()), 1e-300):
            break
        jac = np.stack([dv[0] - dv[1], dv[1] - dv[2]])
        gram = jac @ jac.T
        gram[np.diag_indices_from(gram)] += 1e-12 * max(np.trace(gram), 1e-300)
        try:
            lam = np.linalg.solve(gram, -resid)
        except np.linalg.LinAlgError:
            break
        psi = np.clip(psi + np.clip(jac.T @ lam, -0.4, 0.4), 0.0, 0.5 * np.pi)
    return psi


def _transect_u_power(a, b, jx, k_vecs, phases, spacing, grid, jmax: int):
    """Exact x-transect-averaged power of the first component per harmonic.

    Because kx sits on the periodic lattice, harmonic j of the x-direction
    discrete Fourier transform collects exactly the modes with |jx| == j;
    averaging the squared magnitude over all (y, z) transects leaves a small
    Hermitian form per harmonic group whose y factors are exact lattice
    indicators and whose z factors are geometric column means.
    """
    hx, hy, hz = spacing
    nx, ny, nz = grid
    cvec = a[:, 0] - 1j * b[:, 0]
    power = np.zeros(jmax + 1)
    for j in range(1, jmax + 1):
        sel = np.nonzero(np.abs(jx) == j)[0]
        if sel.size == 0:
            continue
        pos = jx[sel] > 0
        coef = np.where(pos, cvec[sel], np.conj(cvec[sel]))
        sgn = np.where(pos, 1.0, -1.0)
        wy = sgn * k_vecs[sel, 1] * hy
        wz = sgn * k_vecs[sel, 2] * hz
        ph = sgn * phases[sel]
        cross = (
            _axis_mean(wy[:, None] - wy[None, :], ny)
            * _axis_mean(wz[:, None] - wz[None, :], nz)
            * np.exp(1j * (ph[:, None] - ph[None, :]))
        )
        gmat = coef[:, None] * np.conj(coef[None, :]) * cross
        power[j] = 0.25 * float(gmat.sum().real)
    return power


def _draw_modes(spec: TurbulenceSpec, rng: np.random.Generator):
    """Sample wavevectors and solenoidal amplitude pairs for all modes.

    Wavenumber magnitudes are drawn from log-spaced shells spanning the
    largest resolvable scale to the grid Nyquist; shell energy follows
    ``von_karman_energy``.  kx and ky are snapped to the periodic lattice of
    the domain so the stored grid wraps seamlessly; kz stays continuous.
    Each mode carries two orthonormal amplitude directions perpendicular to
    the central-difference effective wavevector, which makes the discrete
    divergence of the superposed grid vanish to round-off.  Two exact
    deterministic corrections then remove finite-sampling artifacts: the
    energy of each low x-harmonic group is calibrated so the realized
    transect spectrum follows the one-dimensional von Karman shape, and
    per-mode polarization angles are solved so the realized component
    variances come out equal.
    """
    lx, ly, lz = spec.domain_size
    nx, ny, nz = spec.grid
    hx, hy, hz = spec.spacing

    k_min = 2.0 * np.pi / max(lx, ly, lz)
    k_max = np.pi * min(nx, ny, nz) / min(lx, ly, lz)
    if not k_max > k_min:
        raise TurbulenceConfigError("grid cannot resolve the requested mode band")

    n_shells = min(48, spec.n_modes)
    edges = np.geomspace(k_min, k_max, n_shells + 1)
    counts = np.full(n_shells, spec.n_modes // n_shells)
    counts[: spec.n_modes % n_shells] += 1

    k_vecs = []
    amps = []
    for s in range(n_shells):
        m = int(counts[s])
        if m == 0:
            continue
        k_mag = np.exp(rng.uniform(np.log(edges[s]), np.log(edges[s + 1]), size=m))
        dirs = _fibonacci_sphere(m) @ _random_rotation(rng).T
        kv = dirs * k_mag[:, None]
        # snap horizontal wavenumbers to the periodic lattice of the domain
        # so the stored grid wraps seamlessly
        kv[:, 0] = np.round(kv[:, 0] * lx / (2 * np.pi)) * (2 * np.pi / lx)
        kv[:, 1] = np.round(kv[:, 1] * ly / (2 * np.pi)) * (2 * np.pi / ly)
        k_snap = np.linalg.norm(kv, axis=1)
        dk = edges[s + 1] - edges[s]
        amp = np.sqrt(von_karman_energy(np.maximum(k_snap, 1e-12), spec.length_scale) * dk / m)
        k_vecs.append(kv)
        amps.append(amp)
    k_vecs = np.concatenate(k_vecs, axis=0)
    amps = np.concatenate(amps)

    # make sure every x harmonic inside the spectrum fit band has at least
    # two member modes; an empty harmonic would leave an exact zero in the
    # transect spectrum there.  Donors come from the fattest group beyond
    # the band when one exists.
    two_pi = 2.0 * np.pi
    jx = np.round(k_vecs[:, 0] * lx / two_pi).astype(int)
    jtop = min(12, nx // 2 - 1)
    for j in range(1, jtop + 1):
        have = int(np.count_nonzero(np.abs(jx) == j))
        if have >= 2:
            continue
        vals, cnts = np.unique(np.abs(jx), return_counts=True)
        cand = sorted(
            (val <= jtop, -cnt, val)
            for val, cnt in zip(vals, cnts)
            if val != j and cnt >= 4
        )
        if not cand:
            continue
        donors = np.nonzero(np.abs(jx) == cand[0][2])[0][-(2 - have):]
        for pick, d in enumerate(donors):
            sign = 1 if (pick + j) % 2 == 0 else -1
            k_vecs[d, 0] = sign * two_pi * j / lx
            jx[d] = sign * j

    # effective wavevector of the grid's central-difference operator
    k_eff = np.stack(
        [np.sin(k_vecs[:, 0] * hx) / hx, np.sin(k_vecs[:, 1] * hy) / hy, np.sin(k_vecs[:, 2] * hz) / hz],
        axis=1,
    )
    ok = np.linalg.norm(k_eff, axis=1) > 1e-12
    k_vecs, amps, k_eff, jx = k_vecs[ok], amps[ok], k_eff[ok], jx[ok]

    n = len(amps)
    nrm = k_eff / np.linalg.norm(k_eff, axis=1, keepdims=True)
    # in-plane basis: e1 horizontal (carries no vertical velocity), e2 holds
    # all the vertical content the plane admits
    zhat = np.zeros((n, 3))
    zhat[:, 2] = 1.0
    e1 = np.cross(zhat, nrm)
    flat = np.linalg.norm(e1, axis=1) < 1e-8
    if np.any(flat):
        # near-vertical wavevector: its plane is horizontal, any direction works
        e1[flat] = np.array([1.0, 0.0, 0.0]) - nrm[flat] * nrm[flat, 0:1]
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(nrm, e1)

    phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
    hand = rng.choice([-1.0, 1.0], size=n)

    # Alternate two exact corrections: scale each fit-band x-harmonic group
    # so the realized transect spectrum matches the one-dimensional von
    # Karman shape there, then rotate per-mode polarization inside each
    # solenoidal plane until the realized component variances are equal.
    # Polarization conserves each mode's energy, so the two fixed points
    # are compatible and a few rounds settle both to round-off.
    moments = _grid_moments(k_vecs, phases, (hx, hy, hz), (nx, ny, nz))
    psi = np.full(n, 0.25 * np.pi)
    root2 = np.sqrt(2.0)
    if jtop >= 2:
        k_j = two_pi * np.arange(1, jtop + 1) / lx
        shape = (1.0 + (_VK_A * spec.length_scale * k_j) ** 2) ** (-5.0 / 6.0)
    for _ in range(3):
        if jtop >= 2:
            a = amps[:, None] * (root2 * np.cos(psi))[:, None] * e1
            b = amps[:, None] * (root2 * np.sin(psi) * hand)[:, None] * e2
            power = _transect_u_power(
                a, b, jx, k_vecs, phases, (hx, hy, hz), (nx, ny, nz), jtop
            )[1:]
            live = power > 0
            if int(live.sum()) >= 2:
                target = shape * (power[live].sum() / shape[live].sum())
                for j in range(1, jtop + 1):
                    if live[j - 1]:
                        amps[np.abs(jx) == j] *= np.sqrt(target[j - 1] / power[j - 1])
        psi = _balance_polarization(amps, e1, e2, hand, moments, psi)

    a = amps[:, None] * (root2 * np.cos(psi))[:, None] * e1
    b = amps[:, None] * (root2 * np.sin(psi) * hand)[:, None] * e2
    return k_vecs, a, b, phases


def synthesize_field(spec: TurbulenceSpec) -> TurbulentField:
    """Realize a zero-mean solenoidal fluctuation field from ``spec``.

    Deterministic for a fixed ``spec.rng_seed``.  Components are demeaned
    and rescaled by a single pooled factor so that solenoidality is
    preserved and the pooled standard deviation equals ``target_sigma``.
    """
    rng = np.random.default_rng(spec.rng_seed)
    k_vecs, a_vecs, b_vecs, phases = _draw_modes(spec, rng)

    lx, ly, lz = spec.domain_size
    nx, ny, nz = spec.grid
    x = np.arange(nx) * (lx / nx)
    y = np.arange(ny) * (ly / ny)
    z = np.linspace(0.0, lz, nz)

    grids = np.zeros((3, nx, ny, nz))
    for kv, a, b, ph in zip(k_vecs, a_vecs, b_vecs, phases):
        ex = np.exp(1j * (kv[0] * x + ph))
        ey = np.exp(1j * kv[1] * y)
        ez = np.exp(1j * kv[2] * z)
        mode = (ex[:, None] * ey[None, :])[:, :, None] * ez[None, None, :]
        c, s = mode.real, mode.imag
        for i in range(3):
            grids[i] += a[i] * c + b[i] * s

    grids -= grids.mean(axis=(1, 2, 3), keepdims=True)
    sigma0 = float(np.sqrt(np.mean(grids ** 2)))
    if sigma0 > 0:
        grids *= spec.target_sigma / sigma0
    return TurbulentField(
        spec=spec,
        grid_u=grids[0].astype(np.float32),
        grid_v=grids[1].astype(np.float32),
        grid_w=grids[2].astype(np.float32),
        sigma0=sigma0,
    )


def sample_fluctuation(field: TurbulentField, positions, shift=None) -> np.ndarray:
    """Trilinear sample of (u, v, w) at ``positions - shift``.

    positions: (..., 3) array of (x, y, z) in meters.  The query wraps
    periodically in x and y and clamps to the column ends in z.  A query on
    a grid node with zero shift returns the stored value exactly.
    """
    pos = np.asarray(positions, dtype=float)
    scalar = pos.ndim == 1
    pos = np.atleast_2d(pos)
    if shift is not None:
        pos = pos - np.asarray(shift, dtype=float)

    lx, ly, lz = field.spec.domain_size
    nx, ny, nz = field.spec.grid
    hx, hy, hz = field.spec.spacing

    gx = np.mod(pos[..., 0], lx) / hx
    gy = np.mod(pos[..., 1], ly) / hy
    gz = np.clip(pos[..., 2], 0.0, lz) / hz

    ix0 = np.floor(gx).astype(np.intp) % nx
    iy0 = np.floor(gy).astype(np.intp) % ny
    iz0 = np.minimum(np.floor(gz).astype(np.intp), nz - 2)
    fx = gx - np.floor(gx)
    fy = gy - np.floor(gy)
    fz = gz - iz0
    ix1 = (ix0 + 1) % nx
    iy1 = (iy0 + 1) % ny
    iz1 = iz0 + 1

    out = np.empty(pos.shape[:-1] + (3,))
    for ci, g in enumerate((field.grid_u, field.grid_v, field.grid_w)):
        c00 = g[ix0, iy0, iz0] * (1 - fx) + g[ix1, iy0, iz0] * fx
        c10 = g[ix0, iy1, iz0] * (1 - fx) + g[ix1, iy1, iz0] * fx
        c01 = g[ix0, iy0, iz1] * (1 - fx) + g[ix1, iy0, iz1] * fx
        c11 = g[ix0, iy1, iz1] * (1 - fx) + g[ix1, iy1, iz1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[..., ci] = c0 * (1 - fz) + c1 * fz
    return out[0] if scalar else out


_HEADER = struct.Struct("<IIIdddd")


def write_field(field: TurbulentField, path) -> None:
    """Write the field in the binary interchange layout.

    Header: Nx,Ny,Nz as u32; Lx,Ly,Lz and sigma as f64, little endian.
    Then grid_u, grid_v, grid_w as float32 with x varying fastest.
    """
    nx, ny, nz = field.spec.grid
    lx, ly, lz = field.spec.domain_size
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(nx, ny, nz, lx, ly, lz, field.spec.target_sigma))
        for g in (field.grid_u, field.grid_v, field.grid_w):
            fh.write(np.asfortranarray(g.astype(np.float32)).tobytes(order="F"))


def read_field(path) -> TurbulentField:
    """Read a field written by ``write_field``.

    Generation parameters not carried by the file (mode count, length scale,
    seed) are not recoverable; the returned spec holds placeholders and
    ``sigma0`` is NaN.
    """
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise TurbulenceConfigError("field file truncated in header")
        nx, ny, nz, lx, ly, lz, sigma = _HEADER.unpack(raw)
        spec = TurbulenceSpec(
            domain_size=(lx, ly, lz),
            grid=(int(nx), int(ny), int(nz)),
            n_modes=1,
            length_scale=0.0,
            target_sigma=sigma,
            rng_seed=0,
        )
        count = nx * ny * nz
        grids = []
        for _ in range(3):
            flat = np.fromfile(fh, dtype="<f4", count=count)
            if flat.size != count:
                raise TurbulenceConfigError("field file truncated in grid data")
            grids.append(np.ascontiguousarray(flat.reshape((nx, ny, nz), order="F")))
        if fh.read(1):
            raise TurbulenceConfigError("field file has trailing bytes")
    return TurbulentField(spec=spec, grid_u=grids[0], grid_v=grids[1], grid_w=grids[2], sigma0=float("nan"))
