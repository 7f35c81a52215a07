"""Nudged elastic band with a climbing image on small analytic surfaces.

Forces use the improved tangent estimate. Three step rules are offered:
limited-memory BFGS on the NEB force (the default), FIRE, and quick-min. The
last two are damped-velocity schemes that zero the velocity whenever it points
against the force.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

GRADIENT_RTOL = 1e-5
FD_STEP = 1e-6


class NebError(RuntimeError):
    pass


def fd_gradient(energy: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (energy(x + e) - energy(x - e)) / (2 * h)
    return g


@dataclass(frozen=True)
class SurfaceModel:
    """A potential surface; without an analytic gradient, central differences are used."""

    name: str
    dimension: int
    energy_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray] | None = None
    reactant: tuple[float, ...] | None = None
    product: tuple[float, ...] | None = None
    bounds: tuple[tuple[float, float], ...] | None = None
    spring: float = 1.0  # recommended spring constant in this surface's units

    def energy(self, x) -> float:
        return float(self.energy_fn(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient_fn is None:
            return fd_gradient(self.energy, x)
        return np.asarray(self.gradient_fn(x), dtype=float)

    def check_gradient(self, points: Sequence[Sequence[float]], rtol: float = GRADIENT_RTOL) -> float:
        """Largest relative gradient error against central differences."""
        worst = 0.0
        for p in points:
            p = np.asarray(p, dtype=float)
            ga = self.gradient(p)
            gf = fd_gradient(self.energy, p)
            scale = max(np.linalg.norm(gf), 1.0)
            err = float(np.linalg.norm(ga - gf) / scale)
            worst = max(worst, err)
        if worst > rtol:
            raise NebError(f"surface {self.name!r}: gradient disagrees with finite differences ({worst:.2e})")
        return worst


def _exp_quadratic(params: dict):
    A, a, b, c, x0, y0 = (np.asarray(params[k], dtype=float) for k in ("A", "a", "b", "c", "x0", "y0"))

    def terms(p):
        dx, dy = p[0] - x0, p[1] - y0
        return dx, dy, A * np.exp(a * dx * dx + b * dx * dy + c * dy * dy)

    def energy(p):
        return float(np.sum(terms(p)[2]))

    def gradient(p):
        dx, dy, t = terms(p)
        return np.array([np.sum(t * (2 * a * dx + b * dy)), np.sum(t * (b * dx + 2 * c * dy))])

    return energy, gradient


def _leps(params: dict):
    """Collinear three-atom LEPS surface in (r_AB, r_BC)."""
    s = np.array([params["a"], params["b"], params["c"]])
    d = np.array([params["d_ab"], params["d_bc"], params["d_ac"]])
    r0, alpha = params["r0"], params["alpha"]

    def qj(r):
        e1 = np.exp(-alpha * (r - r0))
        e2 = e1 * e1
        q = d / 2 * (1.5 * e2 - e1)
        j = d / 4 * (e2 - 6 * e1)
        dq = d / 2 * (-3 * alpha * e2 + alpha * e1)
        dj = d / 4 * (-2 * alpha * e2 + 6 * alpha * e1)
        return q, j, dq, dj

    def parts(p):
        r = np.array([p[0], p[1], p[0] + p[1]])
        q, j, dq, dj = qj(r)
        u = j / (1 + s)
        big = u @ u - u[0] * u[1] - u[1] * u[2] - u[0] * u[2]
        return r, q, u, big, dq, dj

    def energy(p):
        _, q, _, big, _, _ = parts(p)
        return float(np.sum(q / (1 + s)) - np.sqrt(big))

    def gradient(p):
        _, _, u, big, dq, dj = parts(p)
        ds_du = np.array([2 * u[0] - u[1] - u[2], 2 * u[1] - u[0] - u[2], 2 * u[2] - u[0] - u[1]])
        dv_dr = dq / (1 + s) - ds_du * dj / (1 + s) / (2 * np.sqrt(big))
        return np.array([dv_dr[0] + dv_dr[2], dv_dr[1] + dv_dr[2]])

    return energy, gradient


_KINDS = {"exp_quadratic": _exp_quadratic, "leps": _leps}
BUNDLED_SURFACES = ("muller_brown", "leps")


def surface_from_dict(spec: dict, check: bool = True) -> SurfaceModel:
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise NebError(f"unknown surface kind {kind!r}")
    energy, gradient = _KINDS[kind](spec["params"])
    tup = lambda v: tuple(float(x) for x in v) if v is not None else None
    bounds = tuple((float(lo), float(hi)) for lo, hi in spec["bounds"]) if "bounds" in spec else None
    surf = SurfaceModel(
        spec.get("name", kind),
        2,
        energy,
        gradient,
        tup(spec.get("reactant")),
        tup(spec.get("product")),
        bounds,
        float(spec.get("spring", 1.0)),
    )
    if check:
        rng = np.random.default_rng(0)
        box = np.array(bounds if bounds else [(-1.0, 1.0)] * 2)
        surf.check_gradient(rng.uniform(box[:, 0], box[:, 1], size=(16, 2)))
    return surf


def load_surface(name_or_path: str | Path) -> SurfaceModel:
    """A bundled surface by name, or a JSON surface file."""
    if str(name_or_path) in BUNDLED_SURFACES:
        text = resources.files("qew").joinpath("data", "surfaces", f"{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise NebError(f"no surface named {name_or_path!r}")
        text = path.read_text()
    return surface_from_dict(json.loads(text))


@dataclass(frozen=True)
class NebPath:
    images: np.ndarray
    energies: np.ndarray
    spring: float = 1.0
    converged: bool = False
    force_history: tuple[float, ...] = ()
    climb_history: tuple[float, ...] = ()
    steps: int = 0

    def __post_init__(self):
        imgs = np.array(self.images, dtype=float)
        if imgs.ndim != 2 or imgs.shape[0] < 3:
            raise NebError("a path needs at least 3 images")
        imgs.setflags(write=False)
        en = np.array(self.energies, dtype=float)
        en.setflags(write=False)
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "energies", en)

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    @property
    def climbing_index(self) -> int:
        return 1 + int(np.argmax(self.energies[1:-1]))


def _energies(surface: SurfaceModel, images: np.ndarray, workers: int = 1) -> np.ndarray:
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return np.array(list(pool.map(surface.energy, images)))
    return np.array([surface.energy(x) for x in images])


def _gradients(surface: SurfaceModel, images: np.ndarray, workers: int = 1) -> np.ndarray:
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return np.array(list(pool.map(surface.gradient, images)))
    return np.array([surface.gradient(x) for x in images])


def interpolate_path(reactant, product, n_images: int, surface: SurfaceModel | None = None, spring: float = 1.0) -> NebPath:
    r = np.asarray(reactant, dtype=float)
    p = np.asarray(product, dtype=float)
    if r.shape != p.shape:
        raise NebError("reactant and product dimensions differ")
    if n_images < 3:
        raise NebError("n_images must be at least 3")
    t = np.linspace(0.0, 1.0, n_images)[:, None]
    images = (1 - t) * r + t * p
    energies = _energies(surface, images) if surface is not None else np.zeros(n_images)
    return NebPath(images, energies, spring)


def tangents(images: np.ndarray, energies: np.ndarray) -> np.ndarray:
    """Improved tangent estimate at interior images (rows 0 and -1 are zero)."""
    tau = np.zeros_like(images)
    for i in range(1, len(images) - 1):
        tp = images[i + 1] - images[i]
        tm = images[i] - images[i - 1]
        vp, v, vm = energies[i + 1], energies[i], energies[i - 1]
        if vp > v > vm:
            t = tp
        elif vp < v < vm:
            t = tm
        else:
            dmax = max(abs(vp - v), abs(vm - v))
            dmin = min(abs(vp - v), abs(vm - v))
            t = tp * dmax + tm * dmin if vp > vm else tp * dmin + tm * dmax
        norm = np.linalg.norm(t)
        tau[i] = t / norm if norm > 0 else 0.0
    return tau


def neb_forces(
    path: NebPath,
    surface: SurfaceModel,
    climbing: bool = False,
    climb_index: int | None = None,
    gradients: np.ndarray | None = None,
    kink_switch: bool = False,
) -> np.ndarray:
    """NEB force on every image; endpoints get zero.

    With ``kink_switch`` a fraction f(phi) = (1 + cos(pi cos phi)) / 2 of the
    perpendicular spring force is added, phi being the bend angle at the image.
    It vanishes on straight segments and suppresses kinks when springs are soft.
    """
    x = path.images
    e = path.energies
    g = _gradients(surface, x) if gradients is None else gradients
    tau = tangents(x, e)
    f = np.zeros_like(x)
    ci = (climb_index if climb_index is not None else path.climbing_index) if climbing else None
    for i in range(1, len(x) - 1):
        gpar = float(g[i] @ tau[i])
        if i == ci:
            f[i] = -g[i] + 2 * gpar * tau[i]
            continue
        dp, dm = x[i + 1] - x[i], x[i] - x[i - 1]
        spring = path.spring * (np.linalg.norm(dp) - np.linalg.norm(dm))
        f[i] = -(g[i] - gpar * tau[i]) + spring * tau[i]
        if kink_switch:
            norms = np.linalg.norm(dp) * np.linalg.norm(dm)
            cos_phi = float(dp @ dm / norms) if norms > 0 else 1.0
            fs = path.spring * (dp - dm)
            f[i] += 0.5 * (1 + np.cos(np.pi * cos_phi)) * (fs - (fs @ tau[i]) * tau[i])
    return f


@dataclass(frozen=True)
class RelaxConfig:
    max_steps: int = 200
    force_tol: float = 1e-4
    climbing: bool = True
    method: str = "lbfgs"  # lbfgs | fire | quickmin
    dt: float = 0.01
    dt_max: float = 0.05
    max_move: float = 0.05
    memory: int = 10
    climb_fraction: float = 0.05
    kink_switch: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.method not in ("lbfgs", "fire", "quickmin"):
            raise NebError(f"unknown step rule {self.method!r}")
        if self.max_steps < 0 or self.force_tol <= 0 or self.dt <= 0:
            raise NebError("invalid relaxation settings")


def relax_path(path: NebPath, surface: SurfaceModel, config: RelaxConfig = RelaxConfig()) -> NebPath:
    """Relax interior images until max |F| < force_tol or the step budget runs out.

    Every force evaluation counts as one step. The quasi-Newton rule rejects a
    trial step when the largest force more than doubles, clears its memory and
    halves the trust radius.
    """
    x = np.array(path.images)
    e = _energies(surface, x, config.workers)
    v = np.zeros_like(x)
    dt = config.dt
    alpha = 0.1
    since_neg = 0
    mem_s: list[np.ndarray] = []
    mem_y: list[np.ndarray] = []
    prev: tuple[np.ndarray, np.ndarray] | None = None
    trust = config.max_move
    last_ci = -1
    accepted: tuple | None = None
    hist: list[float] = []
    climb: list[float] = []
    climbing = False
    f_start = None
    cur = replace(path, images=x, energies=e)
    for step in range(config.max_steps + 1):
        if not np.all(np.isfinite(e)):
            bad = int(np.flatnonzero(~np.isfinite(e))[0])
            raise NebError(f"non-finite energy at image {bad} after {step} steps: {x[bad].tolist()}")
        g = _gradients(surface, x, config.workers)
        f = neb_forces(cur, surface, climbing, gradients=g, kink_switch=config.kink_switch)
        fmax = float(np.max(np.linalg.norm(f[1:-1], axis=1)))
        if f_start is None:
            f_start = fmax
        if config.climbing and not climbing and fmax < config.climb_fraction * f_start:
            # switch the climbing image on once the band is roughly relaxed
            climbing = True
            f = neb_forces(cur, surface, True, gradients=g, kink_switch=config.kink_switch)
            fmax = float(np.max(np.linalg.norm(f[1:-1], axis=1)))
            accepted = None
        if config.method == "lbfgs" and accepted is not None and fmax > 2 * accepted[3]:
            # reject: back to the last accepted band
            x, e, f, fmax = accepted
            cur = replace(cur, images=x, energies=e)
            mem_s.clear()
            mem_y.clear()
            prev = None
            trust *= 0.5
        elif config.method == "lbfgs":
            trust = min(trust * 1.1, config.max_move)
        hist.append(fmax)
        if climbing:
            climb.append(float(e[cur.climbing_index]))
        if fmax < config.force_tol and climbing == config.climbing:
            return replace(cur, converged=True, force_history=tuple(hist), climb_history=tuple(climb), steps=step)
        if step == config.max_steps:
            break
        if config.method == "lbfgs":
            accepted = (x, e, f, fmax)
            ci = cur.climbing_index if climbing else -1
            if ci != last_ci:
                # the force field changed form; stale curvature pairs mislead
                mem_s.clear()
                mem_y.clear()
                prev = None
                last_ci = ci
            dx, prev = _lbfgs_step(x, f, prev, mem_s, mem_y, config.memory)
            cap = trust
        else:
            v, dt, alpha, since_neg = _velocity_step(config.method, f, v, dt, alpha, since_neg, config.dt_max)
            dx = dt * v
            cap = config.max_move
        move = np.max(np.linalg.norm(dx, axis=1))
        if move > cap:
            dx *= cap / move
        dx[0] = dx[-1] = 0.0
        x = x + dx
        e = _energies(surface, x, config.workers)
        cur = replace(cur, images=x, energies=e)
    log.warning("NEB not converged after %d steps (max force %.2e)", config.max_steps, hist[-1])
    return replace(cur, converged=False, force_history=tuple(hist), climb_history=tuple(climb), steps=config.max_steps)


def _velocity_step(method, f, v, dt, alpha, since_neg, dt_max):
    # standard FIRE constants
    alpha0, n_min, f_inc, f_dec, f_alpha = 0.1, 5, 1.1, 0.5, 0.99
    power = float(np.sum(f * v))
    if method == "quickmin":
        fn = np.linalg.norm(f)
        v = (power / fn**2) * f if power > 0 and fn > 0 else np.zeros_like(v)
        return v + dt * f, dt, alpha, since_neg
    if power > 0:
        v = (1 - alpha) * v + alpha * np.linalg.norm(v) * f / np.linalg.norm(f)
        since_neg += 1
        if since_neg > n_min:
            dt = min(dt * f_inc, dt_max)
            alpha *= f_alpha
    else:
        v = np.zeros_like(v)
        since_neg = 0
        dt *= f_dec
        alpha = alpha0
    return v + dt * f, dt, alpha, since_neg


def _lbfgs_step(x, f, prev, mem_s, mem_y, memory):
    """Two-loop recursion with the force as the negative gradient."""
    g = -f.ravel()
    if prev is not None:
        s_k = x.ravel() - prev[0]
        y_k = g - prev[1]
        if s_k @ y_k > 1e-12:
            mem_s.append(s_k)
            mem_y.append(y_k)
            if len(mem_s) > memory:
                mem_s.pop(0)
                mem_y.pop(0)
    q = g.copy()
    coef = []
    for s_k, y_k in zip(reversed(mem_s), reversed(mem_y)):
        rho = 1.0 / (y_k @ s_k)
        a = rho * (s_k @ q)
        coef.append((rho, a))
        q -= a * y_k
    gamma = (mem_s[-1] @ mem_y[-1]) / (mem_y[-1] @ mem_y[-1]) if mem_s else 1.0 / 70.0
    r = gamma * q
    for (s_k, y_k), (rho, a) in zip(zip(mem_s, mem_y), reversed(coef)):
        r += s_k * (a - rho * (y_k @ r))
    d = -r
    if d @ f.ravel() <= 0:
        # uphill: forget curvature and follow the force
        mem_s.clear()
        mem_y.clear()
        d = f.ravel() / 70.0
    return d.reshape(x.shape), (x.ravel().copy(), g)


def extract_barrier(path: NebPath) -> tuple[float, float, int]:
    """(E_a, E_d, ts_index) measured from the first image."""
    if not path.converged:
        log.warning("extracting barrier from an unconverged path")
    ts = path.climbing_index
    e0 = float(path.energies[0])
    return float(path.energies[ts] - e0), float(path.energies[-1] - e0), ts


def saddle_character(surface: SurfaceModel, point, h: float = 1e-4) -> tuple[float, np.ndarray]:
    """Gradient norm and ascending Hessian eigenvalues (central differences of the gradient)."""
    p = np.asarray(point, dtype=float)
    dim = p.size
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        hess[:, i] = (surface.gradient(p + e) - surface.gradient(p - e)) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    return float(np.linalg.norm(surface.gradient(p))), np.linalg.eigvalsh(hess)


def window_path(path: NebPath, start: int, end: int, n_images: int, surface: SurfaceModel | None = None) -> NebPath:
    """Resample images start..end (inclusive) into a finer band with fixed ends."""
    if not 0 <= start < end < path.n_images:
        raise NebError(f"invalid window {start}..{end} for {path.n_images} images")
    if n_images < 3:
        raise NebError("n_images must be at least 3")
    seg = path.images[start : end + 1]
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(seg, axis=0), axis=1))])
    s = np.linspace(0.0, arc[-1], n_images)
    images = np.column_stack([np.interp(s, arc, seg[:, k]) for k in range(seg.shape[1])])
    energies = _energies(surface, images) if surface is not None else np.zeros(n_images)
    return NebPath(images, energies, path.spring)


def path_to_csv(path: NebPath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", *[f"x{k}" for k in range(path.images.shape[1])], "energy"])
    for i, (x, e) in enumerate(zip(path.images, path.energies)):
        w.writerow([i, *[repr(float(v)) for v in x], repr(float(e))])
    return buf.getvalue()


def path_from_csv(text: str, spring: float = 1.0) -> NebPath:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "image" or rows[0][-1] != "energy":
        raise NebError("path CSV must have header image,x0,...,energy")
    body = rows[1:]
    if [int(r[0]) for r in body] != list(range(len(body))):
        raise NebError("path CSV images must be numbered 0..n-1 in order")
    data = np.array([[float(v) for v in r[1:]] for r in body])
    return NebPath(data[:, :-1], data[:, -1], spring)


@dataclass(frozen=True)
class NebReport:
    surface: str
    e_a: float
    e_d: float
    ts_index: int
    ts_point: tuple[float, ...]
    converged: bool
    steps: int
    final_force: float
    hessian_eigenvalues: tuple[float, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "surface": self.surface,
            "E_a": self.e_a,
            "E_d": self.e_d,
            "ts_index": self.ts_index,
            "ts_point": list(self.ts_point),
            "converged": self.converged,
            "steps": self.steps,
            "final_max_force": self.final_force,
            "ts_hessian_eigenvalues": list(self.hessian_eigenvalues),
            "defaults_note": "spring constant, tangent scheme and optimizer are package defaults",
        }


def run_neb(
    surface: SurfaceModel,
    n_images: int = 10,
    config: RelaxConfig = RelaxConfig(),
    spring: float | None = None,
    reactant=None,
    product=None,
) -> tuple[NebPath, NebReport]:
    """Linear guess, relaxation and barrier extraction; ``spring`` defaults to the surface's hint."""
    spring = surface.spring if spring is None else spring
    r = surface.reactant if reactant is None else reactant
    p = surface.product if product is None else product
    if r is None or p is None:
        raise NebError("surface has no default endpoints; pass reactant and product")
    path = relax_path(interpolate_path(r, p, n_images, surface, spring), surface, config)
    e_a, e_d, ts = extract_barrier(path)
    _, eig = saddle_character(surface, path.images[ts])
    rep = NebReport(
        surface.name, e_a, e_d, ts, tuple(map(float, path.images[ts])), path.converged, path.steps,
        path.force_history[-1], tuple(map(float, eig)),
    )
    return path, rep
