"""Triple gradient agreement for the normalizer: closed form vs tape vs central differences."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np

from .normalizers import PRESETS, normalize_backward, normalize_forward, spec_preset
from .tensor import Tape, Tensor, backward, mul, numeric_gradient, reduce_sum, relative_error, sub

TAPE_TOL = 1e-12
FD_TOL = 1e-6
# central-difference step; balances truncation against rounding for O(1) inputs
FD_EPS = 2e-5
SMALL_SHAPE = (2, 3, 4, 4)
LARGE_SHAPE = (4, 4, 6, 6)
DN_WINDOW = (3, 3, 3)


@dataclass(frozen=True)
class CaseResult:
    preset: str
    sigma: float
    centered: bool
    affine: bool
    seed: int
    shape: tuple
    tape_abs: float
    analytic_fd_rel: float
    tape_fd_rel: float

    @property
    def passed(self) -> bool:
        return self.tape_abs <= TAPE_TOL and self.analytic_fd_rel <= FD_TOL and self.tape_fd_rel <= FD_TOL

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.preset:<13} sigma={self.sigma:<4} centered={int(self.centered)} affine={int(self.affine)} "
                f"seed={self.seed} shape={'x'.join(map(str, self.shape))} "
                f"tape={self.tape_abs:.1e} fd(analytic)={self.analytic_fd_rel:.1e} fd(tape)={self.tape_fd_rel:.1e}")


def build_spec(preset: str, sigma: float, centered: bool, affine: bool, channels: int, rng: np.random.Generator):
    spec = spec_preset(preset, channels, dn_window=DN_WINDOW, sigma=sigma, affine=affine)
    spec = dataclasses.replace(spec, region_a=spec.region_b if centered else None)
    if affine:
        spec = spec.with_affine(Tensor(rng.uniform(0.5, 1.5, channels)), Tensor(rng.normal(size=channels)))
    return spec


def check_case(preset: str, sigma: float, centered: bool, affine: bool, seed: int, shape=None) -> CaseResult:
    """Compare the closed-form backward with the tape and both with finite differences.

    The probe loss is ``sum(w * (N(z) - N(z0)))``: same gradient as ``sum(w * N(z))``
    but the unchanged outputs cancel exactly, which keeps the difference quotient clean.
    """
    rng = np.random.default_rng(seed)
    shape = shape or (LARGE_SHAPE if seed == 0 else SMALL_SHAPE)
    spec = build_spec(preset, sigma, centered, affine, shape[1], rng)
    z = Tensor(rng.normal(size=shape))
    w = Tensor(rng.normal(size=shape))

    tape = Tape()
    zl = tape.leaf(z)
    gl, bl = (tape.leaf(spec.gain), tape.leaf(spec.bias)) if affine else (None, None)
    tspec = spec.with_affine(gl, bl) if affine else spec
    out, _ = normalize_forward(zl, tspec)
    grads = backward(tape, reduce_sum(mul(out, w)))

    _, state = normalize_forward(z, spec)
    dz, dgain, dbias = normalize_backward(state, spec, w)
    diffs = [np.max(np.abs(grads[zl.node].data - dz.data))]
    if affine:
        diffs.append(np.max(np.abs(grads[gl.node].data - dgain.data)))
        diffs.append(np.max(np.abs(grads[bl.node].data - dbias.data)))

    base = out.detach()

    def probe(x):
        return reduce_sum(mul(sub(normalize_forward(x, spec)[0], base), w))

    numeric = numeric_gradient(probe, z, FD_EPS)
    return CaseResult(preset, sigma, centered, affine, seed, tuple(shape), float(max(diffs)),
                      relative_error(dz.data, numeric), relative_error(grads[zl.node].data, numeric))


def run_suite(presets=PRESETS, sigmas=(0.1, 1.0), seeds=range(10)):
    for preset, sigma, centered, affine in itertools.product(presets, sigmas, (True, False), (False, True)):
        for seed in seeds:
            yield check_case(preset, sigma, centered, affine, seed)
