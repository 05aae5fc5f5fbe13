"""Parse textual test-function specifiers into vectorized callables.

Grammar::

    const:<v>
    stereo:<a>,<b>,<c>        or stereo:<abc> with single digits
    fourier:<k>:re|im         Re/Im of z^k / (1+|z|^2)^(k/2)
    indicator:annulus:<r1>:<r2>       r1 < |z| <= r2, r2 may be inf
    indicator:halfplane:re|im:<c>     Re z > c, or Im z > c

Every function is bounded by max(1, |v|) and takes a complex array in which
infinity is encoded as complex(inf, 0).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ValidationError
from .measures import stereo_monomial
from .numerics import is_infinite


class FunctionSpecError(ValidationError):
    def __init__(self, spec: str, position: int, message: str):
        super().__init__(f"{message} at position {position} in {spec!r}")
        self.spec = spec
        self.position = position


def _fields(spec: str) -> list[tuple[int, str]]:
    out, pos = [], 0
    for part in spec.split(":"):
        out.append((pos, part))
        pos += len(part) + 1
    return out


def _float(spec, field, allow_inf=False) -> float:
    pos, text = field
    try:
        v = float(text)
    except ValueError:
        raise FunctionSpecError(spec, pos, f"expected a number, got {text!r}") from None
    if np.isnan(v) or (np.isinf(v) and not (allow_inf and v > 0)):
        raise FunctionSpecError(spec, pos, "number must be finite")
    return v


def _int(spec, field, minimum=0) -> int:
    pos, text = field
    if not text.isdigit():
        raise FunctionSpecError(spec, pos, f"expected a nonnegative integer, got {text!r}")
    v = int(text)
    if v < minimum:
        raise FunctionSpecError(spec, pos, f"expected an integer >= {minimum}")
    return v


def _arity(spec, fields, n):
    if len(fields) != n:
        pos = fields[min(len(fields), n) - 1][0] if len(fields) > n else len(spec)
        raise FunctionSpecError(spec, pos, f"expected {n - 1} fields after the kind, got {len(fields) - 1}")


def _finite_part(z):
    z = np.asarray(z, dtype=complex)
    inf = is_infinite(z)
    return np.where(inf, 0, z), inf


def constant(v: float) -> Callable:
    def phi(z):
        return np.full(np.shape(z), v, dtype=float)

    return phi


def fourier(k: int, part: str) -> Callable:
    def phi(z):
        zz, inf = _finite_part(z)
        val = zz**k / (1.0 + np.abs(zz) ** 2) ** (k / 2)
        out = val.real if part == "re" else val.imag
        return np.where(inf, 0.0, out)

    return phi


def annulus_indicator(r1: float, r2: float) -> Callable:
    def phi(z):
        zz, inf = _finite_part(z)
        r = np.abs(zz)
        return np.where(~inf & (r > r1) & (r <= r2), 1.0, 0.0)

    return phi


def halfplane_indicator(part: str, c: float) -> Callable:
    def phi(z):
        zz, inf = _finite_part(z)
        x = zz.real if part == "re" else zz.imag
        return np.where(~inf & (x > c), 1.0, 0.0)

    return phi


def parse_function_spec(spec: str) -> Callable:
    spec = spec.strip()
    fields = _fields(spec)
    kind = fields[0][1]
    if kind == "const":
        _arity(spec, fields, 2)
        fn = constant(_float(spec, fields[1]))
    elif kind == "stereo":
        _arity(spec, fields, 2)
        pos, text = fields[1]
        parts = text.split(",") if "," in text else list(text)
        if len(parts) != 3:
            raise FunctionSpecError(spec, pos, "stereo needs three exponents")
        exps, off = [], pos
        for p in parts:
            exps.append(_int(spec, (off, p)))
            off += len(p) + (1 if "," in text else 0)
        fn = stereo_monomial(*exps)
    elif kind == "fourier":
        _arity(spec, fields, 3)
        k = _int(spec, fields[1], minimum=1)
        part = fields[2][1]
        if part not in ("re", "im"):
            raise FunctionSpecError(spec, fields[2][0], "expected 're' or 'im'")
        fn = fourier(k, part)
    elif kind == "indicator":
        if len(fields) < 2:
            raise FunctionSpecError(spec, len(spec), "indicator needs a shape")
        shape = fields[1][1]
        if shape == "annulus":
            _arity(spec, fields, 4)
            r1, r2 = _float(spec, fields[2]), _float(spec, fields[3], allow_inf=True)
            if r1 < 0 or r2 < r1:
                raise FunctionSpecError(spec, fields[2][0], "need 0 <= r1 <= r2")
            fn = annulus_indicator(r1, r2)
        elif shape == "halfplane":
            _arity(spec, fields, 4)
            part = fields[2][1]
            if part not in ("re", "im"):
                raise FunctionSpecError(spec, fields[2][0], "expected 're' or 'im'")
            fn = halfplane_indicator(part, _float(spec, fields[3]))
        else:
            raise FunctionSpecError(spec, fields[1][0], f"unknown indicator shape {shape!r}")
    else:
        raise FunctionSpecError(spec, 0, f"unknown function kind {kind!r}")
    fn.spec = spec
    fn.__name__ = spec
    return fn
