"""Plain-text artefacts: path CSV, certificate sidecar, lattice checkpoint, config files.

Floats are written with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .dyadic_bm import TAG_CODES, TAG_NAMES, WaveletLattice
from .error_constants import ErrorConstants
from .errors import ConfigError, InvariantViolation
from .params import Params
from .record_breakers import HolderCertificate

PARAM_KEYS = ("alpha", "beta", "alpha_prime", "gamma", "eps0", "rho", "max_level", "scan_cap", "max_attempts")
LATTICE_HEADER = ["component", "level", "position", "coefficient", "condition", "threshold"]


def write_path_csv(file: Path, times: np.ndarray, values: np.ndarray) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(values.shape[1])])
        for t, row in zip(times, values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(file: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ConfigError(f"{file}: missing header row")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:]


def write_kv(file: Path, items: dict) -> None:
    with open(file, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n")


def read_kv(file: Path) -> dict[str, str]:
    out = {}
    with open(file) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{file}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def params_from_kv(kv: dict[str, str], prefix: str = "") -> dict:
    out = {}
    for key in PARAM_KEYS:
        if prefix + key in kv:
            raw = kv[prefix + key]
            try:
                out[key] = int(raw) if key in ("max_level", "scan_cap", "max_attempts") else float(raw)
            except ValueError:
                raise ConfigError(f"{prefix + key}={raw!r} is not a number") from None
    return out


def certificate_items(
    *,
    epsilon: float,
    level: int,
    session_level: int,
    seed: int,
    refinements: int,
    model: str,
    cert: HolderCertificate,
    consts: ErrorConstants,
    params: Params,
) -> dict:
    items = {
        "epsilon": epsilon,
        "level": level,
        "session_level": session_level,
        "G": consts.g,
        "K_alpha": cert.k_alpha,
        "Gamma_L": cert.gamma_l,
        "Gamma_R": cert.gamma_r,
        "K_2alpha": cert.k2_alpha,
        "N1": cert.n1,
        "N2": cert.n2,
        "seed": seed,
        "refinements": refinements,
        "model": model,
    }
    items.update({f"param.{k}": v for k, v in params.to_dict().items()})
    items.update({f"const.{k}": v for k, v in consts.to_dict().items()})
    return items


def load_certificate(kv: dict[str, str]) -> tuple[HolderCertificate, ErrorConstants, Params]:
    """Rebuild and re-validate a certificate sidecar."""
    try:
        params = Params(**params_from_kv(kv, "param."))
        cert = HolderCertificate(
            params.alpha, params.beta, params.alpha_prime, params.gamma, params.eps0,
            float(kv["K_alpha"]), int(kv["N1"]), int(kv["N2"]),
            float(kv["Gamma_L"]), float(kv["Gamma_R"]), float(kv["K_2alpha"]),
        )
        fields = ErrorConstants.__dataclass_fields__
        const = {}
        for name in fields:
            raw = kv[f"const.{name}"]
            const[name] = int(raw) if name in ("d", "dprime") else float(raw)
        consts = ErrorConstants(**const)
    except KeyError as exc:
        raise ConfigError(f"certificate is missing key {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(f"certificate value unreadable: {exc}") from None
    bad = consts.violations()
    if bad:
        raise InvariantViolation(f"certificate constants fail {', '.join(bad)}")
    if not math.isclose(consts.g, consts.g1 + consts.g2, rel_tol=1e-12):
        raise InvariantViolation("certificate G differs from G1 + G2")
    if not math.isclose(consts.g, float(kv["G"]), rel_tol=0):
        raise InvariantViolation("certificate G differs from its constants block")
    level, eps = int(kv["level"]), float(kv["epsilon"])
    if eps < consts.g * 2.0 ** (-level * (2 * consts.alpha - consts.beta)) * (1 - 1e-12):
        raise InvariantViolation("certificate epsilon is below the certified error at its level")
    return cert, consts, params


def write_lattice_csv(file: Path, lattice: WaveletLattice) -> None:
    """One row per coefficient; the top coefficient uses level -1."""
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LATTICE_HEADER)
        for i, v in enumerate(lattice.top):
            w.writerow([i, -1, 0, repr(float(v)), "free", "inf"])
        for h, (c, tags, thr) in enumerate(zip(lattice.coeffs, lattice.tags, lattice.thresholds)):
            for i in range(lattice.dprime):
                for k in range(c.shape[1]):
                    w.writerow([i, h, k, repr(float(c[i, k])), TAG_NAMES[int(tags[i, k])], repr(float(thr[i, k]))])


def read_lattice_csv(file: Path) -> WaveletLattice:
    with open(file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != LATTICE_HEADER:
        raise ConfigError(f"{file}: not a lattice checkpoint")
    body = rows[1:]
    try:
        top_rows = [r for r in body if int(r[1]) == -1]
        dprime = len(top_rows)
        top = np.empty(dprime)
        for r in top_rows:
            top[int(r[0])] = float(r[3])
        depth = max((int(r[1]) for r in body), default=-1) + 1
        lat = WaveletLattice(top)
        vals = [np.empty((dprime, 2**h)) for h in range(depth)]
        tags = [np.empty((dprime, 2**h), dtype=np.int8) for h in range(depth)]
        thr = [np.empty((dprime, 2**h)) for h in range(depth)]
        seen = 0
        for r in body:
            i, h, k = int(r[0]), int(r[1]), int(r[2])
            if h < 0:
                continue
            vals[h][i, k] = float(r[3])
            tags[h][i, k] = TAG_CODES[r[4]]
            thr[h][i, k] = float(r[5])
            seen += 1
    except (ValueError, IndexError, KeyError) as exc:
        raise ConfigError(f"{file}: corrupt checkpoint ({exc})") from None
    if seen != dprime * (2**depth - 1):
        raise ConfigError(f"{file}: checkpoint has {seen} coefficients, expected {dprime * (2**depth - 1)}")
    for h in range(depth):
        lat.append_level(vals[h], tags[h], thr[h])
    lat.check_tags()
    return lat
