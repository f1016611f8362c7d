"""Cube/spectra/abundance file I/O and the synthetic scene generator."""

from __future__ import annotations

import os
import warnings
from pathlib import Path

import numpy as np

from .datatypes import AbundanceMap, HyperCube, SpectraMatrix, SynthSpec
from .errors import CubeFormatError, DegenerateCube, NonFiniteValue

_ENVI_DTYPES = {4: np.dtype("f4"), 5: np.dtype("f8"), 12: np.dtype("u2")}
_ENVI_KEYS = {"samples", "lines", "bands", "interleave", "data type", "byte order"}


def _grid_shape(n_pixels):
    """Pick (height, width) for a flat pixel list: squarest factorization."""
    h = int(np.sqrt(n_pixels))
    while h > 1 and n_pixels % h != 0:
        h -= 1
    return h, n_pixels // h


def _parse_envi_header(hdr_path):
    text = Path(hdr_path).read_text()
    fields = {}
    ignored = []
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip().strip("{}").strip()
        if key in _ENVI_KEYS:
            fields[key] = value
        elif key != "envi":
            ignored.append(key)
    if ignored:
        warnings.warn(f"ignoring unsupported ENVI header keys: {ignored}")
    missing = _ENVI_KEYS - fields.keys()
    if missing:
        raise CubeFormatError(f"ENVI header missing keys: {sorted(missing)}")
    return fields


def _find_envi_header(path):
    p = Path(path)
    for cand in (Path(str(p) + ".hdr"), p.with_suffix(".hdr")):
        if cand.exists():
            return cand
    raise CubeFormatError(f"no ENVI header found next to {path}")


def load_envi(path):
    """Read a raw ENVI cube (bsq/bil/bip) with its ASCII sidecar header."""
    fields = _parse_envi_header(_find_envi_header(path))
    try:
        samples = int(fields["samples"])
        lines = int(fields["lines"])
        bands = int(fields["bands"])
        dtype_code = int(fields["data type"])
        byte_order = int(fields["byte order"])
    except ValueError as exc:
        raise CubeFormatError(f"non-numeric ENVI header value: {exc}") from exc
    interleave = fields["interleave"].lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise CubeFormatError(f"unsupported interleave {interleave!r}")
    if dtype_code not in _ENVI_DTYPES:
        raise CubeFormatError(f"unsupported ENVI data type {dtype_code}")
    if byte_order not in (0, 1):
        raise CubeFormatError(f"byte order must be 0 or 1, got {byte_order}")
    if min(samples, lines, bands) <= 0:
        raise CubeFormatError("samples/lines/bands must all be positive")

    dtype = _ENVI_DTYPES[dtype_code].newbyteorder("<" if byte_order == 0 else ">")
    raw = np.fromfile(path, dtype=dtype)
    expected = samples * lines * bands
    if raw.size != expected:
        raise CubeFormatError(f"payload holds {raw.size} values, header declares {expected}")

    if interleave == "bip":
        arr = raw.reshape(lines, samples, bands)
    elif interleave == "bil":
        arr = raw.reshape(lines, bands, samples).transpose(0, 2, 1)
    else:  # bsq
        arr = raw.reshape(bands, lines, samples).transpose(1, 2, 0)
    data = arr.reshape(lines * samples, bands).astype(np.float64)
    if not np.isfinite(data).all():
        raise NonFiniteValue(f"non-finite values in {path}")
    return HyperCube(height=lines, width=samples, bands=bands, data=data)


def load_csv_cube(path):
    """Read a CSV cube: one pixel per row, optional leading '#' header line."""
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise CubeFormatError(f"cannot parse CSV cube {path}: {exc}") from exc
    if not np.isfinite(data).all():
        raise NonFiniteValue(f"non-finite values in {path}")
    h, w = _grid_shape(data.shape[0])
    return HyperCube(height=h, width=w, bands=data.shape[1], data=data)


def load_cube(path, format=None):
    """Load a hyperspectral cube; ``format`` is 'envi', 'csv' or inferred."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if format is None:
        format = "csv" if str(path).endswith(".csv") else "envi"
    if format == "csv":
        return load_csv_cube(path)
    if format == "envi":
        return load_envi(path)
    raise ValueError(f"unknown cube format {format!r}")


def save_cube_csv(cube, path):
    np.savetxt(path, cube.data, delimiter=",", fmt="%.17g",
               header=f"bands={cube.bands}", comments="# ")


def normalize_cube(cube):
    """Scale so the global maximum is 1; idempotent; preserves band shape."""
    peak = cube.data.max()
    if peak <= 0.0:
        raise DegenerateCube("cannot normalize an all-zero cube")
    if peak == 1.0:
        return cube
    return HyperCube(cube.height, cube.width, cube.bands, cube.data / peak,
                     cube.band_wavelengths)


def _smooth_spectra(k, bands, rng):
    """Random nonnegative smooth spectra in [0,1]: sums of Gaussian bumps.

    Each endmember gets a dominant bump in its own stratum of the band axis
    plus a few weak secondary bumps, giving spectrally distinct signatures
    (mutual angles comparable to real material libraries) rather than
    near-collinear ones.
    """
    grid = np.arange(bands, dtype=np.float64)
    rows = np.empty((k, bands))
    edges = np.linspace(0, bands - 1, k + 1)
    order = rng.permutation(k)
    for i in range(k):
        lo, hi = edges[order[i]], edges[order[i] + 1]
        c0 = rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo))
        w0 = rng.uniform(bands / 30.0, bands / 15.0)
        s = np.exp(-0.5 * ((grid - c0) / w0) ** 2)
        n_extra = rng.integers(1, 3)
        centers = rng.uniform(0, bands - 1, n_extra)
        widths = rng.uniform(bands / 40.0, bands / 20.0, n_extra)
        amps = rng.uniform(0.03, 0.15, n_extra)
        s = s + (amps[:, None] * np.exp(
            -0.5 * ((grid[None, :] - centers[:, None]) / widths[:, None]) ** 2)).sum(axis=0)
        s += 0.01
        rows[i] = s / s.max() * rng.uniform(0.7, 1.0)
    return rows


def synth_scene(spec: SynthSpec):
    """Generate (cube, endmembers, abundances) from the linear mixing model.

    Pixels are convex combinations of smooth random endmember spectra plus
    additive white Gaussian noise scaled to the requested per-cube SNR.
    Deterministic given ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    endm = _smooth_spectra(spec.k, spec.bands, rng)
    abund = rng.dirichlet(np.full(spec.k, spec.dirichlet_alpha), size=spec.n_pixels)

    n_pure = int(np.floor(spec.pure_pixel_fraction * spec.n_pixels))
    if n_pure > 0:
        pure_idx = rng.choice(spec.n_pixels, size=n_pure, replace=False)
        which = rng.integers(0, spec.k, size=n_pure)
        abund[pure_idx] = 0.0
        abund[pure_idx, which] = 1.0

    clean = abund @ endm
    if np.isinf(spec.snr_db):
        data = clean
    else:
        signal_power = np.mean(clean ** 2)
        noise_std = np.sqrt(signal_power / 10.0 ** (spec.snr_db / 10.0))
        data = clean + rng.normal(0.0, noise_std, clean.shape)

    h, w = _grid_shape(spec.n_pixels)
    cube = HyperCube(height=h, width=w, bands=spec.bands, data=data)
    return cube, SpectraMatrix(endm), AbundanceMap(h, w, abund)


def _write_atomic(path, payload: bytes):
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_pgm(values, height, width, path):
    """Binary 8-bit PGM (P5); values in [0,1], scaled by 255, round-half-up."""
    scaled = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    bytes_ = np.clip(scaled, 0, 255).astype(np.uint8).reshape(height, width)
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    _write_atomic(path, header + bytes_.tobytes())


def save_abundance_maps(amap: AbundanceMap, out_dir):
    """Write one PGM per endmember plus a raw-fraction CSV; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(amap.k):
        p = out / f"abundance_{k + 1}.pgm"
        save_pgm(amap.values[:, k], amap.height, amap.width, p)
        paths.append(p)
    csv_path = out / "abundances.csv"
    header = "pixel," + ",".join(f"a{i + 1}" for i in range(amap.k))
    body = [header]
    for p in range(amap.n_pixels):
        body.append(f"{p}," + ",".join(f"{v:.17g}" for v in amap.values[p]))
    _write_atomic(csv_path, ("\n".join(body) + "\n").encode("ascii"))
    paths.append(csv_path)
    return paths


def load_abundance_csv(path):
    """Read the 'pixel,a1..aK' CSV written by save_abundance_maps."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    vals = raw[:, 1:]
    h, w = _grid_shape(vals.shape[0])
    return AbundanceMap(h, w, vals)


def save_spectra_csv(spectra: SpectraMatrix, path):
    np.savetxt(path, spectra.rows, delimiter=",", fmt="%.17g")


def load_spectra_csv(path):
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return SpectraMatrix(rows)
