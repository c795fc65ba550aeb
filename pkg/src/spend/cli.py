"""Command-line interface: every pipeline stage as a subcommand.

Configs are JSON with a mandatory ``"version": 1`` field; unknown fields
are rejected so typos fail fast.  No output embeds timestamps or host
details, so rerunning a command with equal inputs reproduces every file
byte for byte.  ``--threads`` (or the SPEND_THREADS variable) fans
per-pixel and per-spectrum stages out over row chunks with disjoint
writes; any thread count produces identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import baseline as baseline_mod
from . import metrics as metrics_mod
from . import nnet, noisestats, permute, rasterpng, synth, unmix
from .cubeio import HyperCube, Image, canonical_axis, load_cube, save_cube

CONFIG_VERSION = 1


class CliError(Exception):
    """User-facing failure: message printed without a traceback."""


# ---------------------------------------------------------------------------
# Config and table helpers

def _load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(obj, dict):
        raise CliError(f"top level of {p} must be a JSON object")
    return obj


def _check_fields(obj: dict, allowed, path, required=()):
    if obj.get("version") != CONFIG_VERSION:
        raise CliError(f"{path}: expected \"version\": {CONFIG_VERSION}")
    unknown = sorted(set(obj) - set(allowed) - {"version"})
    if unknown:
        raise CliError(f"{path}: unknown fields {unknown}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise CliError(f"{path}: missing required fields {missing}")


def _parse_phantom_spec(obj: dict, path) -> synth.PhantomSpec:
    _check_fields(obj, {"dims", "components", "background", "pixel_size"},
                  path, required=("dims", "components"))
    components = []
    for ci, comp in enumerate(obj["components"]):
        extra = sorted(set(comp) - {"shapes", "peaks"})
        if extra:
            raise CliError(f"{path}: component {ci} has unknown fields {extra}")
        shapes = []
        for sh in comp.get("shapes", []):
            extra = sorted(set(sh) - {"kind", "center", "radius", "amplitude"})
            if extra:
                raise CliError(f"{path}: shape has unknown fields {extra}")
            shapes.append(synth.Shape(
                kind=sh["kind"], center=tuple(sh["center"]),
                radius=sh["radius"], amplitude=sh["amplitude"],
            ))
        peaks = []
        for pk in comp.get("peaks", []):
            extra = sorted(set(pk) - {"center", "width", "height"})
            if extra:
                raise CliError(f"{path}: peak has unknown fields {extra}")
            peaks.append(synth.Peak(center=pk["center"], width=pk["width"],
                                    height=pk["height"]))
        components.append(synth.Component(shapes=tuple(shapes), peaks=tuple(peaks)))
    return synth.PhantomSpec(
        dims=tuple(obj["dims"]),
        components=tuple(components),
        background=obj.get("background", 0.0),
        pixel_size=obj.get("pixel_size"),
    )


def _parse_noise_spec(obj: dict, path, seed_override=None) -> synth.NoiseSpec:
    _check_fields(obj, {"sigma_iid", "rho_fast", "sigma_corr", "k_resonance",
                        "poisson_gain", "seed"}, path)
    seed = seed_override if seed_override is not None else obj.get("seed", 0)
    return synth.NoiseSpec(
        sigma_iid=obj.get("sigma_iid", 0.0),
        rho_fast=obj.get("rho_fast", 0.0),
        sigma_corr=obj.get("sigma_corr", 0.0),
        k_resonance=obj.get("k_resonance", 0.0),
        poisson_gain=obj.get("poisson_gain", 0.0),
        seed=seed,
    )


def _parse_train_config(obj: dict, path) -> tuple[nnet.ModelConfig, nnet.TrainConfig]:
    _check_fields(obj, {"model", "epochs", "batch_size", "learning_rate",
                        "val_fraction", "augment", "seed"}, path)
    model_obj = obj.get("model", {})
    extra = sorted(set(model_obj) - {"depth", "base_channels", "seed"})
    if extra:
        raise CliError(f"{path}: model block has unknown fields {extra}")
    mc = nnet.ModelConfig(
        depth=model_obj.get("depth", 2),
        base_channels=model_obj.get("base_channels", 16),
        seed=model_obj.get("seed", 0),
    )
    tc = nnet.TrainConfig(
        epochs=obj.get("epochs", 100),
        batch_size=obj.get("batch_size", 4),
        learning_rate=obj.get("learning_rate", 1e-3),
        val_fraction=obj.get("val_fraction", 0.1),
        augment=obj.get("augment", False),
        seed=obj.get("seed", 0),
    )
    return mc, tc


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows) -> None:
    lines = [",".join(str(h) for h in header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_spectra_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """First row is the wavenumber (or channel) grid; every following row
    is one spectrum.  Returns (grid, matrix)."""
    p = Path(path)
    if not p.exists():
        raise CliError(f"spectra file not found: {p}")
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise CliError(f"{p}: need a header row and at least one spectrum row")
    try:
        grid = np.array([float(v) for v in lines[0].split(",")])
        matrix = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        raise CliError(f"{p}: non-numeric cell ({exc})") from exc
    if matrix.shape[1] != grid.size:
        raise CliError(f"{p}: rows have {matrix.shape[1]} columns, header has {grid.size}")
    return grid, matrix


def _thread_count(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    return max(1, int(os.environ.get("SPEND_THREADS", "1")))


def _map_row_chunks(fn, n_rows: int, threads: int):
    """Apply fn(start, stop) to row chunks, serially or on a thread pool,
    and return results in chunk order.  fn must only read shared inputs
    and write into disjoint outputs, so scheduling cannot change bytes."""
    bounds = np.linspace(0, n_rows, min(threads, n_rows) + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if threads == 1 or len(chunks) == 1:
        return [fn(a, b) for a, b in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, a, b) for a, b in chunks]
        return [f.result() for f in futures]


def _distortion_map(cube: HyperCube, reference: HyperCube, threads: int) -> Image:
    if threads == 1:
        return metrics_mod.spectral_distortion_map(cube, reference)

    def run(a, b):
        sub = HyperCube(data=cube.data[a:b], wavenumbers=cube.wavenumbers,
                        fast_axis=cube.fast_axis)
        ref = HyperCube(data=reference.data[a:b], fast_axis=reference.fast_axis)
        return metrics_mod.spectral_distortion_map(sub, ref).data

    parts = _map_row_chunks(run, cube.n_x, threads)
    return Image(data=np.concatenate(parts, axis=0))


def _load_cube_arg(path, what: str) -> HyperCube:
    try:
        return load_cube(path)
    except FileNotFoundError as exc:
        raise CliError(f"{what}: {exc}") from exc


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(args) -> int:
    spec = _parse_phantom_spec(_load_json(args.spec), args.spec)
    noise = _parse_noise_spec(_load_json(args.noise), args.noise, seed_override=args.seed)
    clean, truth = synth.make_phantom(spec)
    noisy = synth.corrupt(clean, noise)
    save_cube(clean, args.out_clean)
    save_cube(noisy, args.out_noisy)
    if args.out_truth:
        stem = Path(args.out_truth)
        if stem.suffix == ".json":
            stem = stem.with_suffix("")
        n_x, n_y, _ = clean.shape
        c_cube = HyperCube(data=truth.C.reshape(n_x, n_y, truth.K))
        save_cube(c_cube, stem)
        _write_csv(stem.with_name(stem.name + "_spectra.csv"),
                   list(range(truth.S.shape[1])), truth.S)
    print(f"synth: wrote {clean.n_x}x{clean.n_y}x{clean.n_w} cube, "
          f"{truth.K} truth components, noise seed {noise.seed}")
    return 0


def cmd_analyze(args) -> int:
    cube = _load_cube_arg(args.inp, "input cube")
    signal = _load_cube_arg(args.signal, "signal estimate") if args.signal else None
    axis, report = noisestats.select_permutation_axis(cube, signal, tile=args.tile)
    payload = {"version": CONFIG_VERSION, **report.as_dict()}
    _dump_json(args.out, payload)
    stem = Path(args.out).with_suffix("")
    for ax, curve in report.psd.items():
        _write_csv(stem.with_name(stem.name + f"_psd_{ax}.csv"),
                   ["frequency", "power"], curve)
    print(f"analyze: selected axis {axis} "
          f"(fluctuation {report.fluctuation[axis]:.4f}, pcc {report.pcc[axis]:+.4f})")
    return 0


def cmd_permute(args) -> int:
    cube = _load_cube_arg(args.inp, "input cube")
    axis = args.axis
    if axis == "auto":
        axis, _ = noisestats.select_permutation_axis(cube)
    pairs = permute.split_permute(cube, axis)
    save_cube(pairs.input, args.out_input)
    save_cube(pairs.target, args.out_target)
    _dump_json(args.out_meta, {
        "version": CONFIG_VERSION,
        "axis": pairs.axis,
        "n_original": pairs.n_original,
        "parity_dropped": pairs.parity_dropped,
    })
    print(f"permute: axis {pairs.axis}, {pairs.input.extent(pairs.axis)} paired slices"
          + (" (dropped trailing slice)" if pairs.parity_dropped else ""))
    return 0


def _pairs_from_files(input_path, target_path, meta_path, axis_flag) -> permute.PairSet:
    inp = _load_cube_arg(input_path, "input stack")
    tgt = _load_cube_arg(target_path, "target stack")
    if meta_path:
        meta = _load_json(meta_path)
        _check_fields(meta, {"axis", "n_original", "parity_dropped"}, meta_path,
                      required=("axis", "n_original", "parity_dropped"))
        return permute.PairSet(input=inp, target=tgt, axis=meta["axis"],
                               n_original=int(meta["n_original"]),
                               parity_dropped=bool(meta["parity_dropped"]))
    if not axis_flag:
        raise CliError("provide --meta from the permute step or an explicit --axis")
    axis = canonical_axis(axis_flag)
    n = inp.extent(axis)
    return permute.PairSet(input=inp, target=tgt, axis=axis,
                           n_original=n, parity_dropped=False)


def cmd_train(args) -> int:
    mc, tc = _parse_train_config(_load_json(args.config), args.config)
    pairs = _pairs_from_files(args.input, args.target, args.meta, args.axis)
    model = nnet.build_model(mc)
    trained = nnet.train(model, pairs, tc)
    nnet.save_model(trained, args.out)
    if trained.history:
        last = trained.history[-1]
        best = min(h[2] for h in trained.history)
        print(f"train: {len(trained.history)} epochs, final train loss {last[1]:.6f}, "
              f"best val loss {best:.6f}, axis {trained.axis}")
    else:
        print("train: aborted before completing an epoch; initial weights kept")
    return 0


def cmd_denoise(args) -> int:
    model = nnet.load_model(args.model)
    cube = _load_cube_arg(args.inp, "input cube")
    out = nnet.predict(model, cube)
    save_cube(out, args.out)
    print(f"denoise: wrote {out.n_x}x{out.n_y}x{out.n_w} cube along axis {model.axis}")
    return 0


def _unmix_outputs(result: unmix.UnmixResult, dims, out_c, out_s) -> None:
    n_x, n_y = dims
    if out_c:
        out_dir = Path(out_c)
        out_dir.mkdir(parents=True, exist_ok=True)
        c_cube = HyperCube(data=result.C.reshape(n_x, n_y, result.K))
        save_cube(c_cube, out_dir / "concentrations")
        for k in range(result.K):
            cmap = result.C[:, k].reshape(n_x, n_y)
            rasterpng.write_png(out_dir / f"component_{k}.png", rasterpng.to_gray(cmap))
    if out_s:
        _write_csv(out_s, list(range(result.S.shape[1])), result.S)


def cmd_unmix(args) -> int:
    cube = _load_cube_arg(args.inp, "input cube")
    matrix = unmix.reshape_cube(cube)
    if args.method in ("lasso", "mcr"):
        if not args.refs:
            raise CliError(f"method {args.method} needs --refs spectra")
        _, refs = _read_spectra_csv(args.refs)
        if args.method == "lasso":
            result = unmix.lasso_unmix(matrix, refs, args.lasso_lambda)
        else:
            result = unmix.mcr_als(matrix, refs)
        _unmix_outputs(result, matrix.dims, args.out_c, args.out_s)
        rel = float(np.linalg.norm(result.E) / max(np.linalg.norm(matrix.values), 1e-300))
        print(f"unmix[{args.method}]: K={result.K}, iterations={result.iterations}, "
              f"converged={result.converged}, relative residual {rel:.3e}")
        return 0
    pmap = unmix.spectral_phasor(cube, harmonic=args.harmonic)
    out_dir = Path(args.out_c) if args.out_c else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    gs = np.stack([pmap.g, pmap.s], axis=2)
    save_cube(HyperCube(data=gs), out_dir / "phasor_gs")
    rasterpng.write_png(out_dir / "phasor_scatter.png",
                        rasterpng.scatter_raster(pmap.g, pmap.s))
    spectra_rows = []
    if args.polygons:
        obj = _load_json(args.polygons)
        _check_fields(obj, {"polygons"}, args.polygons, required=("polygons",))
        for name in sorted(obj["polygons"]):
            mask, spectrum = unmix.phasor_select(pmap, obj["polygons"][name], cube, name=name)
            rasterpng.write_png(out_dir / f"mask_{name}.png",
                                rasterpng.to_gray(mask.astype(np.float64), 0.0, 1.0))
            spectra_rows.append(spectrum)
            print(f"unmix[phasor]: {name}: {int(mask.sum())} pixels")
    if args.out_s and spectra_rows:
        _write_csv(args.out_s, list(range(cube.n_w)), np.array(spectra_rows))
    print(f"unmix[phasor]: wrote g/s maps for {pmap.g.size} pixels "
          f"({int(pmap.zero_total.sum())} zero-total)")
    return 0


def cmd_baseline(args) -> int:
    grid, spectra = _read_spectra_csv(args.inp)
    cfg = baseline_mod.ArplsConfig(lam=args.lam, ratio=args.ratio, max_iter=args.max_iter)
    corrected = np.empty_like(spectra)
    baselines = np.empty_like(spectra)
    threads = _thread_count(args)

    def run(a, b):
        for i in range(a, b):
            res = baseline_mod.arpls(spectra[i], cfg)
            baselines[i] = res.baseline
            corrected[i] = spectra[i] - res.baseline
        return b - a

    _map_row_chunks(run, spectra.shape[0], threads)
    _write_csv(args.out, grid, corrected)
    if args.out_baseline:
        _write_csv(args.out_baseline, grid, baselines)
    print(f"baseline: corrected {spectra.shape[0]} spectra of length {spectra.shape[1]}")
    return 0


def _mean_frame(cube: HyperCube) -> Image:
    return Image(data=cube.data.mean(axis=2), pixel_size=cube.pixel_size)


def _parse_roi(obj: dict, path, shape) -> tuple[np.ndarray, np.ndarray]:
    _check_fields(obj, {"signal", "background"}, path, required=("signal", "background"))

    def mask_of(ranges, name):
        if len(ranges) != 4:
            raise CliError(f"{path}: {name} must be [x0, x1, y0, y1] (half-open)")
        x0, x1, y0, y1 = (int(v) for v in ranges)
        mask = np.zeros(shape, dtype=bool)
        mask[x0:x1, y0:y1] = True
        if not mask.any():
            raise CliError(f"{path}: {name} ROI selects no pixels")
        return mask

    return mask_of(obj["signal"], "signal"), mask_of(obj["background"], "background")


def cmd_metrics(args) -> int:
    which = [w.strip() for w in args.which.split(",") if w.strip()]
    known = {"ssim", "psnr", "frc", "frechet", "snr"}
    bad = sorted(set(which) - known)
    if bad:
        raise CliError(f"unknown metrics {bad}; choose from {sorted(known)}")
    a = _load_cube_arg(args.a, "--a cube")
    b = _load_cube_arg(args.b, "--b cube")
    threads = _thread_count(args)
    report: dict = {"version": CONFIG_VERSION, "a": str(args.a), "b": str(args.b)}
    frame_a, frame_b = _mean_frame(a), _mean_frame(b)
    for name in which:
        if name == "ssim":
            report["ssim"] = metrics_mod.ssim(frame_a, frame_b)
        elif name == "psnr":
            value = metrics_mod.psnr(frame_a, frame_b)
            report["psnr_db"] = "inf" if value == float("inf") else value
        elif name == "frc":
            curve = metrics_mod.frc_resolution(frame_a, frame_b)
            report["frc"] = {
                "cutoff_frequency": curve.cutoff_frequency,
                "resolution": curve.resolution,
                "hit_nyquist": curve.hit_nyquist,
            }
            if args.out:
                stem = Path(args.out).with_suffix("")
                _write_csv(stem.with_name(stem.name + "_frc.csv"),
                           ["frequency", "correlation"], curve.points)
        elif name == "frechet":
            dmap = _distortion_map(a, b, threads)
            report["frechet_mean"] = float(dmap.data.mean())
            report["frechet_max"] = float(dmap.data.max())
        elif name == "snr":
            if not args.roi:
                raise CliError("snr metric needs --roi with signal/background boxes")
            sig, bg = _parse_roi(_load_json(args.roi), args.roi, a.shape[:2])
            report["snr_gain"] = metrics_mod.snr_gain(a, b, sig, bg)
    if args.out:
        _dump_json(args.out, report)
    summary = {k: v for k, v in report.items() if k not in ("version", "a", "b")}
    print("metrics: " + json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Pipeline

DEMO_PHANTOM = {
    "version": 1,
    "dims": [32, 32, 16],
    "background": 0.05,
    "pixel_size": 100.0,
    "components": [
        {
            "shapes": [{"kind": "disk", "center": [10.0, 11.0], "radius": 5.5, "amplitude": 1.0}],
            "peaks": [{"center": 4.0, "width": 3.0, "height": 1.0}],
        },
        {
            "shapes": [{"kind": "blob", "center": [22.0, 20.0], "radius": 4.0, "amplitude": 0.9}],
            "peaks": [{"center": 10.0, "width": 3.0, "height": 1.0}],
        },
    ],
}

DEMO_NOISE = {
    "version": 1,
    "sigma_iid": 0.2,
    "rho_fast": 0.6,
    "sigma_corr": 0.3,
    "k_resonance": 0.1,
    "poisson_gain": 0.0,
    "seed": 0,
}

DEMO_TRAIN = {
    "version": 1,
    "model": {"depth": 1, "base_channels": 8, "seed": 0},
    "epochs": 80,
    "batch_size": 4,
    "learning_rate": 1e-3,
    "val_fraction": 0.1,
    "augment": True,
    "seed": 0,
}

DEMO_PIPELINE = {
    "version": 1,
    "seed": 20260821,
    "phantom_spec": "phantom.json",
    "noise_spec": "noise.json",
    "train_config": "train.json",
    "lasso_lambda": 0.0,
    "thresholds": {"snr_gain_min": 3.0, "mse_ratio_max": 0.5, "selected_axis": "w"},
}


def _signal_background_rois(truth: unmix.UnmixResult, spec: synth.PhantomSpec,
                            dims) -> tuple[np.ndarray, np.ndarray]:
    """ROIs from the generator truth: signal where the (non-background)
    concentration is strong, background where it is negligible."""
    n_x, n_y = dims
    k_fg = len(spec.components)
    conc = truth.C[:, :k_fg].sum(axis=1).reshape(n_x, n_y)
    peak = conc.max()
    if peak <= 0:
        raise CliError("phantom has no foreground signal; cannot build ROIs")
    signal = conc > 0.5 * peak
    background = conc < 0.05 * peak
    if not signal.any() or not background.any():
        raise CliError("phantom concentration range too narrow for signal/background ROIs")
    return signal, background


def run_pipeline(cfg_path: Path, out_dir: Path, threads: int) -> tuple[int, dict]:
    cfg = _load_json(cfg_path)
    _check_fields(cfg, {"seed", "phantom_spec", "noise_spec", "train_config",
                        "lasso_lambda", "thresholds"},
                  cfg_path, required=("seed", "phantom_spec", "noise_spec", "train_config"))
    base = cfg_path.parent
    seed = int(cfg["seed"])
    thresholds = cfg.get("thresholds", {})
    allowed_thresholds = {"snr_gain_min", "mse_ratio_max", "selected_axis"}
    bad = sorted(set(thresholds) - allowed_thresholds)
    if bad:
        raise CliError(f"{cfg_path}: unknown threshold fields {bad}")
    out_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {"version": CONFIG_VERSION, "seed": seed, "stages": {}}
    stage = "setup"
    try:
        stage = "synth"
        spec = _parse_phantom_spec(_load_json(base / cfg["phantom_spec"]),
                                   cfg["phantom_spec"])
        noise = _parse_noise_spec(_load_json(base / cfg["noise_spec"]),
                                  cfg["noise_spec"], seed_override=seed)
        clean, truth = synth.make_phantom(spec)
        noisy = synth.corrupt(clean, noise)
        save_cube(clean, out_dir / "clean")
        save_cube(noisy, out_dir / "noisy")
        report["stages"]["synth"] = {
            "dims": list(clean.shape),
            "components": truth.K,
            "noise": {"sigma_iid": noise.sigma_iid, "rho_fast": noise.rho_fast,
                      "sigma_corr": noise.sigma_corr, "k_resonance": noise.k_resonance,
                      "poisson_gain": noise.poisson_gain, "seed": noise.seed},
        }

        stage = "analyze"
        axis, nreport = noisestats.select_permutation_axis(noisy)
        _dump_json(out_dir / "noise_report.json",
                   {"version": CONFIG_VERSION, **nreport.as_dict()})
        report["stages"]["analyze"] = {
            "selected_axis": axis,
            "fluctuation": {k: float(v) for k, v in nreport.fluctuation.items()},
            "pcc": {k: float(v) for k, v in nreport.pcc.items()},
        }

        stage = "permute"
        pairs = permute.split_permute(noisy, axis)
        report["stages"]["permute"] = {
            "axis": pairs.axis,
            "n_original": pairs.n_original,
            "parity_dropped": pairs.parity_dropped,
        }

        stage = "train"
        mc, tc = _parse_train_config(_load_json(base / cfg["train_config"]),
                                     cfg["train_config"])
        mc = nnet.ModelConfig(depth=mc.depth, base_channels=mc.base_channels, seed=seed + 2)
        tc = nnet.TrainConfig(epochs=tc.epochs, batch_size=tc.batch_size,
                              learning_rate=tc.learning_rate, val_fraction=tc.val_fraction,
                              augment=tc.augment, seed=seed + 1)
        trained = nnet.train(nnet.build_model(mc), pairs, tc)
        nnet.save_model(trained, out_dir / "model.ckpt")
        if not trained.history:
            raise CliError("training aborted before completing an epoch")
        report["stages"]["train"] = {
            "epochs_run": len(trained.history),
            "final_train_loss": trained.history[-1][1],
            "best_val_loss": min(h[2] for h in trained.history),
            "parameters": nnet.parameter_count(mc),
        }

        stage = "denoise"
        denoised = nnet.predict(trained, noisy)
        save_cube(denoised, out_dir / "denoised")
        mid = clean.n_w // 2
        for name, cube in (("clean", clean), ("noisy", noisy), ("denoised", denoised)):
            frame = cube.data[:, :, mid]
            rasterpng.write_png(out_dir / f"preview_{name}.png",
                                rasterpng.to_gray(frame, float(clean.data.min()),
                                                  float(clean.data.max())))
        report["stages"]["denoise"] = {"frames": clean.n_w, "preview_frame": mid}

        stage = "unmix"
        matrix = unmix.reshape_cube(denoised)
        lam = float(cfg.get("lasso_lambda", 0.0))
        result = unmix.lasso_unmix(matrix, truth.S, lam)
        c_err = float(np.max(np.abs(result.C - truth.C)))
        recon_rel = float(np.linalg.norm(result.E) / np.linalg.norm(matrix.values))
        pmap = unmix.spectral_phasor(denoised)
        rasterpng.write_png(out_dir / "phasor_scatter.png",
                            rasterpng.scatter_raster(pmap.g, pmap.s))
        report["stages"]["unmix"] = {
            "method": "lasso", "lambda": lam, "max_abs_c_error": c_err,
            "relative_residual": recon_rel, "kkt_converged": result.converged,
        }

        stage = "metrics"
        sig_roi, bg_roi = _signal_background_rois(truth, spec, (clean.n_x, clean.n_y))
        mse_raw = float(np.mean((noisy.data.astype(np.float64) - clean.data) ** 2))
        mse_den = float(np.mean((denoised.data.astype(np.float64) - clean.data) ** 2))
        gain = metrics_mod.snr_gain(noisy, denoised, sig_roi, bg_roi)
        d_raw = _distortion_map(noisy, clean, threads)
        d_den = _distortion_map(denoised, clean, threads)
        frame_clean = _mean_frame(clean)
        frame_den = _mean_frame(denoised)
        frc = metrics_mod.frc_resolution(frame_den, frame_clean)
        rasterpng.write_png(
            out_dir / "frc_curve.png",
            rasterpng.curve_raster([p[0] for p in frc.points],
                                   [p[1] for p in frc.points], y_range=(0.0, 1.05)),
        )
        report["stages"]["metrics"] = {
            "mse_raw": mse_raw,
            "mse_denoised": mse_den,
            "mse_ratio": mse_den / mse_raw,
            "snr_gain": gain,
            "frechet_mean_raw": float(d_raw.data.mean()),
            "frechet_mean_denoised": float(d_den.data.mean()),
            "ssim_denoised_vs_clean": metrics_mod.ssim(frame_den, frame_clean),
            "psnr_denoised_vs_clean_db": metrics_mod.psnr(frame_clean, frame_den),
            "frc_cutoff_frequency": frc.cutoff_frequency,
            "frc_resolution": frc.resolution,
            "signal_pixels": int(sig_roi.sum()),
            "background_pixels": int(bg_roi.sum()),
        }
    except CliError:
        raise
    except Exception as exc:
        raise CliError(f"stage {stage} failed: {exc}") from exc

    checks = {}
    passed = True
    if "snr_gain_min" in thresholds:
        ok = report["stages"]["metrics"]["snr_gain"] >= thresholds["snr_gain_min"]
        checks["snr_gain"] = {"value": report["stages"]["metrics"]["snr_gain"],
                              "minimum": thresholds["snr_gain_min"], "pass": ok}
        passed &= ok
    if "mse_ratio_max" in thresholds:
        ok = report["stages"]["metrics"]["mse_ratio"] <= thresholds["mse_ratio_max"]
        checks["mse_ratio"] = {"value": report["stages"]["metrics"]["mse_ratio"],
                               "maximum": thresholds["mse_ratio_max"], "pass": ok}
        passed &= ok
    if "selected_axis" in thresholds:
        want = canonical_axis(thresholds["selected_axis"])
        got = report["stages"]["analyze"]["selected_axis"]
        checks["selected_axis"] = {"value": got, "expected": want, "pass": got == want}
        passed &= got == want
    report["acceptance"] = checks
    report["passed"] = bool(passed)
    _dump_json(out_dir / "report.json", report)
    return (0 if passed else 1), report


def cmd_pipeline(args) -> int:
    out_dir = Path(args.out)
    threads = _thread_count(args)
    if args.demo:
        out_dir.mkdir(parents=True, exist_ok=True)
        _dump_json(out_dir / "phantom.json", DEMO_PHANTOM)
        _dump_json(out_dir / "noise.json", DEMO_NOISE)
        _dump_json(out_dir / "train.json", DEMO_TRAIN)
        _dump_json(out_dir / "pipeline.json", DEMO_PIPELINE)
        cfg_path = out_dir / "pipeline.json"
    elif args.config:
        cfg_path = Path(args.config)
    else:
        raise CliError("pipeline needs --config or --demo")
    code, report = run_pipeline(cfg_path, out_dir, threads)
    m = report["stages"]["metrics"]
    print(f"pipeline: axis {report['stages']['analyze']['selected_axis']}, "
          f"snr gain {m['snr_gain']:.2f}, mse ratio {m['mse_ratio']:.3f}, "
          f"{'PASS' if report['passed'] else 'FAIL'}")
    return code


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spend",
        description="Self-supervised hyperspectral denoising and unmixing toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom cube and corrupt it")
    p.add_argument("--spec", required=True, help="phantom spec JSON")
    p.add_argument("--noise", required=True, help="noise spec JSON")
    p.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p.add_argument("--out-clean", required=True, help="clean cube stem")
    p.add_argument("--out-noisy", required=True, help="noisy cube stem")
    p.add_argument("--out-truth", default=None,
                   help="truth stem: concentration cube plus <stem>_spectra.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="noise diagnostics and axis selection")
    p.add_argument("--in", dest="inp", required=True, help="cube stem")
    p.add_argument("--signal", default=None, help="optional clean/signal cube stem")
    p.add_argument("--tile", type=int, default=4, help="noise-vs-signal tile edge")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("permute", help="build odd/even training pairs")
    p.add_argument("--in", dest="inp", required=True, help="cube stem")
    p.add_argument("--axis", default="auto", choices=["auto", "x", "y", "w"])
    p.add_argument("--out-input", required=True)
    p.add_argument("--out-target", required=True)
    p.add_argument("--out-meta", required=True, help="pair bookkeeping JSON")
    p.set_defaults(func=cmd_permute)

    p = sub.add_parser("train", help="train the denoiser on a permuted pair")
    p.add_argument("--input", required=True, help="input stack stem")
    p.add_argument("--target", required=True, help="target stack stem")
    p.add_argument("--meta", default=None, help="bookkeeping JSON from permute")
    p.add_argument("--axis", default=None, help="permutation axis if no --meta")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="apply a trained model to a cube")
    p.add_argument("--in", dest="inp", required=True, help="cube stem")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--out", required=True, help="output cube stem")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("unmix", help="spectral unmixing")
    p.add_argument("--in", dest="inp", required=True, help="cube stem")
    p.add_argument("--method", required=True, choices=["lasso", "mcr", "phasor"])
    p.add_argument("--refs", default=None, help="reference spectra CSV (lasso/mcr)")
    p.add_argument("--lambda", dest="lasso_lambda", type=float, default=0.0,
                   help="sparsity penalty for lasso")
    p.add_argument("--harmonic", type=int, default=1, help="phasor harmonic")
    p.add_argument("--polygons", default=None, help="phasor gate polygons JSON")
    p.add_argument("--out-c", default=None, help="output directory for maps")
    p.add_argument("--out-s", default=None, help="output spectra CSV")
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("baseline", help="arPLS baseline correction of spectra")
    p.add_argument("--in", dest="inp", required=True, help="spectra CSV")
    p.add_argument("--lambda", dest="lam", type=float, default=1e5, help="smoothness")
    p.add_argument("--ratio", type=float, default=0.05, help="stop threshold")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="corrected spectra CSV")
    p.add_argument("--out-baseline", default=None, help="fitted baselines CSV")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("metrics", help="quality metrics between two cubes")
    p.add_argument("--a", required=True, help="first cube stem (reference for psnr)")
    p.add_argument("--b", required=True, help="second cube stem")
    p.add_argument("--which", default="ssim,psnr,frechet",
                   help="comma list: ssim,psnr,frc,frechet,snr")
    p.add_argument("--roi", default=None, help="ROI JSON for snr")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pipeline", help="run the full synthetic experiment")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--demo", action="store_true",
                   help="write the bundled demo configs into --out and run them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
