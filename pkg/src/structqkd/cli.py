"""Command-line front end.

Subcommands: simulate, analyze, keyrate-sweep, fried, encrypt-demo, screens.
Every output file embeds the configuration, seed and package version and no
timestamps, so reruns with the same inputs produce identical bytes.

Exit codes: 0 success, 1 domain error, 2 input or parse error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .constants import BIN_DURATION, BINS_PER_SETTING, LINK_LENGTH, SIGNAL_WAVELENGTH, TX_BEAM_WAIST
from .detection import FIXTURES, DetectionMatrix, MatrixParseError, load_fixture, read_matrix
from .linksim import LinkBudget, TurbulenceTooSevere, build_detection_matrix, run_protocol, target_correction
from .mubs import make_mubs, theoretical_matrix
from .protocol import key_rate_analytic, qber, report_table
from .turbulence import NoMeasurableTurbulence, TurbulenceParams

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    """Bad user input (file or config contents); maps to exit code 2."""


# Configuration -------------------------------------------------------------------

#: INI key -> (LinkBudget field, type). Units are part of every key name.
LINK_KEYS = {
    "signal_loss_db": ("signal_loss_db", float),
    "idler_loss_db": ("idler_loss_db", float),
    "source_coincidence_rate_hz": ("source_coincidence_rate", float),
    "signal_singles_rate_hz": ("signal_singles_rate", float),
    "idler_singles_rate_hz": ("idler_singles_rate", float),
    "coincidence_window_s": ("coincidence_window", float),
    "dark_count_rate_hz": ("dark_count_rate", float),
    "coupling_waist_m": ("coupling_waist", float),
    "slow_wander_fraction": ("slow_wander_fraction", float),
    "intrinsic_qber": ("intrinsic_qber", float),
    "accidental_model": ("accidental_model", str),
}


@dataclass
class RunConfig:
    d: int = 4
    ell: int | None = None
    cn2: float | None = 2.5e-15  # m^(-2/3); None disables turbulence
    link_length: float = LINK_LENGTH
    wavelength: float = SIGNAL_WAVELENGTH
    beam_waist: float = TX_BEAM_WAIST
    budget: LinkBudget = field(default_factory=LinkBudget)
    bins_per_setting: int = BINS_PER_SETTING
    bin_duration: float = BIN_DURATION
    correction: str = "rescale"  # rescale | discard | none
    seed: int = 0
    threads: int = 1
    out: str = "out"

    def validate(self) -> RunConfig:
        if self.d not in (2, 4):
            raise InputError(f"dim must be 2 or 4, got {self.d}")
        if self.ell is None:
            self.ell = 1 if self.d == 2 else 2
        if self.ell < 1:
            raise InputError("oam must be >= 1")
        if self.bins_per_setting < 1 or self.bin_duration <= 0:
            raise InputError("bins per setting and bin duration must be positive")
        if self.correction not in ("rescale", "discard", "none"):
            raise InputError("correction must be rescale, discard or none")
        if self.threads < 1:
            raise InputError("threads must be >= 1")
        if self.cn2 is not None and self.cn2 <= 0:
            raise InputError("cn2 must be positive (use --no-turbulence to disable)")
        return self

    @property
    def turbulence(self) -> TurbulenceParams | None:
        if self.cn2 is None:
            return None
        return TurbulenceParams(self.cn2, self.link_length, self.wavelength, self.beam_waist)

    def as_dict(self) -> dict:
        """Flat, unit-labelled snapshot for embedding in outputs (thread count excluded)."""
        link = {k: getattr(self.budget, f) for k, (f, _) in LINK_KEYS.items()}
        return {
            "run": {"dim": self.d, "oam": self.ell, "bins_per_setting": self.bins_per_setting,
                    "bin_duration_s": self.bin_duration, "correction": self.correction, "seed": self.seed},
            "link": link,
            "turbulence": None if self.cn2 is None else {
                "cn2_m-2/3": self.cn2, "link_length_m": self.link_length, "wavelength_m": self.wavelength,
                "beam_waist_m": self.beam_waist},
        }


def load_config(path) -> RunConfig:
    """Read an INI file with [run], [link] and [turbulence] sections."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    known = {"run", "link", "turbulence"}
    for sec in cp.sections():
        if sec not in known:
            raise InputError(f"{path}: unknown section [{sec}]")
    cfg = RunConfig()

    text = Path(path).read_text().splitlines()

    def where(sec, key) -> str:
        current = None
        for lineno, line in enumerate(text, start=1):
            s = line.strip()
            if s.startswith("[") and s.endswith("]"):
                current = s[1:-1].strip()
            elif current == sec and s.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
                return f"{path}:{lineno}"
        return str(path)

    def get(sec, key, conv):
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except ValueError:
            raise InputError(f"{where(sec, key)}: [{sec}] {key} = {raw!r} is not a valid {conv.__name__}") from None

    run_keys = {"dim": ("d", int), "oam": ("ell", int), "bins_per_setting": ("bins_per_setting", int),
                "bin_duration_s": ("bin_duration", float), "correction": ("correction", str),
                "seed": ("seed", int), "threads": ("threads", int), "out": ("out", str)}
    turb_keys = {"cn2_m-2/3": ("cn2", float), "link_length_m": ("link_length", float),
                 "wavelength_m": ("wavelength", float), "beam_waist_m": ("beam_waist", float)}
    if cp.has_section("run"):
        for key in cp["run"]:
            if key not in run_keys:
                raise InputError(f"{where('run', key)}: unknown key [run] {key}")
            attr, conv = run_keys[key]
            setattr(cfg, attr, get("run", key, conv))
    if cp.has_section("turbulence"):
        for key in cp["turbulence"]:
            if key == "enabled":
                if not cp.getboolean("turbulence", key):
                    cfg.cn2 = None
                continue
            if key not in turb_keys:
                raise InputError(f"{where('turbulence', key)}: unknown key [turbulence] {key}")
            attr, conv = turb_keys[key]
            if cfg.cn2 is not None or attr != "cn2":
                setattr(cfg, attr, get("turbulence", key, conv))
    if cp.has_section("link"):
        kw = {}
        for key in cp["link"]:
            if key not in LINK_KEYS:
                raise InputError(f"{where('link', key)}: unknown key [link] {key}")
            attr, conv = LINK_KEYS[key]
            kw[attr] = get("link", key, conv)
        try:
            cfg.budget = LinkBudget(**kw)
        except ValueError as exc:
            raise InputError(f"{path}: [link] {exc}") from None
    return cfg


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if args.dim is not None:
        cfg.d = args.dim
    if args.oam is not None:
        cfg.ell = args.oam
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.bins is not None:
        cfg.bins_per_setting = args.bins
    if args.out is not None:
        cfg.out = args.out
    if args.cn2 is not None:
        cfg.cn2 = args.cn2
    if args.no_turbulence:
        cfg.cn2 = None
    if getattr(args, "correction", None):
        cfg.correction = args.correction
    return cfg.validate()


# Output helpers --------------------------------------------------------------------

def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")


def _stamp(cfg: dict, seed) -> dict:
    return {"version": __version__, "seed": seed, "config": cfg}


def _csv_with_header(matrix: DetectionMatrix, stamp: dict) -> str:
    head = "# " + json.dumps(stamp, sort_keys=True) + "\n"
    return head + matrix.to_csv()


def _rates(Q: float, d: int, numeric: bool) -> list:
    rates = [key_rate_analytic(Q, d)]
    if numeric and d == 4 and Q <= 0.75:
        from .keyrate_dual import build_bb84_constraints, maximize_theta
        from .protocol import KeyRate

        sol = maximize_theta(build_bb84_constraints(Q))
        rates.append(KeyRate(d, Q, sol.K, "numeric"))
    return rates


# Commands ----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .plotting import plot_detection_matrix

    cfg = config_from_args(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mubs = make_mubs(cfg.d, cfg.ell)
    stamp = _stamp(cfg.as_dict(), cfg.seed)
    records = run_protocol(mubs, cfg.budget, cfg.turbulence, cfg.bins_per_setting, cfg.seed,
                           threads=cfg.threads, duration=cfg.bin_duration)
    matrices = {"raw": build_detection_matrix(records)}
    if cfg.turbulence is not None and cfg.correction != "none":
        matrices["corrected"] = build_detection_matrix(
            target_correction(records, mode=cfg.correction),
            {"correction": cfg.correction, "reference": "row", "floor": 0.2})
    report = {}
    for name, M in matrices.items():
        M = M.reordered(mubs.labels())
        (out / f"matrix_{name}.csv").write_text(_csv_with_header(M, stamp))
        (out / f"matrix_{name}.json").write_text(M.to_json(**stamp))
        plot_detection_matrix(M, out / f"matrix_{name}.png")
        rep = qber(M)
        rates = _rates(rep.Q, cfg.d, args.numeric)
        report[name] = {"Q": rep.Q, "per_basis": list(rep.per_basis), "provenance": rep.provenance,
                        "key_rates": {r.method: r.R for r in rates}}
        print(f"[{name}]")
        print(report_table(rep, rates), end="")
    _dump_json(out / "report.json", {**stamp, "results": report})
    return EXIT_OK


def _load_matrix_arg(args) -> DetectionMatrix:
    if args.fixture:
        if args.fixture == "theoretical":
            return theoretical_matrix(make_mubs(args.dim or 4))
        return load_fixture(args.fixture)
    if not args.matrix:
        raise InputError("give a matrix file or --fixture")
    return read_matrix(args.matrix)


def cmd_analyze(args) -> int:
    M = _load_matrix_arg(args)
    if args.dim is not None and args.dim != M.d:
        raise InputError(f"matrix has d={M.d} but --dim {args.dim} was given")
    rep = qber(M)
    rates = _rates(rep.Q, M.d, args.numeric)
    print(report_table(rep, rates), end="")
    if args.out:
        from .plotting import plot_detection_matrix

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        src = args.fixture or str(args.matrix)
        doc = {**_stamp({"matrix": src}, None), "Q": rep.Q, "per_basis": list(rep.per_basis),
               "provenance": rep.provenance, "key_rates": {r.method: r.R for r in rates}}
        _dump_json(out / "analysis.json", doc)
        plot_detection_matrix(M, out / "analysis_matrix.png")
    return EXIT_OK


def _q_grid(args) -> list:
    if args.q:
        try:
            return [float(x) for x in args.q.split(",")]
        except ValueError:
            raise InputError(f"--q expects comma-separated numbers, got {args.q!r}") from None
    n = int(round((args.q_max - args.q_min) / args.q_step)) + 1
    if n < 1:
        raise InputError("empty Q grid")
    return [round(args.q_min + i * args.q_step, 12) for i in range(n)]


def cmd_keyrate_sweep(args) -> int:
    from .keyrate_dual import OptimizerConfig, keyrate_sweep
    from .plotting import plot_keyrate

    d = args.dim or 4
    if d != 4:
        print("error: the numeric bound is implemented for d=4 only", file=sys.stderr)
        return EXIT_DOMAIN
    qs = _q_grid(args)
    rows = keyrate_sweep(qs, OptimizerConfig(seed=args.seed or 0, threads=args.threads or 1))
    buf = io.StringIO()
    buf.write("# " + json.dumps(_stamp({"dim": d, "q": qs}, args.seed or 0), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Q", "K_numeric", "K_analytic"])
    for q, kn, ka in rows:
        w.writerow([f"{q:.6f}", f"{kn:.6f}", f"{ka:.6f}"])
    text = buf.getvalue()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "keyrate.csv").write_text(text)
        plot_keyrate(rows, out / "keyrate.png", d)
    return EXIT_OK


def cmd_fried(args) -> int:
    from .rng import stream
    from .turbulence import CentroidSeries, fried_from_centroids, synthetic_centroids

    out = Path(args.out) if args.out else None
    if args.synthetic:
        cn2 = args.cn2 if args.cn2 is not None else 2.5e-15
        truth = TurbulenceParams(cn2, args.length_m, args.wavelength_m, args.waist_m)
        series = synthetic_centroids(truth, args.synthetic, stream(args.seed or 0, "centroids"))
        if out:
            out.mkdir(parents=True, exist_ok=True)
            series.write_csv(out / "centroids.csv")
    elif args.centroids:
        try:
            series = CentroidSeries.read_csv(args.centroids)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        raise InputError("give a centroid CSV or --synthetic N")
    est = fried_from_centroids(series, args.length_m, args.wavelength_m, args.waist_m)
    lines = ["# units: r0 in m, Cn2 in m^-2/3, sigma in m (per axis), L in m, wavelength in m, w0 in m",
             f"samples,{len(series.samples)}",
             f"L_m,{args.length_m:g}",
             f"wavelength_m,{args.wavelength_m:g}",
             f"w0_m,{args.waist_m:g}",
             f"sigma_m,{np.sqrt(est.wander_sigma2):.6e}",
             f"cn2_m-2/3,{est.cn2:.6e}",
             f"r0_m,{est.r0:.6f}"]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        from .plotting import plot_centroids

        out.mkdir(parents=True, exist_ok=True)
        (out / "fried.csv").write_text(text)
        plot_centroids(series.samples, out / "centroids.png")
    return EXIT_OK


def cmd_encrypt_demo(args) -> int:
    from .encdemo import (KeyStream, channel_corrupt, decrypt, discretize, encrypt, read_image,
                          sample_image, symbol_error_rate, write_image)
    from .plotting import plot_images

    d = args.dim or 4
    try:
        rgb = read_image(args.image) if args.image else sample_image()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.fixture == "theoretical" or (not args.fixture and not args.matrix):
        M = theoretical_matrix(make_mubs(d))
        src = "theoretical"
    else:
        M = _load_matrix_arg(args)
        src = args.fixture or str(args.matrix)
    if M.d != d:
        raise InputError(f"matrix has d={M.d} but --dim is {d}")
    seed = args.seed or 0
    img = discretize(rgb, d)
    key = KeyStream.seeded(img.size, d, seed)
    enc = encrypt(img, key)
    rx = channel_corrupt(enc, M, seed)
    dec = decrypt(rx, key)
    ser = symbol_error_rate(img, dec)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    ext = args.format
    panels = [("discretized", img.render()), ("encrypted", enc.render()),
              ("received", rx.render()), ("decrypted", dec.render())]
    for name, arr in panels:
        write_image(out / f"{name}.{ext}", arr)
    (out / "key.bin").write_bytes(key.to_bytes())
    plot_images(panels, out / "panels.png")
    _dump_json(out / "encrypt.json", {**_stamp({"dim": d, "matrix": src, "image": args.image}, seed),
                                      "symbols": img.size, "symbol_error_rate": ser})
    print(f"symbols {img.size}  matrix {src}  symbol error rate {ser:.4f}")
    return EXIT_OK


def cmd_screens(args) -> int:
    from .plotting import plot_structure_function
    from .turbulence import kolmogorov_structure, r0_from_cn2, screen_ensemble, structure_function

    if args.r0_m is not None:
        r0 = args.r0_m
    else:
        r0 = r0_from_cn2(args.cn2 if args.cn2 is not None else 2.5e-15)
    seed = args.seed or 0
    screens = screen_ensemble(r0, args.n, args.pitch_m, args.count, seed, threads=args.threads or 1)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(screens):
        s.write(out / f"screen_{i:03d}.bin")
    kmax = max(1, args.n // 8)
    D = structure_function(screens, kmax)
    r = np.arange(1, kmax + 1) * args.pitch_m

    lines = ["# " + json.dumps(_stamp({"r0_m": r0, "n": args.n, "pitch_m": args.pitch_m,
                                       "count": args.count}, seed), sort_keys=True),
             "r_m,D_rad2,D_theory_rad2"]
    lines += [f"{ri:.6e},{di:.6e},{ti:.6e}" for ri, di, ti in zip(r, D, kolmogorov_structure(r, r0))]
    (out / "structure.csv").write_text("\n".join(lines) + "\n")
    plot_structure_function(r, D, r0, out / "structure.png")
    print(f"wrote {len(screens)} screens (r0 = {r0:.4f} m) to {out}")
    return EXIT_OK


# Parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dim", type=int, choices=(2, 4), default=None, help="dimension d")
    common.add_argument("--oam", type=int, default=None, help="OAM index l (default 1 for d=2, 2 for d=4)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--no-turbulence", action="store_true")
    common.add_argument("--cn2", type=float, default=None, help="Cn2 in m^-2/3")
    common.add_argument("--bins", type=int, default=None, help="bins per setting")
    common.add_argument("--out", default=None, help="output directory")

    p = argparse.ArgumentParser(prog="structqkd", description="Structured-photon BB84 link toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo link run")
    s.add_argument("--config", help="INI configuration file")
    s.add_argument("--correction", choices=("rescale", "discard", "none"))
    s.add_argument("--numeric", action="store_true", help="also compute the numeric d=4 bound")
    s.set_defaults(func=cmd_simulate)

    fixtures = sorted(FIXTURES) + ["theoretical"]
    a = sub.add_parser("analyze", parents=[common], help="QBER and key rates of a matrix")
    a.add_argument("matrix", nargs="?", help="CSV or JSON detection matrix")
    a.add_argument("--fixture", choices=fixtures)
    a.add_argument("--no-numeric", dest="numeric", action="store_false", help="skip the numeric d=4 bound")
    a.set_defaults(func=cmd_analyze)

    k = sub.add_parser("keyrate-sweep", parents=[common], help="numeric vs analytic key rate")
    k.add_argument("--q", help="comma-separated Q values")
    k.add_argument("--q-min", type=float, default=0.0)
    k.add_argument("--q-max", type=float, default=0.175)
    k.add_argument("--q-step", type=float, default=0.025)
    k.set_defaults(func=cmd_keyrate_sweep)

    f = sub.add_parser("fried", parents=[common], help="Fried parameter from beam centroids")
    f.add_argument("centroids", nargs="?", help="CSV of x_m,y_m displacements")
    f.add_argument("--synthetic", type=int, metavar="N", help="generate N samples at --cn2 instead")
    f.add_argument("--length-m", type=float, default=LINK_LENGTH)
    f.add_argument("--wavelength-m", type=float, default=SIGNAL_WAVELENGTH)
    f.add_argument("--waist-m", type=float, default=TX_BEAM_WAIST)
    f.set_defaults(func=cmd_fried)

    e = sub.add_parser("encrypt-demo", parents=[common], help="image one-time pad through a channel")
    e.add_argument("--image", help="PPM (or PNG with Pillow); default is a synthetic card")
    e.add_argument("--matrix", help="detection matrix file")
    e.add_argument("--fixture", choices=fixtures)
    e.add_argument("--format", choices=("ppm", "png"), default="ppm")
    e.set_defaults(func=cmd_encrypt_demo)

    c = sub.add_parser("screens", parents=[common], help="export Kolmogorov phase screens")
    c.add_argument("--r0-m", type=float, default=None)
    c.add_argument("--n", type=int, default=256)
    c.add_argument("--pitch-m", type=float, default=0.005)
    c.add_argument("--count", type=int, default=10)
    c.set_defaults(func=cmd_screens)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "matrix", None) is not None:
        args.matrix = Path(args.matrix)
    try:
        return args.func(args)
    except (InputError, MatrixParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TurbulenceTooSevere, NoMeasurableTurbulence, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
