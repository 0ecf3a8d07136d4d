"""Command-line front end: fgr | resonance | amplitude | scaling | selftest."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ansatz import AnsatzFrame, EpsilonTooLarge, GapError, StructuralError
from .dynamics import (CoverageError, RecurrenceError, amplitude_stone, hybrid_times,
                       scaling_study)
from .feshbach import (ConditioningError, NoRootError, UniquenessError, lorentzian_diagnostics,
                       resonance_position, slfg_function)
from .model import (InconsistentModelError, ModelDomainError, ModelError, SmoothnessError,
                    ThresholdError, check_assumption_gamma0, fgr_constant, gamma_eval,
                    model_from_config)
from .resolvent import UnsupportedError, WindowError

log = logging.getLogger("metastable")

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_SOLVER, EXIT_DEGRADED = 0, 2, 3, 4, 5
FORMAT_VERSION = 1
FIXTURES = Path(__file__).resolve().parent / "fixtures"

# admissible ranges of the tolerance fields
TOL_RANGES = {"stone": (1e-15, 1e-4), "degraded": (1e-12, 1e-1)}


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    model_path: Path
    model_cfg: dict
    eps: list = field(default_factory=lambda: [0.05])
    ansatz: tuple = (0,)
    times: dict = field(default_factory=dict)
    tol: dict = field(default_factory=dict)
    lorentz_C: float = 1.0
    hash: str = ""


def _read_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _field(cfg: dict, key: str, kind, default=None, where: str = "config"):
    if key not in cfg:
        return default
    try:
        return kind(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: field {key!r}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    raw = _read_json(path)
    if "type" in raw:  # a bare model file: run with defaults
        model_path, model_cfg, raw_exp = path, raw, {}
    else:
        if "model" not in raw:
            raise ConfigError(f"{path}: missing field 'model'")
        model_path = Path(raw["model"])
        if not model_path.is_absolute():
            model_path = path.parent / model_path
        model_cfg = _read_json(model_path)
        raw_exp = raw
    eps = raw_exp.get("eps", [0.05])
    if not isinstance(eps, list) or not eps:
        raise ConfigError(f"{path}: field 'eps' must be a non-empty list")
    try:
        eps = [float(e) for e in eps]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: field 'eps': {exc}") from exc
    if any(not e > 0 for e in eps):
        raise ConfigError(f"{path}: field 'eps': values must be positive")
    sel = raw_exp.get("ansatz", 0)
    if sel == "both":
        ansatz = (0, 1)
    elif sel in (0, 1, "0", "1"):
        ansatz = (int(sel),)
    else:
        raise ConfigError(f"{path}: field 'ansatz' must be 0, 1 or \"both\"")
    tol = raw_exp.get("tol", {})
    if not isinstance(tol, dict):
        raise ConfigError(f"{path}: field 'tol' must be an object")
    for k, v in tol.items():
        if k not in TOL_RANGES:
            raise ConfigError(f"{path}: field 'tol.{k}' is not a known tolerance")
        lo, hi = TOL_RANGES[k]
        if not isinstance(v, (int, float)) or not lo <= v <= hi:
            raise ConfigError(f"{path}: field 'tol.{k}' must lie in [{lo:g}, {hi:g}]")
    times = raw_exp.get("times", {})
    if not isinstance(times, dict):
        raise ConfigError(f"{path}: field 'times' must be an object")
    canon = json.dumps({"experiment": raw_exp, "model": model_cfg}, sort_keys=True, separators=(",", ":"))
    return ExperimentConfig(model_path=model_path, model_cfg=model_cfg, eps=eps, ansatz=ansatz,
                            times=times, tol=tol,
                            lorentz_C=_field(raw_exp, "lorentz_C", float, 1.0, str(path)),
                            hash=hashlib.sha256(canon.encode()).hexdigest()[:16])


def build_model(cfg: ExperimentConfig):
    try:
        return model_from_config(cfg.model_cfg, cfg.model_path.parent)
    except KeyError as exc:
        raise ConfigError(f"{cfg.model_path}: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (InconsistentModelError, ModelDomainError, SmoothnessError, ThresholdError)):
            raise
        raise ConfigError(f"{cfg.model_path}: {exc}") from exc


# ----------------------------------------------------------------------------
# output


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


@dataclass
class Table:
    name: str
    columns: list
    rows: list

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# metastable {self.name} format v{FORMAT_VERSION} columns: {','.join(self.columns)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def json_text(self) -> str:
        def conv(v):
            if isinstance(v, (bool, np.bool_)):
                return bool(v)
            if isinstance(v, (int, np.integer)):
                return int(v)
            if isinstance(v, (float, np.floating)):
                f = float(v)
                return f if np.isfinite(f) else fmt(f)
            return v
        doc = {"format": f"metastable {self.name} v{FORMAT_VERSION}", "columns": self.columns,
               "rows": [{c: conv(r[c]) for c in self.columns} for r in self.rows]}
        return json.dumps(doc, indent=1) + "\n"


def emit(tables, out: str | None, fmt_: str):
    for t in tables:
        text = t.csv_text() if fmt_ == "csv" else t.json_text()
        if out is None:
            sys.stdout.write(text)
        else:
            d = Path(out)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"{t.name}.{fmt_}").write_text(text)


# ----------------------------------------------------------------------------
# commands


def _check_eps(cfg, model, pert):
    if 1 in cfg.ansatz:
        frame = AnsatzFrame(model, pert)
        bad = [e for e in cfg.eps if e >= frame.eps_max]
        if bad:
            raise ConfigError(f"eps {bad} not below the exported eps_max = {frame.eps_max:.6g}")
        return frame
    return None


def cmd_fgr(cfg: ExperimentConfig, args) -> int:
    model, pert = build_model(cfg)
    G = fgr_constant(model, pert)
    w0 = float(np.linalg.norm(gamma_eval(model, 0.0, pert.w_psi0)))
    ok = check_assumption_gamma0(model, pert)
    row = {"model": cfg.model_cfg.get("name", cfg.model_path.stem), "gamma_fgr": G, "w0_norm": w0,
           "assumption_gamma0": ok, "config_hash": cfg.hash}
    emit([Table("fgr", list(row), [row])], args.out, args.format)
    print(f"Gamma_FGR = {G:.12g}  |w(0)| = {w0:.12g}  assumption Gamma(0): {'pass' if ok else 'fail'}",
          file=sys.stderr)
    flag = cfg.model_cfg.get("vanishing_fgr")
    if flag is not None and bool(flag) != ok:
        print("model inconsistency: vanishing_fgr flag contradicts the computed FGR constant",
              file=sys.stderr)
        return EXIT_MODEL
    return EXIT_OK


def cmd_resonance(cfg: ExperimentConfig, args) -> int:
    model, pert = build_model(cfg)
    frame = _check_eps(cfg, model, pert)
    rows = []
    for eps in cfg.eps:
        for k in cfg.ansatz:
            F = slfg_function(model, pert, eps, k, frame)
            res = resonance_position(F)
            try:
                d = lorentzian_diagnostics(F, res, C=cfg.lorentz_C)
                lz, lzr, win = d["sup_integral"], d["sup_integral_over_gamma"], True
            except WindowError:
                lz, lzr, win = float("nan"), float("nan"), False
            rows.append({"eps": eps, "ansatz": k, "x": res.x, "re_E": res.E.real, "im_E": res.E.imag,
                         "residual": res.residual, "slope": res.slope, "lorentz_sup": lz,
                         "lorentz_over_gamma": lzr, "window_ok": win, "config_hash": cfg.hash})
    emit([Table("resonance", list(rows[0]), rows)], args.out, args.format)
    return EXIT_OK


def _times(cfg: ExperimentConfig, width: float, Gamma: float, gamma: float) -> np.ndarray:
    pol = cfg.times.get("policy", "hybrid")
    if pol == "hybrid":
        return hybrid_times(width, Gamma, gamma, int(cfg.times.get("n_lin", 64)),
                            int(cfg.times.get("n_log", 256)))
    if pol == "linear":
        t_max, n = float(cfg.times["t_max"]), int(cfg.times.get("n", 201))
        return np.linspace(0.0, t_max, n)
    if pol == "list":
        t = np.asarray(cfg.times["values"], dtype=float)
        return np.unique(np.concatenate([[0.0], t]))
    raise ConfigError(f"unknown time policy {pol!r}")


def cmd_amplitude(cfg: ExperimentConfig, args) -> int:
    model, pert = build_model(cfg)
    frame = _check_eps(cfg, model, pert)
    tol = cfg.tol.get("stone", 1e-12)
    degraded_tol = cfg.tol.get("degraded", 1e-6)
    rows, degraded = [], False
    for eps in cfg.eps:
        for k in cfg.ansatz:
            F = slfg_function(model, pert, eps, k, frame)
            res = resonance_position(F)
            lo, hi = F.support
            t = _times(cfg, hi - lo, res.width, eps ** 2 if k == 0 else eps ** 4)
            s = amplitude_stone(F, times=t, res=res, tol=tol)
            bad = s.certificate > degraded_tol
            degraded |= bad
            err = s.errors
            for ti, a, e in zip(s.times, s.values, err):
                rows.append({"eps": eps, "ansatz": k, "t": ti, "re_A": a.real, "im_A": a.imag,
                             "abs_err": e, "certificate": s.certificate, "degraded": bad,
                             "config_hash": cfg.hash})
    emit([Table("amplitude", list(rows[0]), rows)], args.out, args.format)
    if degraded and not args.allow_degraded:
        print("accuracy degraded: the Stone-quadrature certificate exceeds the tolerance", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_scaling(cfg: ExperimentConfig, args) -> int:
    model, pert = build_model(cfg)
    _check_eps(cfg, model, pert)
    eps = sorted(cfg.eps, reverse=True)
    rep = scaling_study(model, pert, eps, ansatze=cfg.ansatz, threads=args.threads)
    rows = []
    for r in rep.rows:
        p = 2 if r.ansatz == 0 else 4
        rows.append({"eps": r.eps, "ansatz": r.ansatz, "x": r.x, "re_E": r.E.real, "im_E": r.E.imag,
                     "sup_error": r.sup_error, "sup_error_normalized": r.sup_error / r.eps ** p,
                     "argmax_t": r.argmax_t, "tail_bound": r.tail_bound, "certificate": r.certificate,
                     "mass": r.mass, "re_A0": r.a0.real, "im_A0": r.a0.imag, "degraded": r.degraded,
                     "config_hash": cfg.hash})
    fits = []
    for k in sorted(rep.slopes):
        fits.append({"ansatz": k, "slope": rep.slopes[k], "residual": rep.residuals[k],
                     "variation": rep.variation(k), "config_hash": cfg.hash})
    tables = [Table("scaling", list(rows[0]), rows)]
    if fits:
        tables.append(Table("scaling_fits", list(fits[0]), fits))
    if rep.fgr > 0:
        fg = [{"eps": e, "gamma_fgr": rep.fgr, "fgr_remainder_over_eps3": v, "config_hash": cfg.hash}
              for e, v in zip([r.eps for r in rep.rows if r.ansatz == 0], rep.fgr_ratio)]
        tables.append(Table("scaling_fgr", list(fg[0]), fg))
    emit(tables, args.out, args.format)
    for f in fits:
        print(f"ansatz {f['ansatz']}: log-log slope {f['slope']:.4f} (rms residual {f['residual']:.2e}), "
              f"normalized sup error varies by {f['variation']:.3f}x", file=sys.stderr)
    if any(r["degraded"] for r in rows) and not args.allow_degraded:
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    fixtures = Path(os.environ.get("METASTABLE_FIXTURES", FIXTURES))
    try:
        mult = float(os.environ.get("METASTABLE_SELFTEST_TOL", "1"))
    except ValueError:
        print("METASTABLE_SELFTEST_TOL must be a number", file=sys.stderr)
        return EXIT_CONFIG
    if not fixtures.is_dir():
        print(f"fixture directory {fixtures} not found", file=sys.stderr)
        return EXIT_CONFIG
    try:
        results = run_selftest(fixtures, mult)
    except FileNotFoundError as exc:
        print(f"missing fixture: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else 1


COMMANDS = {"fgr": cmd_fgr, "resonance": cmd_resonance, "amplitude": cmd_amplitude, "scaling": cmd_scaling}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metastable", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "selftest"):
        sp = sub.add_parser(name)
        if name != "selftest":
            sp.add_argument("--config", required=True, help="experiment config or bare model JSON")
            sp.add_argument("--out", help="output directory (default: stdout)")
            sp.add_argument("--format", choices=("csv", "json"), default="csv")
            sp.add_argument("--threads", type=int, default=1)
            sp.add_argument("--allow-degraded", action="store_true")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return cmd_selftest(args)
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InconsistentModelError, ModelDomainError, SmoothnessError, ThresholdError) as exc:
        print(f"model inconsistency: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (NoRootError, UniquenessError, ConditioningError, EpsilonTooLarge, GapError, StructuralError,
            UnsupportedError, WindowError, RecurrenceError, CoverageError, ModelError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
