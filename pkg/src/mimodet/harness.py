"""Seeded Monte-Carlo experiments: config parsing, paired trial loop, CSV output.

Config files are INI text (see README for the grammar).  Every detector in
one experiment sees the same instance stream: trial ``t`` at SNR index ``i``
is drawn from ``SeedSequence([seed, i, t])`` regardless of which detectors
run or how many worker processes share the work.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, kbest, sphere
from .fsnet import TrainConfig, forward, load_params, save_params, train, write_loss_log
from .linalg import OpCounter
from .model import Constellation, RealSystem, bit_errors, parse_kind, sample_instance

CSV_COLUMNS = ("snr_db", "detector", "trial", "bit_errors", "bits", "adds", "muls",
               "visited_nodes", "restarts", "qr_ops", "fsnet_ops", "wall_ns")

# detector type -> accepted keys
DETECTOR_KEYS = {
    "fp-sd": {"alpha"},
    "se-sd": {"alpha"},
    "fdl-sd": {"weights", "alpha", "layer_order"},
    "osic-sd": {"alpha"},
    "ksd": {"k"},
    "fdl-ksd": {"weights", "k", "alpha", "early_reject", "layer_order"},
    "zf": set(),
    "mmse": set(),
    "osic": set(),
    "fsnet": {"weights"},
    "ml": set(),
}
DEPTH_FIRST = {"fp-sd", "se-sd", "fdl-sd", "osic-sd"}
NEEDS_WEIGHTS = {"fdl-sd", "fdl-ksd", "fsnet"}

_SYSTEM_KEYS = {"n_t", "n_r", "constellation"}
_EXPERIMENT_KEYS = {"snr_db", "trials", "seed", "workers", "timing"}


class ConfigError(ValueError):
    """Invalid experiment config; the message carries file, line and field."""


@dataclass
class DetectorSpec:
    id: str
    type: str
    options: dict = field(default_factory=dict)
    params: object = field(default=None, repr=False, compare=False)


@dataclass
class ExperimentConfig:
    n_t: int
    n_r: int
    constellation: Constellation
    snr_list: list
    detectors: list
    trials: int
    seed: int = 0
    workers: int = 1
    timing: bool = False
    train: TrainConfig | None = None
    source: str = "<config>"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"{self.source}: trials must be >= 1")
        if not self.snr_list:
            raise ConfigError(f"{self.source}: empty snr_db list")


@dataclass
class TrialRecord:
    snr_db: float
    detector: str
    trial: int
    bit_errors: int
    bits: int
    adds: int
    muls: int
    visited_nodes: int
    restarts: int
    qr_ops: int
    fsnet_ops: int
    wall_ns: int

    def row(self) -> list:
        return [f"{self.snr_db:g}", self.detector, self.trial, self.bit_errors, self.bits,
                self.adds, self.muls, self.visited_nodes, self.restarts, self.qr_ops,
                self.fsnet_ops, self.wall_ns]


# ---------------------------------------------------------------- parsing

def _line_map(text: str) -> dict:
    """(section, key) -> 1-based line number; (section, None) for headers."""
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        m = re.match(r"\s*([^=:\s;#][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


class _Fields:
    def __init__(self, source: str, lines: dict):
        self.source, self.lines = source, lines

    def error(self, section: str, key: str | None, msg: str) -> ConfigError:
        no = self.lines.get((section, key)) or self.lines.get((section, None))
        where = f"{self.source}:{no}" if no else self.source
        what = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{where}: {what}: {msg}")

    def get(self, sec, section: str, key: str, conv, default=None, required=False):
        if key not in sec:
            if required:
                raise self.error(section, None, f"missing required key '{key}'")
            return default
        raw = sec[key]
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise self.error(section, key, f"bad value {raw!r} ({exc})") from None

    def check_keys(self, sec, section: str, allowed: set):
        for key in sec:
            if key not in allowed:
                raise self.error(section, key, f"unknown key (allowed: {', '.join(sorted(allowed)) or 'none'})")


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_snr_list(raw: str) -> list:
    """``"2, 4, 6"`` or an inclusive range ``"2:12:2"`` (or ``"2:12"``, step 1)."""
    raw = raw.strip()
    if ":" in raw:
        parts = [float(p) for p in raw.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError("range must be start:stop[:step]")
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) == 3 else 1.0
        if step <= 0:
            raise ValueError("step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(n, 0))]
    return [float(p) for p in raw.replace(",", " ").split()]


def _positive_int(raw: str) -> int:
    v = int(raw)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _positive_float(raw: str) -> float:
    v = float(raw)
    if not v > 0:
        raise ValueError("must be > 0")
    return v


def parse_config(text: str, source: str = "<config>", base_dir=None,
                 require_detectors: bool = True) -> ExperimentConfig:
    """Parse and validate an experiment config.

    Relative weight paths resolve against ``base_dir``.  Weight files are
    loaded and checked against the system shape here, so a bad file fails
    before any trial runs.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    f = _Fields(source, _line_map(text))
    base = Path(base_dir) if base_dir is not None else Path(".")

    if not parser.has_section("system"):
        raise ConfigError(f"{source}: missing [system] section")
    sys_sec = parser["system"]
    f.check_keys(sys_sec, "system", _SYSTEM_KEYS)
    n_t = f.get(sys_sec, "system", "n_t", _positive_int, required=True)
    n_r = f.get(sys_sec, "system", "n_r", _positive_int, required=True)
    if n_r < n_t:
        raise f.error("system", "n_r", f"need n_r >= n_t ({n_r} < {n_t})")
    cst = f.get(sys_sec, "system", "constellation",
                lambda r: Constellation.from_kind(parse_kind(r)), Constellation.from_kind("QPSK"))

    exp = parser["experiment"] if parser.has_section("experiment") else {}
    if exp:
        f.check_keys(exp, "experiment", _EXPERIMENT_KEYS)
    snr_list = f.get(exp, "experiment", "snr_db", parse_snr_list, [10.0])
    if not snr_list:
        raise f.error("experiment", "snr_db", "empty list")
    trials = f.get(exp, "experiment", "trials", int, 100)
    if trials < 1:
        raise f.error("experiment", "trials", f"must be >= 1, got {trials}")
    seed = f.get(exp, "experiment", "seed", int, 0)
    if seed < 0:
        raise f.error("experiment", "seed", "must be >= 0")
    workers = f.get(exp, "experiment", "workers", _positive_int, 1)
    timing = f.get(exp, "experiment", "timing", _bool, False)

    detectors, ids = [], set()
    for section in parser.sections():
        if section in ("system", "experiment", "train"):
            continue
        m = re.fullmatch(r"detector\s+(\S+)", section)
        if not m:
            raise f.error(section, None, "unknown section")
        det_id = m.group(1)
        if det_id in ids:
            raise f.error(section, None, "duplicate detector id")
        ids.add(det_id)
        sec = parser[section]
        dtype = f.get(sec, section, "type", lambda r: r.strip().lower(), required=True)
        if dtype not in DETECTOR_KEYS:
            raise f.error(section, "type", f"unknown detector type {dtype!r} "
                          f"(one of {', '.join(DETECTOR_KEYS)})")
        f.check_keys(sec, section, DETECTOR_KEYS[dtype] | {"type"})
        opts = {}
        if "alpha" in sec:
            opts["alpha"] = f.get(sec, section, "alpha", _positive_float)
        if "k" in sec:
            opts["K"] = f.get(sec, section, "k", _positive_int)
        elif dtype in ("ksd", "fdl-ksd"):
            raise f.error(section, None, "missing required key 'K'")
        for key in ("early_reject", "layer_order"):
            if key in sec:
                opts[key] = f.get(sec, section, key, _bool)
        spec = DetectorSpec(det_id, dtype, opts)
        if dtype in NEEDS_WEIGHTS:
            raw = f.get(sec, section, "weights", str, required=True)
            path = Path(raw.strip())
            if not path.is_absolute():
                path = base / path
            if not path.is_file():
                raise f.error(section, "weights", f"file not found: {path}")
            try:
                spec.params = load_params(path, 2 * n_t, cst)
            except ValueError as exc:
                raise f.error(section, "weights", str(exc)) from None
            spec.options["weights"] = str(path)
        detectors.append(spec)
    if require_detectors and not detectors:
        raise ConfigError(f"{source}: no [detector <id>] sections")

    train_cfg = None
    if parser.has_section("train"):
        sec = parser["train"]
        names = {fl.name: fl.type for fl in dataclasses.fields(TrainConfig)}
        f.check_keys(sec, "train", set(names))
        kw = {"n_t": n_t, "n_r": n_r, "constellation": cst.kind.name}
        for key in sec:
            default = getattr(TrainConfig, key)
            conv = str if isinstance(default, str) else type(default)
            kw[key] = f.get(sec, "train", key, conv)
        try:
            train_cfg = TrainConfig(**kw)
        except ValueError as exc:
            raise f.error("train", None, str(exc)) from None

    return ExperimentConfig(n_t, n_r, cst, snr_list, detectors, trials, seed, workers,
                            timing, train_cfg, source)


def load_config(path, require_detectors: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path), path.parent, require_detectors)


# ---------------------------------------------------------------- detection

def _counted(fn, sys: RealSystem) -> sphere.DetectionResult:
    counter = OpCounter()
    x = fn(sys, counter)
    return sphere.DetectionResult(np.asarray(x, dtype=float), float("nan"),
                                  counter.adds, counter.muls)


def _fsnet_only(sys: RealSystem, params) -> sphere.DetectionResult:
    counter = OpCounter()
    _, s_hard, _ = forward(params, sys.H, sys.y, counter)
    return sphere.DetectionResult(s_hard, float("nan"), counter.adds, counter.muls,
                                  fsnet_ops=counter.ops)


def run_detector(spec: DetectorSpec, sys: RealSystem) -> sphere.DetectionResult:
    """Run one configured detector on one instance."""
    o = spec.options
    alpha = o.get("alpha", sphere.DEFAULT_ALPHA)
    t = spec.type
    if t == "fp-sd":
        return sphere.decode_fp(sys, sphere.RadiusPolicy(alpha=alpha))
    if t == "se-sd":
        return sphere.decode_se(sys, sphere.RadiusPolicy(alpha=alpha))
    if t == "fdl-sd":
        return sphere.decode_fdl(sys, spec.params, alpha, o.get("layer_order", True))
    if t == "osic-sd":
        return baselines.decode_osic_sd(sys, alpha)
    if t == "ksd":
        return kbest.decode_ksd(sys, o["K"])
    if t == "fdl-ksd":
        cfg = kbest.KbestConfig(o["K"], o.get("early_reject", True),
                                o.get("layer_order", True), alpha)
        return kbest.decode_fdl_ksd(sys, spec.params, cfg)
    if t == "zf":
        return _counted(baselines.detect_zf, sys)
    if t == "mmse":
        return _counted(baselines.detect_mmse, sys)
    if t == "osic":
        return _counted(baselines.detect_osic, sys)
    if t == "fsnet":
        return _fsnet_only(sys, spec.params)
    if t == "ml":
        return baselines.detect_ml_bruteforce(sys)
    raise ValueError(f"unknown detector type {t!r}")


def instance(cfg: ExperimentConfig, snr_idx: int, trial: int) -> RealSystem:
    """The paired instance shared by every detector at (snr_idx, trial)."""
    ss = np.random.SeedSequence([cfg.seed, snr_idx, trial])
    return sample_instance(cfg.n_t, cfg.n_r, cfg.constellation, cfg.snr_list[snr_idx], ss)


def _trial(cfg: ExperimentConfig, snr_idx: int, trial: int) -> list:
    sys = instance(cfg, snr_idx, trial)
    out = []
    for spec in cfg.detectors:
        t0 = time.perf_counter_ns()
        res = run_detector(spec, sys)
        wall = time.perf_counter_ns() - t0 if cfg.timing else 0
        errs, bits = bit_errors(res.s_hat, sys.s_true, cfg.constellation)
        out.append(TrialRecord(cfg.snr_list[snr_idx], spec.id, trial, errs, bits,
                               res.adds, res.muls, res.visited_nodes, res.restarts,
                               res.qr_ops, res.fsnet_ops, wall))
    return out


_WORKER_CFG = None


def _init_worker(cfg):
    global _WORKER_CFG
    _WORKER_CFG = cfg


def _job(args):
    return _trial(_WORKER_CFG, *args)


@dataclass
class ExperimentResult:
    records: list
    summary: list

    def csv_text(self) -> str:
        return records_to_csv(self.records)


def run_experiment(cfg: ExperimentConfig, out=None, progress=None) -> ExperimentResult:
    """Run every (snr, trial) pair through every detector.

    Rows are ordered by SNR, then detector (config order), then trial, and
    do not depend on ``cfg.workers``.  With ``out`` set the CSV is written
    there and the summary next to it as ``<out>.summary.csv``.
    """
    if not cfg.detectors:
        raise ConfigError(f"{cfg.source}: no detectors to run")
    jobs = [(i, t) for i in range(len(cfg.snr_list)) for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(cfg,)) as ex:
            chunk = max(1, len(jobs) // (4 * cfg.workers))
            per_job = list(ex.map(_job, jobs, chunksize=chunk))
    else:
        per_job = []
        for n, (i, t) in enumerate(jobs):
            per_job.append(_trial(cfg, i, t))
            if progress is not None:
                progress(n + 1, len(jobs))
    n_det = len(cfg.detectors)
    records = []
    for i in range(len(cfg.snr_list)):
        block = per_job[i * cfg.trials:(i + 1) * cfg.trials]
        for d in range(n_det):
            records.extend(rows[d] for rows in block)
    result = ExperimentResult(records, summarize(records))
    if out is not None:
        out = Path(out)
        out.write_text(result.csv_text())
        Path(str(out) + ".summary.csv").write_text(summary_to_csv(result.summary))
    return result


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SUMMARY_COLUMNS = ("snr_db", "detector", "trials", "bit_errors", "bits", "ber",
                   "mean_adds", "mean_muls", "mean_ops", "mean_visited", "mean_qr_ops",
                   "mean_fsnet_ops")


def summarize(records) -> list:
    """BER and mean complexity per (snr, detector), in first-seen order."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.snr_db, r.detector), []).append(r)
    rows = []
    for (snr, det), rs in groups.items():
        n = len(rs)
        errs = sum(r.bit_errors for r in rs)
        bits = sum(r.bits for r in rs)
        adds = sum(r.adds for r in rs) / n
        muls = sum(r.muls for r in rs) / n
        rows.append({"snr_db": snr, "detector": det, "trials": n, "bit_errors": errs,
                     "bits": bits, "ber": errs / bits, "mean_adds": adds, "mean_muls": muls,
                     "mean_ops": adds + muls,
                     "mean_visited": sum(r.visited_nodes for r in rs) / n,
                     "mean_qr_ops": sum(r.qr_ops for r in rs) / n,
                     "mean_fsnet_ops": sum(r.fsnet_ops for r in rs) / n})
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in summary:
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def format_summary(summary) -> str:
    cols = ("snr_db", "detector", "trials", "ber", "mean_ops", "mean_visited", "mean_fsnet_ops")
    table = [cols] + [tuple(_fmt(r[c]) for c in cols) for r in summary]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    return "\n".join("  ".join(cell.rjust(wd) for cell, wd in zip(row, widths)) for row in table)


# ---------------------------------------------------------------- traces

def convergence_trace(sys: RealSystem, detector, params=None, **options) -> list:
    """Search progress of one detection.

    For depth-first detectors this is ``(visited node index, squared
    radius)`` at every radius update; FS-Net and OSIC seeded searches start
    with their initial candidate at index 0.  The last value equals the
    returned metric.  For K-best detectors it is ``(layer depth, best path
    metric)`` per completed layer.
    """
    spec = detector if isinstance(detector, DetectorSpec) else DetectorSpec(
        "trace", str(detector).lower(), dict(options), params)
    if spec.type not in DEPTH_FIRST | {"ksd", "fdl-ksd"}:
        raise ValueError(f"no search trace for detector type {spec.type!r}")
    res = run_detector(spec, sys)
    if spec.type in DEPTH_FIRST:
        return [(int(i), float(v)) for i, v in res.radius_trace]
    return [(depth + 1, float(v)) for depth, v in enumerate(res.radius_trace)]


def first_hit(trace) -> int:
    """Visited-node index at which the final radius was first reached."""
    return int(trace[-1][0]) if trace else 0


def trace_rows(cfg: ExperimentConfig) -> list:
    """Trace rows ``(snr_db, detector, trial, index, value)`` for every search detector."""
    rows = []
    for i, snr in enumerate(cfg.snr_list):
        for t in range(cfg.trials):
            sys = instance(cfg, i, t)
            for spec in cfg.detectors:
                if spec.type not in DEPTH_FIRST | {"ksd", "fdl-ksd"}:
                    continue
                for idx, val in convergence_trace(sys, spec):
                    rows.append((snr, spec.id, t, idx, val))
    return rows


# ---------------------------------------------------------------- training

def train_cli(cfg: TrainConfig, out, loss_log=None, callback=None):
    """Train FS-Net, write the weight file and a JSON-lines loss log.

    The log goes to ``loss_log`` or ``<out>.loss.jsonl``; returns the
    :class:`~mimodet.fsnet.TrainResult`.
    """
    result = train(cfg, callback)
    save_params(result.params, out)
    write_loss_log(loss_log or str(out) + ".loss.jsonl", cfg, result.losses)
    return result
