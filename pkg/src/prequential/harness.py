"""Prequential benchmark runner.

At each step every active predictor issues its predictive for x_t before
seeing y_t; the point, interval, scores and PIT are recorded, then the
predictor observes (x_t, y_t).  An optional reselection rule watches a
trailing window of losses and refits (or swaps) a predictor when the window
CPE exceeds a threshold.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import averaging, conjugate, linear, streaming, timeseries
from .core import (
    ABSOLUTE,
    SQUARED,
    Discrete,
    Loss,
    Normal,
    ObservationStream,
    Record,
    Uniform,
    pit,
    point_mass,
    point_prediction,
    predictive_interval,
)
from .scoring import CPETracker, log_score, pit_uniformity

log = logging.getLogger(__name__)

RECORD_FIELDS = ("t", "predictor", "point", "lo", "hi", "level", "log_score", "loss_sq", "loss_abs", "pit", "covered")
TOP_KEYS = {"data", "outcome", "predictors", "scores", "pi_level", "point_loss", "reselection", "output_dir"}
PREDICTOR_KEYS = {"label", "kind", "params", "seed", "burn_in"}
RESELECTION_KEYS = {"window", "loss", "threshold", "action", "target"}
SCORE_NAMES = ("log", "squared", "absolute", "pi")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# predictor factory


def _conj(kind, p):
    if kind == "beta_binomial":
        return conjugate.BetaBinomial(p.get("a", 1.0), p.get("b", 1.0))
    if kind == "normal_known_var":
        return conjugate.NormalKnownVar(p.get("mu0", 0.0), p.get("tau0sq", 1.0), p.get("sigmasq", 1.0))
    if kind == "normal_inv_gamma":
        return conjugate.NormalInvGamma(p.get("m", 0.0), p.get("kappa", 1.0), p.get("shape", 1.0), p.get("rate", 1.0))
    raise ConfigError(f"unknown conjugate kind {kind!r}")


def _initial_law(spec):
    if spec is None:
        return None
    k = spec.get("kind")
    if k == "point":
        return point_mass(spec["value"])
    if k == "uniform_alphabet":
        vals = spec["alphabet"]
        return Discrete(vals, np.ones(len(vals)))
    if k == "uniform":
        return Uniform(spec.get("lo", 0.0), spec.get("hi", 1.0))
    if k == "normal":
        return Normal(spec.get("loc", 0.0), spec.get("scale", 1.0))
    raise ConfigError(f"unknown initial law {k!r}")


def _build_edf(p, seed):
    return streaming.EDFPredictor(_initial_law(p.get("initial")))


def _build_plug_in(p, seed):
    prior = p.get("prior")
    prior_model = _conj(prior["kind"], prior) if prior else None
    return conjugate.PlugInPredictor(
        p.get("family", "normal"), p.get("estimator", "mle"), prior=prior_model, sigmasq=p.get("sigmasq")
    )


def _build_bma(p, seed):
    members = [(m.get("label", f"m{i}"), _conj(m["kind"], m)) for i, m in enumerate(p["members"])]
    return averaging.BMAPredictor(members, p.get("prior_weights"))


def _build_count_min(p, seed):
    return streaming.CountMinPredictor(
        p.get("epsilon", 0.01), p.get("delta", 0.05), p["universe"], seed, p["candidates"]
    )


def _build_shtarkov(p, seed):
    experts = streaming.ExpertSet(p["alphabet"], p.get("weights") or [1.0] * len(p["experts"]), p["experts"])
    return streaming.ShtarkovPredictor(experts, p["horizon"])


def _build_ar(p, seed):
    prior = conjugate.NormalInvGamma(p.get("m", 0.0), p.get("kappa", 1.0), p.get("shape", 1.0), p.get("rate", 1.0))
    return timeseries.ARBayesPredictor(p.get("p", 1), prior, coef_precision=p.get("coef_precision"))


def _build_kalman(p, seed):
    return timeseries.KalmanPredictor(
        timeseries.SsmParams(p["F"], p["G"], p["H"], p["Q"], p["R"], p["m0"], p["P0"])
    )


def _build_local_level(p, seed):
    return timeseries.KalmanPredictor(
        timeseries.local_level(p.get("q", 1.0), p.get("r", 1.0), p.get("m0", 0.0), p.get("p0", 1e6), p.get("phi", 1.0))
    )


def _build_g_prior(p, seed):
    return linear.GPriorPredictor(p.get("mask"), p.get("g"))


BUILDERS = {
    "beta_binomial": lambda p, s: conjugate.ConjugatePredictor(_conj("beta_binomial", p)),
    "normal_known_var": lambda p, s: conjugate.ConjugatePredictor(_conj("normal_known_var", p)),
    "normal_inv_gamma": lambda p, s: conjugate.ConjugatePredictor(_conj("normal_inv_gamma", p)),
    "plug_in": _build_plug_in,
    "edf": _build_edf,
    "bma": _build_bma,
    "count_min": _build_count_min,
    "shtarkov": _build_shtarkov,
    "ar_bayes": _build_ar,
    "kalman": _build_kalman,
    "local_level": _build_local_level,
    "g_prior": _build_g_prior,
}


def build_predictor(spec: dict):
    try:
        pred = BUILDERS[spec["kind"]](spec.get("params", {}), spec["seed"])
    except KeyError as exc:
        raise ConfigError(f"predictor {spec.get('label')!r}: missing parameter {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"predictor {spec.get('label')!r}: {exc}") from exc
    pred.label = spec["label"]
    return pred


# ---------------------------------------------------------------------------
# configuration


@dataclass
class Diagnostic:
    level: str  # "error" | "warning"
    line: Optional[int]
    message: str

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{self.level}: {where}{self.message}"


@dataclass
class ReselectionRule:
    window: int
    loss: str
    threshold: float
    action: str = "refit"
    target: Optional[str] = None


@dataclass
class RunConfig:
    data_path: Path
    data_format: str
    outcome_kind: str
    alphabet: Optional[int]
    predictors: list
    scores: list
    pi_level: float
    point_loss: str
    reselection: Optional[ReselectionRule]
    output_dir: Path
    resolved: dict = field(default_factory=dict)


def _line_of(text: str, needle: str) -> Optional[int]:
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _key_line(text, key, value=None):
    if value is not None:
        pat = re.compile(r'"%s"\s*:\s*%s' % (re.escape(key), re.escape(json.dumps(value))))
        for i, line in enumerate(text.splitlines(), 1):
            if pat.search(line):
                return i
    return _line_of(text, f'"{key}"')


def validate_config(path, text: Optional[str] = None) -> tuple[list[Diagnostic], Optional[dict]]:
    """Check a JSON run config; returns (diagnostics, resolved config or None)."""
    path = Path(path)
    if text is None:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            return [Diagnostic("error", None, f"cannot read config: {exc}")], None
    diags: list[Diagnostic] = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        return [Diagnostic("error", exc.lineno, f"invalid JSON: {exc.msg}")], None
    if not isinstance(raw, dict):
        return [Diagnostic("error", 1, "config must be a JSON object")], None

    def err(msg, line=None):
        diags.append(Diagnostic("error", line, msg))

    def warn(msg, line=None):
        diags.append(Diagnostic("warning", line, msg))

    for k in sorted(set(raw) - TOP_KEYS):
        warn(f"unknown key {k!r} ignored", _key_line(text, k))

    data = raw.get("data")
    if not isinstance(data, dict) or "path" not in data:
        err("'data' must be an object with a 'path'", _key_line(text, "data"))
        data = {"path": ""}
    fmt = data.get("format") or ("jsonl" if str(data.get("path", "")).endswith((".jsonl", ".json")) else "csv")
    if fmt not in ("csv", "jsonl"):
        err(f"data format must be 'csv' or 'jsonl', got {fmt!r}", _key_line(text, "format"))
    for k in sorted(set(data) - {"path", "format"}):
        warn(f"unknown key data.{k} ignored", _key_line(text, k))

    outcome = raw.get("outcome", {"kind": "real"})
    kind = outcome.get("kind", "real") if isinstance(outcome, dict) else None
    if kind not in ("real", "category", "count"):
        err(f"outcome kind must be real, category or count, got {kind!r}", _key_line(text, "kind", kind))
    alphabet = outcome.get("alphabet") if isinstance(outcome, dict) else None
    if kind == "category" and not (isinstance(alphabet, int) and alphabet >= 2):
        err("category outcomes need an integer 'alphabet' >= 2", _key_line(text, "outcome"))

    preds = raw.get("predictors")
    resolved_preds = []
    if not isinstance(preds, list) or not preds:
        err("'predictors' must be a nonempty list", _key_line(text, "predictors"))
        preds = []
    seen: dict = {}
    for i, p in enumerate(preds):
        if not isinstance(p, dict):
            err(f"predictors[{i}] must be an object")
            continue
        label = p.get("label")
        line = _key_line(text, "label", label) if label is not None else None
        if not isinstance(label, str) or not label:
            err(f"predictors[{i}] needs a nonempty string 'label'")
            continue
        for k in sorted(set(p) - PREDICTOR_KEYS):
            warn(f"unknown key {k!r} in predictor {label!r} ignored", _key_line(text, k))
        if label in seen:
            err(
                f"duplicate predictor label {label!r} (predictors[{seen[label]}] and predictors[{i}])",
                line,
            )
        else:
            seen[label] = i
        pk = p.get("kind")
        if pk not in BUILDERS:
            err(
                f"predictor {label!r}: unknown kind {pk!r}; available kinds: {', '.join(sorted(BUILDERS))}",
                _key_line(text, "kind", pk) or line,
            )
        seed = p.get("seed")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            err(f"predictor {label!r}: an explicit nonnegative integer 'seed' is required", line)
        burn = p.get("burn_in", 0)
        if not isinstance(burn, int) or burn < 0:
            err(f"predictor {label!r}: burn_in must be a nonnegative integer", line)
        params = p.get("params", {})
        if not isinstance(params, dict):
            err(f"predictor {label!r}: params must be an object", line)
            params = {}
        resolved_preds.append({"label": label, "kind": pk, "params": params, "seed": seed, "burn_in": burn})

    scores = raw.get("scores", list(SCORE_NAMES))
    if not isinstance(scores, list) or any(s not in SCORE_NAMES for s in scores):
        err(f"scores must be a list drawn from {list(SCORE_NAMES)}", _key_line(text, "scores"))
        scores = list(SCORE_NAMES)

    level = raw.get("pi_level", 0.9)
    if not isinstance(level, (int, float)) or not 0 < level < 1:
        err(f"pi_level must lie in (0, 1), got {level!r}", _key_line(text, "pi_level"))
        level = 0.9

    point_loss = raw.get("point_loss", "squared")
    if point_loss not in ("squared", "absolute", "zero_one"):
        err(f"point_loss must be squared, absolute or zero_one, got {point_loss!r}", _key_line(text, "point_loss"))

    rs = raw.get("reselection")
    resolved_rs = None
    if rs is not None:
        line = _key_line(text, "reselection")
        if not isinstance(rs, dict):
            err("reselection must be an object", line)
        else:
            for k in sorted(set(rs) - RESELECTION_KEYS):
                warn(f"unknown key reselection.{k} ignored", _key_line(text, k))
            w = rs.get("window")
            if not isinstance(w, int) or w < 1:
                err("reselection.window must be an integer >= 1", line)
            thr = rs.get("threshold")
            if not isinstance(thr, (int, float)) or not math.isfinite(thr):
                err("reselection.threshold must be a finite number", line)
            rl = rs.get("loss", "squared")
            if rl not in ("squared", "absolute", "pi"):
                err(f"reselection.loss must be squared, absolute or pi, got {rl!r}", line)
            action = rs.get("action", "refit")
            if action not in ("refit", "switch-to"):
                err(f"reselection.action must be 'refit' or 'switch-to', got {action!r}", line)
            target = rs.get("target")
            if action == "switch-to" and target not in seen:
                err(f"reselection target {target!r} is not a predictor label", line)
            resolved_rs = {"window": w, "loss": rl, "threshold": thr, "action": action, "target": target}

    resolved = {
        "data": {"path": data.get("path"), "format": fmt},
        "outcome": {"kind": kind, "alphabet": alphabet},
        "predictors": resolved_preds,
        "scores": scores,
        "pi_level": level,
        "point_loss": point_loss,
        "reselection": resolved_rs,
        "output_dir": raw.get("output_dir", "out"),
    }
    return diags, resolved


def load_config(path, out_dir=None) -> RunConfig:
    path = Path(path)
    diags, resolved = validate_config(path)
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ConfigError("\n".join(str(d) for d in errors))
    for d in diags:
        log.warning("%s", d)
    base = path.parent
    data_path = Path(resolved["data"]["path"])
    if not data_path.is_absolute():
        data_path = base / data_path
    out = Path(out_dir) if out_dir is not None else Path(resolved["output_dir"])
    if out_dir is None and not out.is_absolute():
        out = base / out
    rs = resolved["reselection"]
    return RunConfig(
        data_path=data_path,
        data_format=resolved["data"]["format"],
        outcome_kind=resolved["outcome"]["kind"],
        alphabet=resolved["outcome"]["alphabet"],
        predictors=resolved["predictors"],
        scores=resolved["scores"],
        pi_level=resolved["pi_level"],
        point_loss=resolved["point_loss"],
        reselection=ReselectionRule(**rs) if rs else None,
        output_dir=out,
        resolved=resolved,
    )


# ---------------------------------------------------------------------------
# data ingestion


def read_stream(path, fmt: str = "csv", kind: str = "real", alphabet: Optional[int] = None) -> ObservationStream:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read data file: {exc}") from exc
    stream = ObservationStream(kind=kind, alphabet=alphabet)
    try:
        if fmt == "csv":
            rows = list(csv.reader(io.StringIO(text)))
            if not rows:
                raise DataError("data file is empty")
            header = [h.strip() for h in rows[0]]
            if header[0] != "t" or header[-1] != "y":
                raise DataError("CSV header must be t,x1,...,xd,y")
            d = len(header) - 2
            for ln, row in enumerate(rows[1:], 2):
                if not row:
                    continue
                if len(row) != d + 2:
                    raise DataError(f"line {ln}: expected {d + 2} fields, got {len(row)}")
                xs = [c.strip() for c in row[1:-1]]
                if any(c == "" for c in xs):
                    raise DataError(f"line {ln}: missing covariate value")
                x = tuple(float(c) for c in xs) if d else None
                stream.append(Record(int(row[0]), x, _parse_y(row[-1].strip(), kind)))
        elif fmt == "jsonl":
            for ln, line in enumerate(text.splitlines(), 1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                x = obj.get("x")
                x = tuple(float(v) for v in x) if x is not None else None
                stream.append(Record(int(obj["t"]), x, obj["y"]))
        else:
            raise DataError(f"unknown data format {fmt!r}")
    except DataError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(str(exc)) from exc
    if not len(stream):
        raise DataError("data file has no records")
    return stream


def _parse_y(s, kind):
    return float(s) if kind == "real" else int(float(s))


# ---------------------------------------------------------------------------
# the prequential loop


def fmt_num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


@dataclass
class _Slot:
    spec: dict
    predictor: Any
    rng: np.random.Generator
    tracker: Optional[CPETracker]
    seen: int = 0
    events: list = field(default_factory=list)
    quarantined: Optional[str] = None


_POINT_LOSS = {"squared": SQUARED, "absolute": ABSOLUTE, "zero_one": Loss("pi")}


def run_stream(cfg: RunConfig, stream: ObservationStream) -> tuple[list[dict], dict, dict]:
    """Run every configured predictor over ``stream``.

    Returns (records, summary, sketch snapshots keyed by label).
    """
    alpha = 1.0 - cfg.pi_level
    point_loss = _POINT_LOSS[cfg.point_loss]
    rule = cfg.reselection
    specs = {s["label"]: s for s in cfg.predictors}
    slots = [
        _Slot(
            spec=s,
            predictor=build_predictor(s),
            rng=np.random.default_rng([s["seed"], 0x5049]),
            tracker=CPETracker(rule.window) if rule else None,
        )
        for s in cfg.predictors
    ]
    history: list[tuple] = []
    records: list[dict] = []
    for rec in stream:
        for slot in slots:
            if slot.quarantined:
                continue
            if slot.seen < slot.spec["burn_in"]:
                continue
            try:
                row = _score_step(slot, rec, alpha, point_loss)
            except Exception as exc:  # quarantine, keep the run going
                slot.quarantined = f"t={rec.t}: {type(exc).__name__}: {exc}"
                log.warning("quarantined %s at t=%s: %s", slot.spec["label"], rec.t, exc)
                continue
            records.append(row)
            if rule:
                slot.tracker.add(_rule_loss(rule.loss, row))
        history.append((rec.x, rec.y))
        for slot in slots:
            if slot.quarantined:
                continue
            try:
                slot.predictor.observe(rec.x, rec.y)
            except Exception as exc:
                slot.quarantined = f"t={rec.t}: {type(exc).__name__}: {exc}"
                log.warning("quarantined %s at t=%s: %s", slot.spec["label"], rec.t, exc)
                continue
            slot.seen += 1
            if rule and slot.tracker.window_full and slot.tracker.window_cpe > rule.threshold:
                trigger = slot.tracker.window_cpe
                if rule.action == "switch-to":
                    new = build_predictor({**specs[rule.target], "label": slot.spec["label"]})
                    slot.predictor = new
                try:
                    slot.predictor.refit(history)
                except Exception as exc:
                    slot.quarantined = f"t={rec.t}: refit failed: {exc}"
                    continue
                slot.events.append(
                    {"t": rec.t, "trigger": float(fmt_num(trigger)), "action": rule.action, "target": rule.target}
                )
                slot.tracker.clear_window()
    snapshots = {
        s.spec["label"]: s.predictor.sketch.to_bytes()
        for s in slots
        if isinstance(getattr(s.predictor, "sketch", None), streaming.CountMinSketch)
    }
    return records, summarize(records, slots, cfg), snapshots


def _score_step(slot, rec, alpha, point_loss) -> dict:
    dist = slot.predictor.predictive(rec.x)
    point = point_prediction(dist, point_loss)
    iv = predictive_interval(dist, alpha)
    y = rec.y
    u = pit(dist, y, slot.rng)
    row = {
        "t": rec.t,
        "predictor": slot.spec["label"],
        "point": fmt_num(point),
        "lo": fmt_num(iv.lo),
        "hi": fmt_num(iv.hi),
        "level": fmt_num(iv.level),
        "log_score": fmt_num(log_score(dist, y)),
        "loss_sq": fmt_num(SQUARED.evaluate(point, y)),
        "loss_abs": fmt_num(ABSOLUTE.evaluate(point, y)),
        "pit": fmt_num(u),
        "covered": fmt_num(int(iv.covers(y))),
    }
    return row


def _rule_loss(kind, row) -> float:
    if kind == "squared":
        return float(row["loss_sq"])
    if kind == "absolute":
        return float(row["loss_abs"])
    return float(row["covered"])


def summarize(records: list[dict], slots, cfg: RunConfig) -> dict:
    """Per-predictor summary, computed from the formatted record values."""
    by_label: dict = {s.spec["label"]: [] for s in slots}
    for r in records:
        by_label[r["predictor"]].append(r)
    out = {}
    for slot in slots:
        label = slot.spec["label"]
        rows = by_label[label]
        entry: dict = {"kind": slot.spec["kind"], "n_scored": len(rows), "burn_in": slot.spec["burn_in"]}
        if rows:
            sq = [float(r["loss_sq"]) for r in rows]
            ab = [float(r["loss_abs"]) for r in rows]
            cov = [float(r["covered"]) for r in rows]
            ls = [float(r["log_score"]) for r in rows]
            cpe = {}
            if "squared" in cfg.scores:
                cpe["squared"] = math.fsum(sq) / len(rows)
            if "absolute" in cfg.scores:
                cpe["absolute"] = math.fsum(ab) / len(rows)
            if "pi" in cfg.scores:
                cpe["pi"] = math.fsum(cov) / len(rows)
            entry["cpe"] = cpe
            entry["coverage"] = math.fsum(cov) / len(rows)
            if "log" in cfg.scores:
                bad = [int(r["t"]) for r in rows if math.isinf(float(r["log_score"]))]
                entry["cumulative_log_score"] = math.inf if bad else math.fsum(ls)
                entry["out_of_support_steps"] = bad
            pits = [float(r["pit"]) for r in rows if r["pit"] != ""]
            if len(pits) >= 5:
                d, pv = pit_uniformity(pits)
                entry["pit_ks"] = {"statistic": d, "p_value": pv}
            else:
                entry["pit_ks"] = None
        entry["reselection_events"] = slot.events
        entry["quarantined"] = slot.quarantined
        out[label] = entry
    return {"predictors": out, "pi_level": cfg.pi_level, "point_loss": cfg.point_loss}


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def write_outputs(out_dir: Path, records: list[dict], summary: dict, snapshots: Optional[dict] = None):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "records.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(records)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, blob in (snapshots or {}).items():
        (out_dir / f"{name}.cms").write_bytes(blob)


def run(cfg: RunConfig) -> dict:
    stream = read_stream(cfg.data_path, cfg.data_format, cfg.outcome_kind, cfg.alphabet)
    records, summary, snapshots = run_stream(cfg, stream)
    write_outputs(cfg.output_dir, records, summary, snapshots)
    return summary


def read_records(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
