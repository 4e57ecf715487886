"""Detection and evaluation: incidents, temporal split, monthly retraining, metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import forest as rf
from . import textsim
from .corpus import CorpusIndex, Email, format_timestamp, from_ts, month_bounds, parse_timestamp
from .features import FeatureContext, FeatureExtractor, FeatureVector

log = logging.getLogger(__name__)

REPORTED, CONFIRMED, BENIGN, UNKNOWN = "reported", "detector_confirmed", "benign", "unknown"


def parse_window(value) -> tuple[int, int]:
    """``START/END`` (END exclusive); each side is YYYY-MM, YYYY-MM-DD, or RFC 3339."""
    if isinstance(value, tuple):
        return tuple(int(v.timestamp()) if isinstance(v, datetime) else int(v) for v in value)
    start_s, sep, end_s = value.partition("/")
    if not sep:
        raise ValueError(f"window {value!r} must look like START/END")
    return _parse_instant(start_s), _parse_instant(end_s)


def _parse_instant(s: str) -> int:
    s = s.strip()
    if len(s) == 7:
        y, m = s.split("-")
        return month_bounds(int(y), int(m))[0]
    if len(s) == 10:
        return int(datetime.fromisoformat(s).replace(tzinfo=timezone.utc).timestamp())
    return int(parse_timestamp(s).timestamp())


def format_window(window) -> str:
    return f"{format_timestamp(from_ts(window[0]))}/{format_timestamp(from_ts(window[1]))}"


def month_windows(window) -> list[tuple[str, int, int]]:
    """Calendar-month pieces of a window as (label, start, end)."""
    start, end = window
    out = []
    cur = from_ts(start)
    y, m = cur.year, cur.month
    while True:
        ms, me = month_bounds(y, m)
        if ms >= end:
            break
        lo, hi = max(ms, start), min(me, end)
        if hi > lo:
            out.append((f"{y:04d}-{m:02d}", lo, hi))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


@dataclass
class Incident:
    sender: str
    subject: str
    email_ids: list[str]
    first_sent_at: datetime
    flags: dict[str, bool] = field(default_factory=lambda: {"main": False, "fuzzy": False, "template": False})
    ground_truth: str = UNKNOWN
    score: float | None = None
    features: FeatureVector | None = None
    detected: bool = False

    @property
    def key(self) -> tuple[str, str]:
        return self.sender, self.subject

    def to_record(self) -> dict:
        return {
            "sender": self.sender,
            "subject": self.subject,
            "email_ids": list(self.email_ids),
            "first_sent_at": format_timestamp(self.first_sent_at),
            "score": self.score,
            "features": self.features.to_record() if self.features else None,
            "flags": dict(self.flags),
            "detected": self.detected,
            "ground_truth": self.ground_truth,
        }

    @classmethod
    def from_record(cls, rec) -> Incident:
        return cls(
            sender=rec["sender"], subject=rec["subject"], email_ids=list(rec["email_ids"]),
            first_sent_at=parse_timestamp(rec["first_sent_at"]),
            flags=dict(rec.get("flags") or {}), ground_truth=rec.get("ground_truth", UNKNOWN),
            score=rec.get("score"),
            features=FeatureVector.from_record(rec["features"]) if rec.get("features") else None,
            detected=bool(rec.get("detected", True)),
        )


def dedup_incidents(alert_emails) -> list[Incident]:
    """One incident per (sender, subject); ordered by first email time, then key."""
    groups: dict[tuple[str, str], dict[str, Email]] = {}
    for e in alert_emails:
        groups.setdefault((e.sender, e.subject), {})[e.id] = e
    out = []
    for (sender, subject), members in groups.items():
        ems = sorted(members.values(), key=lambda e: (e.sent_ts, e.id))
        out.append(Incident(sender, subject, [e.id for e in ems], ems[0].sent_at))
    out.sort(key=lambda i: (i.first_sent_at, i.key))
    return out


def temporal_split(index: CorpusIndex, train_window, test_window):
    """(train emails, test emails) for half-open, disjoint, ordered windows."""
    tr, te = parse_window(train_window), parse_window(test_window)
    if tr[1] <= tr[0]:
        raise ValueError("train window is empty")
    if te[1] <= te[0]:
        raise ValueError("test window is empty")
    if tr[1] > te[0]:
        raise ValueError("train window must end at or before the test window starts")
    test = index.emails_between(*te)
    if not test:
        raise ValueError("test window contains no emails")
    return index.emails_between(*tr), test


@dataclass
class EvalReport:
    detected_known: int
    detected_new: int
    missed: int
    total_emails: int
    false_positives: int
    false_positive_emails: int | None = None
    window: str | None = None

    @property
    def detected(self) -> int:
        return self.detected_known + self.detected_new

    @property
    def detection_rate(self) -> float:
        denom = self.detected + self.missed
        return self.detected / denom if denom else 0.0

    @property
    def precision(self) -> float:
        denom = self.detected + self.false_positives
        return self.detected / denom if denom else 0.0

    @property
    def fp_rate(self) -> float:
        return self.false_positives / self.total_emails if self.total_emails else 0.0

    @property
    def email_fp_rate(self) -> float | None:
        if self.false_positive_emails is None:
            return None
        return self.false_positive_emails / self.total_emails if self.total_emails else 0.0

    def to_record(self) -> dict:
        return {
            "window": self.window,
            "detected_known": self.detected_known,
            "detected_new": self.detected_new,
            "missed": self.missed,
            "detection_rate": self.detection_rate,
            "total_emails": self.total_emails,
            "false_positives": self.false_positives,
            "fp_rate": self.fp_rate,
            "precision": self.precision,
            "false_positive_emails": self.false_positive_emails,
            "email_fp_rate": self.email_fp_rate,
        }

    @classmethod
    def from_record(cls, rec) -> EvalReport:
        return cls(int(rec["detected_known"]), int(rec["detected_new"]), int(rec["missed"]),
                   int(rec["total_emails"]), int(rec["false_positives"]),
                   rec.get("false_positive_emails"), rec.get("window"))


def metrics_from_counts(detected_known, detected_new, missed, false_positives, total_emails,
                        false_positive_emails=None, window=None) -> EvalReport:
    return EvalReport(int(detected_known), int(detected_new), int(missed), int(total_emails),
                      int(false_positives), None if false_positive_emails is None else int(false_positive_emails),
                      window)


def compute_metrics(incidents, total_emails: int, false_positive_emails=None, window=None) -> EvalReport:
    """Tally labeled incidents into a report.

    Reported incidents count as known attacks whether or not they were
    detected; detected incidents confirmed only by review count as new;
    detected incidents reviewed as benign are false positives.
    """
    known = new = missed = fps = 0
    for inc in incidents:
        if inc.ground_truth == REPORTED:
            if inc.detected:
                known += 1
            else:
                missed += 1
        elif inc.detected and inc.ground_truth == CONFIRMED:
            new += 1
        elif inc.detected and inc.ground_truth == BENIGN:
            fps += 1
    return metrics_from_counts(known, new, missed, fps, total_emails, false_positive_emails, window)


def format_report_table(columns: dict[str, EvalReport]) -> str:
    """Console summary with one column per window."""
    names = list(columns)
    rows = [
        ("Detected Known Attacks", lambda r: f"{r.detected_known}"),
        ("Detected New Attacks", lambda r: f"{r.detected_new}"),
        ("Missed Attacks (FN)", lambda r: f"{r.missed}"),
        ("Detection Rate", lambda r: f"{100 * r.detection_rate:.1f}%"),
        ("Total Emails", lambda r: f"{r.total_emails:,}"),
        ("False Positives (FP)", lambda r: f"{r.false_positives}"),
        ("False Positive Rate", lambda r: f"{100 * r.fp_rate:.5f}%"),
        ("Precision", lambda r: f"{100 * r.precision:.1f}%"),
    ]
    if any(r.false_positive_emails is not None for r in columns.values()):
        rows.append(("FP Emails", lambda r: "-" if r.false_positive_emails is None else f"{r.false_positive_emails}"))
        rows.append(("Email FP Rate", lambda r: "-" if r.email_fp_rate is None else f"{100 * r.email_fp_rate:.4f}%"))
    width = max(len(r[0]) for r in rows) + 2
    colw = max(14, *(len(n) + 2 for n in names))
    lines = ["Metric".ljust(width) + "".join(n.rjust(colw) for n in names)]
    lines.append("-" * len(lines[0]))
    for label, fmt in rows:
        lines.append(label.ljust(width) + "".join(fmt(columns[n]).rjust(colw) for n in names))
    return "\n".join(lines)


@dataclass
class Verdict:
    main: bool
    fuzzy: bool
    template: bool
    score: float | None = None
    features: FeatureVector | None = None

    @property
    def overall(self) -> bool:
        return self.main or self.fuzzy or self.template

    @property
    def flags(self) -> dict[str, bool]:
        return {"main": self.main, "fuzzy": self.fuzzy, "template": self.template}


class Detector:
    """The three subdetectors combined by OR."""

    def __init__(self, context: FeatureContext, forest: rf.Forest | None, known_phish=None,
                 templates=None, extractor: FeatureExtractor | None = None):
        self.context = context
        self.forest = forest
        self.extractor = extractor or FeatureExtractor(context)
        if known_phish is not None and not isinstance(known_phish, textsim.SimilarityIndex):
            known_phish = textsim.SimilarityIndex(known_phish)
        self.known_phish = known_phish
        self.templates = list(templates or [])
        self._template_index = textsim.template_index(self.templates) if self.templates else None

    def verdict(self, email: Email, score: float | None = None) -> Verdict:
        fv = self.extractor(email)
        if fv is None:
            return Verdict(False, False, False)
        if score is None and self.forest is not None:
            score = rf.predict(self.forest, fv)[1]
        main = score is not None and score >= 0.5
        rare = fv.global_url_rep > textsim.RARE_RANK_THRESHOLD
        fuzzy = template = False
        if rare:
            grams = textsim.body_trigrams(email.body_html)
            if self.known_phish is not None and len(self.known_phish):
                sim = self.known_phish.max_similarity(grams, email.sent_ts - textsim.KNOWN_PHISH_DELAY)
                fuzzy = sim >= textsim.SIMILARITY_THRESHOLD
            if self._template_index is not None:
                template = self._template_index.max_similarity(grams) >= textsim.SIMILARITY_THRESHOLD
        return Verdict(main, fuzzy, template, score, fv)

    def verdicts(self, emails) -> list[Verdict]:
        emails = list(emails)
        X, kept = self.extractor.matrix(emails)
        scores = {}
        if self.forest is not None and len(kept):
            for e, s in zip(kept, self.forest.predict_proba(X)):
                scores[e.id] = float(s)
        return [self.verdict(e, scores.get(e.id)) for e in emails]


def combined_verdict(email: Email, detector: Detector) -> Verdict:
    return detector.verdict(email)


class LeakageAudit:
    """Records every training-pool fold and history read; collects violations."""

    def __init__(self):
        self.violations: list[str] = []
        self.pool_checks = 0
        self.history_checks = 0

    def training_pool(self, month_start: int, examples_ts):
        self.pool_checks += 1
        for ts in examples_ts:
            if ts >= month_start:
                self.violations.append(f"pool for month starting {month_start} holds email at {ts}")

    def history_read(self, email, max_read_ts):
        self.history_checks += 1
        if max_read_ts is not None and max_read_ts >= email.sent_ts:
            self.violations.append(f"features of {email.id} read history at {max_read_ts}")


@dataclass
class EvalResult:
    alerts_by_month: dict[str, list[Incident]]
    monthly: dict[str, EvalReport]
    report: EvalReport
    incidents: list[Incident]
    initial_model: rf.Forest
    final_model: rf.Forest
    pool_sizes: dict[str, tuple[int, int]]
    train_report: EvalReport | None = None
    subdetector_incidents: dict[str, int] = field(default_factory=dict)

    def recall_against(self, keys) -> float:
        """Fraction of the given incident keys that were detected."""
        keys = set(keys)
        if not keys:
            return 0.0
        hit = {i.key for i in self.incidents if i.detected}
        return len(keys & hit) / len(keys)

    def to_record(self) -> dict:
        return {
            "aggregate": self.report.to_record(),
            "train": self.train_report.to_record() if self.train_report else None,
            "monthly": {k: v.to_record() for k, v in self.monthly.items()},
            "pool_sizes": {k: {"phish": p, "benign": b} for k, (p, b) in self.pool_sizes.items()},
            "subdetector_incidents": dict(self.subdetector_incidents),
            "importances": self.final_model.importance_map(),
        }


def _is_reported(e: Email) -> bool:
    return e.user_reported_phish and e.manual_label != "benign"


def label_incidents(incidents, alerted: dict[str, Verdict], index: CorpusIndex) -> list[Incident]:
    """Attach detection state and ground truth from reports and review labels."""
    for inc in incidents:
        members = [index.get(i) for i in inc.email_ids]
        hits = [e for e in members if e.id in alerted]
        inc.detected = bool(hits)
        flags = {"main": False, "fuzzy": False, "template": False}
        best = None
        for e in hits:
            v = alerted[e.id]
            for k, on in v.flags.items():
                flags[k] = flags[k] or on
            if v.score is not None and (best is None or v.score > best[0]):
                best = (v.score, v.features)
            elif best is None:
                best = (v.score, v.features)
        inc.flags = flags
        if best is not None:
            inc.score, inc.features = best
        if any(_is_reported(e) for e in members):
            inc.ground_truth = REPORTED
        elif hits and any(e.manual_label == "phish" for e in hits):
            inc.ground_truth = CONFIRMED
        elif hits and all(e.manual_label == "benign" for e in hits):
            inc.ground_truth = BENIGN
        else:
            inc.ground_truth = UNKNOWN
    return incidents


def _window_report(emails, alerted, index, label) -> tuple[list[Incident], EvalReport]:
    reported = [e for e in emails if _is_reported(e)]
    alert_emails = [e for e in emails if e.id in alerted]
    incidents = label_incidents(dedup_incidents(alert_emails + reported), alerted, index)
    fp_emails = sum(1 for e in alert_emails if e.manual_label == "benign")
    return incidents, compute_metrics(incidents, len(emails), fp_emails, label)


def training_pools(employee_emails, extractor: FeatureExtractor, config: rf.TrainConfig):
    """User-reported phish plus a seeded sample of unreported mail, keyed by email id."""
    phish_pool: dict[str, rf.LabeledExample] = {}
    benign_candidates = []
    for e in employee_emails:
        fv = extractor(e)
        if fv is None:
            continue
        if _is_reported(e):
            phish_pool[e.id] = rf.LabeledExample(fv, rf.PHISH, e.id)
        elif not e.user_reported_phish:
            benign_candidates.append(rf.LabeledExample(fv, rf.BENIGN, e.id))
    if not phish_pool:
        raise rf.TrainingError("training window holds no user-reported phish with candidate URLs")
    sampled = rf.downsample(list(phish_pool.values()), benign_candidates, config.downsample_ratio, config.rng_seed)
    benign_pool = {ex.email_id: ex for ex in sampled[len(phish_pool):]}
    return phish_pool, benign_pool


def train_on_window(index: CorpusIndex, context: FeatureContext, window, config: rf.TrainConfig = rf.TrainConfig(),
                 n_jobs: int = 1, grid=None, cv_folds: int = 3):
    """Fit a forest on one window; with ``grid``, pick hyperparameters by cross-validation first."""
    w = parse_window(window)
    employee = [e for e in index.emails_between(*w) if index.is_employee_sent(e)]
    extractor = FeatureExtractor(context)
    if grid is not None:
        phish, benign = training_pools(employee, extractor, config.replace(downsample_ratio=10**9))
        config = rf.grid_search_cv([*phish.values(), *benign.values()], grid, cv_folds, config.rng_seed, n_jobs)
    phish, benign = training_pools(employee, extractor, config)
    return rf.train([*phish.values(), *benign.values()], config, n_jobs), config


def run_continuous_learning(index: CorpusIndex, context: FeatureContext, train_window, test_window,
                            config: rf.TrainConfig = rf.TrainConfig(), monthly: bool = True,
                            initial_model: rf.Forest | None = None, use_fuzzy: bool = True,
                            use_templates: bool = True, audit: LeakageAudit | None = None,
                            n_jobs: int = 1, score_train: bool = False) -> EvalResult:
    """Train on the train window, then classify the test window month by month.

    After each month, review-confirmed alerts and user-reported phish join the
    phish pool and review-confirmed false positives join the benign pool; the
    model is retrained with unchanged hyperparameters. Unlabeled alerts join
    neither pool.
    """
    tr, te = parse_window(train_window), parse_window(test_window)
    train_emails, _ = temporal_split(index, tr, te)
    extractor = FeatureExtractor(context, audit)
    employee = [e for e in train_emails if index.is_employee_sent(e)]
    phish_pool, benign_pool = training_pools(employee, extractor, config)

    def pool_ts():
        return [index.get(i).sent_ts for i in (*phish_pool, *benign_pool)]

    if audit is not None:
        audit.training_pool(te[0], pool_ts())
    model = initial_model or rf.train([*phish_pool.values(), *benign_pool.values()], config, n_jobs)
    first_model = model

    reported_all = [e for e in index.emails_between(tr[0], te[1]) if index.is_employee_sent(e) and _is_reported(e)]
    known = textsim.SimilarityIndex(reported_all) if use_fuzzy else None

    train_report = None
    if score_train:
        det = Detector(context, model, known, None, extractor)
        alerted = {e.id: v for e, v in zip(employee, det.verdicts(employee)) if v.overall}
        _, train_report = _window_report(employee, alerted, index, format_window(tr))

    pieces = month_windows(te) if monthly else [(format_window(te), te[0], te[1])]
    alerts_by_month: dict[str, list[Incident]] = {}
    reports: dict[str, EvalReport] = {}
    pool_sizes: dict[str, tuple[int, int]] = {}
    all_alerted: dict[str, Verdict] = {}
    test_employee: list[Email] = []

    for label, start, end in pieces:
        if audit is not None:
            audit.training_pool(start, pool_ts())
        pool_sizes[label] = (len(phish_pool), len(benign_pool))
        templates = []
        if use_templates:
            ps = from_ts(start)
            prev = (ps.year - 1, 12) if ps.month == 1 else (ps.year, ps.month - 1)
            p_start, _ = month_bounds(*prev)
            templates = textsim.mine_templates(index.emails_between(p_start, start), context.ranking, context.lists)
        det = Detector(context, model, known, templates, extractor)
        month_emails = [e for e in index.emails_between(start, end) if index.is_employee_sent(e)]
        test_employee.extend(month_emails)
        alerted = {e.id: v for e, v in zip(month_emails, det.verdicts(month_emails)) if v.overall}
        all_alerted.update(alerted)
        incidents, reports[label] = _window_report(month_emails, alerted, index, label)
        alerts_by_month[label] = [i for i in incidents if i.detected]
        log.info("%s: %d alerts (%d incidents), %d employee emails", label, len(alerted),
                 len(alerts_by_month[label]), len(month_emails))

        changed = False
        for e in month_emails:
            fv = extractor(e)
            if fv is None:
                continue
            if e.id in alerted and e.manual_label == "phish" or _is_reported(e):
                if e.id not in phish_pool:
                    phish_pool[e.id] = rf.LabeledExample(fv, rf.PHISH, e.id)
                    changed = True
            elif e.id in alerted and e.manual_label == "benign":
                if e.id not in benign_pool:
                    benign_pool[e.id] = rf.LabeledExample(fv, rf.BENIGN, e.id)
                    changed = True
        if changed or initial_model is None:
            model = rf.train([*phish_pool.values(), *benign_pool.values()], config, n_jobs)

    incidents, aggregate = _window_report(test_employee, all_alerted, index, format_window(te))
    sub = {k: sum(1 for i in incidents if i.detected and i.flags.get(k)) for k in ("main", "fuzzy", "template")}
    sub["multiple"] = sum(1 for i in incidents if i.detected and sum(i.flags.values()) > 1)
    return EvalResult(alerts_by_month, reports, aggregate, incidents, first_model, model, pool_sizes,
                      train_report, sub)


def detect_window(index: CorpusIndex, context: FeatureContext, model: rf.Forest, window,
                  known_phish=None, templates=None) -> list[Incident]:
    """Score one window with a fixed model and return labeled alert incidents."""
    w = parse_window(window)
    det = Detector(context, model, known_phish, templates)
    emails = [e for e in index.emails_between(*w) if index.is_employee_sent(e)]
    alerted = {e.id: v for e, v in zip(emails, det.verdicts(emails)) if v.overall}
    incidents = label_incidents(dedup_incidents([index.get(i) for i in alerted]), alerted, index)
    return incidents


def write_alerts(incidents, path):
    with open(path, "w", encoding="utf-8") as fh:
        for inc in incidents:
            fh.write(json.dumps(inc.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n")


def read_alerts(path) -> list[Incident]:
    with open(path, encoding="utf-8") as fh:
        return [Incident.from_record(json.loads(ln)) for ln in fh if ln.strip()]


def scores_summary(values) -> dict:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return {"n": 0}
    return {"n": int(arr.size), "min": float(arr.min()), "median": float(np.median(arr)), "max": float(arr.max())}
