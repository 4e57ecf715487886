"""Email corpus model, JSONL loading/emission, and the time-indexed corpus views."""

from __future__ import annotations

import bisect
import json
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property

import numpy as np

from . import urlrep
from .domains import domain_of_address
from .kernels import csr_from_sets

WINDOW_SECONDS = 30 * 86400
DAY_SECONDS = 86400

FOLDERS = ("Inbox", "SentItems", "Trash", "Other")
LABELS = ("phish", "benign")
TOPICS = ("generic", "enterprise", "targeted")
NAMINGS = ("none", "org", "recipient")

FIELDS = (
    "id", "org_id", "sender", "to", "cc", "bcc", "subject", "sent_at", "body_html",
    "folder", "conversation_id", "deleted_at", "spf_pass", "dkim_pass",
    "user_reported_phish", "manual_label", "tailoring_topic", "tailoring_naming",
)


class CorpusError(Exception):
    """Corpus rejected; ``errors`` holds the line-numbered diagnostics."""

    def __init__(self, errors):
        self.errors = list(errors)
        head = "; ".join(str(e) for e in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} invalid record(s): {head}{more}")


class DuplicateIdError(CorpusError):
    pass


@dataclass(frozen=True)
class RecordError:
    line: int
    field: str | None
    message: str

    def __str__(self):
        where = f"line {self.line}" + (f", field {self.field!r}" if self.field else "")
        return f"{where}: {self.message}"


def normalize_address(addr: str) -> str:
    return addr.strip().lower()


def parse_timestamp(value: str) -> datetime:
    """RFC 3339 with explicit offset, converted to UTC, whole seconds only."""
    if not isinstance(value, str):
        raise ValueError("timestamp must be a string")
    s = value.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    if dt.microsecond:
        raise ValueError("sub-second timestamps are not supported")
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def from_ts(ts: int) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


@dataclass(frozen=True)
class Email:
    id: str
    org_id: str
    sender: str
    to: tuple[str, ...]
    cc: tuple[str, ...]
    bcc: tuple[str, ...]
    subject: str
    sent_at: datetime
    body_html: str
    folder: str = "SentItems"
    conversation_id: str = ""
    deleted_at: datetime | None = None
    spf_pass: bool = True
    dkim_pass: bool = True
    user_reported_phish: bool = False
    manual_label: str | None = None
    tailoring: tuple[str, str] | None = None

    @cached_property
    def sent_ts(self) -> int:
        return int(self.sent_at.timestamp())

    @cached_property
    def recipients(self) -> frozenset[str]:
        return frozenset(self.to) | frozenset(self.cc) | frozenset(self.bcc)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "org_id": self.org_id,
            "sender": self.sender,
            "to": list(self.to),
            "cc": list(self.cc),
            "bcc": list(self.bcc),
            "subject": self.subject,
            "sent_at": format_timestamp(self.sent_at),
            "body_html": self.body_html,
            "folder": self.folder,
            "conversation_id": self.conversation_id,
            "deleted_at": format_timestamp(self.deleted_at) if self.deleted_at else None,
            "spf_pass": self.spf_pass,
            "dkim_pass": self.dkim_pass,
            "user_reported_phish": self.user_reported_phish,
            "manual_label": self.manual_label,
            "tailoring_topic": self.tailoring[0] if self.tailoring else None,
            "tailoring_naming": self.tailoring[1] if self.tailoring else None,
        }


def recipient_set(email: Email) -> frozenset[str]:
    return email.recipients


@dataclass(frozen=True)
class OrgConfig:
    org_id: str
    verified_domains: frozenset[str]
    industry: str | None = None

    def __post_init__(self):
        doms = frozenset(d.strip().lower() for d in self.verified_domains)
        if not doms:
            raise ValueError(f"org {self.org_id!r} has no verified domains")
        object.__setattr__(self, "verified_domains", doms)

    def to_record(self) -> dict:
        rec = {"org_id": self.org_id, "verified_domains": sorted(self.verified_domains)}
        if self.industry is not None:
            rec["industry"] = self.industry
        return rec


def is_employee_sent(email: Email, org: OrgConfig) -> bool:
    return domain_of_address(email.sender) in org.verified_domains


def is_org_address(address: str, org: OrgConfig) -> bool:
    return domain_of_address(address) in org.verified_domains


def load_orgs(path) -> dict[str, OrgConfig]:
    orgs: dict[str, OrgConfig] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                org = OrgConfig(str(rec["org_id"]), frozenset(rec["verified_domains"]), rec.get("industry"))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError([RecordError(lineno, None, f"bad org record: {exc}")]) from None
            if org.org_id in orgs:
                raise CorpusError([RecordError(lineno, "org_id", f"duplicate org {org.org_id!r}")])
            orgs[org.org_id] = org
    return orgs


def dump_orgs(orgs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for org in sorted(orgs.values() if isinstance(orgs, dict) else orgs, key=lambda o: o.org_id):
            fh.write(json.dumps(org.to_record(), separators=(",", ":")) + "\n")


def _addr_list(rec, name):
    value = rec.get(name, [])
    if value is None:
        value = []
    if not isinstance(value, list) or not all(isinstance(a, str) for a in value):
        raise ValueError("must be a list of addresses")
    out = []
    for a in value:
        a = normalize_address(a)
        if a.count("@") != 1 or a.startswith("@") or a.endswith("@"):
            raise ValueError(f"bad address {a!r}")
        out.append(a)
    return tuple(out)


def record_to_email(rec: dict) -> Email:
    """Validate one corpus record; raises ``ValueError`` whose args are (field, message)."""

    def need(name, kind):
        if name not in rec:
            raise ValueError(name, "missing")
        v = rec[name]
        if not isinstance(v, kind):
            raise ValueError(name, f"expected {getattr(kind, '__name__', kind)}")
        return v

    eid = need("id", str)
    if not eid:
        raise ValueError("id", "empty")
    org_id = need("org_id", str)
    sender = normalize_address(need("sender", str))
    if sender.count("@") != 1:
        raise ValueError("sender", f"bad address {sender!r}")
    lists = {}
    for name in ("to", "cc", "bcc"):
        try:
            lists[name] = _addr_list(rec, name)
        except ValueError as exc:
            raise ValueError(name, str(exc)) from None
    if not (lists["to"] or lists["cc"] or lists["bcc"]):
        raise ValueError("to", "email has no recipients")
    subject = need("subject", str)
    try:
        sent_at = parse_timestamp(rec.get("sent_at")) if "sent_at" in rec else None
    except ValueError as exc:
        raise ValueError("sent_at", str(exc)) from None
    if sent_at is None:
        raise ValueError("sent_at", "missing")
    body = rec.get("body_html", "")
    if not isinstance(body, str):
        raise ValueError("body_html", "expected str")
    folder = rec.get("folder", "SentItems")
    if folder not in FOLDERS:
        raise ValueError("folder", f"must be one of {FOLDERS}")
    conv = rec.get("conversation_id", "") or ""
    if not isinstance(conv, str):
        raise ValueError("conversation_id", "expected str")
    deleted_at = None
    if rec.get("deleted_at") is not None:
        try:
            deleted_at = parse_timestamp(rec["deleted_at"])
        except ValueError as exc:
            raise ValueError("deleted_at", str(exc)) from None
        if deleted_at < sent_at:
            raise ValueError("deleted_at", "earlier than sent_at")
    flags = {}
    for name, default in (("spf_pass", True), ("dkim_pass", True), ("user_reported_phish", False)):
        v = rec.get(name, default)
        if not isinstance(v, bool):
            raise ValueError(name, "expected boolean")
        flags[name] = v
    label = rec.get("manual_label")
    if label is not None and label not in LABELS:
        raise ValueError("manual_label", f"must be one of {LABELS} or null")
    topic, naming = rec.get("tailoring_topic"), rec.get("tailoring_naming")
    if (topic is None) != (naming is None):
        raise ValueError("tailoring_topic", "topic and naming must both be set or both null")
    if topic is not None and topic not in TOPICS:
        raise ValueError("tailoring_topic", f"must be one of {TOPICS}")
    if naming is not None and naming not in NAMINGS:
        raise ValueError("tailoring_naming", f"must be one of {NAMINGS}")
    return Email(
        id=eid, org_id=org_id, sender=sender, to=lists["to"], cc=lists["cc"], bcc=lists["bcc"],
        subject=subject, sent_at=sent_at, body_html=body, folder=folder, conversation_id=conv,
        deleted_at=deleted_at, user_reported_phish=flags["user_reported_phish"],
        spf_pass=flags["spf_pass"], dkim_pass=flags["dkim_pass"], manual_label=label,
        tailoring=(topic, naming) if topic is not None else None,
    )


def read_corpus(path, orgs=None) -> tuple[list[Email], list[RecordError]]:
    """Parse every line; returns (emails, diagnostics). Duplicate ids raise immediately."""
    emails, errors, seen = [], [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(RecordError(lineno, None, f"malformed JSON: {exc.msg}"))
                continue
            if not isinstance(rec, dict):
                errors.append(RecordError(lineno, None, "record is not an object"))
                continue
            try:
                email = record_to_email(rec)
            except ValueError as exc:
                fld, msg = exc.args if len(exc.args) == 2 else (None, str(exc))
                errors.append(RecordError(lineno, fld, msg))
                continue
            if orgs is not None and email.org_id not in orgs:
                errors.append(RecordError(lineno, "org_id", f"unknown org {email.org_id!r}"))
                continue
            if email.id in seen:
                raise DuplicateIdError([RecordError(lineno, "id", f"duplicate id {email.id!r} (first on line {seen[email.id]})")])
            seen[email.id] = lineno
            emails.append(email)
    return emails, errors


def load_corpus(path, orgs, strict=True) -> CorpusIndex:
    """Load a JSONL corpus into an index.

    With ``strict`` any invalid record raises :class:`CorpusError`; otherwise
    invalid records are skipped and reported in ``index.diagnostics``.
    """
    emails, errors = read_corpus(path, orgs)
    if errors and strict:
        raise CorpusError(errors)
    return CorpusIndex(emails, orgs, diagnostics=errors)


def dump_corpus(emails, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in emails:
            fh.write(json.dumps(e.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n")


def month_bounds(year: int, month: int) -> tuple[int, int]:
    start = datetime(year, month, 1, tzinfo=timezone.utc)
    end = datetime(year + (month == 12), month % 12 + 1, 1, tzinfo=timezone.utc)
    return int(start.timestamp()), int(end.timestamp())


def parse_month(value) -> tuple[int, int]:
    """'YYYY-MM' or a (year, month) pair."""
    if isinstance(value, str):
        y, m = value.split("-")
        return int(y), int(m)
    y, m = value
    return int(y), int(m)


@dataclass
class _OrgHistory:
    emails: list[Email] = field(default_factory=list)
    ts: np.ndarray | None = None
    indptr: np.ndarray | None = None
    indices: np.ndarray | None = None
    fqdn_ts: dict[str, np.ndarray] = field(default_factory=dict)
    fqdn_day: dict[str, np.ndarray] = field(default_factory=dict)


class CorpusIndex:
    """Immutable, time-sorted views over a corpus.

    All history queries use the half-open window ``[t - 30 days, t)``.
    """

    def __init__(self, emails, orgs, diagnostics=()):
        if isinstance(orgs, (list, tuple, set, frozenset)):
            orgs = {o.org_id: o for o in orgs}
        self.orgs: dict[str, OrgConfig] = dict(orgs)
        self.diagnostics = list(diagnostics)
        ems = sorted(emails, key=lambda e: (e.sent_ts, e.id))
        self.emails: tuple[Email, ...] = tuple(ems)
        self._ts = np.array([e.sent_ts for e in ems], dtype=np.int64)
        self._by_id: dict[str, Email] = {}
        for e in ems:
            if e.id in self._by_id:
                raise DuplicateIdError([RecordError(0, "id", f"duplicate id {e.id!r}")])
            if e.org_id not in self.orgs:
                raise CorpusError([RecordError(0, "org_id", f"email {e.id!r} has unknown org {e.org_id!r}")])
            self._by_id[e.id] = e

        self._address_ids: dict[str, int] = {}
        sender_rows: dict[str, list[Email]] = defaultdict(list)
        threads: dict[str, list[Email]] = defaultdict(list)
        self._org_all: dict[str, list[Email]] = defaultdict(list)
        hist: dict[str, _OrgHistory] = {oid: _OrgHistory() for oid in self.orgs}
        self._employee_sent: set[str] = set()
        for e in ems:
            sender_rows[e.sender].append(e)
            if e.conversation_id:
                threads[e.conversation_id].append(e)
            self._org_all[e.org_id].append(e)
            if is_employee_sent(e, self.orgs[e.org_id]):
                self._employee_sent.add(e.id)
                hist[e.org_id].emails.append(e)

        self._sender_emails = dict(sender_rows)
        self._sender_ts = {s: np.array([e.sent_ts for e in rows], dtype=np.int64) for s, rows in sender_rows.items()}
        self._threads = dict(threads)

        for oid, h in hist.items():
            h.ts = np.array([e.sent_ts for e in h.emails], dtype=np.int64)
            h.indptr, h.indices = csr_from_sets(
                [self._ids_for(e.recipients) for e in h.emails])
            occ_ts: dict[str, list[int]] = defaultdict(list)
            for e in h.emails:
                for fqdn in sorted({u.fqdn for u in urlrep.extract_urls(e.body_html)}):
                    occ_ts[fqdn].append(e.sent_ts)
            for fqdn, tss in occ_ts.items():
                arr = np.array(tss, dtype=np.int64)
                h.fqdn_ts[fqdn] = arr
                h.fqdn_day[fqdn] = arr // DAY_SECONDS
        self._hist = hist
        self._roster_cache: dict[tuple[str, int, int], frozenset[str]] = {}

    # -- lookups -------------------------------------------------------------

    def __len__(self):
        return len(self.emails)

    def __iter__(self):
        return iter(self.emails)

    def __contains__(self, email_id):
        return email_id in self._by_id

    def get(self, email_id: str) -> Email:
        return self._by_id[email_id]

    def org_of(self, email: Email) -> OrgConfig:
        return self.orgs[email.org_id]

    def is_employee_sent(self, email: Email) -> bool:
        return email.id in self._employee_sent

    def address_id(self, address: str) -> int:
        return self._address_ids.get(address, -1)

    def _ids_for(self, addresses) -> list[int]:
        ids = self._address_ids
        out = []
        for a in addresses:
            i = ids.get(a)
            if i is None:
                i = ids[a] = len(ids)
            out.append(i)
        return out

    def query_ids(self, addresses) -> np.ndarray:
        """Sorted known-address ids; unknown addresses get unique negative ids."""
        ids = []
        unknown = -1
        for a in addresses:
            i = self._address_ids.get(a)
            if i is None:
                i = unknown
                unknown -= 1
            ids.append(i)
        return np.unique(np.asarray(ids, dtype=np.int64))

    def emails_between(self, start_ts: int, end_ts: int) -> list[Email]:
        """Emails with ``start_ts <= sent_ts < end_ts``."""
        lo = int(np.searchsorted(self._ts, start_ts, side="left"))
        hi = int(np.searchsorted(self._ts, end_ts, side="left"))
        return list(self.emails[lo:hi])

    def org_emails(self, org_id: str) -> list[Email]:
        return list(self._org_all.get(org_id, ()))

    def employee_sent_emails(self, org_id: str | None = None) -> list[Email]:
        if org_id is None:
            return [e for e in self.emails if e.id in self._employee_sent]
        return list(self._hist[org_id].emails)

    def sender_emails(self, sender: str) -> list[Email]:
        return list(self._sender_emails.get(sender, ()))

    @property
    def time_range(self) -> tuple[int, int]:
        if not self.emails:
            return 0, 0
        return int(self._ts[0]), int(self._ts[-1])

    # -- history views -------------------------------------------------------

    def sender_window(self, sender: str, as_of: int) -> list[Email]:
        rows = self._sender_emails.get(sender)
        if not rows:
            return []
        ts = self._sender_ts[sender]
        lo = int(np.searchsorted(ts, as_of - WINDOW_SECONDS, side="left"))
        hi = int(np.searchsorted(ts, as_of, side="left"))
        return rows[lo:hi]

    def recipient_window(self, org_id: str, as_of: int) -> tuple[int, int]:
        """Row range of the org's employee-sent recipient CSR inside the window."""
        ts = self._hist[org_id].ts
        lo = int(np.searchsorted(ts, as_of - WINDOW_SECONDS, side="left"))
        hi = int(np.searchsorted(ts, as_of, side="left"))
        return lo, hi

    def recipient_csr(self, org_id: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = self._hist[org_id]
        return h.ts, h.indptr, h.indices

    def fqdn_window(self, org_id: str, fqdn: str, as_of: int) -> tuple[np.ndarray, np.ndarray]:
        """Timestamps and UTC day numbers of employee-sent URLs on ``fqdn`` inside the window."""
        h = self._hist[org_id]
        key = fqdn.lower()
        ts = h.fqdn_ts.get(key)
        if ts is None:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        lo = int(np.searchsorted(ts, as_of - WINDOW_SECONDS, side="left"))
        hi = int(np.searchsorted(ts, as_of, side="left"))
        return ts[lo:hi], h.fqdn_day[key][lo:hi]

    def fqdn_day_count(self, org_id: str, fqdn: str, as_of: int) -> int:
        """Distinct UTC calendar days in the window with an employee-sent URL on ``fqdn``.

        A 30-day window can touch 31 calendar days; the count is capped at 30.
        """
        _, days = self.fqdn_window(org_id, fqdn, as_of)
        if days.size == 0:
            return 0
        distinct = 1 + int(np.count_nonzero(days[1:] != days[:-1]))
        return min(distinct, 30)

    def roster(self, org_id: str, year: int, month: int) -> frozenset[str]:
        key = (org_id, year, month)
        cached = self._roster_cache.get(key)
        if cached is None:
            org = self.orgs[org_id]
            start, end = month_bounds(year, month)
            found = set()
            for e in self.emails_between(start, end):
                for a in (e.sender, *e.recipients):
                    if a not in found and is_org_address(a, org):
                        found.add(a)
            cached = self._roster_cache[key] = frozenset(found)
        return cached

    def thread(self, conversation_id: str) -> list[Email]:
        return list(self._threads.get(conversation_id, ()))


def recent_contacts(sender: str, as_of, index: CorpusIndex) -> set[str]:
    """Addresses ``sender`` emailed in the 30 days before ``as_of`` (self excluded)."""
    t = as_of if isinstance(as_of, int) else int(as_of.timestamp())
    sender = normalize_address(sender)
    out: set[str] = set()
    for e in index.sender_window(sender, t):
        out |= e.recipients
    out.discard(sender)
    return out


def historical_recipient_sets(org, as_of, index: CorpusIndex) -> list[frozenset[str]]:
    """Recipient sets of the org's employee-sent emails in the 30 days before ``as_of``."""
    org_id = org.org_id if isinstance(org, OrgConfig) else org
    t = as_of if isinstance(as_of, int) else int(as_of.timestamp())
    lo, hi = index.recipient_window(org_id, t)
    return [e.recipients for e in index.employee_sent_emails(org_id)[lo:hi]]


def employee_roster(org, month, index: CorpusIndex) -> frozenset[str]:
    """Org addresses that sent or received any email during the calendar month."""
    org_id = org.org_id if isinstance(org, OrgConfig) else org
    y, m = parse_month(month)
    return index.roster(org_id, y, m)


def thread(conversation_id: str, index: CorpusIndex) -> list[Email]:
    """Emails of a conversation ordered by (sent_at, id)."""
    return index.thread(conversation_id)

