"""Attacker characterization: success attribution, targeting strategy, content, timing, interaction, stealth."""

from __future__ import annotations

import json
import re
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from urllib.parse import urlsplit

from . import textsim, urlrep
from .corpus import DAY_SECONDS, NAMINGS, TOPICS, CorpusIndex, Email, from_ts, is_org_address, recent_contacts
from .domains import domain_of_address

ACCOUNT_AGNOSTIC = "AccountAgnostic"
ORGANIZATION_WIDE = "OrganizationWide"
LATERAL_ORGANIZATION = "LateralOrganization"
TARGETED_RECIPIENT = "TargetedRecipient"
INCONCLUSIVE = "Inconclusive"
STRATEGIES = (ACCOUNT_AGNOSTIC, LATERAL_ORGANIZATION, ORGANIZATION_WIDE, TARGETED_RECIPIENT, INCONCLUSIVE)

SUCCESS_WINDOW = 2 * DAY_SECONDS
STEALTH_SECONDS = 30
DEFAULT_SUSPICION_LEXICON = ("suspicious", "spam", "did you send", "phish")

_TOKEN_SEGMENT = re.compile(r"^[A-Za-z0-9]*\d[A-Za-z0-9]*$")


@dataclass(frozen=True)
class TargetingThresholds:
    agnostic_in_org: float = 0.01
    agnostic_overlap: float = 0.17
    agnostic_min_domains: int = 10
    agnostic2_in_org: float = 0.50
    agnostic2_domain_factor: float = 2.0
    orgwide_in_org: float = 0.50
    orgwide_roster: float = 0.50
    orgwide_overlap: float = 0.11
    orgwide2_in_org: float = 0.95
    industry_share: float = 0.50
    targeted_contacts: float = 0.33


@dataclass
class AtoProfile:
    account: str
    org_id: str
    phish_emails: list[str]
    phish_recipients: frozenset[str]
    recent_contacts: frozenset[str]
    first_phish_ts: int
    strategy: str | None = None
    interactive: bool = False
    stealthy: bool = False
    successes: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "account": self.account,
            "org_id": self.org_id,
            "phish_emails": list(self.phish_emails),
            "n_recipients": len(self.phish_recipients),
            "n_recent_contacts": len(self.recent_contacts),
            "first_phish_at": from_ts(self.first_phish_ts).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "strategy": self.strategy,
            "interactive": self.interactive,
            "stealthy": self.stealthy,
            "successes": list(self.successes),
        }


@dataclass(frozen=True)
class SuccessLink:
    attacker: str
    victim: str
    phish_a: str
    phish_b: str
    reply_b: str | None
    content: tuple[str, ...]
    timing: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "attacker": self.attacker, "victim": self.victim, "phish_a": self.phish_a,
            "phish_b": self.phish_b, "reply_b": self.reply_b,
            "content": list(self.content), "timing": list(self.timing),
        }


def build_profiles(index: CorpusIndex, phish_emails) -> dict[str, AtoProfile]:
    """One profile per sending account, with recent contacts taken before its first phish."""
    by_sender: dict[str, list[Email]] = defaultdict(list)
    for e in phish_emails:
        by_sender[e.sender].append(e)
    out = {}
    for sender in sorted(by_sender):
        ems = sorted(by_sender[sender], key=lambda e: (e.sent_ts, e.id))
        first = ems[0].sent_ts
        recips = frozenset().union(*(e.recipients for e in ems)) - {sender}
        out[sender] = AtoProfile(
            account=sender, org_id=ems[0].org_id, phish_emails=[e.id for e in ems],
            phish_recipients=recips, recent_contacts=frozenset(recent_contacts(sender, first, index)),
            first_phish_ts=first,
        )
    return out


# -- success attribution -----------------------------------------------------


def url_path_structure_match(url_a: str, url_b: str) -> bool:
    """Same path segments, allowing equal-length random-looking tokens to differ.

    A segment counts as a token when it is alphanumeric and holds at least
    one digit. Hosts, queries and fragments are ignored.
    """
    pa = [s for s in urlsplit(url_a).path.split("/") if s]
    pb = [s for s in urlsplit(url_b).path.split("/") if s]
    if not pa or len(pa) != len(pb):
        return False
    for a, b in zip(pa, pb):
        if a == b:
            continue
        if len(a) == len(b) and _TOKEN_SEGMENT.match(a) and _TOKEN_SEGMENT.match(b):
            continue
        return False
    return True


def _phish_urls(email: Email, index: CorpusIndex):
    return urlrep.candidate_urls(email, index.orgs[email.org_id])


def _reply_before(p_a: Email, victim: str, before_ts: int, index: CorpusIndex, lexicon) -> Email | None:
    """First reply by ``victim`` in P_A's thread, before ``before_ts``, that raises no suspicion."""
    if not p_a.conversation_id:
        return None
    for e in index.thread(p_a.conversation_id):
        if e.sender == victim and p_a.sent_ts < e.sent_ts < before_ts and _suggests_fell_for(e, lexicon):
            return e
    return None


def _suggests_fell_for(reply: Email, lexicon) -> bool:
    text = " ".join(textsim.normalize_text(reply.body_html))
    return not any(term in text for term in lexicon)


def check_link(p_a: Email, p_b: Email, index: CorpusIndex, lexicon=DEFAULT_SUSPICION_LEXICON):
    """Evaluate all four criteria for one pair; returns a link or None."""
    victim = p_b.sender
    if victim == p_a.sender or victim not in p_a.recipients or p_b.sent_ts <= p_a.sent_ts:
        return None
    urls_a, urls_b = _phish_urls(p_a, index), _phish_urls(p_b, index)
    content = []
    if p_a.subject == p_b.subject or {u.fqdn for u in urls_a} & {u.fqdn for u in urls_b}:
        content.append("3a")
    reply = _reply_before(p_a, victim, p_b.sent_ts, index, lexicon)
    if reply is not None:
        content.append("3b")
    timing = []
    if p_b.sent_ts - p_a.sent_ts <= SUCCESS_WINDOW:
        timing.append("4a")
    same_message = textsim.normalize_text(p_a.body_html) == textsim.normalize_text(p_b.body_html)
    if same_message or any(url_path_structure_match(a.href, b.href) for a in urls_a for b in urls_b):
        timing.append("4b")
    if not content or not timing:
        return None
    return SuccessLink(p_a.sender, victim, p_a.id, p_b.id, reply.id if reply else None, tuple(content), tuple(timing))


def attribute_success(ato_a: AtoProfile, ato_b: AtoProfile, index: CorpusIndex,
                      lexicon=DEFAULT_SUSPICION_LEXICON) -> SuccessLink | None:
    """Earliest (P_A, P_B) pair showing that A's phish compromised B, or None."""
    if ato_a.account == ato_b.account or ato_a.org_id != ato_b.org_id:
        return None
    p_as = sorted((index.get(i) for i in ato_a.phish_emails), key=lambda e: (e.sent_ts, e.id))
    p_bs = sorted((index.get(i) for i in ato_b.phish_emails), key=lambda e: (e.sent_ts, e.id))
    for p_a in p_as:
        if ato_b.account not in p_a.recipients:
            continue
        for p_b in p_bs:
            link = check_link(p_a, p_b, index, lexicon)
            if link is not None:
                return link
    return None


def find_success_links(profiles: dict[str, AtoProfile], index: CorpusIndex,
                       lexicon=DEFAULT_SUSPICION_LEXICON) -> list[SuccessLink]:
    links = []
    by_org: dict[str, list[AtoProfile]] = defaultdict(list)
    for p in profiles.values():
        by_org[p.org_id].append(p)
    for org_id in sorted(by_org):
        group = by_org[org_id]
        for a in group:
            for b in group:
                if b.account in a.phish_recipients:
                    link = attribute_success(a, b, index, lexicon)
                    if link is not None:
                        links.append(link)
    links.sort(key=lambda link: (link.attacker, link.victim))
    return links


def conversion_stats(links, profiles: dict[str, AtoProfile], index: CorpusIndex) -> dict:
    """In-org recipients per compromised account for each successful ATO, and the median."""
    successes: dict[str, set[str]] = defaultdict(set)
    for link in links:
        successes[link.attacker].add(link.victim)
    per_ato = {}
    for account, victims in sorted(successes.items()):
        prof = profiles[account]
        org = index.orgs[prof.org_id]
        in_org = sum(1 for r in prof.phish_recipients if is_org_address(r, org))
        per_ato[account] = in_org / len(victims)
    return {"per_ato": per_ato, "median": statistics.median(per_ato.values()) if per_ato else None}


# -- targeting -----------------------------------------------------------------


def targeting_stats(ato: AtoProfile, index: CorpusIndex, lists: urlrep.SpecialDomainLists | None = None) -> dict:
    """Ratios the strategy rules look at."""
    lists = lists or urlrep.SpecialDomainLists.default()
    recips = ato.phish_recipients
    if not recips:
        raise ValueError(f"{ato.account} has no phishing recipients")
    org = index.orgs[ato.org_id]
    n = len(recips)
    in_org = sum(1 for r in recips if is_org_address(r, org))
    overlap = len(recips & ato.recent_contacts)
    domains = {domain_of_address(r) for r in recips}
    contact_domains = {domain_of_address(r) for r in ato.recent_contacts}
    first = from_ts(ato.first_phish_ts)
    roster = index.roster(ato.org_id, first.year, first.month) - {ato.account}
    industry = getattr(org, "industry", None)
    same_industry = None
    if industry:
        peers = [o for o in index.orgs.values() if o.org_id != org.org_id and getattr(o, "industry", None) == industry]
        same_industry = sum(1 for r in recips if any(is_org_address(r, o) for o in peers)) / n
    return {
        "n_recipients": n,
        "in_org_fraction": in_org / n,
        "contact_overlap": overlap / n,
        "contacts_reached": overlap / len(ato.recent_contacts) if ato.recent_contacts else 0.0,
        "n_domains": len(domains),
        "freemail_only": all(lists.is_freemail(d) for d in domains),
        "n_contact_domains": len(contact_domains),
        "roster_coverage": len(recips & roster) / len(roster) if roster else 0.0,
        "same_industry_fraction": same_industry,
    }


def classify_targeting(ato: AtoProfile, index: CorpusIndex, thresholds: TargetingThresholds = TargetingThresholds(),
                       stats: dict | None = None) -> str:
    """First matching rule wins; the rule order below is fixed."""
    s = stats or targeting_stats(ato, index)
    t = thresholds
    if s["in_org_fraction"] < t.agnostic_in_org:
        if s["contact_overlap"] < t.agnostic_overlap and (
                s["n_domains"] >= t.agnostic_min_domains or s["freemail_only"]):
            return ACCOUNT_AGNOSTIC
        if s["same_industry_fraction"] is not None and s["same_industry_fraction"] >= t.industry_share:
            return LATERAL_ORGANIZATION
    if (s["in_org_fraction"] < t.agnostic2_in_org
            and s["n_domains"] > t.agnostic2_domain_factor * s["n_contact_domains"]
            and s["contact_overlap"] < t.agnostic_overlap):
        return ACCOUNT_AGNOSTIC
    if (s["in_org_fraction"] >= t.orgwide_in_org and s["roster_coverage"] >= t.orgwide_roster
            and s["contact_overlap"] < t.orgwide_overlap):
        return ORGANIZATION_WIDE
    if s["in_org_fraction"] > t.orgwide2_in_org and s["contact_overlap"] < t.orgwide_overlap:
        return ORGANIZATION_WIDE
    if ato.recent_contacts and s["contacts_reached"] >= t.targeted_contacts:
        return TARGETED_RECIPIENT
    return INCONCLUSIVE


# -- timing --------------------------------------------------------------------


def hour_of_day_percentile(incident, index: CorpusIndex) -> float | None:
    """Midrank percentile of the first phish's hour among the account's prior-30-day send hours.

    Returns None for a quiescent account (no email in those 30 days).
    """
    first = incident.first_sent_at
    t = int(first.timestamp())
    history = [e.sent_at.hour for e in index.sender_window(incident.sender, t)]
    if not history:
        return None
    return midrank_percentile(history, first.hour)


def midrank_percentile(history, value) -> float:
    less = sum(1 for h in history if h < value)
    equal = sum(1 for h in history if h == value)
    return 100.0 * (less + equal / 2) / len(history)


def day_of_week_histogram(incidents) -> list[int]:
    """Counts per UTC weekday of each incident's first email, Monday first."""
    bins = [0] * 7
    for inc in incidents:
        bins[inc.first_sent_at.weekday()] += 1
    return bins


# -- interaction and stealth ---------------------------------------------------


def _phish_threads(ato: AtoProfile, index: CorpusIndex):
    for pid in ato.phish_emails:
        p = index.get(pid)
        if p.conversation_id:
            yield p, index.thread(p.conversation_id)


def detect_interaction(ato: AtoProfile, index: CorpusIndex) -> bool:
    """A recipient replied in a phish thread and the account wrote again afterwards."""
    for p, thread in _phish_threads(ato, index):
        reply_ts = None
        for e in thread:
            if e.sent_ts < p.sent_ts or e.id == p.id:
                continue
            if reply_ts is None and e.sender != ato.account and e.sender in p.recipients:
                reply_ts = e.sent_ts
            elif reply_ts is not None and e.sender == ato.account and e.sent_ts > reply_ts:
                return True
    return False


def _fast_deleted(e: Email) -> bool:
    return (e.folder == "Trash" and e.deleted_at is not None
            and (e.deleted_at - e.sent_at).total_seconds() <= STEALTH_SECONDS)


def detect_stealth(ato: AtoProfile, index: CorpusIndex) -> bool:
    """Any phish, reply to it, or follow-up in the account's mailbox trashed within 30 s."""
    for pid in ato.phish_emails:
        if _fast_deleted(index.get(pid)):
            return True
    for _, thread in _phish_threads(ato, index):
        for e in thread:
            mine = e.sender == ato.account or ato.account in e.recipients
            if mine and _fast_deleted(e):
                return True
    return False


# -- content -------------------------------------------------------------------


def load_dictionary(path=None) -> frozenset[str]:
    if path is None:
        with resources.as_file(resources.files("latphish.data") / "common_words.txt") as p:
            return load_dictionary(p)
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip() and not w.startswith("#"))


def representative(incident, index: CorpusIndex) -> Email:
    return min((index.get(i) for i in incident.email_ids), key=lambda e: (e.sent_ts, e.id))


def word_frequency(incidents, dictionary, index: CorpusIndex) -> list[tuple[str, int]]:
    """Number of incidents whose representative email uses each dictionary word."""
    counts: Counter = Counter()
    for inc in incidents:
        words = set(textsim.normalize_text(representative(inc, index).body_html))
        counts.update(w for w in words if w in dictionary)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def format_word_table(rows, top=None) -> str:
    return "\n".join(f"{w} & {c}" for w, c in rows[:top])


@dataclass
class TailoringTable:
    counts: dict[str, dict[str, int]]
    unlabeled: int

    def to_record(self) -> dict:
        return {"counts": self.counts, "unlabeled": self.unlabeled}

    def format(self) -> str:
        lines = ["naming \\ topic".ljust(16) + "".join(t.rjust(12) for t in TOPICS)]
        for n in NAMINGS:
            lines.append(n.ljust(16) + "".join(str(self.counts[n][t]).rjust(12) for t in TOPICS))
        lines.append(f"unlabeled: {self.unlabeled}")
        return "\n".join(lines)


def tailoring_table(incidents, index: CorpusIndex) -> TailoringTable:
    """Incidents per (naming, topic) label; incidents with no label are only counted."""
    counts = {n: {t: 0 for t in TOPICS} for n in NAMINGS}
    unlabeled = 0
    for inc in incidents:
        labels = [index.get(i).tailoring for i in inc.email_ids]
        label = next((lb for lb in labels if lb), None)
        if label is None:
            unlabeled += 1
            continue
        topic, naming = label
        counts[naming][topic] += 1
    return TailoringTable(counts, unlabeled)


# -- report --------------------------------------------------------------------


def attack_incidents(incidents) -> list:
    """Incidents known or confirmed to be phishing."""
    return [i for i in incidents if i.ground_truth in ("reported", "detector_confirmed")]


def characterize(index: CorpusIndex, incidents, dictionary=None,
                 thresholds: TargetingThresholds = TargetingThresholds(),
                 lexicon=DEFAULT_SUSPICION_LEXICON, top_words: int = 20) -> dict:
    """Full characterization report over the attack incidents."""
    attacks = attack_incidents(incidents)
    emails = [index.get(i) for inc in attacks for i in inc.email_ids if i in index]
    profiles = build_profiles(index, emails)
    links = find_success_links(profiles, index, lexicon)
    for link in links:
        profiles[link.attacker].successes.append(link.victim)
    strategies: Counter = Counter()
    for p in profiles.values():
        p.strategy = classify_targeting(p, index, thresholds) if p.phish_recipients else INCONCLUSIVE
        p.interactive = detect_interaction(p, index)
        p.stealthy = detect_stealth(p, index)
        strategies[p.strategy] += 1
    percentiles = [hour_of_day_percentile(inc, index) for inc in attacks]
    words = word_frequency(attacks, dictionary if dictionary is not None else load_dictionary(), index)
    return {
        "n_incidents": len(attacks),
        "n_atos": len(profiles),
        "profiles": [p.to_record() for p in profiles.values()],
        "success_links": [link.to_record() for link in links],
        "conversion": conversion_stats(links, profiles, index),
        "strategies": {s: strategies.get(s, 0) for s in STRATEGIES},
        "tailoring": tailoring_table(attacks, index).to_record(),
        "top_words": [[w, c] for w, c in words[:top_words]],
        "day_of_week": day_of_week_histogram(attacks),
        "hour_percentiles": percentiles,
        "quiescent_incidents": sum(1 for p in percentiles if p is None),
        "interactive_atos": sum(1 for p in profiles.values() if p.interactive),
        "stealthy_atos": sum(1 for p in profiles.values() if p.stealthy),
    }


def write_report(report: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
