"""Deterministic synthetic multi-org corpus with injected lateral-phishing campaigns."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from .corpus import DAY_SECONDS, WINDOW_SECONDS, Email, OrgConfig, dump_corpus, dump_orgs, from_ts, month_bounds, parse_month
from .features import KeywordList
from .urlrep import DomainRanking, SpecialDomainLists

log = logging.getLogger(__name__)

STRATEGIES = ("AccountAgnostic", "OrganizationWide", "TargetedRecipient", "LateralOrganization")
LURES = ("shared_document", "account_problem")
RANK_CLASSES = ("unlisted", "low", "shortener", "content_host")
TIMINGS = ("work_hours", "off_hours", "quiescent")
DELIVERIES = ("blast", "batch")

MIN_TARGETED_CONTACTS = 6
ORGWIDE_MAX_OVERLAP = 0.08

_STEMS = ("northwind", "bluepeak", "cedarline", "harborview", "ironwood", "lumenta", "maplecrest", "oakridge",
          "pinegate", "quarrystone", "redfern", "silverlake", "tidewater", "umberfield", "valecrest", "westbrook")
_TLDS = ("com", "org", "co.uk", "com", "edu", "com", "net", "com", "org", "com")
_INDUSTRIES = ("healthcare", "finance", "education", "technology", "healthcare",
               "finance", "manufacturing", "education", "technology", "government")
_FIRST = ("james", "mary", "john", "patricia", "robert", "jennifer", "michael", "linda", "william", "elizabeth",
          "david", "barbara", "richard", "susan", "joseph", "jessica", "thomas", "sarah", "charles", "karen",
          "daniel", "nancy", "matthew", "lisa", "anthony", "betty", "mark", "sandra", "donald", "ashley",
          "steven", "kimberly", "paul", "emily", "andrew", "donna", "joshua", "michelle", "kevin", "carol",
          "brian", "amanda", "george", "melissa", "timothy", "deborah", "ronald", "stephanie", "jason", "rebecca")
_LAST = ("smith", "johnson", "williams", "brown", "jones", "garcia", "miller", "davis", "rodriguez", "martinez",
         "hernandez", "lopez", "gonzalez", "wilson", "anderson", "thomas", "taylor", "moore", "jackson", "martin",
         "lee", "perez", "thompson", "white", "harris", "sanchez", "clark", "ramirez", "lewis", "robinson",
         "walker", "young", "allen", "king", "wright", "scott", "torres", "nguyen", "hill", "flores",
         "green", "adams", "nelson", "baker", "hall", "rivera", "campbell", "mitchell", "carter", "roberts")
_POPULAR = ("google.com", "youtube.com", "microsoft.com", "linkedin.com", "wikipedia.org", "amazon.com",
            "apple.com", "zoom.us", "github.com", "nytimes.com", "bbc.co.uk", "cnn.com", "reuters.com",
            "salesforce.com", "slack.com", "adobe.com", "dropbox.com", "box.com", "office.com", "live.com",
            "eventbrite.com", "surveymonkey.com", "wsj.com", "bloomberg.com", "forbes.com", "medium.com",
            "stackoverflow.com", "yelp.com", "weather.com", "maps.google.com", "docusign.net", "gmail.com",
            "yahoo.com", "hotmail.com", "aol.com", "comcast.net", "twitter.com", "facebook.com", "instagram.com",
            "paypal.com", "fedex.com", "ups.com", "usps.com", "irs.gov", "cdc.gov", "nih.gov", "harvard.edu",
            "mit.edu", "stanford.edu", "coursera.org", "bit.ly", "goo.gl", "tinyurl.com", "t.co", "ow.ly")
_FREEMAIL = ("gmail.com", "yahoo.com", "hotmail.com", "aol.com", "comcast.net")
_SERVICES = ("OneDrive", "SharePoint", "Dropbox", "Office 365")
_DEPTS = ("Finance", "HR", "Operations", "Sales", "Legal", "Facilities")
_PHISH_PATHS = ("/z/office365/index.html", "/doc/{tok}/view.php", "/{word}/login/index.php",
                "/secure/{tok}/", "/wp-content/share/{tok}/index.html", "/owa/{word}/auth.php")


class GenConfigError(ValueError):
    """Configuration that cannot be realized."""


@dataclass(frozen=True)
class CampaignSpec:
    strategy: str
    lure: str = "shared_document"
    n_recipients: int = 40
    rank_class: str = "unlisted"
    timing: str = "work_hours"
    stealth: bool = False
    interaction: bool = False
    chain: int = 0
    delivery: str = "blast"
    reported: bool = True
    month: int | None = None
    org: int | None = None
    template_mimic: bool = False
    tailoring: tuple[str, str] = ("generic", "none")

    def __post_init__(self):
        for name, value, allowed in (("strategy", self.strategy, STRATEGIES), ("lure", self.lure, LURES),
                                     ("rank_class", self.rank_class, RANK_CLASSES),
                                     ("timing", self.timing, TIMINGS), ("delivery", self.delivery, DELIVERIES)):
            if value not in allowed:
                raise GenConfigError(f"campaign {name} {value!r} not in {allowed}")
        if self.n_recipients < 1:
            raise GenConfigError("campaign needs at least one recipient")
        if self.timing == "quiescent" and self.strategy in ("TargetedRecipient",):
            raise GenConfigError("a quiescent account has no recent contacts to target")

    @classmethod
    def from_record(cls, rec) -> CampaignSpec:
        rec = dict(rec)
        if "tailoring" in rec:
            rec["tailoring"] = tuple(rec["tailoring"])
        return cls(**rec)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 7
    n_orgs: int = 10
    n_mailboxes: int = 1000
    employees_per_org: tuple[int, int] = (20, 300)
    start_month: str = "2018-04"
    months: int = 3
    benign_rate: float = 0.55
    inbound_rate: float = 0.12
    n_attack_campaigns: int = 30
    campaigns: tuple[CampaignSpec, ...] | None = None
    report_fraction: float = 0.7
    noise_link_rate: float = 0.015
    hard_benign_rate: float = 0.001

    def __post_init__(self):
        if not 1 <= self.n_orgs <= len(_STEMS):
            raise GenConfigError(f"n_orgs must be in 1..{len(_STEMS)}")
        lo, hi = self.employees_per_org
        if lo < 1 or hi < lo:
            raise GenConfigError("bad employees_per_org range")
        if not self.n_orgs * lo <= self.n_mailboxes <= self.n_orgs * hi:
            raise GenConfigError("n_mailboxes cannot be split within employees_per_org")
        if self.months < 1:
            raise GenConfigError("months must be >= 1")
        if self.n_attack_campaigns < 0:
            raise GenConfigError("n_attack_campaigns must be >= 0")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["employees_per_org"] = list(self.employees_per_org)
        if self.campaigns is not None:
            rec["campaigns"] = [asdict(c) for c in self.campaigns]
        return rec

    @classmethod
    def from_record(cls, rec) -> GenConfig:
        rec = dict(rec)
        if "employees_per_org" in rec:
            rec["employees_per_org"] = tuple(rec["employees_per_org"])
        if rec.get("campaigns") is not None:
            rec["campaigns"] = tuple(CampaignSpec.from_record(c) for c in rec["campaigns"])
        return cls(**rec)


@dataclass
class _Employee:
    address: str
    first: str
    last: str
    org: int
    team: int
    groups: list[tuple[str, ...]] = field(default_factory=list)
    partners: list[str] = field(default_factory=list)
    dormant: bool = False
    announcer: bool = False
    ato: bool = False


@dataclass
class _Org:
    config: OrgConfig
    name: str
    domain: str
    employees: list[_Employee]
    partner_domains: list[str]
    k: int


@dataclass
class _Draft:
    org: int
    sender: str
    to: tuple[str, ...]
    ts: int
    subject: str
    body: str
    folder: str = "SentItems"
    conv: str = ""
    cc: tuple[str, ...] = ()
    bcc: tuple[str, ...] = ()
    deleted_after: int | None = None
    reported: bool = False
    label: str = "benign"
    tailoring: tuple[str, str] | None = None
    campaign: str | None = None
    seq: int = 0

    @property
    def recipients(self):
        return set(self.to) | set(self.cc) | set(self.bcc)


@dataclass
class GenResult:
    config: GenConfig
    emails: list[Email]
    orgs: dict[str, OrgConfig]
    ranking: DomainRanking
    shortlinks: dict[str, str]
    campaigns: list[dict]
    success_links: list[dict]
    labels: dict[str, tuple[str, str | None]]

    @property
    def incident_keys(self) -> list[tuple[str, str]]:
        return [(c["account"], c["subject"]) for c in self.campaigns]

    def manifest_records(self):
        for c in self.campaigns:
            yield {"type": "campaign", **c}
        for link in self.success_links:
            yield {"type": "success_link", **link}
        for e in self.emails:
            label, campaign = self.labels[e.id]
            yield {"type": "email", "id": e.id, "label": label, "campaign": campaign}


def _vocab() -> list[str]:
    with resources.as_file(resources.files("latphish.data") / "common_words.txt") as p:
        with open(p, encoding="utf-8") as fh:
            words = [w.strip() for w in fh if w.strip() and not w.startswith("#")]
    return [w for w in words[:4000] if w.isalpha() and len(w) > 1]


class _Generator:
    def __init__(self, config: GenConfig):
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        self.keywords = KeywordList.default()
        words = _vocab()
        self.words = words
        w = 1.0 / np.arange(1, len(words) + 1) ** 1.1
        self.word_p = w / w.sum()
        y, m = parse_month(config.start_month)
        self.start, _ = month_bounds(y, m)
        self.month_starts = []
        for _ in range(config.months):
            ms, me = month_bounds(y, m)
            self.month_starts.append(ms)
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)
        self.end = me
        self.drafts: list[_Draft] = []
        self.ranks: dict[str, int] = {}
        self.shortlinks: dict[str, str] = {}
        self._conv = 0
        self._used_domains: set[str] = set()
        self.sent_log: dict[str, list[tuple[int, frozenset[str]]]] = {}
        self.employee_addresses: set[str] = set()

    # -- primitives ------------------------------------------------------------

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def sample(self, seq, k):
        idx = self.rng.choice(len(seq), size=min(k, len(seq)), replace=False)
        return [seq[i] for i in sorted(idx)]

    def conv(self) -> str:
        self._conv += 1
        return f"conv{self._conv:07d}"

    def token(self, n=8) -> str:
        alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
        while True:
            tok = "".join(alphabet[i] for i in self.rng.integers(0, len(alphabet), n))
            if any(c.isdigit() for c in tok):
                return tok

    def sentence(self, lo=6, hi=14) -> str:
        n = int(self.rng.integers(lo, hi + 1))
        idx = self.rng.choice(len(self.words), size=n, p=self.word_p)
        s = " ".join(self.words[i] for i in idx)
        return s[0].upper() + s[1:] + "."

    def clean_text(self, n_sentences) -> str:
        for _ in range(20):
            text = " ".join(self.sentence() for _ in range(n_sentences))
            if not self.keywords.search(text.lower()):
                return text
        return text

    def emit(self, d: _Draft) -> _Draft:
        d.seq = len(self.drafts)
        self.drafts.append(d)
        if d.sender in self.employee_addresses:
            self.sent_log.setdefault(d.sender, []).append((d.ts, frozenset(d.recipients)))
        return d

    def contacts(self, sender: str, t: int) -> set[str]:
        out = set()
        for ts, rec in self.sent_log.get(sender, ()):
            if t - WINDOW_SECONDS <= ts < t:
                out |= rec
        out.discard(sender)
        return out

    def fresh_domain(self, words=2) -> str:
        tld = self.pick(("com", "net", "info", "online", "xyz", "site"))
        while True:
            parts = [self.pick(self.words[200:3000]) for _ in range(words)]
            dom = "-".join(parts) + str(int(self.rng.integers(1, 99))) + "." + tld
            if dom not in self._used_domains:
                self._used_domains.add(dom)
                return dom

    def work_time(self, day_ts: int) -> int:
        return day_ts + int(self.rng.integers(8 * 3600, 18 * 3600))

    # -- world -----------------------------------------------------------------

    def build_world(self):
        cfg = self.cfg
        lo, hi = cfg.employees_per_org
        w = np.sort(self.rng.lognormal(0.0, 0.8, cfg.n_orgs))[::-1]
        sizes = np.clip(np.round(cfg.n_mailboxes * w / w.sum()), lo, hi).astype(int)
        diff = cfg.n_mailboxes - int(sizes.sum())
        i = 0
        while diff != 0:
            j = i % cfg.n_orgs
            step = 1 if diff > 0 else -1
            if lo <= sizes[j] + step <= hi:
                sizes[j] += step
                diff -= step
            i += 1
        for dom in _POPULAR:
            self.ranks.setdefault(dom, len(self.ranks) * 37 + 1)
        self.orgs: list[_Org] = []
        for k in range(cfg.n_orgs):
            domain = f"{_STEMS[k]}.{_TLDS[k % len(_TLDS)]}"
            self._used_domains.add(domain)
            partner_domains = []
            for p in range(int(self.rng.integers(3, 7))):
                pd = self.fresh_domain(1)
                if p % 2 == 0:
                    self.ranks[pd] = int(self.rng.integers(120_000, 950_000))
                partner_domains.append(pd)
            org = _Org(OrgConfig(f"org{k:02d}", frozenset([domain]), _INDUSTRIES[k % len(_INDUSTRIES)]),
                       _STEMS[k].capitalize(), domain, [], partner_domains, k)
            used = set()
            team_size = int(self.rng.integers(6, 13))
            for n in range(int(sizes[k])):
                first, last = self.pick(_FIRST), self.pick(_LAST)
                base = f"{first}.{last}"
                addr, c = f"{base}@{domain}", 1
                while addr in used:
                    c += 1
                    addr = f"{base}{c}@{domain}"
                used.add(addr)
                self.employee_addresses.add(addr)
                org.employees.append(_Employee(addr, first, last, k, n // team_size))
            self.orgs.append(org)
        for org in self.orgs:
            emps = org.employees
            teams: dict[int, list[_Employee]] = {}
            for e in emps:
                teams.setdefault(e.team, []).append(e)
            n_dormant = max(1, len(emps) // 40)
            for e in self.sample(emps, n_dormant):
                e.dormant = True
            active = [e for e in emps if not e.dormant]
            for e in self.sample(active, max(1, len(emps) // 120)):
                e.announcer = True
            for e in emps:
                mates = [x.address for x in teams[e.team] if x is not e] or [x.address for x in emps if x is not e]
                for _ in range(int(self.rng.integers(2, 5))):
                    e.groups.append(tuple(self.sample(mates, int(self.rng.integers(1, 5)))))
                if self.rng.random() < 0.3:
                    for _ in range(int(self.rng.integers(1, 3))):
                        pd = self.pick(org.partner_domains)
                        e.partners.append(f"{self.pick(_FIRST)}.{self.pick(_LAST)}@{pd}")

    # -- benign traffic -------------------------------------------------------

    def link(self, org: _Org, kind: str) -> str:
        if kind == "popular":
            dom = self.pick(_POPULAR[:30])
            href = f"https://www.{dom}/{self.pick(self.words[100:2000])}/{self.token(6)}"
            text = self.pick(("this article", "the page", "here is the info", "more details", "the event"))
        elif kind == "internal":
            href = f"https://intranet.{org.domain}/{self.pick(self.words[100:2000])}"
            text = "the intranet page"
        elif kind == "hosted":
            host = self.pick(("docs.google.com", "drive.google.com", f"{_STEMS[org.k]}.sharepoint.com"))
            href = f"https://{host}/d/{self.token(12)}/edit"
            text = self.pick(("the draft", "shared notes", "the spreadsheet", "our doc"))
        elif kind == "partner":
            dom = self.pick(org.partner_domains)
            href = f"https://www.{dom}/{self.pick(self.words[100:2000])}"
            text = self.pick(("their site", "product sheet", "the portal", "pricing"))
        else:
            href = f"http://{self.fresh_domain()}/{self.pick(self.words[100:2000])}"
            text = self.pick(("this place", "the listing", "what I found", "the menu"))
        if self.rng.random() < 0.1:
            text = href
        return f'<a href="{href}">{text}</a>'

    def body(self, org: _Org, greet: str, signer: str, link_kinds=(), keyword=False) -> str:
        parts = [f"<p>Hi {greet},</p>", f"<p>{self.clean_text(int(self.rng.integers(1, 4)))}</p>"]
        for kind in link_kinds:
            parts.append(f"<p>{self.clean_text(1)} {self.link(org, kind)}</p>")
        if keyword:
            parts.append(f"<p>{self.pick(('Please see attached.', 'Log in to the portal before Friday.', 'This is urgent, reply today.', 'Click here if you want to join.'))}</p>")
        parts.append(f"<p>{self.pick(('Thanks', 'Best', 'Regards', 'Cheers'))},<br>{signer.capitalize()}</p>")
        return "".join(parts)

    def benign_links(self, partner=False):
        r = self.rng.random()
        if r < self.cfg.noise_link_rate:
            return ("noise",)
        if partner:
            return ("partner",) if r < 0.7 else ()
        if r < 0.45:
            return ()
        if r < 0.75:
            return ("popular",)
        if r < 0.87:
            return ("internal",)
        return ("hosted",)

    def benign_traffic(self):
        cfg = self.cfg
        n_days = (self.end - self.start) // DAY_SECONDS
        for day in range(n_days):
            day_ts = self.start + day * DAY_SECONDS
            wd = from_ts(day_ts).weekday()
            workday = wd < 5
            for org in self.orgs:
                roster = [e.address for e in org.employees]
                for e in org.employees:
                    if e.dormant:
                        continue
                    rate = cfg.benign_rate if workday else cfg.benign_rate * 0.04
                    for _ in range(int(self.rng.poisson(rate))):
                        self.one_benign(org, e, self.work_time(day_ts) if workday else day_ts + int(self.rng.integers(0, DAY_SECONDS)))
                    if workday and self.rng.random() < cfg.inbound_rate:
                        self.inbound(org, e, self.work_time(day_ts))
                    if e.announcer and wd == 0:
                        t = day_ts + 9 * 3600 + int(self.rng.integers(0, 3600))
                        self.emit(_Draft(org.k, e.address,
                                         tuple(a for a in roster if a != e.address), t,
                                         f"{org.name} weekly update: {self.pick(self.words[300:2000])}",
                                         self.body(org, "all", e.first, ("internal", "popular")), conv=self.conv()))
                n_docs = 3 if org.k < 3 else 0
                if workday:
                    for _ in range(int(self.rng.poisson(n_docs))):
                        self.docusign(org, self.work_time(day_ts))

    def one_benign(self, org: _Org, e: _Employee, t: int):
        k = org.k
        r = self.rng.random()
        keyword = self.rng.random() < 0.03
        if self.rng.random() < self.cfg.hard_benign_rate:
            others = [x.address for x in org.employees if x is not e]
            to = tuple(self.sample(others, int(self.rng.integers(3, 13))))
            subj = f"{self.pick(('Charity run', 'Book club', 'Team lunch', 'Webinar', 'Fundraiser'))} {self.pick(self.words[300:2500])}"
            body = self.body(org, "all", e.first, ("noise",), keyword=True)
        elif e.partners and r < 0.15:
            to = (self.pick(e.partners),)
            subj = f"{self.pick(self.words[300:2500]).capitalize()} {self.pick(('follow up', 'order', 'question', 'meeting'))}"
            body = self.body(org, to[0].split(".")[0].capitalize(), e.first, self.benign_links(partner=True), keyword)
        elif r < 0.85:
            to = self.pick(e.groups)
            subj = f"{self.pick(self.words[300:2500]).capitalize()} {self.pick(('notes', 'plan', 'update', 'review', 'sync', 'draft'))}"
            body = self.body(org, to[0].split(".")[0].capitalize(), e.first, self.benign_links(), keyword)
        else:
            others = [x.address for x in org.employees if x is not e]
            to = tuple(self.sample(others, int(self.rng.integers(1, 4))))
            subj = f"Quick question about {self.pick(self.words[300:2500])}"
            body = self.body(org, to[0].split(".")[0].capitalize(), e.first, self.benign_links(), keyword)
        d = self.emit(_Draft(k, e.address, tuple(to), t, subj, body, conv=self.conv()))
        if self.rng.random() < 0.25 and to[0].endswith("@" + org.domain):
            rt = t + int(self.rng.integers(600, 5 * 3600))
            if rt < self.end:
                self.emit(_Draft(k, to[0], (e.address,), rt, "RE: " + subj,
                                 f"<p>{self.clean_text(1)}</p><p>Thanks,<br>{to[0].split('.')[0].capitalize()}</p>",
                                 conv=d.conv))

    def inbound(self, org: _Org, e: _Employee, t: int):
        k = org.k
        if e.partners and self.rng.random() < 0.4:
            sender = self.pick(e.partners)
            body = self.body(org, e.first.capitalize(), sender.split(".")[0], self.benign_links(partner=True))
            subj = f"RE: {self.pick(self.words[300:2500])} order"
        else:
            sender = "messages-noreply@linkedin.com"
            subj = f"{e.first.capitalize()}, you have {int(self.rng.integers(2, 9))} new notifications"
            body = ("<p>See who viewed your profile and catch up on the latest updates from your network.</p>"
                    f'<p><a href="https://www.linkedin.com/comm/notifications/{self.token(10)}">View notifications</a></p>'
                    "<p>You are receiving notification emails. Unsubscribe. This email was intended for you. "
                    "Learn why we included this. LinkedIn Corporation, Sunnyvale, CA.</p>")
        deleted = int(self.rng.integers(3600, 5 * 86400)) if self.rng.random() < 0.05 else None
        self.emit(_Draft(k, sender, (e.address,), t, subj, body, folder="Trash" if deleted else "Inbox",
                         conv=self.conv(), deleted_after=deleted))

    def docusign_body(self, name: str, doc: str, link: str) -> str:
        return (f"<p>{name} sent you a document to review and sign.</p>"
                f'<p><a href="{link}">REVIEW DOCUMENT</a></p>'
                f"<p>{name}</p><p>Please review and sign the document {doc}. Thank you.</p>"
                "<p>Do Not Share This Email. This email contains a secure link to DocuSign. Please do not share "
                "this email, link, or access code with others.</p><p>Alternate Signing Method. Visit DocuSign.com, "
                "click on Access Documents, and enter the security code.</p><p>About DocuSign. Sign documents "
                "electronically in just minutes. It is safe, secure, and legally binding. Whether you are in an "
                "office, at home, or on the go, DocuSign provides a trusted solution for digital transaction "
                "management.</p>")

    def docusign(self, org: _Org, t: int):
        e = self.pick(org.employees)
        name = f"{self.pick(_FIRST).capitalize()} {self.pick(_LAST).capitalize()}"
        doc = f"{self.pick(self.words[300:2500]).capitalize()} Agreement {int(self.rng.integers(100, 999))}"
        link = f"https://www.docusign.net/Signing/EmailStart.aspx?a={self.token(16)}"
        self.emit(_Draft(org.k, "dse@docusign.net", (e.address,), t,
                         f"Please DocuSign: {doc}", self.docusign_body(name, doc, link),
                         folder="Inbox", conv=self.conv()))

    # -- campaigns -------------------------------------------------------------

    def default_campaigns(self) -> list[CampaignSpec]:
        n = self.cfg.n_attack_campaigns
        if n == 0:
            return []
        n_chain = min(n // 6, n // 2)
        n_primary = n - n_chain
        pattern = ("AccountAgnostic", "OrganizationWide", "TargetedRecipient", "AccountAgnostic",
                   "OrganizationWide", "TargetedRecipient", "AccountAgnostic", "LateralOrganization",
                   "OrganizationWide", "AccountAgnostic", "TargetedRecipient", "TargetedRecipient")
        ranks = ("unlisted", "low", "unlisted", "shortener", "low", "unlisted", "content_host",
                 "unlisted", "low", "unlisted", "shortener", "low")
        train_share = max(1, round(n_primary / 3))
        out = []
        for i in range(n_primary):
            strat = pattern[i % len(pattern)]
            month = 0 if i < train_share else 1 + (i % max(1, self.cfg.months - 1)) % max(1, self.cfg.months - 1)
            if self.cfg.months == 1:
                month = 0
            timing = "work_hours"
            r = self.rng.random()
            if r < 0.18:
                timing = "off_hours"
            elif r < 0.26 and strat in ("AccountAgnostic", "OrganizationWide"):
                timing = "quiescent"
            lure = LURES[i % 2]
            topic = self.pick(("generic", "generic", "generic", "enterprise", "targeted"))
            naming = self.pick(("none", "none", "none", "org", "recipient"))
            n_recip = {"AccountAgnostic": int(self.rng.integers(40, 160)),
                       "OrganizationWide": 0,
                       "TargetedRecipient": 0,
                       "LateralOrganization": int(self.rng.integers(15, 40))}[strat]
            out.append(CampaignSpec(
                strategy=strat, lure=lure, n_recipients=max(n_recip, 1), rank_class=ranks[i % len(ranks)],
                timing=timing, stealth=self.rng.random() < 0.2, interaction=self.rng.random() < 0.15,
                delivery="batch" if self.rng.random() < 0.35 else "blast",
                reported=bool(i < train_share or self.rng.random() < self.cfg.report_fraction),
                month=month, template_mimic=False, tailoring=(topic, naming),
            ))
        mimic = [i for i, c in enumerate(out) if c.month and c.month >= 1 and c.strategy != "AccountAgnostic"
                 and c.rank_class in ("unlisted", "low")][:2]
        for i in mimic:
            out[i] = replace(out[i], template_mimic=True, lure="shared_document")
        parents = [i for i, c in enumerate(out) if c.strategy in ("OrganizationWide", "TargetedRecipient")]
        stride = max(1, len(parents) // max(1, n_chain))
        for i in parents[::stride][:n_chain]:
            out[i] = replace(out[i], chain=1)
        return out

    def org_for(self, spec: CampaignSpec, taken: dict[int, int], t: int) -> int:
        if spec.org is not None:
            if not 0 <= spec.org < len(self.orgs):
                raise GenConfigError(f"campaign org {spec.org} out of range")
            return spec.org
        cands = list(range(len(self.orgs)))
        if spec.strategy == "OrganizationWide" or spec.chain:
            cands = [k for k in cands if len(self.orgs[k].employees) >= 60] or cands
        if spec.strategy == "LateralOrganization":
            cands = [k for k in cands if self.industry_peers(k)]
            if not cands:
                raise GenConfigError("no organization shares an industry with another")
        cands = [k for k in cands if self.ato_pool(k, spec, t)]
        if not cands:
            raise GenConfigError(f"no account anywhere fits a {spec.timing} {spec.strategy} campaign")
        return min(cands, key=lambda k: (taken.get(k, 0) / len(self.orgs[k].employees) ** 0.5, k))

    def industry_peers(self, k: int) -> list[int]:
        ind = self.orgs[k].config.industry
        return [j for j, o in enumerate(self.orgs) if j != k and o.config.industry == ind]

    def campaign_time(self, spec: CampaignSpec) -> int:
        month = spec.month if spec.month is not None else int(self.rng.integers(0, self.cfg.months))
        if not 0 <= month < self.cfg.months:
            raise GenConfigError(f"campaign month {month} outside the generated range")
        start = self.month_starts[month]
        end = self.month_starts[month + 1] if month + 1 < self.cfg.months else self.end
        first_day = max(start, self.start + 8 * DAY_SECONDS)
        # a chained campaign's successor follows about a day later, so keep both off the weekend
        last_weekday = 3 if spec.chain else 4
        days = [d for d in range(first_day, end - 3 * DAY_SECONDS, DAY_SECONDS) if from_ts(d).weekday() <= last_weekday]
        if not days:
            raise GenConfigError("no weekday available for a campaign")
        day = self.pick(days)
        if spec.timing == "off_hours":
            return day + int(self.rng.integers(0, 6 * 3600))
        return day + int(self.rng.integers(9 * 3600, 17 * 3600))

    def ato_pool(self, k: int, spec: CampaignSpec, t: int) -> list[_Employee]:
        # accounts that already received a phish are left to explicit chains, so independent
        # campaigns never look like an unplanned compromise
        pool = [e for e in self.orgs[k].employees if not e.ato and not e.announcer and e.address not in self.phished]
        if spec.timing == "quiescent":
            pool = [e for e in pool if not self.contacts(e.address, t)]
        elif spec.strategy == "TargetedRecipient":
            pool = [e for e in pool if len(self.contacts(e.address, t)) >= MIN_TARGETED_CONTACTS]
        elif spec.strategy != "OrganizationWide":
            pool = [e for e in pool if not e.dormant]
        if spec.strategy == "OrganizationWide":
            pool.sort(key=lambda e: (len(self.contacts(e.address, t)), e.address))
            pool = pool[:max(1, len(pool) // 4)]
        return pool

    def choose_ato(self, k: int, spec: CampaignSpec, t: int) -> _Employee:
        pool = self.ato_pool(k, spec, t)
        if not pool:
            raise GenConfigError(f"no account in org {k} fits a {spec.timing} {spec.strategy} campaign")
        return self.pick(pool)

    def recipients(self, spec: CampaignSpec, k: int, ato: _Employee, t: int) -> list[str]:
        org = self.orgs[k]
        contacts = self.contacts(ato.address, t)
        if spec.strategy == "AccountAgnostic":
            out = set()
            freemail_only = self.rng.random() < 0.15
            doms = list(_FREEMAIL) if freemail_only else [self.fresh_domain(1) for _ in range(max(12, spec.n_recipients // 6))] + list(_FREEMAIL)
            while len(out) < spec.n_recipients:
                out.add(f"{self.pick(_FIRST)}{int(self.rng.integers(1, 9999))}@{self.pick(doms)}")
            return sorted(out - contacts)
        if spec.strategy == "LateralOrganization":
            peers = [e.address for j in self.industry_peers(k) for e in self.orgs[j].employees]
            if len(peers) < spec.n_recipients:
                raise GenConfigError("not enough same-industry recipients")
            return sorted(self.sample(peers, spec.n_recipients))
        others = [e.address for e in org.employees if e is not ato]
        if spec.strategy == "OrganizationWide":
            if len(others) < 10:
                raise GenConfigError(f"org {k} is too small for an organization-wide campaign")
            n = spec.n_recipients if spec.n_recipients > 1 else int(len(others) * float(self.rng.uniform(0.75, 0.97)))
            if n > len(others):
                raise GenConfigError("organization-wide campaign wants more recipients than employees")
            strangers = [a for a in others if a not in contacts]
            keep = [a for a in others if a in contacts]
            budget = int(ORGWIDE_MAX_OVERLAP * n)
            chosen = self.sample(keep, budget) + self.sample(strangers, n - min(budget, len(keep)))
            return sorted(chosen)
        contact_list = sorted(contacts)
        if len(contact_list) < MIN_TARGETED_CONTACTS:
            raise GenConfigError("targeted campaign needs an account with recent contacts")
        share = float(self.rng.uniform(0.5, 1.0))
        chosen = set(self.sample(contact_list, max(1, int(round(share * len(contact_list))))))
        for _ in range(int(self.rng.integers(0, 3))):
            chosen.add(self.pick([e.address for e in org.employees if e is not ato]))
        chosen.discard(ato.address)
        return sorted(chosen)

    def phish_url(self, spec: CampaignSpec, path_tpl: str, domain: str | None) -> tuple[str, str]:
        path = path_tpl.format(tok=self.token(8), word=self.pick(self.words[200:1500]))
        if spec.rank_class == "content_host":
            return f"https://docs.google.com/forms/d/e/{self.token(24)}/viewform", "docs.google.com"
        if domain is None:
            domain = self.fresh_domain()
            if spec.rank_class == "low":
                self.ranks[domain] = int(self.rng.integers(150_000, 990_000))
        final = f"http://{domain}{path}"
        if spec.rank_class == "shortener":
            code = self.token(7)
            short = f"http://{self.pick(('bit.ly', 'tinyurl.com', 'ow.ly'))}/{code}"
            self.shortlinks[short] = final
            return short, domain
        return final, domain

    def lure(self, spec: CampaignSpec, org: _Org, ato: _Employee, url: str, recipient: str | None):
        topic, naming = spec.tailoring
        greet = {"none": "", "org": f" {org.name} team",
                 "recipient": f" {recipient.split('.')[0].capitalize()}" if recipient else ""}[naming]
        who = f"{ato.first.capitalize()} {ato.last.capitalize()}"
        if spec.template_mimic:
            doc = f"{org.name} Agreement {int(self.rng.integers(100, 999))}"
            return f"Please DocuSign: {doc}", self.docusign_body(who, doc, url)
        if spec.lure == "shared_document":
            dept = self.pick(_DEPTS)
            doc = {"generic": "Document.pdf", "enterprise": f"{org.name} {dept} Policy.pdf",
                   "targeted": f"{dept} budget FY18 for {org.name}.xlsx"}[topic]
            service = f"{org.name} SharePoint" if topic != "generic" else self.pick(_SERVICES)
            subject = self.pick((f"{ato.first.capitalize()} shared a document with you", "Document for your review",
                                 f"New shared file: {doc}"))
            cta = self.pick(("View Document", "Open Shared File", "Review Now", "Access Document"))
            body = (f"<p>Hello{greet},</p><p>{who} has shared a document with you via {service}.</p>"
                    f"<p>{doc} ({int(self.rng.integers(80, 900))} KB)</p><p><a href=\"{url}\">{cta}</a></p>"
                    f"<p>{self.pick(('This link will expire in 48 hours.', 'Please review at your earliest convenience.'))}</p>"
                    f"<p>Thanks,<br>{ato.first.capitalize()}</p>")
        else:
            desk = f"{org.name} IT Help Desk" if topic != "generic" else "Mail Administrator"
            subject = self.pick(("Mailbox Storage Alert", "Action Required: Verify your account",
                                 "Password Expiration Notice"))
            issue = self.pick(("Your mailbox has exceeded the storage limit set by your administrator.",
                               "Your password expires in 24 hours.",
                               "We detected unusual sign-in activity on your account."))
            cta = self.pick(("Verify Account", "Keep Current Password", "Restore Access"))
            body = (f"<p>Dear{greet or ' user'},</p><p>{issue} You may not be able to send or receive new "
                    f"messages until you verify your account.</p><p><a href=\"{url}\">{cta}</a></p>"
                    f"<p>{desk}</p>")
        return subject, body

    def run_campaign(self, cid: str, spec: CampaignSpec, k: int, t: int, parent: dict | None = None,
                     ato: _Employee | None = None) -> dict:
        org = self.orgs[k]
        ato = ato or self.choose_ato(k, spec, t)
        ato.ato = True
        recips = self.recipients(spec, k, ato, t)
        if not recips:
            raise GenConfigError(f"campaign {cid} ended up with no recipients")
        path_tpl = parent["path_template"] if parent else self.pick(_PHISH_PATHS)
        domain = parent["phish_domain"] if parent and self.rng.random() < 0.5 and spec.rank_class != "content_host" else None
        url, domain = self.phish_url(spec, path_tpl, domain if parent else None)
        if parent:
            subject, body = parent["subject"], parent["body"].replace(parent["url"], url)
        else:
            subject, body = self.lure(spec, org, ato, url, recips[0])
        if spec.delivery == "blast":
            chunks = [recips]
        else:
            chunks, i = [], 0
            while i < len(recips):
                step = int(self.rng.integers(1, 11))
                chunks.append(recips[i:i + step])
                i += step
        drafts = []
        ts = t
        for chunk in chunks:
            to, bcc = (tuple(chunk), ()) if len(chunk) <= 10 else ((ato.address,), tuple(chunk))
            deleted = int(self.rng.integers(2, 26)) if spec.stealth else None
            d = self.emit(_Draft(k, ato.address, to, ts, subject, body,
                                 folder="Trash" if deleted is not None else "SentItems",
                                 conv=self.conv(), bcc=bcc, deleted_after=deleted, reported=spec.reported,
                                 label="phish", tailoring=spec.tailoring, campaign=cid))
            drafts.append(d)
            ts += int(self.rng.integers(60, 300))
        if spec.interaction:
            d = drafts[0]
            victim = sorted(d.recipients - {ato.address})[0]
            rt = d.ts + int(self.rng.integers(1800, 4 * 3600))
            self.emit(_Draft(k, victim, (ato.address,), rt, "RE: " + subject,
                             "<p>Hi, did you send this to me? Is this legitimate?</p>",
                             folder="SentItems" if victim.endswith("@" + org.domain) else "Inbox",
                             conv=d.conv, campaign=cid))
            deleted = int(self.rng.integers(2, 26)) if spec.stealth else None
            self.emit(_Draft(k, ato.address, (victim,), rt + int(self.rng.integers(300, 1800)), "RE: " + subject,
                             "<p>Yes I sent it to you, please review it today.</p>",
                             folder="Trash" if deleted else "SentItems", conv=d.conv, deleted_after=deleted,
                             label="phish", campaign=cid))
        return {
            "campaign": cid, "org_id": org.config.org_id, "account": ato.address, "subject": subject,
            "strategy": spec.strategy, "lure": spec.lure, "rank_class": spec.rank_class, "timing": spec.timing,
            "stealth": spec.stealth, "interaction": spec.interaction, "delivery": spec.delivery,
            "reported": spec.reported, "template_mimic": spec.template_mimic, "tailoring": list(spec.tailoring),
            "n_recipients": len(recips), "first_sent_at": t, "successor_of": parent["campaign"] if parent else None,
            "phish_domain": domain, "path_template": path_tpl, "url": url, "body": body,
            "_drafts": drafts, "_recipients": recips,
        }

    def successor(self, cid: str, parent: dict, parent_spec: CampaignSpec, k: int) -> tuple[dict, dict]:
        org = self.orgs[k]
        first = parent["_drafts"][0]
        inside = [a for a in parent["_recipients"] if a.endswith("@" + org.domain)]
        by_addr = {e.address: e for e in org.employees}
        cands = [by_addr[a] for a in inside if a in by_addr and not by_addr[a].ato and not by_addr[a].announcer]
        if not cands:
            raise GenConfigError(f"campaign {parent['campaign']} has no in-org victim to continue the chain")
        victim = self.pick(cands)
        t = first.ts + int(self.rng.integers(20 * 3600, 30 * 3600))
        if self.rng.random() < 0.5:
            rt = first.ts + int(self.rng.integers(600, 3 * 3600))
            self.emit(_Draft(k, victim.address, (parent["account"],), rt, "RE: " + parent["subject"],
                             "<p>Thanks, I will take a look now.</p>", conv=first.conv,
                             campaign=parent["campaign"]))
        strategy = "TargetedRecipient" if len(self.contacts(victim.address, t)) >= MIN_TARGETED_CONTACTS else "OrganizationWide"
        spec = replace(parent_spec, strategy=strategy, chain=0, n_recipients=1, interaction=False,
                       timing="work_hours", template_mimic=parent_spec.template_mimic,
                       reported=parent_spec.reported or self.rng.random() < self.cfg.report_fraction)
        rec = self.run_campaign(cid, spec, k, t, parent=parent, ato=victim)
        link = {"attacker": parent["account"], "victim": victim.address,
                "campaign_a": parent["campaign"], "campaign_b": cid}
        return rec, link

    def attacks(self):
        specs = list(self.cfg.campaigns) if self.cfg.campaigns is not None else self.default_campaigns()
        timed = sorted(((self.campaign_time(s), i, s) for i, s in enumerate(specs)), key=lambda x: (x[0], x[1]))
        self.campaigns, self.links = [], []
        self.phished: set[str] = set()
        taken: dict[int, int] = {}
        n = 0
        for t, _, spec in timed:
            try:
                k = self.org_for(spec, taken, t)
            except GenConfigError:
                if self.cfg.campaigns is not None or spec.timing != "quiescent":
                    raise
                # the drawn default campaign wanted an idle account and none is left
                spec = replace(spec, timing="work_hours")
                k = self.org_for(spec, taken, t)
            taken[k] = taken.get(k, 0) + 1
            cid = f"camp{n:02d}"
            n += 1
            rec = self.run_campaign(cid, spec, k, t)
            self.campaigns.append(rec)
            self.phished |= set(rec["_recipients"])
            parent = rec
            for _ in range(spec.chain):
                cid = f"camp{n:02d}"
                n += 1
                child, link = self.successor(cid, parent, spec, k)
                self.campaigns.append(child)
                self.phished |= set(child["_recipients"])
                self.links.append(link)
                parent = child

    # -- output ----------------------------------------------------------------

    def finish(self) -> GenResult:
        drafts = sorted((d for d in self.drafts if self.start <= d.ts < self.end), key=lambda d: (d.ts, d.seq))
        ids = {}
        emails, labels = [], {}
        for n, d in enumerate(drafts):
            eid = f"m{n:06d}"
            ids[d.seq] = eid
            deleted = from_ts(d.ts + d.deleted_after) if d.deleted_after is not None else None
            emails.append(Email(
                id=eid, org_id=self.orgs[d.org].config.org_id, sender=d.sender, to=tuple(d.to), cc=tuple(d.cc),
                bcc=tuple(d.bcc), subject=d.subject, sent_at=from_ts(d.ts), body_html=d.body, folder=d.folder,
                conversation_id=d.conv, deleted_at=deleted, user_reported_phish=d.reported,
                manual_label=d.label, tailoring=d.tailoring,
            ))
            labels[eid] = (d.label, d.campaign)
        campaigns = []
        for c in self.campaigns:
            rec = {k: v for k, v in c.items() if not k.startswith("_") and k not in ("body", "url")}
            rec["first_sent_at"] = from_ts(c["first_sent_at"]).strftime("%Y-%m-%dT%H:%M:%SZ")
            rec["email_ids"] = [ids[d.seq] for d in c["_drafts"] if d.seq in ids]
            campaigns.append(rec)
        orgs = {o.config.org_id: o.config for o in self.orgs}
        return GenResult(self.cfg, emails, orgs, DomainRanking(self.ranks), dict(self.shortlinks),
                         campaigns, list(self.links), labels)


def generate(config: GenConfig = GenConfig()) -> GenResult:
    """Build the whole corpus in memory; the seed fixes every byte of the output."""
    g = _Generator(config)
    g.build_world()
    g.benign_traffic()
    g.attacks()
    result = g.finish()
    log.info("generated %d emails, %d campaigns", len(result.emails), len(result.campaigns))
    return result


OUTPUT_FILES = ("corpus.jsonl", "orgs.jsonl", "ranking.csv", "keywords.txt", "shortlinks.tsv",
                "shorteners.txt", "content_hosts.txt", "freemail.txt", "manifest.jsonl", "gen_config.json")


def write_outputs(result: GenResult, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in OUTPUT_FILES}
    dump_corpus(result.emails, paths["corpus.jsonl"])
    dump_orgs(result.orgs, paths["orgs.jsonl"])
    result.ranking.dump(paths["ranking.csv"])
    with open(paths["keywords.txt"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(KeywordList.default().phrases) + "\n")
    with open(paths["shortlinks.tsv"], "w", encoding="utf-8") as fh:
        for short, final in sorted(result.shortlinks.items()):
            fh.write(f"{short}\t{final}\n")
    lists = SpecialDomainLists.default()
    for name, doms in (("shorteners.txt", lists.shortener_domains), ("content_hosts.txt", lists.content_hosting_domains),
                       ("freemail.txt", lists.freemail_domains)):
        with open(paths[name], "w", encoding="utf-8") as fh:
            fh.write("\n".join(sorted(doms)) + "\n")
    with open(paths["manifest.jsonl"], "w", encoding="utf-8") as fh:
        for rec in result.manifest_records():
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    with open(paths["gen_config.json"], "w", encoding="utf-8") as fh:
        json.dump(result.config.to_record(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def read_manifest(path) -> tuple[list[dict], list[dict], dict[str, tuple[str, str | None]]]:
    """(campaigns, success links, email labels) from a manifest file."""
    campaigns, links, labels = [], [], {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "campaign":
                campaigns.append(rec)
            elif kind == "success_link":
                links.append(rec)
            else:
                labels[rec["id"]] = (rec["label"], rec["campaign"])
    return campaigns, links, labels
