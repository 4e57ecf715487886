"""The five-element detector feature vector."""

from __future__ import annotations

import re
from dataclasses import astuple, dataclass, field
from importlib import resources

import numpy as np

from . import kernels, urlrep
from .corpus import CorpusIndex, Email

FEATURE_NAMES = ("num_recipients", "recipient_likelihood", "phishy_keyword", "global_url_rep", "local_url_rep")


@dataclass(frozen=True)
class FeatureVector:
    num_recipients: int
    recipient_likelihood: float
    phishy_keyword: bool
    global_url_rep: int
    local_url_rep: int

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def to_record(self) -> dict:
        return {
            "num_recipients": self.num_recipients,
            "recipient_likelihood": self.recipient_likelihood,
            "phishy_keyword": self.phishy_keyword,
            "global_url_rep": self.global_url_rep,
            "local_url_rep": self.local_url_rep,
        }

    @classmethod
    def from_record(cls, rec) -> FeatureVector:
        return cls(int(rec["num_recipients"]), float(rec["recipient_likelihood"]),
                   bool(rec["phishy_keyword"]), int(rec["global_url_rep"]), int(rec["local_url_rep"]))


class KeywordList:
    """Ordered lowercase phrases matched as substrings of normalized body text."""

    def __init__(self, phrases):
        cleaned = []
        for p in phrases:
            p = " ".join(p.strip().lower().split())
            if p and p not in cleaned:
                cleaned.append(p)
        if not cleaned:
            raise ValueError("keyword list is empty")
        self.phrases = tuple(cleaned)
        self._pattern = re.compile("|".join(re.escape(p) for p in sorted(cleaned, key=len, reverse=True)))

    def __len__(self):
        return len(self.phrases)

    def search(self, text: str) -> bool:
        return self._pattern.search(text) is not None

    @classmethod
    def load(cls, path) -> KeywordList:
        with open(path, encoding="utf-8") as fh:
            return cls(line.split("#", 1)[0] for line in fh)

    @classmethod
    def default(cls) -> KeywordList:
        with resources.as_file(resources.files("latphish.data") / "keywords.txt") as p:
            return cls.load(p)


def num_recipients(email: Email) -> int:
    return len(email.recipients)


def normalized_body_text(body_html: str) -> str:
    """HTML stripped, lowercased, whitespace collapsed."""
    return " ".join(urlrep.body_text(body_html).lower().split())


def has_phishy_keyword(email: Email, keywords: KeywordList) -> bool:
    return keywords.search(normalized_body_text(email.body_html))


def recipient_likelihood(email: Email, index: CorpusIndex, audit=None) -> float:
    """Max Jaccard between the email's recipients and any org employee-sent set of the prior 30 days."""
    ts, indptr, indices = index.recipient_csr(email.org_id)
    lo, hi = index.recipient_window(email.org_id, email.sent_ts)
    if audit is not None:
        audit.history_read(email, int(ts[hi - 1]) if hi > lo else None)
    if hi <= lo:
        return 0.0
    return kernels.max_jaccard(index.query_ids(email.recipients), indptr, indices, lo, hi)


@dataclass
class FeatureContext:
    index: CorpusIndex
    ranking: urlrep.DomainRanking
    lists: urlrep.SpecialDomainLists = field(default_factory=urlrep.SpecialDomainLists.default)
    keywords: KeywordList = field(default_factory=KeywordList.default)
    resolver_map: dict = field(default_factory=dict)


def extract_features(email: Email, context: FeatureContext, audit=None) -> FeatureVector | None:
    """Feature vector, or None (skip as benign) when the email has no candidate URL."""
    index = context.index
    org = index.orgs[email.org_id]
    global_rep = urlrep.global_url_reputation(email, org, context.ranking, context.lists, context.resolver_map)
    if global_rep is None:
        return None
    local_rep = urlrep.local_url_reputation(email, index, audit)
    return FeatureVector(
        num_recipients=num_recipients(email),
        recipient_likelihood=recipient_likelihood(email, index, audit),
        phishy_keyword=has_phishy_keyword(email, context.keywords),
        global_url_rep=int(global_rep),
        local_url_rep=int(local_rep or 0),
    )


class FeatureExtractor:
    """Memoizing wrapper; features of an email depend only on its own past."""

    def __init__(self, context: FeatureContext, audit=None):
        self.context = context
        self.audit = audit
        self._cache: dict[str, FeatureVector | None] = {}

    def __call__(self, email: Email) -> FeatureVector | None:
        try:
            return self._cache[email.id]
        except KeyError:
            fv = self._cache[email.id] = extract_features(email, self.context, self.audit)
            return fv

    def matrix(self, emails) -> tuple[np.ndarray, list[Email]]:
        """Stack feature arrays for the emails that have candidate URLs."""
        rows, kept = [], []
        for e in emails:
            fv = self(e)
            if fv is not None:
                rows.append(fv.as_array())
                kept.append(e)
        X = np.vstack(rows) if rows else np.zeros((0, len(FEATURE_NAMES)))
        return X, kept
