"""Body-text normalization, 3-gram Jaccard similarity, and the fuzzy-phish and template detectors."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels, urlrep
from .domains import domain_of_address

SIMILARITY_THRESHOLD = 0.5
RARE_RANK_THRESHOLD = 100_000
KNOWN_PHISH_DELAY = 24 * 3600
TEMPLATE_MIN_EMAILS_PER_ORG = 50
TEMPLATE_MIN_ORG_FRACTION = 0.10

DEFAULT_SIGNOFF_CUES = ("regards", "thanks", "best", "sent from")
SIGNOFF_MAX_TOKENS = 4

_APOSTROPHES = re.compile(r"['’]")
_PUNCT = re.compile(r"[^\w\s]|_")


def _tokens(text: str) -> list[str]:
    return _PUNCT.sub(" ", _APOSTROPHES.sub("", text.lower())).split()


def _is_signoff(tokens, cues) -> bool:
    if not tokens or len(tokens) > SIGNOFF_MAX_TOKENS:
        return False
    joined = " " + " ".join(tokens) + " "
    return any(f" {cue} " in joined for cue in cues)


def strip_signature(text: str, cues=DEFAULT_SIGNOFF_CUES) -> str:
    """Drop everything from the last short sign-off line ("Regards," ...) onward."""
    lines = text.splitlines()
    cut = None
    for i, line in enumerate(lines):
        if _is_signoff(_tokens(line), cues):
            cut = i
    return "\n".join(lines if cut is None else lines[:cut])


@lru_cache(maxsize=100_000)
def _normalize_cached(body_html: str, cues: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(_tokens(strip_signature(urlrep.body_text(body_html), cues)))


def normalize_text(body_html: str, cues=DEFAULT_SIGNOFF_CUES) -> list[str]:
    """HTML to lowercase, punctuation-free tokens with the sign-off block removed."""
    return list(_normalize_cached(body_html, tuple(cues)))


def trigrams(tokens) -> frozenset[tuple[str, ...]]:
    tokens = tuple(tokens)
    if not tokens:
        return frozenset()
    if len(tokens) < 3:
        return frozenset([tokens])
    return frozenset(tokens[i:i + 3] for i in range(len(tokens) - 2))


@lru_cache(maxsize=100_000)
def body_trigrams(body_html: str) -> frozenset[tuple[str, ...]]:
    return trigrams(_normalize_cached(body_html, DEFAULT_SIGNOFF_CUES))


def jaccard(a, b) -> float:
    """|a & b| / |a | b|, and 0.0 when both are empty."""
    a, b = set(a), set(b)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def fuzzy_phish_score(email, known_phish) -> float:
    """Highest trigram Jaccard between the email and any known phish (0.0 if none)."""
    mine = body_trigrams(email.body_html)
    return max((jaccard(mine, body_trigrams(k.body_html)) for k in known_phish), default=0.0)


class _Vocab:
    def __init__(self):
        self.ids: dict[tuple[str, ...], int] = {}

    def encode(self, grams, grow=True) -> np.ndarray:
        out, unknown = [], -1
        for g in grams:
            i = self.ids.get(g)
            if i is None:
                if grow:
                    i = self.ids[g] = len(self.ids)
                else:
                    i = unknown
                    unknown -= 1
            out.append(i)
        return np.unique(np.asarray(out, dtype=np.int64))


class SimilarityIndex:
    """Trigram sets of reference emails, queried with the Jaccard kernel.

    References are kept in ``sent_at`` order so a query can be limited to
    references sent at or before a cutoff.
    """

    def __init__(self, emails=(), trigram_sets=None):
        emails = list(emails)
        if trigram_sets is None:
            trigram_sets = [body_trigrams(e.body_html) for e in emails]
        order = sorted(range(len(emails)), key=lambda i: (getattr(emails[i], "sent_ts", 0), str(getattr(emails[i], "id", i))))
        self.emails = [emails[i] for i in order]
        self.ts = np.array([getattr(e, "sent_ts", 0) for e in self.emails], dtype=np.int64)
        self._vocab = _Vocab()
        rows = [self._vocab.encode(trigram_sets[i]) for i in order]
        self.indptr, self.indices = kernels.csr_from_sets(rows)

    def __len__(self):
        return len(self.emails)

    def max_similarity(self, grams, cutoff_ts=None) -> float:
        hi = len(self.emails) if cutoff_ts is None else int(np.searchsorted(self.ts, cutoff_ts, side="right"))
        if hi == 0:
            return 0.0
        return kernels.max_jaccard(self._vocab.encode(grams, grow=False), self.indptr, self.indices, 0, hi)


def fuzzy_detect(email, known_phish, org, ranking, lists, resolver_map=None, score=None) -> bool:
    """Clone of a known phish (>= 0.5 similarity) carrying a URL ranked outside the top 100k.

    ``known_phish`` may be a list of emails or a :class:`SimilarityIndex`;
    the caller is responsible for the 24-hour cutoff when passing a list.
    """
    rep = urlrep.global_url_reputation(email, org, ranking, lists, resolver_map or {})
    if rep is None or rep <= RARE_RANK_THRESHOLD:
        return False
    if score is None:
        if isinstance(known_phish, SimilarityIndex):
            score = known_phish.max_similarity(body_trigrams(email.body_html), email.sent_ts - KNOWN_PHISH_DELAY)
        else:
            score = fuzzy_phish_score(email, known_phish)
    return score >= SIMILARITY_THRESHOLD


@dataclass(frozen=True)
class Template:
    sender_domain: str
    domain_group: tuple[str, ...]
    representative_email_id: str
    tokens: tuple[str, ...]

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return self.sender_domain, self.domain_group

    @property
    def trigrams(self) -> frozenset[tuple[str, ...]]:
        return trigrams(self.tokens)

    def to_record(self) -> dict:
        return {
            "sender_domain": self.sender_domain,
            "domain_group": list(self.domain_group),
            "representative_email_id": self.representative_email_id,
            "tokens": list(self.tokens),
        }

    @classmethod
    def from_record(cls, rec) -> Template:
        return cls(rec["sender_domain"], tuple(rec["domain_group"]), rec["representative_email_id"], tuple(rec["tokens"]))


def domain_group(email) -> tuple[str, ...]:
    return tuple(sorted({u.registered_domain for u in urlrep.extract_urls(email.body_html)}))


def template_key(email) -> tuple[str, tuple[str, ...]]:
    return domain_of_address(email.sender), domain_group(email)


def medoid(emails) -> tuple[object, np.ndarray]:
    """Email with the highest summed trigram Jaccard to the rest; ties go to the smallest id."""
    emails = sorted(emails, key=lambda e: e.id)
    vocab = _Vocab()
    indptr, indices = kernels.csr_from_sets([vocab.encode(body_trigrams(e.body_html)) for e in emails])
    sums = kernels.jaccard_row_sums(indptr, indices)
    best = sums.max()
    pick = int(np.flatnonzero(sums >= best - 1e-9)[0])
    return emails[pick], sums


def mine_templates(month_emails, ranking, lists) -> list[Template]:
    """Popular (sender domain, domain group) classes of one month and their medoid emails.

    A class qualifies when the sender domain and all its URL domains rank in
    the top 100k, the sender is not a freemail provider, and at least 10% of
    the organizations present each received 50+ emails of the class.
    """
    month_emails = list(month_emails)
    orgs_present = {e.org_id for e in month_emails}
    if not orgs_present:
        return []
    groups: dict[tuple, list] = defaultdict(list)
    for e in month_emails:
        sender_dom, group = template_key(e)
        if lists.is_freemail(sender_dom) or ranking.rank(sender_dom) > RARE_RANK_THRESHOLD:
            continue
        if any(ranking.rank(d) > RARE_RANK_THRESHOLD for d in group):
            continue
        groups[(sender_dom, group)].append(e)
    out = []
    for key in sorted(groups):
        members = groups[key]
        per_org: dict[str, int] = defaultdict(int)
        for e in members:
            per_org[e.org_id] += 1
        qualifying = sum(1 for c in per_org.values() if c >= TEMPLATE_MIN_EMAILS_PER_ORG)
        if qualifying == 0 or qualifying < TEMPLATE_MIN_ORG_FRACTION * len(orgs_present) - 1e-12:
            continue
        rep, _ = medoid(members)
        out.append(Template(key[0], key[1], rep.id, _normalize_cached(rep.body_html, DEFAULT_SIGNOFF_CUES)))
    return out


def template_similarity(email, templates) -> float:
    if isinstance(templates, SimilarityIndex):
        return templates.max_similarity(body_trigrams(email.body_html))
    mine = body_trigrams(email.body_html)
    return max((jaccard(mine, t.trigrams) for t in templates), default=0.0)


def template_index(templates) -> SimilarityIndex:
    templates = list(templates)
    return SimilarityIndex(templates, [t.trigrams for t in templates])


def template_detect(email, templates, org, ranking, lists, resolver_map=None, score=None) -> bool:
    """>= 0.5 similar to a template and carrying a URL ranked outside the top 100k."""
    rep = urlrep.global_url_reputation(email, org, ranking, lists, resolver_map or {})
    if rep is None or rep <= RARE_RANK_THRESHOLD:
        return False
    if score is None:
        score = template_similarity(email, templates)
    return score >= SIMILARITY_THRESHOLD


def save_templates(templates, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in templates:
            fh.write(json.dumps(t.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n")


def load_templates(path) -> list[Template]:
    with open(path, encoding="utf-8") as fh:
        return [Template.from_record(json.loads(ln)) for ln in fh if ln.strip()]
