"""URL extraction from email bodies and global/local URL reputation."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path
from urllib.parse import urlsplit

from .domains import host_matches, registered_domain_of_host

DEFAULT_RANK = 10_000_000
MAX_SHORTLINK_HOPS = 5

_BARE_URL = re.compile(r"https?://[^\s<>\"']+", re.IGNORECASE)
_TRAILING_PUNCT = ".,;:!?)]}>'\""
_SKIP_SCHEMES = ("mailto:", "tel:", "javascript:", "data:", "cid:", "file:", "ftp:")


class NoHostError(ValueError):
    """Raised for relative or hostless URLs; callers skip the URL."""


@dataclass(frozen=True)
class ExtractedUrl:
    href: str
    display_text: str
    registered_domain: str
    fqdn: str


def _host_of(url: str) -> str:
    url = url.strip()
    if not url:
        raise NoHostError("empty url")
    low = url.lower()
    if low.startswith(_SKIP_SCHEMES):
        raise NoHostError(f"unsupported scheme: {url!r}")
    if "://" not in url:
        if low.startswith("//"):
            url = "http:" + url
        elif re.match(r"^[a-z0-9-]+(\.[a-z0-9-]+)+(?::\d+)?(?:[/?#]|$)", low):
            url = "http://" + url
        else:
            raise NoHostError(f"no host in {url!r}")
    try:
        host = urlsplit(url).hostname
    except ValueError as exc:
        raise NoHostError(str(exc)) from exc
    if not host or "." not in host.strip("."):
        raise NoHostError(f"no host in {url!r}")
    return host.rstrip(".")


def registered_domain(url: str) -> str:
    """eTLD+1 of ``url``'s host; raises :class:`NoHostError` when there is none."""
    return registered_domain_of_host(_host_of(url))


def make_url(href: str, display_text: str | None = None) -> ExtractedUrl | None:
    """Build an :class:`ExtractedUrl`, or None when ``href`` has no host."""
    try:
        fqdn = _host_of(href)
    except NoHostError:
        return None
    return ExtractedUrl(
        href=href.strip(),
        display_text=href.strip() if display_text is None else display_text,
        registered_domain=registered_domain_of_host(fqdn),
        fqdn=fqdn,
    )


def _bare_urls(text: str):
    for m in _BARE_URL.finditer(text):
        yield m.group(0).rstrip(_TRAILING_PUNCT)


_BLOCK_TAGS = {"br", "p", "div", "li", "tr", "table", "h1", "h2", "h3", "h4", "h5", "h6", "hr", "blockquote", "pre"}


class _BodyParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.links: list[tuple[str, str]] = []
        self.text: list[str] = []
        self._anchor: tuple[str, list[str]] | None = None
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._skip += 1
            return
        if tag in _BLOCK_TAGS:
            self.text.append("\n")
        if tag == "a":
            self._close_anchor()
            href = dict(attrs).get("href") or ""
            self._anchor = (href, [])

    def handle_startendtag(self, tag, attrs):
        if tag in _BLOCK_TAGS:
            self.text.append("\n")

    def handle_endtag(self, tag):
        if tag in ("script", "style"):
            self._skip = max(0, self._skip - 1)
            return
        if tag == "a":
            self._close_anchor()
        elif tag in _BLOCK_TAGS:
            self.text.append("\n")

    def handle_data(self, data):
        if self._skip:
            return
        self.text.append(data)
        if self._anchor is not None:
            self._anchor[1].append(data)
        else:
            for u in _bare_urls(data):
                self.links.append((u, u))

    def _close_anchor(self):
        if self._anchor is not None:
            href, parts = self._anchor
            self._anchor = None
            display = " ".join("".join(parts).split())
            self.links.append((href, display))

    def close(self):
        super().close()
        self._close_anchor()


@lru_cache(maxsize=100_000)
def _parse_body(body_html: str) -> tuple[tuple[tuple[str, str], ...], str]:
    parser = _BodyParser()
    try:
        parser.feed(body_html)
        parser.close()
    except Exception:
        links = tuple((u, u) for u in _bare_urls(body_html))
        return links, re.sub(r"<[^>]*>", " ", body_html)
    return tuple(parser.links), "".join(parser.text)


def body_text(body_html: str) -> str:
    """Visible text of an HTML body, with block elements rendered as newlines."""
    return _parse_body(body_html)[1]


@lru_cache(maxsize=100_000)
def _extract_cached(body_html: str) -> tuple[ExtractedUrl, ...]:
    out = []
    for href, display in _parse_body(body_html)[0]:
        u = make_url(href, display)
        if u is not None:
            out.append(u)
    return tuple(out)


def extract_urls(body_html: str) -> list[ExtractedUrl]:
    """Anchors (href + visible text) and bare absolute URLs, in order of appearance.

    Anchors whose href has no host (mailto:, fragments, relative paths) are dropped.
    """
    return list(_extract_cached(body_html))


def normalize_link_text(s: str) -> str:
    """Lowercase, drop an http(s) scheme and one trailing slash."""
    s = s.strip().lower()
    for scheme in ("http://", "https://"):
        if s.startswith(scheme):
            s = s[len(scheme):]
            break
    if s.endswith("/"):
        s = s[:-1]
    return s


def filter_candidate_urls(urls, org) -> list[ExtractedUrl]:
    """Drop URLs on the org's verified domains and URLs whose display text is the URL."""
    verified = org.verified_domains
    return [
        u for u in urls
        if u.registered_domain not in verified
        and normalize_link_text(u.display_text) != normalize_link_text(u.href)
    ]


class DomainRanking:
    """Popularity ranks by registered domain; absent domains get ``default_rank``."""

    def __init__(self, ranks=None, default_rank=DEFAULT_RANK):
        self.ranks = dict(ranks or {})
        self.default_rank = default_rank

    def rank(self, domain: str) -> int:
        return self.ranks.get(domain.lower(), self.default_rank)

    def __len__(self):
        return len(self.ranks)

    @classmethod
    def load(cls, path) -> DomainRanking:
        ranks: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                rank_s, sep, domain = line.partition(",")
                if not sep or not domain.strip():
                    raise ValueError(f"{path}:{lineno}: expected 'rank,domain'")
                try:
                    rank = int(rank_s)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad rank {rank_s!r}") from None
                if not 1 <= rank <= 1_000_000:
                    raise ValueError(f"{path}:{lineno}: rank {rank} outside 1..1000000")
                ranks.setdefault(domain.strip().lower(), rank)
        return cls(ranks)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for domain, rank in sorted(self.ranks.items(), key=lambda kv: (kv[1], kv[0])):
                fh.write(f"{rank},{domain}\n")


def read_domain_list(path) -> frozenset[str]:
    """One domain per line; '#' starts a comment."""
    out = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip().lower()
            if line:
                out.add(line)
    return frozenset(out)


def _bundled(name: str) -> frozenset[str]:
    with resources.as_file(resources.files("latphish.data") / name) as p:
        return read_domain_list(p)


@dataclass(frozen=True)
class SpecialDomainLists:
    shortener_domains: frozenset[str]
    content_hosting_domains: frozenset[str]
    freemail_domains: frozenset[str]

    @classmethod
    def default(cls) -> SpecialDomainLists:
        return cls(_bundled("shorteners.txt"), _bundled("content_hosts.txt"), _bundled("freemail.txt"))

    @classmethod
    def load(cls, shorteners=None, content_hosts=None, freemail=None) -> SpecialDomainLists:
        d = cls.default()
        return cls(
            read_domain_list(shorteners) if shorteners else d.shortener_domains,
            read_domain_list(content_hosts) if content_hosts else d.content_hosting_domains,
            read_domain_list(freemail) if freemail else d.freemail_domains,
        )

    def is_shortener(self, url: ExtractedUrl) -> bool:
        return host_matches(url.fqdn, self.shortener_domains)

    def is_content_host(self, url: ExtractedUrl) -> bool:
        return host_matches(url.fqdn, self.content_hosting_domains)

    def is_freemail(self, domain: str) -> bool:
        return domain.lower() in self.freemail_domains


def link_key(url: str) -> str:
    """Lookup key for shortlink maps: scheme-less, host lowercased, no trailing slash."""
    s = url.strip()
    low = s.lower()
    for scheme in ("http://", "https://"):
        if low.startswith(scheme):
            s = s[len(scheme):]
            break
    host, slash, rest = s.partition("/")
    s = host.lower() + slash + rest
    return s[:-1] if s.endswith("/") else s


def load_shortlinks(path) -> dict[str, str]:
    """Tab-separated ``short_url<TAB>final_url`` lines."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            short, sep, final = line.partition("\t")
            if not sep or not final.strip():
                raise ValueError(f"{path}:{lineno}: expected 'short_url<TAB>final_url'")
            out[link_key(short)] = final.strip()
    return out


def resolve_shortlink(url: ExtractedUrl, resolver_map, lists: SpecialDomainLists,
                      max_hops: int = MAX_SHORTLINK_HOPS) -> ExtractedUrl | None:
    """Follow the offline map until a non-shortener URL; None when unresolved.

    Missing entries, cycles, hostless targets and chains longer than
    ``max_hops`` all count as unresolved.
    """
    seen = set()
    current = url
    for _ in range(max_hops):
        key = link_key(current.href)
        if key in seen:
            return None
        seen.add(key)
        target = resolver_map.get(key)
        if target is None:
            return None
        nxt = make_url(target, url.display_text)
        if nxt is None:
            return None
        if not lists.is_shortener(nxt):
            return nxt
        current = nxt
    return None


def url_rank(url: ExtractedUrl, ranking: DomainRanking, lists: SpecialDomainLists, resolver_map) -> int:
    """Global rank of one candidate URL, applying shortener and content-host rules."""
    if lists.is_shortener(url):
        resolved = resolve_shortlink(url, resolver_map, lists)
        if resolved is None:
            return ranking.default_rank
        url = resolved
    if lists.is_content_host(url):
        return ranking.default_rank
    return ranking.rank(url.registered_domain)


def candidate_urls(email, org) -> list[ExtractedUrl]:
    return filter_candidate_urls(_extract_cached(email.body_html), org)


def global_url_reputation(email, org, ranking, lists, resolver_map) -> int | None:
    """Worst (highest) rank among candidate URLs; None when there are no candidates."""
    cands = candidate_urls(email, org)
    if not cands:
        return None
    return max(url_rank(u, ranking, lists, resolver_map) for u in cands)


def local_url_reputation(email, index, audit=None) -> int | None:
    """Fewest prior-30-day days any candidate FQDN appeared in the org's employee mail."""
    org = index.orgs[email.org_id]
    cands = candidate_urls(email, org)
    if not cands:
        return None
    if audit is not None:
        seen = [index.fqdn_window(email.org_id, u.fqdn, email.sent_ts)[0] for u in cands]
        latest = max((int(t[-1]) for t in seen if t.size), default=None)
        audit.history_read(email, latest)
    return min(index.fqdn_day_count(email.org_id, u.fqdn, email.sent_ts) for u in cands)
