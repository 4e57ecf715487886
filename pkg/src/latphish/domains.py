"""Registered-domain (eTLD+1) lookup and host-suffix matching."""

from functools import lru_cache

try:
    from publicsuffixlist import PublicSuffixList
except ImportError:  # pragma: no cover - exercised only when the package is missing
    PublicSuffixList = None

_psl = PublicSuffixList(only_icann=True) if PublicSuffixList is not None else None


def has_suffix_list():
    return _psl is not None


@lru_cache(maxsize=200_000)
def registered_domain_of_host(host):
    """eTLD+1 of a hostname, lowercased.

    Uses the bundled public-suffix snapshot; without it, falls back to the last
    two labels. Hosts that are themselves public suffixes (or single labels)
    map to themselves.
    """
    host = host.strip().lower().rstrip(".")
    if not host:
        raise ValueError("empty host")
    if _psl is not None:
        reg = _psl.privatesuffix(host)
        return reg if reg else host
    labels = host.split(".")
    return ".".join(labels[-2:])


def domain_of_address(address):
    """Registered domain of an email address."""
    _, _, host = address.rpartition("@")
    return registered_domain_of_host(host)


def host_matches(fqdn, entries):
    """True iff ``fqdn`` equals an entry or is a subdomain of one."""
    fqdn = fqdn.lower()
    if fqdn in entries:
        return True
    parts = fqdn.split(".")
    for i in range(1, len(parts) - 1):
        if ".".join(parts[i:]) in entries:
            return True
    return False
