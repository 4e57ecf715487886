import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import at, index_of, link, mk
from latphish.characterize import (ACCOUNT_AGNOSTIC, INCONCLUSIVE, LATERAL_ORGANIZATION, ORGANIZATION_WIDE,
                                   STRATEGIES, TARGETED_RECIPIENT, AtoProfile, SuccessLink, attribute_success,
                                   build_profiles, classify_targeting, conversion_stats, day_of_week_histogram,
                                   detect_interaction, detect_stealth, format_word_table, hour_of_day_percentile,
                                   midrank_percentile, tailoring_table, url_path_structure_match, word_frequency)
from latphish.pipeline import Incident

A, B = "alice@acme.com", "bob@acme.com"


# -- success attribution -------------------------------------------------------------------


def scenario(*, same_subject=False, same_host=False, reply=None, gap_days=1.0, same_path=False, same_body=False,
             b_received=True):
    """P_A from Alice at day 0, optional reply by Bob in that thread at day 0.5, P_B from Bob after ``gap_days``."""
    path_a = "/z/office365/index.html"
    path_b = path_a if same_path else "/secure/login.php"
    host_b = "evil-a.biz" if same_host else "evil-b.biz"
    to_a = [B, "carol@acme.com"] if b_received else ["carol@acme.com"]
    p_a = mk(A, to_a, t=at(0), subject="Document shared with you", conversation_id="thread-a", eid="pa",
             body="Please review the shared file. " + link(f"http://evil-a.biz{path_a}", "Open"))
    body_b = p_a.body_html if same_body else "Your mailbox is over quota, verify now. "
    p_b = mk(B, ["dave@acme.com"], t=at(gap_days), eid="pb",
             subject="Document shared with you" if same_subject else "Mailbox quota warning",
             body=body_b.replace("http://evil-a.biz", f"http://{host_b}")
             + ("" if same_body else link(f"http://{host_b}{path_b}", "Verify")))
    emails = [p_a, p_b]
    if reply:
        text = {"fell": "Thanks, opening it now", "suspicious": "Is this spam? Did you send this?"}[reply]
        emails.append(mk(B, [A], t=at(0.5), subject="RE: Document shared with you", conversation_id="thread-a",
                         eid="rb", body=text))
    idx = index_of(*emails)
    profiles = build_profiles(idx, [p_a, p_b])
    return attribute_success(profiles[A], profiles[B], idx)


# Verdicts written out by hand from the four criteria for each scenario.
SCENARIOS = [
    ("3a+4a", dict(same_subject=True), ("3a",), ("4a",)),
    ("3a+4b", dict(same_subject=True, gap_days=10, same_path=True), ("3a",), ("4b",)),
    ("3a+4ab", dict(same_subject=True, same_path=True), ("3a",), ("4a", "4b")),
    ("3b+4a", dict(reply="fell"), ("3b",), ("4a",)),
    ("3b+4b", dict(reply="fell", gap_days=10, same_path=True), ("3b",), ("4b",)),
    ("3b+4ab identical message", dict(reply="fell", same_body=True), ("3b",), ("4a", "4b")),
    ("3ab+4a", dict(same_subject=True, reply="fell"), ("3a", "3b"), ("4a",)),
    ("3ab fqdn+4b", dict(same_host=True, reply="fell", gap_days=10, same_path=True), ("3a", "3b"), ("4b",)),
    ("3ab+4ab", dict(same_subject=True, reply="fell", same_path=True), ("3a", "3b"), ("4a", "4b")),
    ("not a recipient", dict(same_subject=True, b_received=False), None, None),
    ("suspicious reply only", dict(reply="suspicious"), None, None),
    ("late and unrelated", dict(same_subject=True, gap_days=10), None, None),
]


@pytest.mark.parametrize("name,kw,content,timing", SCENARIOS, ids=[s[0] for s in SCENARIOS])
def test_attribute_success_scenarios(name, kw, content, timing):
    got = scenario(**kw)
    if content is None:
        assert got is None
    else:
        assert (got.content, got.timing) == (content, timing)
        assert (got.attacker, got.victim, got.phish_a, got.phish_b) == (A, B, "pa", "pb")
        assert (got.reply_b == "rb") == ("3b" in content)


def test_success_requires_later_phish():
    p_b = mk(B, ["dave@acme.com"], t=at(0), subject="Same", eid="pb")
    p_a = mk(A, [B], t=at(1), subject="Same", eid="pa")
    idx = index_of(p_a, p_b)
    prof = build_profiles(idx, [p_a, p_b])
    assert attribute_success(prof[A], prof[B], idx) is None


def test_success_needs_same_org():
    p_a = mk(A, ["x@globex.org"], t=at(0), subject="Same", eid="pa")
    p_b = mk("x@globex.org", ["y@globex.org"], t=at(1), subject="Same", eid="pb")
    idx = index_of(p_a, p_b)
    prof = build_profiles(idx, [p_a, p_b])
    assert attribute_success(prof[A], prof["x@globex.org"], idx) is None


def test_url_path_structure():
    assert url_path_structure_match("http://X.com/z/office365/index.html", "http://Y.com/z/office365/index.html")
    assert not url_path_structure_match("http://x.com/a/b", "http://y.com/a/b/c")
    assert url_path_structure_match("http://x.com/doc/AB12", "http://y.com/doc/CD34")
    assert not url_path_structure_match("http://x.com/doc/AB12", "http://y.com/doc/CD345")
    assert not url_path_structure_match("http://x.com/doc/login", "http://y.com/doc/logon")
    assert not url_path_structure_match("http://x.com/", "http://y.com/")


# -- targeting -----------------------------------------------------------------------------


def profile(recipients, contacts=(), account=A, org="acme"):
    return AtoProfile(account, org, ["p"], frozenset(recipients), frozenset(contacts), int(at(20).timestamp()))


def roster_index(n=200):
    staff = [f"s{i}@acme.com" for i in range(n)]
    return index_of(*(mk(A, staff[i:i + 50], t=at(20 + i / 100)) for i in range(0, n, 50)))


def test_targeting_account_agnostic():
    # 200 recipients over 15 external domains, 4 of them recent contacts (2% overlap), none in-org
    recips = [f"u{i}@ext{i % 15}.com" for i in range(200)]
    assert classify_targeting(profile(recips, recips[:4] + ["s1@acme.com"]), roster_index()) == ACCOUNT_AGNOSTIC


def test_targeting_freemail_only_is_agnostic():
    recips = [f"u{i}@gmail.com" for i in range(30)] + [f"v{i}@yahoo.com" for i in range(30)]
    assert classify_targeting(profile(recips), roster_index()) == ACCOUNT_AGNOSTIC


def test_targeting_organization_wide():
    # 98 of 100 in-org, 5 of them recent contacts; roster 200 so coverage 49% and only the >95% rule fires
    recips = [f"s{i}@acme.com" for i in range(98)] + ["x@ext1.com", "y@ext2.com"]
    contacts = [f"s{i}@acme.com" for i in range(5)] + [f"s{i}@acme.com" for i in range(150, 195)]
    assert classify_targeting(profile(recips, contacts), roster_index()) == ORGANIZATION_WIDE


def test_targeting_organization_wide_by_roster():
    # 60% in-org reaching 120 of 199 roster members, overlap 0
    recips = [f"s{i}@acme.com" for i in range(1, 121)] + [f"u{i}@ext{i % 3}.com" for i in range(80)]
    assert classify_targeting(profile(recips), roster_index()) == ORGANIZATION_WIDE


def test_targeting_targeted_recipient():
    # 4 of 10 recent contacts phished; every recipient is a contact so the org-wide overlap cap fails
    contacts = [f"s{i}@acme.com" for i in range(10)]
    assert classify_targeting(profile(contacts[:4], contacts), roster_index()) == TARGETED_RECIPIENT


def test_targeting_lateral_organization():
    # all recipients at another finance org, one domain, so the account-agnostic rule misses
    recips = [f"u{i}@globex.org" for i in range(40)]
    assert classify_targeting(profile(recips), roster_index()) == LATERAL_ORGANIZATION


def test_targeting_inconclusive():
    # 60% in-org, 20% overlap, 10% of contacts reached
    recips = [f"s{i}@acme.com" for i in range(6)] + [f"u{i}@ext.com" for i in range(4)]
    contacts = [f"s{i}@acme.com" for i in range(2)] + [f"s{i}@acme.com" for i in range(100, 118)]
    assert classify_targeting(profile(recips, contacts), roster_index()) == INCONCLUSIVE


def test_targeting_needs_recipients():
    with pytest.raises(ValueError):
        classify_targeting(profile([]), roster_index())


@settings(max_examples=80, deadline=None)
@given(st.sets(st.sampled_from([f"s{i}@acme.com" for i in range(30)] + [f"u{i}@ext{i % 12}.com" for i in range(40)]
                               + ["a@gmail.com", "b@globex.org", "c@initech.net"]), min_size=1),
       st.sets(st.sampled_from([f"s{i}@acme.com" for i in range(30)] + ["u1@ext1.com", "u2@ext2.com"])))
def test_targeting_total_and_order_free(recips, contacts):
    idx = roster_index()
    got = classify_targeting(profile(recips, contacts), idx)
    assert got in STRATEGIES
    assert classify_targeting(profile(sorted(recips, reverse=True), sorted(contacts)), idx) == got


# -- conversion ------------------------------------------------------------------------------


def test_conversion_stats():
    p1 = profile([f"s{i}@acme.com" for i in range(542)])
    p2 = profile([f"s{i}@acme.com" for i in range(52)] + ["x@ext.com"], account="mal@acme.com")
    p3 = profile([f"s{i}@acme.com" for i in range(9)], account="idle@acme.com")
    profiles = {p.account: p for p in (p1, p2, p3)}
    links = [SuccessLink(A, "s1@acme.com", "a", "b", None, ("3a",), ("4a",)),
             SuccessLink("mal@acme.com", "s1@acme.com", "c", "d", None, ("3a",), ("4a",)),
             SuccessLink("mal@acme.com", "s2@acme.com", "c", "e", None, ("3a",), ("4a",))]
    out = conversion_stats(links, profiles, roster_index())
    assert out["per_ato"] == {A: 542, "mal@acme.com": 26}
    assert out["median"] == 284
    assert conversion_stats([], profiles, roster_index())["median"] is None


# -- timing ----------------------------------------------------------------------------------


def incident_at(t, sender=A):
    return Incident(sender, "s", ["p"], t)


def test_hour_percentile_examples():
    hist = [mk(A, "x@acme.com", t=at(d, hours=14)) for d in range(1, 6)]
    idx = index_of(*hist)
    assert hour_of_day_percentile(incident_at(at(10, hours=3)), idx) == 0.0
    assert hour_of_day_percentile(incident_at(at(10, hours=22)), idx) == 100.0
    assert hour_of_day_percentile(incident_at(at(10, hours=14)), idx) == 50.0
    assert hour_of_day_percentile(incident_at(at(50, hours=14)), idx) is None
    assert hour_of_day_percentile(incident_at(at(10), sender="new@acme.com"), idx) is None


def test_midrank_percentile_mixed():
    assert midrank_percentile([8, 9, 9, 10], 9) == 50.0
    assert midrank_percentile([8, 9, 10, 11], 10) == 62.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 23), min_size=1, max_size=40), st.integers(0, 23))
def test_midrank_percentile_bounds(history, hour):
    p = midrank_percentile(history, hour)
    assert 0.0 <= p <= 100.0


def test_same_distribution_percentiles_near_uniform():
    rng = np.random.default_rng(7)
    weights = np.array([1] * 7 + [4, 8, 10, 10, 9, 7, 9, 10, 9, 6, 3] + [2] * 6, dtype=float)
    weights /= weights.sum()
    samples = []
    for _ in range(500):
        hist = rng.choice(24, size=int(rng.integers(20, 200)), p=weights)
        samples.append(midrank_percentile(hist.tolist(), int(rng.choice(24, p=weights))) / 100)
    assert stats.kstest(samples, "uniform").statistic < 0.15


def test_day_of_week_histogram():
    monday = at(6)  # 2018-04-16
    assert monday.weekday() == 0
    assert day_of_week_histogram([incident_at(monday)] * 3) == [3, 0, 0, 0, 0, 0, 0]
    assert day_of_week_histogram([]) == [0] * 7


# -- interaction and stealth -------------------------------------------------------------------


def _thread(*, reply=True, follow=True, deleted_after=None):
    trash = {} if deleted_after is None else {"folder": "Trash", "deleted_at": at(1, seconds=deleted_after)}
    emails = [mk(A, [B], t=at(1), conversation_id="t1", eid="p", body="please sign", **trash)]
    if reply:
        emails.append(mk(B, [A], t=at(1, hours=1), conversation_id="t1", eid="r", body="Did you send this?"))
    if follow:
        emails.append(mk(A, [B], t=at(1, hours=2), conversation_id="t1", eid="f", body="Yes I sent it to you"))
    idx = index_of(*emails)
    return build_profiles(idx, [idx.get("p")])[A], idx


def test_detect_interaction():
    assert detect_interaction(*_thread())
    assert not detect_interaction(*_thread(reply=False, follow=False))
    assert not detect_interaction(*_thread(follow=False))
    # a message from the account before any reply is not a follow-up
    assert not detect_interaction(*_thread(reply=False))


def test_detect_stealth():
    assert detect_stealth(*_thread(deleted_after=10))
    assert not detect_stealth(*_thread(deleted_after=300))
    assert not detect_stealth(*_thread())


def test_stealth_on_trashed_reply():
    emails = [mk(A, [B], t=at(1), conversation_id="t1", eid="p"),
              mk(B, [A], t=at(1, hours=1), conversation_id="t1", eid="r", folder="Trash",
                 deleted_at=at(1, hours=1, seconds=5))]
    idx = index_of(*emails)
    assert detect_stealth(build_profiles(idx, [idx.get("p")])[A], idx)


# -- content -----------------------------------------------------------------------------------


def test_word_frequency_counts_incidents():
    e1 = mk(A, [B], eid="w1", body="Open the document document document document document. Zxqv.")
    e2 = mk(A, [B], eid="w2", body="Your document is ready")
    idx = index_of(e1, e2)
    incs = [Incident(A, "a", ["w1"], e1.sent_at), Incident(A, "b", ["w2"], e2.sent_at)]
    rows = word_frequency(incs, frozenset({"document", "open", "ready", "the", "your", "is"}), idx)
    assert dict(rows)["document"] == 2 and dict(rows)["open"] == 1
    assert "zxqv" not in dict(rows)
    assert format_word_table(rows, 1) == "document & 2"


def test_tailoring_table():
    labeled = [mk(A, [B], eid=f"g{i}", tailoring=("generic", "none")) for i in range(90)]
    targeted = mk(A, [B], eid="t0", tailoring=("targeted", "org"))
    plain = mk(A, [B], eid="u0")
    idx = index_of(*labeled, targeted, plain)
    incs = [Incident(A, f"s{i}", [e.id], e.sent_at) for i, e in enumerate([*labeled, targeted, plain])]
    table = tailoring_table(incs, idx)
    assert table.counts["none"]["generic"] == 90 and table.counts["org"]["targeted"] == 1
    assert table.unlabeled == 1
    empty = tailoring_table([], idx)
    assert empty.unlabeled == 0 and all(v == 0 for row in empty.counts.values() for v in row.values())
