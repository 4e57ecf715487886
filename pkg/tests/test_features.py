import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ACME, DAY, at, index_of, link, mk
from latphish.corpus import historical_recipient_sets
from latphish.features import (FEATURE_NAMES, FeatureContext, FeatureExtractor, FeatureVector, KeywordList,
                               extract_features, has_phishy_keyword, num_recipients, recipient_likelihood)


def oracle_likelihood(email, emails):
    """Brute force: best Jaccard against employee-sent recipient sets of the prior 30 days."""
    best = 0.0
    mine = {a.lower() for a in (*email.to, *email.cc, *email.bcc)}
    for h in emails:
        if h.org_id != email.org_id or not h.sender.endswith("@acme.com"):
            continue
        if not (email.sent_ts - 30 * DAY <= h.sent_ts < email.sent_ts):
            continue
        theirs = {a.lower() for a in (*h.to, *h.cc, *h.bcc)}
        best = max(best, len(mine & theirs) / len(mine | theirs))
    return best


def test_num_recipients():
    assert num_recipients(mk("a@acme.com", ["a@x.com"], cc=["a@x.com"], bcc=["b@x.com"])) == 2
    assert num_recipients(mk("a@acme.com", ["a@x.com"], cc=["a@x.com"])) == 1
    assert num_recipients(mk("a@acme.com", bcc=[f"u{i}@x.com" for i in range(100)])) == 100


def test_recipient_likelihood_examples():
    prior = mk("alice@acme.com", ["b@acme.com", "c@acme.com"], t=at(1))
    same = mk("alice@acme.com", ["c@acme.com", "b@acme.com"], t=at(2))
    third = mk("alice@acme.com", ["a@acme.com", "b@acme.com"], t=at(2))
    idx = index_of(prior, same, third)
    assert recipient_likelihood(same, idx) == 1.0
    assert recipient_likelihood(prior, idx) == 0.0
    assert recipient_likelihood(third, idx) == pytest.approx(1 / 3)


def test_recipient_likelihood_ignores_self_and_future():
    later = mk("alice@acme.com", ["b@acme.com"], t=at(5))
    now = mk("alice@acme.com", ["b@acme.com"], t=at(4))
    simultaneous = mk("bob@acme.com", ["b@acme.com"], t=at(4))
    assert recipient_likelihood(now, index_of(later, now, simultaneous)) == 0.0


def _random_corpus(seed):
    rng = random.Random(seed)
    people = [f"u{i}@acme.com" for i in range(12)] + ["x@out.com", "y@out.com"]
    emails = []
    for _ in range(120):
        sender = rng.choice(people[:12] + ["eve@evil.com"])
        to = rng.sample(people, rng.randint(1, 4))
        emails.append(mk(sender, to, t=at(seconds=rng.randrange(0, 70 * DAY)), org_id="acme"))
    return emails


@pytest.mark.parametrize("seed", range(5))
def test_recipient_likelihood_matches_brute_force(seed):
    emails = _random_corpus(seed)
    idx = index_of(*emails)
    for e in emails:
        assert recipient_likelihood(e, idx) == pytest.approx(oracle_likelihood(e, emails), abs=0, rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_history_sets_are_strictly_past(seed):
    emails = _random_corpus(seed)
    idx = index_of(*emails)
    e = emails[seed % len(emails)]
    sets = historical_recipient_sets(ACME, e.sent_ts, idx)
    expected = [h for h in idx if h.sender.endswith("@acme.com") and e.sent_ts - 30 * DAY <= h.sent_ts < e.sent_ts]
    assert sorted(map(sorted, sets)) == sorted(sorted(h.recipients) for h in expected)


def test_keywords():
    kw = KeywordList(["click here", "view document"])
    assert has_phishy_keyword(mk("a@acme.com", "b@x.com", body="Please CLICK HERE to view"), kw)
    assert not has_phishy_keyword(mk("a@acme.com", "b@x.com", body=""), kw)
    assert not has_phishy_keyword(mk("a@acme.com", "b@x.com", body="view the document"), kw)
    assert has_phishy_keyword(mk("a@acme.com", "b@x.com", body="<b>view</b>\n   document"), kw)


def test_keyword_list_file(tmp_path):
    (tmp_path / "k.txt").write_text("# cta\n  Click Here \n\nsign in\n")
    kw = KeywordList.load(tmp_path / "k.txt")
    assert kw.phrases == ("click here", "sign in")
    with pytest.raises(ValueError):
        KeywordList([])


def test_default_keyword_list_size():
    kw = KeywordList.default()
    assert 120 <= len(kw) <= 200
    assert all(p == p.strip().lower() for p in kw.phrases)


def test_skip_benign_without_candidates(ranking, lists):
    e = mk("alice@acme.com", "b@acme.com", body="no links at all")
    assert extract_features(e, FeatureContext(index_of(e), ranking, lists)) is None


def test_extract_features_derived(ranking, lists):
    rng = random.Random(11)
    staff = [f"s{i}@acme.com" for i in range(250)]
    history = [mk(rng.choice(staff), rng.sample(staff, rng.randint(2, 220)), t=at(seconds=rng.randrange(0, 25 * DAY)))
               for _ in range(40)]
    recips = rng.sample(staff, 200)
    e = mk("s0@acme.com", bcc=recips, t=at(26), body="Please " + link("http://unlisted-zone.biz/a", "click here"))
    idx = index_of(*history, e)
    fv = extract_features(e, FeatureContext(idx, ranking, lists, KeywordList(["click here"])))
    r = oracle_likelihood(e, history)
    assert 0 < r < 1
    assert fv == FeatureVector(200, r, True, 10_000_000, 0)


def test_features_permutation_invariant(ranking, lists):
    body = link("http://unlisted-zone.biz/a", "go")
    hist = mk("alice@acme.com", ["a@acme.com", "b@acme.com"], t=at(0))
    e1 = mk("alice@acme.com", ["a@acme.com"], cc=["b@acme.com", "c@acme.com"], t=at(1), body=body, eid="p1")
    e2 = mk("alice@acme.com", ["c@acme.com", "b@acme.com"], bcc=["a@acme.com"], t=at(1), body=body, eid="p2")
    ctx = FeatureContext(index_of(hist, e1, e2), ranking, lists)
    assert extract_features(e1, ctx) == extract_features(e2, ctx)


def test_blast_clone_has_full_likelihood(ranking, lists):
    to = [f"s{i}@acme.com" for i in range(30)]
    body = link("http://news.partner.com/issue", "read")
    hist = mk("news@acme.com", bcc=to, t=at(0), body=body)
    e = mk("news@acme.com", bcc=to, t=at(7), body=body)
    fv = extract_features(e, FeatureContext(index_of(hist, e), ranking, lists))
    assert fv.recipient_likelihood == 1.0 and fv.local_url_rep == 1


def test_extractor_matrix(ranking, lists):
    a = mk("alice@acme.com", "b@acme.com", t=at(1), body=link("http://x-rare.biz/1", "open"))
    b = mk("alice@acme.com", "b@acme.com", t=at(2), body="plain")
    ext = FeatureExtractor(FeatureContext(index_of(a, b), ranking, lists))
    X, kept = ext.matrix([a, b])
    assert kept == [a] and X.shape == (1, len(FEATURE_NAMES))
    np.testing.assert_array_equal(X[0], ext(a).as_array())
    assert FeatureVector.from_record(ext(a).to_record()) == ext(a)
