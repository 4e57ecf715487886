import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ACME, DAY, ORGS, T0, at, index_of, mk
from latphish import corpus
from latphish.corpus import (CorpusError, DuplicateIdError, OrgConfig, employee_roster, historical_recipient_sets,
                             is_employee_sent, load_corpus, read_corpus, recent_contacts, thread)
from latphish.domains import registered_domain_of_host


def _write(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


def _rec(eid, **kw):
    rec = {"id": eid, "org_id": "acme", "sender": "alice@acme.com", "to": ["bob@acme.com"], "cc": [], "bcc": [],
           "subject": "s", "sent_at": "2018-04-10T09:00:00Z", "body_html": "<p>hi</p>", "folder": "SentItems",
           "conversation_id": "c1", "deleted_at": None, "spf_pass": True, "dkim_pass": True,
           "user_reported_phish": False, "manual_label": None, "tailoring_topic": None, "tailoring_naming": None}
    rec.update(kw)
    return rec


def test_load_three_records(tmp_path):
    p = _write(tmp_path / "c.jsonl", [_rec("e1"), _rec("e2"), _rec("e3")])
    idx = load_corpus(p, ORGS)
    assert len(idx) == 3
    assert [e.id for e in idx] == ["e1", "e2", "e3"]


def test_missing_sent_at_names_line_and_field(tmp_path):
    bad = _rec("e2")
    del bad["sent_at"]
    p = _write(tmp_path / "c.jsonl", [_rec("e1"), bad])
    emails, errors = read_corpus(p, ORGS)
    assert len(emails) == 1
    assert [(e.line, e.field) for e in errors] == [(2, "sent_at")]
    with pytest.raises(CorpusError, match="line 2, field 'sent_at'"):
        load_corpus(p, ORGS)


def test_duplicate_id_is_fatal(tmp_path):
    p = _write(tmp_path / "c.jsonl", [_rec("e1"), _rec("e1")])
    with pytest.raises(DuplicateIdError):
        read_corpus(p, ORGS)
    with pytest.raises(DuplicateIdError):
        load_corpus(p, ORGS, strict=False)


@pytest.mark.parametrize("field,value", [
    ("sender", "no-at-sign"),
    ("to", ["a@b@c.com"]),
    ("folder", "Drafts"),
    ("manual_label", "spam"),
    ("deleted_at", "2018-04-10T08:00:00Z"),
    ("sent_at", "2018-04-10T09:00:00"),
    ("spf_pass", "yes"),
    ("tailoring_topic", "generic"),
])
def test_invalid_fields_rejected(tmp_path, field, value):
    p = _write(tmp_path / "c.jsonl", [_rec("e1", **{field: value})])
    _, errors = read_corpus(p, ORGS)
    assert len(errors) == 1 and errors[0].field == field


def test_malformed_json_and_unknown_org(tmp_path):
    p = _write(tmp_path / "c.jsonl", ["{not json", _rec("e2", org_id="nobody")])
    emails, errors = read_corpus(p, ORGS)
    assert not emails
    assert [(e.line, e.field) for e in errors] == [(1, None), (2, "org_id")]


def test_no_recipients_rejected(tmp_path):
    p = _write(tmp_path / "c.jsonl", [_rec("e1", to=[], cc=[], bcc=[])])
    _, errors = read_corpus(p, ORGS)
    assert errors[0].field == "to"


def test_addresses_lowercased(tmp_path):
    p = _write(tmp_path / "c.jsonl", [_rec("e1", sender=" Alice@ACME.com", to=["Bob@Acme.COM"])])
    (e,), _ = read_corpus(p, ORGS)
    assert e.sender == "alice@acme.com" and e.to == ("bob@acme.com",)


def test_round_trip_is_content_identical(tmp_path):
    recs = [_rec("e1"), _rec("e2", cc=["c@x.com"], tailoring_topic="targeted", tailoring_naming="org",
                             manual_label="phish", folder="Trash", deleted_at="2018-04-10T09:00:05Z")]
    p = _write(tmp_path / "c.jsonl", recs)
    idx = load_corpus(p, ORGS)
    out = tmp_path / "out.jsonl"
    corpus.dump_corpus(list(idx), out)
    again = load_corpus(out, ORGS)
    assert [e for e in again] == [e for e in idx]
    assert [json.loads(ln) for ln in open(out)] == recs


def test_load_is_idempotent(tmp_path):
    p = _write(tmp_path / "c.jsonl", [_rec(f"e{i}", sent_at=f"2018-04-1{i}T09:00:00Z") for i in range(5)])
    assert list(load_corpus(p, ORGS)) == list(load_corpus(p, ORGS))


def test_org_round_trip(tmp_path):
    p = tmp_path / "orgs.jsonl"
    corpus.dump_orgs(ORGS, p)
    assert corpus.load_orgs(p) == ORGS


def test_org_requires_domains():
    with pytest.raises(ValueError):
        OrgConfig("x", frozenset())


def test_timestamp_offsets_normalized_to_utc():
    assert corpus.parse_timestamp("2018-04-10T11:00:00+02:00") == T0.replace(hour=9)
    with pytest.raises(ValueError):
        corpus.parse_timestamp("2018-04-10T09:00:00.5Z")


# -- employee-sent -----------------------------------------------------------------


def test_is_employee_sent():
    assert is_employee_sent(mk("alice@company.com"), OrgConfig("c", frozenset({"company.com"})))
    assert not is_employee_sent(mk("bob@gmail.com"), OrgConfig("c", frozenset({"company.com"})))
    # subdomain of a verified domain: its registered domain is company.com
    assert registered_domain_of_host("mail.company.com") == "company.com"
    assert is_employee_sent(mk("a@mail.company.com"), OrgConfig("c", frozenset({"company.com"})))


# -- historical views ----------------------------------------------------------------


def test_recent_contacts():
    as_of = at(40)
    idx = index_of(mk("alice@acme.com", ["b@x.com", "c@x.com"], t=at(35)))
    assert recent_contacts("alice@acme.com", int(as_of.timestamp()), idx) == {"b@x.com", "c@x.com"}
    assert recent_contacts("carol@acme.com", int(as_of.timestamp()), idx) == set()


def test_recent_contacts_window_boundary():
    as_of = at(40)
    idx = index_of(mk("alice@acme.com", "x@x.com", t=at(9)), mk("alice@acme.com", "y@x.com", t=at(39)),
                   mk("alice@acme.com", ["z@x.com", "alice@acme.com"], t=at(40)))
    assert recent_contacts("alice@acme.com", int(as_of.timestamp()), idx) == {"y@x.com"}
    # exactly 30 days back is inside the half-open window, as_of itself is not
    idx2 = index_of(mk("alice@acme.com", "w@x.com", t=at(10)))
    assert recent_contacts("alice@acme.com", int(at(40).timestamp()), idx2) == {"w@x.com"}


def test_historical_recipient_sets():
    as_of = int(at(20).timestamp())
    assert historical_recipient_sets(ACME, as_of, index_of()) == []
    idx = index_of(mk("alice@acme.com", "a@acme.com", t=at(5)),
                   mk("bob@acme.com", ["a@acme.com", "b@acme.com"], t=at(6)),
                   mk("eve@evil.com", "a@acme.com", t=at(7), org_id="acme"))
    assert historical_recipient_sets(ACME, as_of, idx) == [frozenset({"a@acme.com"}),
                                                           frozenset({"a@acme.com", "b@acme.com"})]


@settings(max_examples=40, deadline=None)
@given(offset=st.integers(0, 40 * DAY), query_day=st.integers(0, 80))
def test_history_membership_matches_window(offset, query_day):
    """An email is in the history exactly for queries in (sent_at, sent_at + 30d]."""
    e = mk("alice@acme.com", "bob@acme.com", t=at(seconds=offset))
    idx = index_of(e)
    q = int(T0.timestamp()) + query_day * DAY
    got = historical_recipient_sets(ACME, q, idx)
    inside = e.sent_ts < q <= e.sent_ts + 30 * DAY
    assert got == ([e.recipients] if inside else [])


def test_employee_roster():
    idx = index_of(mk("alice@acme.com", ["bob@acme.com", "carol@gmail.com"], t=at(1)))
    assert employee_roster(ACME, "2018-04", idx) == {"alice@acme.com", "bob@acme.com"}
    assert employee_roster(ACME, (2018, 5), idx) == frozenset()


def test_thread_ordering():
    a = mk("alice@acme.com", "b@acme.com", t=at(1), conversation_id="c", eid="z")
    b = mk("b@acme.com", "alice@acme.com", t=at(1), conversation_id="c", eid="a")
    c = mk("alice@acme.com", "b@acme.com", t=at(0), conversation_id="c", eid="m")
    idx = index_of(a, b, c)
    assert thread("nope", idx) == []
    assert [e.id for e in thread("c", idx)] == ["m", "a", "z"]


def test_emails_between_half_open():
    e1, e2 = mk("a@acme.com", "b@acme.com", t=at(0)), mk("a@acme.com", "b@acme.com", t=at(1))
    idx = index_of(e1, e2)
    assert idx.emails_between(e1.sent_ts, e2.sent_ts) == [e1]


def test_fqdn_day_count_distinct_days():
    body = '<a href="http://files.partner.com/a">doc</a>'
    idx = index_of(mk("alice@acme.com", "x@acme.com", t=at(1, hours=9), body=body),
                   mk("alice@acme.com", "x@acme.com", t=at(1, hours=15), body=body),
                   mk("alice@acme.com", "x@acme.com", t=at(3), body=body))
    assert idx.fqdn_day_count("acme", "files.partner.com", int(at(10).timestamp())) == 2
    assert idx.fqdn_day_count("acme", "files.partner.com", int(at(1, hours=12).timestamp())) == 1
    assert idx.fqdn_day_count("acme", "other.com", int(at(10).timestamp())) == 0
