import itertools
import time
from datetime import datetime, timedelta, timezone

import pytest

from latphish import pipeline, syngen
from latphish.corpus import CorpusIndex, Email, OrgConfig, load_corpus, load_orgs
from latphish.features import FeatureContext, KeywordList
from latphish.urlrep import DomainRanking, SpecialDomainLists, load_shortlinks

T0 = datetime(2018, 4, 10, tzinfo=timezone.utc)
DAY = 86400

ACME = OrgConfig("acme", frozenset({"acme.com"}), "finance")
GLOBEX = OrgConfig("globex", frozenset({"globex.org"}), "finance")
INITECH = OrgConfig("initech", frozenset({"initech.net"}), "healthcare")
ORGS = {o.org_id: o for o in (ACME, GLOBEX, INITECH)}

_ids = itertools.count()


def at(days=0.0, hours=0.0, seconds=0):
    return T0 + timedelta(days=days, hours=hours, seconds=seconds)


def mk(sender, to=(), *, t=None, body="", subject="hello", org_id=None, cc=(), bcc=(), eid=None, **kw):
    """Email with sensible defaults; ``org_id`` follows the sender's domain when omitted."""
    if org_id is None:
        dom = sender.rpartition("@")[2]
        org_id = next((o.org_id for o in ORGS.values() if dom in o.verified_domains), "acme")
    if isinstance(to, str):
        to = (to,)
    return Email(
        id=eid or f"m{next(_ids):05d}", org_id=org_id, sender=sender, to=tuple(to), cc=tuple(cc),
        bcc=tuple(bcc), subject=subject, sent_at=t if t is not None else T0, body_html=body, **kw,
    )


def link(href, text="Click here"):
    return f'<a href="{href}">{text}</a>'


def index_of(*emails, orgs=ORGS):
    return CorpusIndex(list(emails), orgs)


@pytest.fixture
def ranking():
    return DomainRanking({"google.com": 1, "microsoft.com": 2, "linkedin.com": 40, "docusign.net": 900,
                          "popular.com": 50, "midrank.com": 900_000, "gmail.com": 3})


@pytest.fixture
def lists():
    return SpecialDomainLists.default()


# -- one default synthetic corpus and one audited eval, shared by the whole session --

TRAIN_WINDOW = "2018-04/2018-05"
TEST_WINDOW = "2018-05/2018-07"


@pytest.fixture(scope="session")
def synthetic(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    start = time.perf_counter()
    result = syngen.generate(syngen.GenConfig())
    paths = syngen.write_outputs(result, out)
    orgs = load_orgs(paths["orgs.jsonl"])
    index = load_corpus(paths["corpus.jsonl"], orgs)
    context = FeatureContext(index, DomainRanking.load(paths["ranking.csv"]), SpecialDomainLists.default(),
                             KeywordList.load(paths["keywords.txt"]), load_shortlinks(paths["shortlinks.tsv"]))
    return {"result": result, "paths": paths, "index": index, "context": context, "dir": out,
            "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def synthetic_eval(synthetic):
    audit = pipeline.LeakageAudit()
    start = time.perf_counter()
    res = pipeline.run_continuous_learning(synthetic["index"], synthetic["context"], TRAIN_WINDOW, TEST_WINDOW,
                                           audit=audit, n_jobs=2)
    return res, audit, time.perf_counter() - start
