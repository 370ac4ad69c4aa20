#!/usr/bin/env python3
"""Writes the SERP regression corpus under fixtures/serp/.

Each NAME.html gets a NAME.expected.json sidecar listing the organic result
URLs in document order, already normalised, plus the ad URLs that must not
appear. The markup here is written by hand per layout and deliberately
differs from the simulator's templates (extra wrappers, attribute order,
whitespace, stray links) so the corpus exercises the extractors on their own.

Run from any directory; output is deterministic.
"""

import html
import json
import os
from urllib.parse import quote

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "serp")


def q(url):
    return quote(url, safe="")


def write(layout, name, body, engine, expected, ads, page_index=0):
    d = os.path.join(ROOT, layout)
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, name + ".html"), "w", encoding="utf-8") as f:
        f.write(body)
    side = {"engine": engine, "page_index": page_index, "expected": expected, "ads": ads}
    with open(os.path.join(d, name + ".expected.json"), "w", encoding="utf-8") as f:
        json.dump(side, f, indent=2)
        f.write("\n")


def doc(title, inner):
    return (
        "<!doctype html>\n<html>\n<head>\n  <meta charset=\"utf-8\">\n"
        f"  <title>{html.escape(title)}</title>\n</head>\n<body>\n{inner}\n</body>\n</html>\n"
    )


# ---------------------------------------------------------------- classic

def classic_result(href, title):
    return (
        '    <div class="g" data-hveid="CA">\n'
        '      <div class="r">\n'
        f'        <a href="{html.escape(href)}" ping="/url?sa=t"><br><h3 class="LC20lb">{html.escape(title)}</h3></a>\n'
        '        <div class="action-menu"><a href="#" role="button">More</a></div>\n'
        "      </div>\n"
        f'      <div class="s"><span class="st">About {html.escape(title)}</span></div>\n'
        "    </div>\n"
    )


def classic_wrap(target, i, extra=""):
    return f"/url?q={q(target)}&sa=U&ved=2ahUKEwi{i}&usg=AOvVaw{i}{extra}"


def classic_ads(ads):
    rows = "".join(
        '    <div class="g"><div class="r">'
        f'<a href="{html.escape(a)}"><h3>Sponsored {i}</h3></a></div></div>\n'
        for i, a in enumerate(ads)
    )
    return f'  <div class="ads" aria-label="Ads">\n{rows}  </div>\n'


def classic_page(query, organic_html, next_start=None, prelude="", postlude=""):
    nav = f'<a id="pnnext" href="/search?q={q(query)}&amp;start={next_start}">Next</a>' if next_start else ""
    return doc(
        f"{query} - Classic Search",
        '<div id="searchform"><form action="/search"><input name="q"></form></div>\n'
        f'<div id="search">\n{prelude}  <div id="rso">\n{organic_html}  </div>\n{postlude}</div>\n'
        f'<footer id="foot"><a href="/preferences">Settings</a> {nav}</footer>',
    )


def classic():
    query = "us elections"
    # page 0: ten organic results and three ads
    targets = [f"https://www.news{i}.example/2020/us-elections/{i}" for i in range(10)]
    ads = [f"https://ads.classic.test/aclk?sa=L&ai=C{i}" for i in range(3)]
    org = "".join(classic_result(classic_wrap(t, i), f"News {i}") for i, t in enumerate(targets, 1))
    paa = (
        '  <div class="related-questions"><h2>People also ask</h2>\n'
        + classic_result(classic_wrap("https://qa.example/why-vote", 99), "Why vote?")
        + "  </div>\n"
    )
    body = classic_page(query, org, next_start=10, prelude=classic_ads(ads), postlude=paa)
    write("classic", "p0-ten-organic-three-ads", body, "classic", targets, ads + ["https://qa.example/why-vote"])

    # page 1: ad-laden, ads above and below, a top-stories carousel
    targets = [f"https://politics{i}.example/articles/election-{i}" for i in range(10, 20)]
    top_ads = [f"https://ads.classic.test/aclk?ai=T{i}" for i in range(4)]
    bottom_ads = [f"https://shop{i}.example/campaign-merch?aff=1" for i in range(2)]
    stories = (
        '  <div class="top-stories"><g-section-with-header>\n'
        + classic_result(classic_wrap("https://breaking.example/live", 77), "Live updates")
        + "  </g-section-with-header></div>\n"
    )
    org = "".join(classic_result(classic_wrap(t, i), f"Politics {i}") for i, t in enumerate(targets, 11))
    body = classic_page(query, org, next_start=20, prelude=classic_ads(top_ads) + stories,
                        postlude=classic_ads(bottom_ads))
    write("classic", "p1-ad-laden", body, "classic", targets,
          top_ads + bottom_ads + ["https://breaking.example/live"], page_index=1)

    # page 2: the same target at ranks 3 and 7
    targets = [f"https://site{i}.example/p/{i}" for i in range(20, 30)]
    targets[6] = targets[2]
    org = "".join(classic_result(classic_wrap(t, i), f"Item {i}") for i, t in enumerate(targets, 21))
    expected = [t for i, t in enumerate(targets) if i != 6]
    body = classic_page(query, org, next_start=30)
    write("classic", "p2-duplicate-rank-3-and-7", body, "classic", expected, [], page_index=2)

    # page 3: targets carrying fragments, tracking parameters, mixed-case hosts
    raw = [
        ("HTTPS://WWW.Example.COM/Elections/Guide#section-2", "https://www.example.com/Elections/Guide"),
        ("https://ballots.example/state?utm_source=classic&utm_medium=serp", "https://ballots.example/state"),
        ("https://poll.example/latest?id=42&gclid=abc123", "https://poll.example/latest?id=42"),
        ("http://archive.example/1998/vote", "http://archive.example/1998/vote"),
        ("https://maps.example/where?fbclid=zz#top", "https://maps.example/where"),
        ("https://calendar.example/dates?year=2020", "https://calendar.example/dates?year=2020"),
    ]
    org = "".join(classic_result(classic_wrap(r, i), f"Guide {i}") for i, (r, _) in enumerate(raw, 31))
    body = classic_page(query, org, next_start=40)
    write("classic", "p3-normalisation", body, "classic", [e for _, e in raw], [], page_index=3)

    # page 4: short last page, no pagination link
    targets = [f"https://tail{i}.example/last/{i}" for i in range(40, 47)]
    org = "".join(classic_result(classic_wrap(t, i), f"Tail {i}") for i, t in enumerate(targets, 41))
    body = classic_page(query, org, next_start=None, prelude=classic_ads(["https://ads.classic.test/aclk?ai=L"]))
    write("classic", "p4-short-last-page", body, "classic", targets, ["https://ads.classic.test/aclk?ai=L"],
          page_index=4)

    # empty body: nothing to extract
    write("classic", "p5-empty-body", "<html><head></head><body></body></html>\n", "classic", [], [])


# ---------------------------------------------------------------- sidebar

def sidebar_result(href, title):
    return (
        '  <li class="b_algo" data-bm="6">\n'
        f'    <div class="b_title"><h2><a target="_blank" href="{html.escape(href)}" h="ID=SERP,5">{html.escape(title)}</a></h2></div>\n'
        '    <div class="b_caption"><div class="b_attribution"><cite>site</cite></div><p>caption</p></div>\n'
        "  </li>\n"
    )


def sidebar_ad(url, i):
    return (
        f'  <li class="b_ad b_adTop"><ul>\n    <li class="b_algo"><h2><a href="{html.escape(url)}">Ad {i}</a></h2></li>\n  </ul></li>\n'
    )


def sidebar_page(query, items, first=None, context=True):
    pag = (
        f'  <li class="b_pag"><nav><a class="sb_pagN" href="/search?q={q(query)}&amp;first={first}">Next page</a></nav></li>\n'
        if first else ""
    )
    ctx = (
        '<aside id="b_context"><ol><li class="b_ans"><h2><a href="https://en.wikipedia.example/wiki/Elections">Wikipedia</a></h2></li></ol></aside>\n'
        if context else ""
    )
    return doc(
        f"{query} - Sidebar",
        f'<header id="b_header"><a href="https://www.sidebar.test/">Home</a></header>\n'
        f'<main><ol id="b_results">\n{items}{pag}</ol>\n{ctx}</main>',
    )


def sidebar():
    query = "joe biden"
    targets = [f"https://en.outlet{i}.example/biden/{i}" for i in range(10)]
    ads = [f"https://www.ads.sidebar.test/click?u={i}" for i in range(3)]
    items = "".join(sidebar_ad(a, i) for i, a in enumerate(ads))
    for i, t in enumerate(targets):
        href = t + ("?utm_source=sidebar&form=MSNVS" if i % 3 == 0 else "")
        items += sidebar_result(href, f"Outlet {i}")
        if i == 4:
            items += ('  <li class="b_ans"><h2>Related searches</h2><ul>\n'
                      '    <li class="b_algo"><h2><a href="https://www.sidebar.test/search?q=biden+age">biden age</a></h2></li>\n'
                      "  </ul></li>\n")
    write("sidebar", "p0-ten-organic-three-ads", sidebar_page(query, items, first=11), "sidebar", targets,
          ads + ["https://www.sidebar.test/search?q=biden+age"])

    targets = [f"https://campaign{i}.example/issues/{i}" for i in range(10, 20)]
    ads = [f"https://www.ads.sidebar.test/click?u=x{i}" for i in range(6)]
    items = "".join(sidebar_ad(a, i) for i, a in enumerate(ads[:4]))
    items += "".join(sidebar_result(t, f"Campaign {i}") for i, t in enumerate(targets))
    items += "".join(sidebar_ad(a, i) for i, a in enumerate(ads[4:]))
    write("sidebar", "p1-ad-laden", sidebar_page(query, items, first=21), "sidebar", targets, ads, page_index=1)

    targets = [f"https://www.dup{i}.example/page{i}" for i in range(20, 30)]
    targets[6] = targets[2]
    items = "".join(sidebar_result(t + ("?utm_campaign=x" if i == 6 else ""), f"Dup {i}")
                    for i, t in enumerate(targets))
    expected = [t for i, t in enumerate(targets) if i != 6]
    write("sidebar", "p2-duplicate-rank-3-and-7", sidebar_page(query, items, first=31), "sidebar", expected, [],
          page_index=2)

    raw = [
        ("https://WWW.NYTIMES.COM/2020/02/26/us/politics/biden.html#comments",
         "https://www.nytimes.com/2020/02/26/us/politics/biden.html"),
        ("https://twitter.com/JoeBiden?ref_src=twsrc&utm_medium=social",
         "https://twitter.com/JoeBiden?ref_src=twsrc"),
        ("https://joebiden.com/?form=MSNX", "https://joebiden.com/"),
        ("https://www.politifact.com/personalities/joe-biden/", "https://www.politifact.com/personalities/joe-biden/"),
        ("https://news.google.com/topics/biden?hl=en-US&gclid=2", "https://news.google.com/topics/biden?hl=en-US"),
    ]
    items = "".join(sidebar_result(r, f"Mixed {i}") for i, (r, _) in enumerate(raw))
    write("sidebar", "p3-normalisation", sidebar_page(query, items, first=41, context=False), "sidebar",
          [e for _, e in raw], [], page_index=3)

    targets = [f"https://last{i}.example/biden-end/{i}" for i in range(4)]
    items = sidebar_ad("https://www.ads.sidebar.test/click?u=end", 0)
    items += "".join(sidebar_result(t, f"Last {i}") for i, t in enumerate(targets))
    write("sidebar", "p4-short-last-page", sidebar_page(query, items), "sidebar", targets,
          ["https://www.ads.sidebar.test/click?u=end"], page_index=4)


# ---------------------------------------------------------------- scroll

def scroll_result(target, i, title):
    href = f"//scroll.test/l/?uddg={q(target)}&rut=a{i:04x}"
    return (
        f'  <article id="r1-{i}" data-testid="result" data-nrn="result">\n'
        f'    <div class="ikg2"><span>{html.escape(target.split("/")[2])}</span></div>\n'
        f'    <h2><a href="{html.escape(href)}" rel="noopener" data-testid="result-title-a"><span>{html.escape(title)}</span></a></h2>\n'
        f'    <div data-result="snippet">snippet {i}</div>\n'
        "  </article>\n"
    )


def scroll_ad(url, i):
    return (
        f'  <article data-testid="ad" data-nrn="ad">\n'
        f'    <h2><a href="{html.escape(url)}" data-testid="result-title-a">Ad {i}</a></h2>\n'
        "  </article>\n"
    )


def scroll_page(query, inner):
    return doc(
        f"{query} at Scroll",
        '<div id="header"><a href="/">Scroll</a></div>\n'
        f'<section class="results" data-testid="mainline">\n{inner}</section>\n'
        '<div class="more-results"><button>More results</button></div>',
    )


def scroll_batches(targets, ads, related_after=None, related=()):
    inner = ""
    for i, t in enumerate(targets):
        if i % 10 == 0 and i // 10 < len(ads):
            inner += scroll_ad(ads[i // 10], i // 10)
        inner += scroll_result(t, i, f"Result {i}")
        if i == related_after:
            inner += '  <div class="module--related"><h2>Related searches</h2>\n'
            inner += "".join(
                f'    <article data-testid="result"><a data-testid="result-title-a" href="{html.escape(r)}">rel</a></article>\n'
                for r in related
            )
            inner += "  </div>\n"
        if i % 10 == 9:
            inner += f'  <div class="result--sep" data-page="{i // 10 + 2}"><span>Page {i // 10 + 2}</span></div>\n'
    return inner


def scroll():
    query = "bernie sanders"
    cases = []

    targets = [f"https://www.scroll-news{i}.example/sanders/{i}" for i in range(50)]
    ads = [f"https://ads.scroll.test/y.js?ad_provider=bing&u={i}" for i in range(5)]
    related = ["https://scroll.test/?q=sanders+rally"]
    cases.append(("s0-fifty-results-five-ads", targets, ads, 4, related, targets))

    targets = [f"https://berniesanders.example/issues/{i}" for i in range(10)]
    ads = [f"https://ads.scroll.test/y.js?u=t{i}" for i in range(3)]
    cases.append(("s1-ten-organic-three-ads", targets, ads, None, (), targets))

    targets = [f"https://dup.example/item/{i}" for i in range(12)]
    targets[6] = targets[2]
    expected = [t for i, t in enumerate(targets) if i != 6]
    cases.append(("s2-duplicate-rank-3-and-7", targets, [], None, (), expected))

    targets = [f"https://batch{i // 10}.example/r/{i}" for i in range(30)]
    ads = [f"https://ads.scroll.test/y.js?u=b{i}" for i in range(3)]
    related = ["https://scroll.test/?q=sanders+age", "https://scroll.test/?q=sanders+polls"]
    cases.append(("s3-three-batches", targets, ads, 12, related, targets))

    raw = ["https://en.wikipedia.org/wiki/Bernie_Sanders#Early_life",
           "https://www.facebook.com/berniesanders/?utm_source=scroll",
           "https://www.buzzfeed.com/tag/bernie-sanders?fbclid=q1"]
    norm = ["https://en.wikipedia.org/wiki/Bernie_Sanders",
            "https://www.facebook.com/berniesanders/",
            "https://www.buzzfeed.com/tag/bernie-sanders"]
    cases.append(("s4-normalisation", raw, ["https://ads.scroll.test/y.js?u=n"], None, (), norm))

    for name, targets, ads, rel_after, related, expected in cases:
        inner = scroll_batches(targets, ads, rel_after, related)
        write("scroll", name, scroll_page(query, inner), "scroll", expected, list(ads) + list(related))


# ---------------------------------------------------------------- census

CENSUS_ENGINES = ["baidu", "bing", "duckduckgo", "google", "yahoo", "yandex"]
CENSUS_METRICS = ["ji_overall", "ji_top10", "rbo_95", "rbo_80"]

# Cross-engine cells at or above .35. None of them is a top-10 JI value.
CENSUS_HIGH = {
    ("ji_overall", "chrome", "duckduckgo", "yahoo"): 0.412,
    ("ji_overall", "firefox", "duckduckgo", "yahoo"): 0.398,
    ("rbo_80", "chrome", "duckduckgo", "yahoo"): 0.371,
    ("rbo_80", "firefox", "duckduckgo", "yahoo"): 0.366,
    ("ji_overall", "chrome", "bing", "yahoo"): 0.357,
}


def census():
    """Long-form matrix table with 120 cross-engine cells, 115 below .35."""
    rows = ["query,metric,browser_scope,engine_i,engine_j,mean,count"]
    n = 0
    for metric in CENSUS_METRICS:
        for browser in ["chrome", "firefox"]:
            for i, a in enumerate(CENSUS_ENGINES):
                for b in CENSUS_ENGINES[i + 1:]:
                    key = (metric, browser, a, b)
                    if key in CENSUS_HIGH:
                        mean = CENSUS_HIGH[key]
                    else:
                        mean = round(0.02 + (n * 37 % 29) / 100, 3)
                    n += 1
                    rows.append(f"us elections,{metric},{browser},{a},{b},{mean},256")
    d = os.path.join(os.path.dirname(ROOT), "census")
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "us-elections-matrices.csv"), "w", encoding="utf-8") as f:
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    classic()
    sidebar()
    scroll()
    census()
