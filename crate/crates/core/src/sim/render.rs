//! HTML templates for the simulated result pages.
//!
//! The markup mirrors the shipped extractor layouts (`classic`, `sidebar`,
//! `scroll`), including sponsored slots and other non-organic links, so the
//! simulator exercises the same extraction path as captured pages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use url::form_urlencoded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Classic,
    Sidebar,
    Scroll,
}

impl Layout {
    /// Name of the extractor that parses this layout.
    pub fn extractor_name(self) -> &'static str {
        match self {
            Layout::Classic => "classic",
            Layout::Sidebar => "sidebar",
            Layout::Scroll => "scroll",
        }
    }

    pub fn is_scroll(self) -> bool {
        self == Layout::Scroll
    }
}

/// Everything rendered onto one page.
#[derive(Debug, Clone)]
pub struct PageContent<'a> {
    pub engine: &'a str,
    pub query: &'a str,
    pub page_index: usize,
    pub organic: &'a [String],
    pub ads: &'a [String],
    pub related: &'a [String],
    pub has_next: bool,
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn enc(s: &str) -> String {
    form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

fn title_of(url: &str) -> String {
    let tail = url.trim_end_matches('/').rsplit('/').next().unwrap_or(url);
    format!("Result {tail}")
}

pub fn render(layout: Layout, page: &PageContent<'_>) -> String {
    match layout {
        Layout::Classic => classic(page),
        Layout::Sidebar => sidebar(page),
        Layout::Scroll => scroll(page),
    }
}

fn head(out: &mut String, page: &PageContent<'_>) {
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>{} - {}</title></head>\n<body>\n",
        esc(page.query),
        esc(page.engine)
    );
}

fn classic(page: &PageContent<'_>) -> String {
    let mut out = String::new();
    head(&mut out, page);
    out.push_str("<div id=\"search\">\n");
    if !page.ads.is_empty() {
        out.push_str("<div class=\"ads\" aria-label=\"Sponsored\">\n");
        for ad in page.ads {
            let _ = writeln!(
                out,
                "  <div class=\"g\"><div class=\"r\"><a href=\"{}\">{}</a></div><span class=\"ad-badge\">Ad</span></div>",
                esc(ad),
                esc(&title_of(ad))
            );
        }
        out.push_str("</div>\n");
    }
    for (i, url) in page.organic.iter().enumerate() {
        let href = format!("/url?q={}&sa=U&ved=0ahUKE{}", enc(url), i);
        let _ = writeln!(
            out,
            "<div class=\"g\"><div class=\"r\"><a href=\"{}\"><h3>{}</h3></a></div><div class=\"s\">Snippet for {}</div></div>",
            esc(&href),
            esc(&title_of(url)),
            esc(url)
        );
        if i == 2 && !page.related.is_empty() {
            out.push_str("<div class=\"related-questions\"><h2>People also ask</h2>\n");
            for r in page.related {
                let _ = writeln!(
                    out,
                    "  <div class=\"g\"><div class=\"r\"><a href=\"/url?q={}\">{}</a></div></div>",
                    esc(&enc(r)),
                    esc(&title_of(r))
                );
            }
            out.push_str("</div>\n");
        }
    }
    out.push_str("</div>\n<footer><nav>");
    if page.has_next {
        let _ = write!(
            out,
            "<a id=\"pnnext\" href=\"/search?q={}&amp;start={}\">Next</a>",
            esc(&enc(page.query)),
            (page.page_index + 1) * 10
        );
    }
    out.push_str("</nav></footer>\n</body></html>\n");
    out
}

fn sidebar(page: &PageContent<'_>) -> String {
    let mut out = String::new();
    head(&mut out, page);
    out.push_str("<ol id=\"b_results\">\n");
    for ad in page.ads {
        let _ = writeln!(
            out,
            "<li class=\"b_ad\"><ul><li class=\"b_algo\"><h2><a href=\"{}\">{}</a></h2></li></ul></li>",
            esc(ad),
            esc(&title_of(ad))
        );
    }
    for (i, url) in page.organic.iter().enumerate() {
        let href = if i % 2 == 1 {
            let sep = if url.contains('?') { '&' } else { '?' };
            format!("{url}{sep}utm_source=sidebar&utm_medium=organic")
        } else {
            url.clone()
        };
        let _ = writeln!(
            out,
            "<li class=\"b_algo\"><h2><a href=\"{}\">{}</a></h2><div class=\"b_caption\"><p>Snippet</p></div></li>",
            esc(&href),
            esc(&title_of(url))
        );
    }
    if !page.related.is_empty() {
        out.push_str("<li class=\"b_ans\"><h2>Related searches</h2><ul>\n");
        for r in page.related {
            let _ = writeln!(out, "  <li class=\"b_algo\"><h2><a href=\"{}\">{}</a></h2></li>", esc(r), esc(&title_of(r)));
        }
        out.push_str("</ul></li>\n");
    }
    if page.has_next {
        let _ = writeln!(
            out,
            "<li class=\"b_pag\"><a class=\"sb_pagN\" href=\"/search?q={}&amp;first={}\">Next</a></li>",
            esc(&enc(page.query)),
            (page.page_index + 1) * 10 + 1
        );
    }
    out.push_str("</ol>\n<aside id=\"b_context\"><a href=\"https://www.sidebar.test/maps\">Maps</a></aside>\n</body></html>\n");
    out
}

fn scroll(page: &PageContent<'_>) -> String {
    let mut out = String::new();
    head(&mut out, page);
    out.push_str("<section class=\"results\">\n");
    for (i, url) in page.organic.iter().enumerate() {
        // an ad slot every ten results, as batches are appended
        if i % 10 == 0 {
            if let Some(ad) = page.ads.get(i / 10) {
                let _ = writeln!(
                    out,
                    "<article data-testid=\"ad\"><a data-testid=\"result-title-a\" href=\"{}\">{}</a></article>",
                    esc(ad),
                    esc(&title_of(ad))
                );
            }
        }
        let href = format!("//scroll.test/l/?uddg={}&rut=r{i}", enc(url));
        let _ = writeln!(
            out,
            "<article data-testid=\"result\"><h2><a data-testid=\"result-title-a\" href=\"{}\">{}</a></h2></article>",
            esc(&href),
            esc(&title_of(url))
        );
        if i == 4 && !page.related.is_empty() {
            out.push_str("<div class=\"module--related\">\n");
            for r in page.related {
                let _ = writeln!(
                    out,
                    "  <article data-testid=\"result\"><a data-testid=\"result-title-a\" href=\"{}\">{}</a></article>",
                    esc(r),
                    esc(&title_of(r))
                );
            }
            out.push_str("</div>\n");
        }
    }
    out.push_str("</section>\n</body></html>\n");
    out
}

/// Bot-detection interstitial recognised by the layout's `challenge` rules.
pub fn render_challenge(layout: Layout) -> String {
    let body = match layout {
        Layout::Classic => "<div id=\"recaptcha\"><form id=\"captcha-form\" action=\"/sorry\"><p>Our systems have detected unusual traffic.</p></form></div>",
        Layout::Sidebar => "<div id=\"b_captcha\"><p>Please solve the challenge below to continue.</p></div>",
        Layout::Scroll => "<div class=\"anomaly-modal\"><p>Unfortunately, bots use this too.</p></div>",
    };
    format!("<!DOCTYPE html>\n<html><head><title>Verify</title></head><body>{body}</body></html>\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping() {
        assert_eq!(esc("a&b\"<"), "a&amp;b&quot;&lt;");
    }
}
