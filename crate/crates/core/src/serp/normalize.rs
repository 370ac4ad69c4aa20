//! URL canonicalisation.
//!
//! Result identity drives every similarity metric, so the rules are explicit:
//! engine redirect wrappers are unwrapped to their target, the scheme and host
//! are lowercased, the fragment is dropped and deny-listed tracking parameters
//! are removed. Everything else, including path case and parameter order, is
//! left untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot normalize {raw:?}: {reason}")]
pub struct NormalizeError {
    pub raw: String,
    pub reason: String,
}

/// A click-tracking wrapper: a URL whose `path` matches and whose `param`
/// query parameter carries the real target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectWrapper {
    pub path: String,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    /// Parameter names removed wherever they appear.
    pub tracking_params: Vec<String>,
    /// Parameter-name prefixes removed wherever they appear.
    pub tracking_prefixes: Vec<String>,
    pub redirect_wrappers: Vec<RedirectWrapper>,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            tracking_params: vec!["gclid".into(), "fbclid".into()],
            tracking_prefixes: vec!["utm_".into()],
            redirect_wrappers: vec![
                RedirectWrapper {
                    path: "/url".into(),
                    param: "q".into(),
                },
                RedirectWrapper {
                    path: "/url".into(),
                    param: "url".into(),
                },
                RedirectWrapper {
                    path: "/l/".into(),
                    param: "uddg".into(),
                },
            ],
        }
    }
}

const MAX_UNWRAP: usize = 16;
// placeholder origin for engine-relative wrapper links such as "/url?q=..."
const RELATIVE_BASE: &str = "http://relative.invalid/";

/// Normalizes with [`NormalizeOptions::default`].
pub fn normalize_url(raw: &str) -> Result<String, NormalizeError> {
    NormalizeOptions::default().normalize(raw)
}

/// Host with a leading `www.` removed, lowercase. This is the "domain" used for
/// source classification; it keeps subdomains such as `news.google.com`.
pub fn result_domain(url: &str) -> Option<String> {
    let parsed = Url::parse(url).ok()?;
    let host = parsed.host_str()?.to_ascii_lowercase();
    Some(host.strip_prefix("www.").unwrap_or(&host).to_owned())
}

impl NormalizeOptions {
    /// Adds extra deny-listed parameter names.
    pub fn with_tracking_params<I: IntoIterator<Item = String>>(mut self, extra: I) -> Self {
        for p in extra {
            if !self.tracking_params.contains(&p) {
                self.tracking_params.push(p);
            }
        }
        self
    }

    fn is_tracking(&self, key: &str) -> bool {
        let key = key.to_ascii_lowercase();
        self.tracking_params.contains(&key)
            || self.tracking_prefixes.iter().any(|p| key.starts_with(p.as_str()))
    }

    fn wrapped_target(&self, url: &Url) -> Option<String> {
        let wrapper = self
            .redirect_wrappers
            .iter()
            .filter(|w| w.path == url.path())
            .find_map(|w| {
                url.query_pairs()
                    .find(|(k, v)| *k == w.param.as_str() && looks_absolute(v))
                    .map(|(_, v)| v.into_owned())
            })?;
        Some(wrapper)
    }

    pub fn normalize(&self, raw: &str) -> Result<String, NormalizeError> {
        let fail = |reason: &str| NormalizeError {
            raw: raw.to_owned(),
            reason: reason.to_owned(),
        };
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(fail("empty"));
        }

        let relative = !looks_absolute(trimmed);
        let mut url = parse_http(trimmed).map_err(|e| fail(&e))?;

        let mut unwrapped = false;
        for _ in 0..MAX_UNWRAP {
            match self.wrapped_target(&url) {
                Some(target) => {
                    url = parse_http(&target).map_err(|e| fail(&e))?;
                    unwrapped = true;
                }
                None => break,
            }
        }
        if relative && !unwrapped {
            return Err(fail("relative URL without a redirect target"));
        }

        url.set_fragment(None);
        self.strip_tracking(&mut url);
        Ok(url.to_string())
    }

    fn strip_tracking(&self, url: &mut Url) {
        let Some(query) = url.query() else { return };
        if query.is_empty() {
            url.set_query(None);
            return;
        }
        let pairs: Vec<(String, String)> = url
            .query_pairs()
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        if !pairs.iter().any(|(k, _)| self.is_tracking(k)) {
            return;
        }
        let kept: Vec<_> = pairs.into_iter().filter(|(k, _)| !self.is_tracking(k)).collect();
        if kept.is_empty() {
            url.set_query(None);
        } else {
            url.query_pairs_mut().clear().extend_pairs(kept);
        }
    }
}

fn looks_absolute(s: &str) -> bool {
    let lower = s.trim_start().to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("//")
}

fn parse_http(s: &str) -> Result<Url, String> {
    let url = if s.starts_with("//") {
        Url::parse(&format!("https:{s}"))
    } else if s.starts_with('/') {
        Url::parse(RELATIVE_BASE).and_then(|base| base.join(s))
    } else {
        Url::parse(s)
    }
    .map_err(|e| e.to_string())?;
    match url.scheme() {
        "http" | "https" if url.host_str().is_some() => Ok(url),
        other => Err(format!("unsupported scheme {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn case_and_fragment() {
        assert_eq!(
            normalize_url("HTTP://Example.com/a#frag").unwrap(),
            "http://example.com/a"
        );
    }

    #[test]
    fn unwraps_redirects() {
        assert_eq!(
            normalize_url("https://www.google.com/url?q=https%3A%2F%2Fnews.site%2Fx&sa=U&ved=2ah").unwrap(),
            "https://news.site/x"
        );
        assert_eq!(
            normalize_url("/url?q=https%3A%2F%2Fnews.site%2Fx").unwrap(),
            "https://news.site/x"
        );
        assert_eq!(
            normalize_url("//duckduckgo.com/l/?uddg=https%3A%2F%2Fa.org%2Fb%3Futm_medium%3Dx&rut=abc")
                .unwrap(),
            "https://a.org/b"
        );
    }

    #[test]
    fn strips_deny_listed_params_only() {
        assert_eq!(
            normalize_url("https://a.com/p?utm_source=z").unwrap(),
            "https://a.com/p"
        );
        assert_eq!(
            normalize_url("https://a.com/p?id=7&gclid=abc&UTM_Campaign=q").unwrap(),
            "https://a.com/p?id=7"
        );
        assert_eq!(
            normalize_url("https://a.com/p?b=2&a=1").unwrap(),
            "https://a.com/p?b=2&a=1"
        );
    }

    #[test]
    fn rejects_unparseable() {
        for raw in ["", "not a url", "javascript:void(0)", "mailto:x@y.z", "/relative/only"] {
            let err = normalize_url(raw).unwrap_err();
            assert_eq!(err.raw, raw);
        }
    }

    #[test]
    fn domain_drops_www() {
        assert_eq!(result_domain("https://www.NYTimes.com/x").as_deref(), Some("nytimes.com"));
        assert_eq!(
            result_domain("https://news.google.com/a").as_deref(),
            Some("news.google.com")
        );
    }

    proptest! {
        #[test]
        fn idempotent(
            scheme in prop::sample::select(vec!["http", "HTTPS", "https"]),
            host in "[a-zA-Z]{1,8}\\.(com|org|net)",
            path in "(/[a-zA-Z0-9_%-]{0,6}){0,3}",
            params in prop::collection::vec(
                (prop::sample::select(vec!["utm_source", "id", "gclid", "q", "page", "fbclid", "x y"]),
                 "[a-z0-9 %+&=]{0,5}"),
                0..4),
            frag in prop::option::of("[a-z]{0,4}"),
            wrap in any::<bool>(),
        ) {
            let mut raw = format!("{scheme}://{host}{path}");
            if !params.is_empty() {
                let q: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                raw.push('?');
                raw.push_str(&q.join("&"));
            }
            if let Some(f) = frag {
                raw.push('#');
                raw.push_str(&f);
            }
            if wrap {
                let enc: String = url::form_urlencoded::byte_serialize(raw.as_bytes()).collect();
                raw = format!("https://engine.test/url?q={enc}&sa=U");
            }
            if let Ok(once) = normalize_url(&raw) {
                let twice = normalize_url(&once).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
