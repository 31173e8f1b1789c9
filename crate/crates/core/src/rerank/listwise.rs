use super::{Candidate, RerankConfig};
use crate::backend::{check_context, Backend, GenRequest};
use crate::error::{Error, Result};

pub const LISTWISE_TEMPLATE: &str = "I will provide you with {n} passages, each indicated by a numerical identifier. \
Rank the passages based on how closely their topic matches the topic of the query.

Query: {query}

{passages}

Rank the {n} passages above by topic relevance to the query, most relevant first. \
Answer only with the ranking in the format Passage 2 > Passage 1 > Passage 3.
Ranking:";

/// `Passage 1: ...` lines in first-stage order.
pub fn render_passages(candidates: &[Candidate]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Passage {}: {}", i + 1, c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn listwise_prompt(query: &str, candidates: &[Candidate], cfg: &RerankConfig) -> Result<String> {
    let passages = render_passages(candidates);
    let n = candidates.len().to_string();
    cfg.listwise_template
        .render(&[("query", query), ("passages", &passages), ("n", &n)])
}

/// Reads a permutation of `1..=n` out of free text.
///
/// Explicit mentions (`Passage 3`, `passage #3`, `[3]`) are used when present;
/// otherwise every bare integer counts. Out-of-range numbers and repeats are
/// dropped, and indices never mentioned are appended in ascending order.
pub fn parse_listwise_output(text: &str, n: usize) -> Result<Vec<usize>> {
    let (marked, bare) = scan_numbers(text);
    let mentions = if marked.is_empty() { bare } else { marked };

    let mut seen = vec![false; n + 1];
    let mut order = Vec::with_capacity(n);
    for m in mentions {
        if (1..=n).contains(&m) && !seen[m] {
            seen[m] = true;
            order.push(m);
        }
    }
    if order.is_empty() {
        return Err(Error::ParseFailure(text.chars().take(200).collect()));
    }
    order.extend((1..=n).filter(|&i| !seen[i]));
    Ok(order)
}

/// Integers introduced by `passage` / `[..]`, and every integer.
/// Runs longer than 9 digits map to `usize::MAX` (always out of range).
fn scan_numbers(text: &str) -> (Vec<usize>, Vec<usize>) {
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let digits_at = |start: usize| -> Option<(usize, usize)> {
        let end = start + bytes[start..].iter().take_while(|b| b.is_ascii_digit()).count();
        if end == start {
            return None;
        }
        let value = if end - start > 9 {
            usize::MAX
        } else {
            lower[start..end].parse().unwrap_or(usize::MAX)
        };
        Some((value, end))
    };

    let mut marked = Vec::new();
    let mut bare = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"passage") {
            let mut j = i + "passage".len();
            while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'#' || bytes[j] == b'\t') {
                j += 1;
            }
            if let Some((v, _)) = digits_at(j) {
                marked.push(v);
            }
            i += "passage".len();
            continue;
        }
        if bytes[i] == b'[' {
            if let Some((v, end)) = digits_at(i + 1) {
                if bytes.get(end) == Some(&b']') {
                    marked.push(v);
                }
            }
            i += 1;
            continue;
        }
        if let Some((v, end)) = digits_at(i) {
            bare.push(v);
            i = end;
            continue;
        }
        i += 1;
    }
    (marked, bare)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListwiseResult {
    /// 0-based indices into the window, best first.
    pub order: Vec<usize>,
    pub raw: Option<String>,
    pub fallback: Option<String>,
}

/// One generation call over the whole window. Unparseable output keeps the
/// first-stage order and sets `fallback`.
pub fn listwise_rerank<B: Backend + ?Sized>(
    query: &str,
    candidates: &[Candidate],
    backend: &B,
    cfg: &RerankConfig,
) -> Result<ListwiseResult> {
    let n = candidates.len();
    if n <= 1 {
        return Ok(ListwiseResult {
            order: (0..n).collect(),
            raw: None,
            fallback: None,
        });
    }
    let prompt = listwise_prompt(query, candidates, cfg)?;
    if let Err(e) = check_context(&prompt, backend.context_limit()) {
        log::error!("listwise prompt for {n} candidates does not fit; use pairwise reranking or a smaller window");
        return Err(e);
    }
    let raw = backend.generate(&GenRequest::new(prompt).max_new_tokens(cfg.max_new_tokens))?;
    match parse_listwise_output(&raw, n) {
        Ok(perm) => Ok(ListwiseResult {
            order: perm.into_iter().map(|i| i - 1).collect(),
            raw: Some(raw),
            fallback: None,
        }),
        Err(e) => Ok(ListwiseResult {
            order: (0..n).collect(),
            raw: Some(raw),
            fallback: Some(format!("kept first-stage order: {e}")),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn cands(n: usize) -> Vec<Candidate> {
        (1..=n)
            .map(|i| Candidate {
                doc_id: format!("c{i}"),
                text: format!("text {i}"),
            })
            .collect()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_listwise_output("2 > 1 > 3", 3).unwrap(), vec![2, 1, 3]);
        assert_eq!(
            parse_listwise_output("Passage 3 > Passage 3 > Passage 1", 3).unwrap(),
            vec![3, 1, 2]
        );
        assert!(matches!(
            parse_listwise_output("no passages here", 3),
            Err(Error::ParseFailure(_))
        ));
    }

    #[test]
    fn marked_mentions_win_over_prose_numbers() {
        let text = "Of the 3 passages, Passage 2 > Passage 3 > Passage 1 (top 1 is clear)";
        assert_eq!(parse_listwise_output(text, 3).unwrap(), vec![2, 3, 1]);
        assert_eq!(parse_listwise_output("[3] > [1] > [2]", 3).unwrap(), vec![3, 1, 2]);
        assert_eq!(parse_listwise_output("passage #2, passage 10", 10).unwrap()[..2], [2, 10]);
    }

    #[test]
    fn prompt_lists_candidates_in_order() {
        let p = listwise_prompt("the query", &cands(3), &RerankConfig::default()).unwrap();
        let i1 = p.find("Passage 1: text 1").unwrap();
        let i2 = p.find("Passage 2: text 2").unwrap();
        let i3 = p.find("Passage 3: text 3").unwrap();
        assert!(i1 < i2 && i2 < i3);
        assert!(p.contains("Query: the query"));
        assert!(p.contains("3 passages"));
    }

    #[test]
    fn scripted_order() {
        let cfg = RerankConfig::default();
        let prompt = listwise_prompt("q", &cands(3), &cfg).unwrap();
        let m = MockBackend::new().script(&prompt, "Passage 2 > Passage 1 > Passage 3");
        let r = listwise_rerank("q", &cands(3), &m, &cfg).unwrap();
        assert_eq!(r.order, vec![1, 0, 2]);
        assert!(r.fallback.is_none());
    }

    #[test]
    fn single_candidate_needs_no_call() {
        let m = MockBackend::new();
        let r = listwise_rerank("q", &cands(1), &m, &RerankConfig::default()).unwrap();
        assert_eq!(r.order, vec![0]);
        assert_eq!(m.generate_calls(), 0);
    }

    #[test]
    fn unparseable_falls_back() {
        let cfg = RerankConfig::default();
        let prompt = listwise_prompt("q", &cands(4), &cfg).unwrap();
        let m = MockBackend::new().script(&prompt, "I cannot rank these.");
        let r = listwise_rerank("q", &cands(4), &m, &cfg).unwrap();
        assert_eq!(r.order, vec![0, 1, 2, 3]);
        assert!(r.fallback.is_some());
    }

    #[test]
    fn too_long_is_an_error() {
        let m = MockBackend::new().with_context_limit(10);
        assert!(matches!(
            listwise_rerank("q", &cands(5), &m, &RerankConfig::default()),
            Err(Error::ContextTooLong { .. })
        ));
    }
}
