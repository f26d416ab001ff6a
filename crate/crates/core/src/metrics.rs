//! RougeL and Jaccard scoring of a synthesized entry against its actual
//! text, plus mean ± std summaries over entries.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Tokenizer, WikiBioEntry};
use crate::error::{Error, Result};

/// Length of the longest common subsequence. `O(|a| |b|)` time,
/// `O(min(|a|, |b|))` space.
pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    #[default]
    F1,
    Recall,
    Precision,
}

/// LCS-based F1 (or recall / precision). Empty against empty is 1.
pub fn rouge_l(reference: &TokenSeq, candidate: &TokenSeq) -> f64 {
    rouge_l_variant(reference, candidate, RougeVariant::F1)
}

pub fn rouge_l_variant(reference: &TokenSeq, candidate: &TokenSeq, variant: RougeVariant) -> f64 {
    if reference.is_empty() && candidate.is_empty() {
        return 1.0;
    }
    let l = lcs_length(reference.as_slice(), candidate.as_slice()) as f64;
    let ratio = |den: usize| if den == 0 { 0.0 } else { l / den as f64 };
    let p = ratio(candidate.len());
    let r = ratio(reference.len());
    match variant {
        RougeVariant::Precision => p,
        RougeVariant::Recall => r,
        // 2pr / (p + r) collapses to one division of integers, which
        // rounds once.
        RougeVariant::F1 => 2.0 * l / (reference.len() + candidate.len()) as f64,
    }
}

/// Intersection over union of the token sets; 1 for two empty sets.
pub fn jaccard(a: &TokenSeq, b: &TokenSeq) -> f64 {
    let sa: HashSet<&str> = a.tokens.iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.tokens.iter().map(String::as_str).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub entry_id: String,
    pub rouge_l: f64,
    pub jaccard: f64,
}

pub fn score_entry(
    actual: &WikiBioEntry,
    synthesized: &str,
    tokenizer: &dyn Tokenizer,
    variant: RougeVariant,
) -> MetricScore {
    let reference = tokenizer.tokenize(&actual.reference_text());
    let candidate = tokenizer.tokenize(synthesized);
    MetricScore {
        entry_id: actual.id.clone(),
        rouge_l: rouge_l_variant(&reference, &candidate, variant),
        jaccard: jaccard(&reference, &candidate),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64], kind: StdKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("metric summary over zero entries"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let denom = match kind {
            StdKind::Population => n as f64,
            StdKind::Sample if n > 1 => (n - 1) as f64,
            StdKind::Sample => 1.0,
        };
        Ok(MetricSummary {
            mean,
            std: (ss / denom).sqrt(),
            n,
        })
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    pub rouge_l: MetricSummary,
    pub jaccard: MetricSummary,
}

pub fn summarize(scores: &[MetricScore], kind: StdKind) -> Result<Summaries> {
    let rouge: Vec<f64> = scores.iter().map(|s| s.rouge_l).collect();
    let jac: Vec<f64> = scores.iter().map(|s| s.jaccard).collect();
    Ok(Summaries {
        rouge_l: MetricSummary::of(&rouge, kind)?,
        jaccard: MetricSummary::of(&jac, kind)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ReferenceTokenizer;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::from(s.split_whitespace().collect::<Vec<_>>())
    }

    /// Exhaustive subsequence enumeration over the shorter side.
    pub(crate) fn brute_lcs(a: &[String], b: &[String]) -> usize {
        let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut best = 0;
        for mask in 0u32..(1 << short.len()) {
            let sub: Vec<&String> = (0..short.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &short[i])
                .collect();
            if sub.len() <= best {
                continue;
            }
            let mut it = long.iter();
            if sub.iter().all(|t| it.any(|x| x == *t)) {
                best = sub.len();
            }
        }
        best
    }

    #[test]
    fn lcs_cases() {
        let a = seq("a b c d");
        assert_eq!(lcs_length(a.as_slice(), a.as_slice()), 4);
        assert_eq!(lcs_length(seq("a b").as_slice(), seq("c d").as_slice()), 0);
        assert_eq!(lcs_length(a.as_slice(), seq("a c d").as_slice()), 3);
        assert_eq!(brute_lcs(a.as_slice(), seq("a c d").as_slice()), 3);
        assert_eq!(lcs_length(&[], a.as_slice()), 0);
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge_l(&seq("a b c"), &seq("a b c")), 1.0);
        assert_eq!(rouge_l(&seq("a b"), &seq("c d")), 0.0);
        assert_relative_eq!(rouge_l(&seq("a b c d"), &seq("a c d")), 6.0 / 7.0);
        assert_relative_eq!(
            rouge_l_variant(&seq("a b c d"), &seq("a c d"), RougeVariant::Recall),
            0.75
        );
        assert_relative_eq!(
            rouge_l_variant(&seq("a b c d"), &seq("a c d"), RougeVariant::Precision),
            1.0
        );
        assert_eq!(rouge_l(&seq(""), &seq("")), 1.0);
        assert_eq!(rouge_l(&seq("a"), &seq("")), 0.0);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&seq("a b a"), &seq("b a")), 1.0);
        assert_eq!(jaccard(&seq("a b"), &seq("c d")), 0.0);
        assert_eq!(jaccard(&seq("a b c"), &seq("b c d")), 0.5);
        assert_eq!(jaccard(&seq(""), &seq("")), 1.0);
        assert_eq!(jaccard(&seq(""), &seq("a")), 0.0);
    }

    #[test]
    fn entry_scoring() {
        let e = WikiBioEntry {
            id: "x".into(),
            actual_sentences: vec!["He was born.".into(), "He died.".into()],
            hal_sentences: vec!["h".into(), "i".into()],
            annotations: None,
        };
        let tk = ReferenceTokenizer;
        let s = score_entry(&e, "He was born. He died.", &tk, RougeVariant::F1);
        assert_eq!((s.rouge_l, s.jaccard), (1.0, 1.0));
        let s = score_entry(&e, "", &tk, RougeVariant::F1);
        assert_eq!((s.rouge_l, s.jaccard), (0.0, 0.0));
    }

    fn score(v: f64) -> MetricScore {
        MetricScore {
            entry_id: "e".into(),
            rouge_l: v,
            jaccard: v,
        }
    }

    #[test]
    fn summaries() {
        let s = summarize(&[score(0.5), score(0.5), score(0.5)], StdKind::Population).unwrap();
        assert_eq!(s.rouge_l.to_string(), "0.50 ± 0.00");
        let s = summarize(&[score(0.0), score(1.0)], StdKind::Population).unwrap();
        assert_eq!((s.jaccard.mean, s.jaccard.std), (0.5, 0.5));
        let s = summarize(&[score(0.0), score(1.0)], StdKind::Sample).unwrap();
        assert_relative_eq!(s.jaccard.std, 0.5f64.sqrt());
        assert!(summarize(&[], StdKind::Population).is_err());
        let table_row = MetricSummary {
            mean: 0.39,
            std: 0.14,
            n: 238,
        };
        assert_eq!(table_row.to_string(), "0.39 ± 0.14");
    }

    fn tokens() -> impl Strategy<Value = TokenSeq> {
        proptest::collection::vec(prop_oneof!["a", "b", "c", "d"], 0..=10).prop_map(|v| {
            TokenSeq {
                tokens: v.into_iter().map(|s| s.to_string()).collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_bounded(a in tokens(), b in tokens()) {
            let r = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - rouge_l(&b, &a)).abs() < 1e-15);
            prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
        }

        #[test]
        fn lcs_matches_enumeration(a in tokens(), b in tokens()) {
            prop_assert_eq!(lcs_length(a.as_slice(), b.as_slice()), brute_lcs(a.as_slice(), b.as_slice()));
        }

        #[test]
        fn adding_reference_tokens_never_lowers_jaccard(reference in tokens(), pick in proptest::collection::vec(0usize..10, 0..5), extra in 0usize..10) {
            prop_assume!(!reference.is_empty());
            let cand: Vec<String> = pick.iter().map(|i| reference.tokens[i % reference.len()].clone()).collect();
            let before = jaccard(&reference, &TokenSeq { tokens: cand.clone() });
            let mut grown = cand;
            grown.push(reference.tokens[extra % reference.len()].clone());
            let after = jaccard(&reference, &TokenSeq { tokens: grown });
            prop_assert!(after >= before);
        }
    }
}
