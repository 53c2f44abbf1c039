//! Total parsers for oracle completions and token-to-value NLL attribution.
//!
//! Both parsers map every possible input text to either parsed values or
//! "invalid" — never an error, never a panic — and the same parser runs for
//! every prompt condition, so differences in invalidity rate are part of the
//! measured protocol effect.

use crate::elicit::oracle::TokenLogProb;

/// Parse a pointwise completion: exactly one finite decimal number with
/// optional surrounding whitespace.
pub fn parse_pointwise(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return None;
    }
    let v: f64 = trimmed.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Parse a joint completion: a strict JSON object with exactly one key
/// `"y"` holding exactly `m` finite numbers, order preserved.
pub fn parse_joint(raw: &str, m: usize) -> Option<Vec<f64>> {
    if m == 0 {
        return None;
    }
    let value: serde_json::Value = serde_json::from_str(raw.trim()).ok()?;
    let obj = value.as_object()?;
    if obj.len() != 1 {
        return None;
    }
    let arr = obj.get("y")?.as_array()?;
    if arr.len() != m {
        return None;
    }
    let mut out = Vec::with_capacity(m);
    for v in arr {
        let f = v.as_f64()?;
        if !f.is_finite() {
            return None;
        }
        out.push(f);
    }
    Some(out)
}

fn has_digit(s: &str) -> bool {
    s.bytes().any(|b| b.is_ascii_digit())
}

/// Mean NLL over the numeric-output tokens of a single-value completion.
///
/// Numeric tokens are those containing at least one digit; punctuation and
/// whitespace tokens do not carry the value. Returns None when the token
/// stream has no numeric token.
pub fn pointwise_nll(tokens: &[TokenLogProb]) -> Option<f64> {
    let nlls: Vec<f64> = tokens
        .iter()
        .filter(|t| has_digit(&t.text))
        .map(|t| -t.logprob)
        .collect();
    if nlls.is_empty() {
        return None;
    }
    Some(nlls.iter().sum::<f64>() / nlls.len() as f64)
}

/// Attribute per-value mean NLLs in a joint completion.
///
/// The token texts are concatenated and the value regions located between
/// the array brackets, split at commas. A token attributes to every value
/// region its byte span overlaps (a token straddling a comma counts for
/// both neighbors), restricted to digit-bearing tokens. Returns None when
/// the bracket/comma structure cannot be recovered; per-value entries are
/// None when no numeric token lands in that region.
pub fn joint_nlls(tokens: &[TokenLogProb], m: usize) -> Option<Vec<Option<f64>>> {
    if m == 0 || tokens.is_empty() {
        return None;
    }
    let mut spans = Vec::with_capacity(tokens.len());
    let mut text = String::new();
    for t in tokens {
        let start = text.len();
        text.push_str(&t.text);
        spans.push((start, text.len()));
    }
    let open = text.find('[')?;
    let close = text.rfind(']')?;
    if close <= open {
        return None;
    }
    // Value regions between the brackets, split at commas.
    let inner = &text[open + 1..close];
    let mut regions: Vec<(usize, usize)> = Vec::with_capacity(m);
    let mut start = open + 1;
    for (off, b) in inner.bytes().enumerate() {
        if b == b',' {
            regions.push((start, open + 1 + off));
            start = open + 1 + off + 1;
        }
    }
    regions.push((start, close));
    if regions.len() != m {
        return None;
    }
    let mut out = vec![(0.0f64, 0usize); m];
    for (t, &(ts, te)) in tokens.iter().zip(&spans) {
        if !has_digit(&t.text) {
            continue;
        }
        for (j, &(rs, re)) in regions.iter().enumerate() {
            if ts < re && te > rs {
                out[j].0 += -t.logprob;
                out[j].1 += 1;
            }
        }
    }
    Some(
        out.into_iter()
            .map(|(sum, count)| (count > 0).then(|| sum / count as f64))
            .collect(),
    )
}
