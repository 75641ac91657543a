use std::fmt::Display;

/// Space-separated tokens with predicted selections wrapped in `[..]` and gold
/// positions in `{..}`; a position in both renders as `[{tok}]`.
pub fn render_rationale<T: Display>(tokens: &[T], pred: &[bool], gold: Option<&[bool]>) -> String {
    tokens
        .iter()
        .enumerate()
        .map(|(t, tok)| {
            let mut s = tok.to_string();
            if gold.is_some_and(|g| g.get(t) == Some(&true)) {
                s = format!("{{{s}}}");
            }
            if pred.get(t) == Some(&true) {
                s = format!("[{s}]");
            }
            s
        })
        .collect::<Vec<_>>()
        .join(" ")
}
