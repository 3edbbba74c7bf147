//! CSV export of VH-decoder attention.

use vhot_numerics::Tensor;

use crate::error::{contract, CoreError, Result};
use crate::vh::AttentionCapture;
use crate::vocab::Vocabulary;

/// Column label of token `j`: its position and symbol, space shown as `_`.
fn token_label(j: usize, id: usize, vocab: &Vocabulary) -> String {
    let c = match vocab.symbol(id) {
        Some(' ') => '_',
        Some(c) => c,
        None => '?',
    };
    format!("{j}:{c}")
}

/// `[K, N']` head-averaged scores: header `hotword,<token labels>`, one row
/// per hotword. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn attention_csv(capture: &AttentionCapture, tokens: &[usize], vocab: &Vocabulary) -> Result<String> {
    if tokens.len() != capture.tokens() {
        return Err(contract(format!(
            "{} tokens for an attention matrix over {} positions",
            tokens.len(),
            capture.tokens()
        )));
    }
    let m = capture.mean_over_heads();
    let mut out = String::from("hotword");
    for (j, &t) in tokens.iter().enumerate() {
        out.push(',');
        out.push_str(&token_label(j, t, vocab));
    }
    out.push('\n');
    for i in 0..m.rows() {
        out.push_str(&i.to_string());
        for v in m.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses [`attention_csv`] output back to its `[K, N']` matrix.
pub fn parse_attention_csv(text: &str) -> Result<Tensor> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| contract("attention CSV is empty"))?;
    let n = header.split(',').count() - 1;
    let mut data = Vec::new();
    let mut k = 0;
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let idx: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| contract(format!("attention CSV row {i}: bad hotword index")))?;
        if idx != i {
            return Err(contract(format!("attention CSV row {i}: hotword index {idx}")));
        }
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| CoreError::Contract(format!("attention CSV row {i}: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(contract(format!("attention CSV row {i}: {} values for {n} tokens", row.len())));
        }
        data.extend(row);
        k += 1;
    }
    Ok(Tensor::new(vec![k, n], data)?)
}

/// `token,label,top1..top5`: the highest-attended hotwords per token.
pub fn top_hotwords_csv(capture: &AttentionCapture, tokens: &[usize], vocab: &Vocabulary) -> Result<String> {
    if tokens.len() != capture.tokens() {
        return Err(contract("token count does not match the attention matrix"));
    }
    let top = capture.top_hotwords();
    let width = top.first().map_or(0, Vec::len);
    let mut out = String::from("token,label");
    for r in 1..=width {
        out.push_str(&format!(",top{r}"));
    }
    out.push('\n');
    for (j, (&t, best)) in tokens.iter().zip(&top).enumerate() {
        out.push_str(&format!("{j},{}", token_label(j, t, vocab)));
        for b in best {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
    }
    Ok(out)
}
