//! Backoff n-gram language model with Witten-Bell smoothing and ARPA
//! serialization.
//!
//! Training counts padded n-grams and bakes the interpolated Witten-Bell
//! estimates into explicit probability/backoff tables, which makes the
//! model equivalent to its own ARPA file: for a seen context h with total
//! count c(h) and T(h) distinct continuations,
//!
//!   P(w|h) = (c(hw) + T(h) * P(w|h')) / (c(h) + T(h))
//!   bow(h) = T(h) / (c(h) + T(h))
//!
//! recursing to a uniform 1/|V| floor below the unigram level. Every
//! conditional therefore sums to exactly 1 over the vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub const SENT_START: &str = "<s>";
pub const SENT_END: &str = "</s>";

/// Placeholder log10 probability for context-only entries such as `<s>`.
const PLACEHOLDER_LOG10: f64 = -99.0;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("n-gram order must be >= 1, got {0}")]
    BadOrder(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token {0:?} is not in the model vocabulary")]
    UnknownToken(String),
    #[error("cannot score an empty sentence")]
    EmptySentence,
    #[error("arpa parse error at line {line}: {message}")]
    ArpaParse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LmError>;

type TokenId = u32;

#[derive(Debug, Default, Clone)]
struct ContextStats {
    total: usize,
    counts: HashMap<TokenId, usize>,
}

impl ContextStats {
    fn types(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    /// All tokens including <s>; ids index this table.
    tokens: Vec<String>,
    token_ids: HashMap<String, TokenId>,
    /// Prediction vocabulary (excludes <s>).
    vocab: Vec<TokenId>,
    /// Natural-log conditional probabilities, keyed by [ctx.., word].
    probs: Vec<HashMap<Vec<TokenId>, f64>>,
    /// Natural-log backoff weights, keyed by context.
    backoffs: Vec<HashMap<Vec<TokenId>, f64>>,
    /// Raw padded counts, kept for the MLE diagnostics.
    counts: Vec<HashMap<Vec<TokenId>, ContextStats>>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Prediction vocabulary (no <s>), in id order.
    pub fn vocab(&self) -> Vec<&str> {
        self.vocab.iter().map(|&id| self.tokens[id as usize].as_str()).collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_ids.contains_key(token)
    }

    fn id_of(&self, token: &str) -> Result<TokenId> {
        self.token_ids
            .get(token)
            .copied()
            .ok_or_else(|| LmError::UnknownToken(token.to_string()))
    }

    /// Natural-log P(token | context). Context longer than order-1 is
    /// truncated to its most recent tokens.
    pub fn logprob(&self, token: &str, context: &[&str]) -> Result<f64> {
        let tid = self.id_of(token)?;
        let start = context.len().saturating_sub(self.order - 1);
        let mut ctx = Vec::with_capacity(self.order - 1);
        for t in &context[start..] {
            ctx.push(self.id_of(t)?);
        }
        Ok(self.logprob_ids(tid, &ctx))
    }

    fn logprob_ids(&self, token: TokenId, ctx: &[TokenId]) -> f64 {
        let n = ctx.len() + 1; // order being queried
        let mut key = ctx.to_vec();
        key.push(token);
        if let Some(&lp) = self.probs[n - 1].get(&key) {
            return lp;
        }
        if ctx.is_empty() {
            // Below the unigram level: the uniform floor.
            return -( self.vocab.len() as f64).ln();
        }
        let bow = self.backoffs[ctx.len() - 1].get(ctx).copied().unwrap_or(0.0);
        bow + self.logprob_ids(token, &ctx[1..])
    }

    /// Like `logprob`, but tolerant of tokens outside the vocabulary:
    /// an unknown token scores at the uniform floor, and unknown context
    /// tokens truncate the context to the known suffix. Beam fusion uses
    /// this because hypotheses can assemble words the LM never saw.
    pub fn logprob_lenient(&self, token: &str, context: &[&str]) -> f64 {
        let Some(tid) = self.token_ids.get(token).copied() else {
            return -(self.vocab.len() as f64).ln();
        };
        let start = context.len().saturating_sub(self.order - 1);
        let mut ctx: Vec<TokenId> = Vec::with_capacity(self.order - 1);
        for t in &context[start..] {
            match self.token_ids.get(*t) {
                Some(&id) => ctx.push(id),
                None => ctx.clear(), // keep only the suffix after the unknown
            }
        }
        self.logprob_ids(tid, &ctx)
    }

    /// Unsmoothed count-ratio conditional, as a diagnostic. Returns None
    /// when the context was never seen.
    pub fn mle_prob(&self, token: &str, context: &[&str]) -> Result<Option<f64>> {
        let tid = self.id_of(token)?;
        let start = context.len().saturating_sub(self.order - 1);
        let mut ctx = Vec::with_capacity(self.order - 1);
        for t in &context[start..] {
            ctx.push(self.id_of(t)?);
        }
        Ok(self.counts[ctx.len()].get(&ctx).map(|stats| {
            let c = stats.counts.get(&tid).copied().unwrap_or(0);
            c as f64 / stats.total as f64
        }))
    }

    /// Natural-log probability of a sentence: every token is scored in
    /// order, then </s>, with <s> padding on the left.
    pub fn sentence_logprob(&self, tokens: &[String]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(LmError::EmptySentence);
        }
        let mut ids = vec![self.id_of(SENT_START)?; self.order - 1];
        let mut total = 0.0;
        for t in tokens {
            let tid = self.id_of(t)?;
            let ctx = &ids[ids.len().saturating_sub(self.order - 1)..];
            total += self.logprob_ids(tid, ctx);
            ids.push(tid);
        }
        let end = self.id_of(SENT_END)?;
        let ctx = &ids[ids.len().saturating_sub(self.order - 1)..];
        total += self.logprob_ids(end, ctx);
        Ok(total)
    }

    /// exp(-mean token log-probability) over the corpus, </s> included.
    pub fn perplexity(&self, sentences: &[Vec<String>]) -> Result<f64> {
        if sentences.is_empty() {
            return Err(LmError::EmptySentence);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for s in sentences {
            total += self.sentence_logprob(s)?;
            count += s.len() + 1;
        }
        Ok((-total / count as f64).exp())
    }
}

/// Train an order-`n` model on tokenized sentences.
pub fn train(corpus: &[Vec<String>], n: usize) -> Result<NGramModel> {
    if n < 1 {
        return Err(LmError::BadOrder(n));
    }
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(LmError::EmptyCorpus);
    }

    // Token table: <s> first, then </s>, then corpus tokens in sorted order.
    let mut token_ids: HashMap<String, TokenId> = HashMap::new();
    let mut tokens: Vec<String> = Vec::new();
    let intern = |s: &str, tokens: &mut Vec<String>, ids: &mut HashMap<String, TokenId>| {
        if let Some(&id) = ids.get(s) {
            return id;
        }
        let id = tokens.len() as TokenId;
        tokens.push(s.to_string());
        ids.insert(s.to_string(), id);
        id
    };
    let start = intern(SENT_START, &mut tokens, &mut token_ids);
    let end = intern(SENT_END, &mut tokens, &mut token_ids);
    let mut sorted_tokens: Vec<&String> = corpus.iter().flatten().collect();
    sorted_tokens.sort();
    for t in sorted_tokens {
        intern(t, &mut tokens, &mut token_ids);
    }
    let vocab: Vec<TokenId> = (0..tokens.len() as TokenId).filter(|&id| id != start).collect();

    // Count n-grams over <s>-padded sentences; n-grams ending in <s> are
    // never predicted and are skipped.
    let mut counts: Vec<HashMap<Vec<TokenId>, ContextStats>> = vec![HashMap::new(); n];
    for sentence in corpus {
        if sentence.is_empty() {
            continue;
        }
        let mut padded = vec![start; n - 1];
        for t in sentence {
            padded.push(token_ids[t]);
        }
        padded.push(end);
        for pos in 0..padded.len() {
            let word = padded[pos];
            if word == start {
                continue;
            }
            for k in 0..n {
                if pos < k {
                    continue;
                }
                let ctx = padded[pos - k..pos].to_vec();
                let stats = counts[k].entry(ctx).or_default();
                stats.total += 1;
                *stats.counts.entry(word).or_default() += 1;
            }
        }
    }

    // Bake interpolated Witten-Bell estimates bottom-up.
    let uniform = -(vocab.len() as f64).ln();
    let mut probs: Vec<HashMap<Vec<TokenId>, f64>> = vec![HashMap::new(); n];
    let mut backoffs: Vec<HashMap<Vec<TokenId>, f64>> = vec![HashMap::new(); n.saturating_sub(1)];
    for k in 0..n {
        let level: Vec<(Vec<TokenId>, ContextStats)> =
            counts[k].iter().map(|(c, s)| (c.clone(), s.clone())).collect();
        for (ctx, stats) in level {
            let t_types = stats.types() as f64;
            let denom = stats.total as f64 + t_types;
            for (&word, &c) in &stats.counts {
                let lower = if k == 0 {
                    uniform
                } else {
                    let mut shorter = ctx[1..].to_vec();
                    shorter.push(word);
                    probs[k - 1]
                        .get(&shorter)
                        .copied()
                        .unwrap_or_else(|| {
                            // Seen at order k but unseen at k-1 cannot happen
                            // (every suffix of a seen n-gram is seen), so this
                            // is only a defensive fall-through.
                            uniform
                        })
                };
                let p = (c as f64 + t_types * lower.exp()) / denom;
                let mut key = ctx.clone();
                key.push(word);
                probs[k].insert(key, p.ln());
            }
            // bow(h) lives at index |h| - 1, matching the lookup path; the
            // empty context never backs off (the floor is baked into the
            // stored unigrams).
            if k >= 1 {
                backoffs[k - 1].insert(ctx.clone(), (t_types / denom).ln());
            }
        }
    }

    Ok(NGramModel {
        order: n,
        tokens,
        token_ids,
        vocab,
        probs,
        backoffs,
        counts,
    })
}

// ----- ARPA ------------------------------------------------------------------------------

const LN_10: f64 = std::f64::consts::LN_10;

/// Write the model in ARPA text format (base-10 logs, 6 decimals).
pub fn write_arpa(model: &NGramModel, path: &Path) -> Result<()> {
    let mut sections: Vec<Vec<String>> = Vec::with_capacity(model.order);
    for k in 0..model.order {
        // Probability entries, plus placeholder lines for sequences that
        // only ever appear as contexts (pure <s> prefixes).
        let mut keys: Vec<Vec<TokenId>> = model.probs[k].keys().cloned().collect();
        if k + 1 < model.order {
            for ctx in model.backoffs[k].keys() {
                if !model.probs[k].contains_key(ctx) {
                    keys.push(ctx.clone());
                }
            }
        }
        keys.sort();
        let mut lines = Vec::with_capacity(keys.len());
        for key in keys {
            let log10 = match model.probs[k].get(&key) {
                Some(lp) => lp / LN_10,
                None => PLACEHOLDER_LOG10,
            };
            let words: Vec<&str> = key.iter().map(|&id| model.tokens[id as usize].as_str()).collect();
            let bow = if k + 1 < model.order {
                model.backoffs[k].get(&key).map(|b| b / LN_10)
            } else {
                None
            };
            let line = match bow {
                Some(b) => format!("{:.6}\t{}\t{:.6}", log10, words.join(" "), b),
                None => format!("{:.6}\t{}", log10, words.join(" ")),
            };
            lines.push(line);
        }
        sections.push(lines);
    }

    let mut text = String::new();
    text.push_str("\\data\\\n");
    for (k, lines) in sections.iter().enumerate() {
        let _ = writeln!(text, "ngram {}={}", k + 1, lines.len());
    }
    for (k, lines) in sections.iter().enumerate() {
        let _ = writeln!(text, "\n\\{}-grams:", k + 1);
        for line in lines {
            let _ = writeln!(text, "{line}");
        }
    }
    text.push_str("\n\\end\\\n");
    std::fs::write(path, text).map_err(|e| LmError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read an ARPA file back into a queryable model. Raw counts are not part
/// of the format, so the MLE diagnostics of a loaded model are empty.
pub fn read_arpa(path: &Path) -> Result<NGramModel> {
    let text = std::fs::read_to_string(path).map_err(|e| LmError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut declared: Vec<usize> = Vec::new();
    let mut lines = text.lines().enumerate().peekable();

    // \data\ header.
    loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) if l.trim() == "\\data\\" => break,
            Some((i, l)) => {
                return Err(LmError::ArpaParse {
                    line: i + 1,
                    message: format!("expected \\data\\, got {l:?}"),
                })
            }
            None => {
                return Err(LmError::ArpaParse {
                    line: 1,
                    message: "missing \\data\\ section".into(),
                })
            }
        }
    }
    while let Some((i, l)) = lines.peek().copied() {
        let t = l.trim();
        if t.is_empty() {
            lines.next();
            continue;
        }
        if let Some(rest) = t.strip_prefix("ngram ") {
            let mut parts = rest.splitn(2, '=');
            let (ord, cnt) = (parts.next(), parts.next());
            let ord: usize = ord
                .and_then(|s| s.trim().parse().ok())
                .ok_or(LmError::ArpaParse {
                    line: i + 1,
                    message: "bad ngram count line".into(),
                })?;
            let cnt: usize = cnt
                .and_then(|s| s.trim().parse().ok())
                .ok_or(LmError::ArpaParse {
                    line: i + 1,
                    message: "bad ngram count line".into(),
                })?;
            if ord != declared.len() + 1 {
                return Err(LmError::ArpaParse {
                    line: i + 1,
                    message: format!("ngram orders out of sequence at {ord}"),
                });
            }
            declared.push(cnt);
            lines.next();
        } else {
            break;
        }
    }
    if declared.is_empty() {
        return Err(LmError::ArpaParse {
            line: 1,
            message: "\\data\\ lists no orders".into(),
        });
    }
    let order = declared.len();

    let mut token_ids: HashMap<String, TokenId> = HashMap::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut probs: Vec<HashMap<Vec<TokenId>, f64>> = vec![HashMap::new(); order];
    let mut backoffs: Vec<HashMap<Vec<TokenId>, f64>> = vec![HashMap::new(); order.saturating_sub(1)];

    let mut current: Option<usize> = None;
    let mut seen_end = false;
    let mut section_counts = vec![0usize; order];
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            seen_end = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix('\\') {
            if let Some(ord_txt) = rest.strip_suffix("-grams:") {
                let ord: usize = ord_txt.parse().map_err(|_| LmError::ArpaParse {
                    line: i + 1,
                    message: format!("bad section header {line:?}"),
                })?;
                if ord == 0 || ord > order {
                    return Err(LmError::ArpaParse {
                        line: i + 1,
                        message: format!("section order {ord} not declared in \\data\\"),
                    });
                }
                current = Some(ord);
                continue;
            }
            return Err(LmError::ArpaParse {
                line: i + 1,
                message: format!("unrecognized section header {line:?}"),
            });
        }
        let Some(ord) = current else {
            return Err(LmError::ArpaParse {
                line: i + 1,
                message: "entry before any \\N-grams: header".into(),
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let has_bow = fields.len() == ord + 2;
        if !(has_bow || fields.len() == ord + 1) {
            return Err(LmError::ArpaParse {
                line: i + 1,
                message: format!("expected {} or {} fields, got {}", ord + 1, ord + 2, fields.len()),
            });
        }
        let log10: f64 = fields[0].parse().map_err(|_| LmError::ArpaParse {
            line: i + 1,
            message: format!("bad log probability {:?}", fields[0]),
        })?;
        let mut key = Vec::with_capacity(ord);
        for w in &fields[1..=ord] {
            let id = match token_ids.get(*w) {
                Some(&id) => id,
                None => {
                    let id = tokens.len() as TokenId;
                    tokens.push((*w).to_string());
                    token_ids.insert((*w).to_string(), id);
                    id
                }
            };
            key.push(id);
        }
        if log10 > PLACEHOLDER_LOG10 {
            probs[ord - 1].insert(key.clone(), log10 * LN_10);
        }
        if has_bow {
            let bow: f64 = fields[ord + 1].parse().map_err(|_| LmError::ArpaParse {
                line: i + 1,
                message: format!("bad backoff weight {:?}", fields[ord + 1]),
            })?;
            if ord < order {
                backoffs[ord - 1].insert(key, bow * LN_10);
            }
        }
        section_counts[ord - 1] += 1;
    }
    if !seen_end {
        return Err(LmError::ArpaParse {
            line: text.lines().count(),
            message: "missing \\end\\".into(),
        });
    }
    for (k, (&decl, &got)) in declared.iter().zip(section_counts.iter()).enumerate() {
        if decl != got {
            return Err(LmError::ArpaParse {
                line: 1,
                message: format!("\\data\\ declares {decl} {}-grams but section has {got}", k + 1),
            });
        }
    }

    let start_id = token_ids.get(SENT_START).copied();
    let vocab: Vec<TokenId> = (0..tokens.len() as TokenId)
        .filter(|id| Some(*id) != start_id)
        .collect();
    Ok(NGramModel {
        order,
        tokens,
        token_ids,
        vocab,
        probs,
        backoffs,
        counts: vec![HashMap::new(); order],
    })
}
