//! CTC prefix beam search with optional n-gram shallow fusion.
//!
//! Paths that collapse to the same prefix are merged every frame, with the
//! blank-ending and unit-ending masses tracked separately:
//!
//!   p_b(l, t)  += p_total(l, t-1) * p(blank, t)
//!   p_nb(l, t) += p_nb(l, t-1) * p(last, t)              (repeat, merged)
//!   p_nb(l+u, t) += p(u, t) * (p_b(l) if u == last else p_total(l))
//!
//! With an unlimited beam and no LM this computes the exact probability of
//! every collapsed sequence, which is what the exhaustive oracle checks.
//! Fusion adds lambda * LM log-probability plus an insertion bonus per
//! scored token: units as they are appended, or words as `|` boundaries
//! complete them in letter systems.

use std::collections::HashMap;

use crate::ctc::BLANK;
use crate::lm::NGramModel;
use crate::tensor::Tensor;
use crate::units::{UnitInventory, WORD_BOUNDARY};
use crate::util::{log_add, LOG_ZERO};

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub lm_weight: f64,
    pub insertion_bonus: f64,
    pub n_best: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 16,
            lm_weight: 1.5,
            insertion_bonus: 0.5,
            n_best: 1,
        }
    }
}

/// How LM scores attach to a growing prefix.
#[derive(Clone, Copy)]
pub enum Fusion<'a> {
    None,
    /// Score every appended unit symbol (char/subword/phone systems).
    UnitLm {
        lm: &'a NGramModel,
        inventory: &'a UnitInventory,
    },
    /// Score completed words at `|` boundaries and end of utterance
    /// (letter systems).
    WordLm {
        lm: &'a NGramModel,
        inventory: &'a UnitInventory,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub prefix: Vec<usize>,
    pub acoustic_logp: f64,
    pub lm_logp: f64,
    pub scored_tokens: usize,
    pub fused: f64,
}

#[derive(Clone)]
struct Hyp {
    p_b: f64,
    p_nb: f64,
    /// LM log-probability of tokens scored so far.
    lm: f64,
    scored: usize,
    /// Completed LM tokens (units, or words for word fusion).
    context: Vec<String>,
    /// Letters of the word in progress (word fusion only).
    pending: String,
}

impl Hyp {
    fn total(&self) -> f64 {
        log_add(self.p_b, self.p_nb)
    }

    fn fused(&self, cfg: &DecodeConfig) -> f64 {
        self.total() + cfg.lm_weight * self.lm + cfg.insertion_bonus * self.scored as f64
    }
}

fn lm_context<'a>(context: &'a [String], order: usize) -> Vec<&'a str> {
    let start = context.len().saturating_sub(order - 1);
    context[start..].iter().map(String::as_str).collect()
}

/// LM increment for appending unit `u` to a hypothesis. Updates the
/// hypothesis context/pending state in place and returns nothing for
/// letters that have not completed a word yet.
fn apply_unit(hyp: &mut Hyp, u: usize, fusion: &Fusion) {
    match fusion {
        Fusion::None => {}
        Fusion::UnitLm { lm, inventory } => {
            let symbol = inventory.symbol(u).expect("unit id in inventory");
            let ctx = lm_context(&hyp.context, lm.order());
            hyp.lm += lm.logprob_lenient(symbol, &ctx);
            hyp.scored += 1;
            hyp.context.push(symbol.to_string());
        }
        Fusion::WordLm { lm, inventory } => {
            let symbol = inventory.symbol(u).expect("unit id in inventory");
            if symbol == WORD_BOUNDARY {
                if !hyp.pending.is_empty() {
                    let word = std::mem::take(&mut hyp.pending);
                    let ctx = lm_context(&hyp.context, lm.order());
                    hyp.lm += lm.logprob_lenient(&word, &ctx);
                    hyp.scored += 1;
                    hyp.context.push(word);
                }
            } else {
                hyp.pending.push_str(symbol);
            }
        }
    }
}

/// Final-word LM contribution for word fusion (trailing partial word),
/// applied once decoding ends.
fn final_increment(hyp: &Hyp, fusion: &Fusion) -> (f64, usize) {
    match fusion {
        Fusion::WordLm { lm, .. } if !hyp.pending.is_empty() => {
            let ctx = lm_context(&hyp.context, lm.order());
            (lm.logprob_lenient(&hyp.pending, &ctx), 1)
        }
        _ => (0.0, 0),
    }
}

/// LM log-probability of the words completed by `|` boundaries in a
/// letter-system prefix, along with those words. The trailing partial word
/// (no boundary yet) contributes nothing.
pub fn fuse_word_lm(
    prefix: &[usize],
    inventory: &UnitInventory,
    lm: &NGramModel,
) -> (f64, Vec<String>) {
    let mut score = 0.0;
    let mut words = Vec::new();
    let mut pending = String::new();
    for &u in prefix {
        let symbol = inventory.symbol(u).expect("unit id in inventory");
        if symbol == WORD_BOUNDARY {
            if !pending.is_empty() {
                let ctx = lm_context(&words, lm.order());
                score += lm.logprob_lenient(&pending, &ctx);
                words.push(std::mem::take(&mut pending));
            }
        } else {
            pending.push_str(symbol);
        }
    }
    (score, words)
}

pub fn prefix_beam_search(log_probs: &Tensor, fusion: Fusion, cfg: &DecodeConfig) -> Vec<NBestEntry> {
    let rows: Vec<&[f64]> = (0..log_probs.rows()).map(|t| log_probs.row(t)).collect();
    prefix_beam_search_rows(&rows, fusion, cfg)
}

pub fn prefix_beam_search_rows(rows: &[&[f64]], fusion: Fusion, cfg: &DecodeConfig) -> Vec<NBestEntry> {
    assert!(cfg.beam_width >= 1, "beam width must be >= 1");
    let n_best = cfg.n_best.clamp(1, cfg.beam_width);
    if rows.is_empty() {
        return vec![NBestEntry {
            prefix: Vec::new(),
            acoustic_logp: 0.0,
            lm_logp: 0.0,
            scored_tokens: 0,
            fused: 0.0,
        }];
    }

    let root = Hyp {
        p_b: 0.0,
        p_nb: LOG_ZERO,
        lm: 0.0,
        scored: 0,
        context: Vec::new(),
        pending: String::new(),
    };
    let mut beam: Vec<(Vec<usize>, Hyp)> = vec![(Vec::new(), root)];

    for frame in rows {
        let v1 = frame.len();
        let mut next: HashMap<Vec<usize>, Hyp> = HashMap::new();
        for (prefix, hyp) in &beam {
            let total = hyp.total();

            // Stay on the same prefix: emit blank, or repeat the last unit.
            let entry = next.entry(prefix.clone()).or_insert_with(|| Hyp {
                p_b: LOG_ZERO,
                p_nb: LOG_ZERO,
                ..hyp.clone()
            });
            entry.p_b = log_add(entry.p_b, total + frame[BLANK]);
            if let Some(&last) = prefix.last() {
                entry.p_nb = log_add(entry.p_nb, hyp.p_nb + frame[last]);
            }

            // Extend the prefix with each unit.
            for u in 1..v1 {
                let base = if Some(&u) == prefix.last() {
                    hyp.p_b // same unit needs a blank in between
                } else {
                    total
                };
                if base == LOG_ZERO {
                    continue;
                }
                let mut new_prefix = prefix.clone();
                new_prefix.push(u);
                let entry = next.entry(new_prefix).or_insert_with(|| {
                    let mut h = Hyp {
                        p_b: LOG_ZERO,
                        p_nb: LOG_ZERO,
                        ..hyp.clone()
                    };
                    apply_unit(&mut h, u, &fusion);
                    h
                });
                entry.p_nb = log_add(entry.p_nb, base + frame[u]);
            }
        }

        // Keep the top beam_width prefixes by fused score; ties break
        // toward the lexicographically smaller prefix.
        let mut candidates: Vec<(Vec<usize>, Hyp)> = next.into_iter().collect();
        candidates.sort_by(|a, b| {
            b.1.fused(cfg)
                .partial_cmp(&a.1.fused(cfg))
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        candidates.truncate(cfg.beam_width);
        beam = candidates;
    }

    let mut finals: Vec<NBestEntry> = beam
        .into_iter()
        .map(|(prefix, hyp)| {
            let (inc, extra) = final_increment(&hyp, &fusion);
            let lm_logp = hyp.lm + inc;
            let scored_tokens = hyp.scored + extra;
            let acoustic_logp = hyp.total();
            NBestEntry {
                prefix,
                acoustic_logp,
                lm_logp,
                scored_tokens,
                fused: acoustic_logp
                    + cfg.lm_weight * lm_logp
                    + cfg.insertion_bonus * scored_tokens as f64,
            }
        })
        .collect();
    finals.sort_by(|a, b| {
        b.fused
            .partial_cmp(&a.fused)
            .unwrap()
            .then_with(|| a.prefix.cmp(&b.prefix))
    });
    finals.truncate(n_best);
    finals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::{collapse, greedy_decode};
    use crate::lm;
    use crate::rng::Prng;
    use crate::tensor::log_softmax;
    use crate::units::build_letter_inventory;
    use crate::util::log_sum;

    fn acoustic_only(beam_width: usize) -> DecodeConfig {
        DecodeConfig {
            beam_width,
            lm_weight: 0.0,
            insertion_bonus: 0.0,
            n_best: beam_width,
        }
    }

    fn random_log_probs(t: usize, v1: usize, rng: &mut Prng) -> Tensor {
        let x = Tensor::randn(&[t, v1], 1.0, rng);
        log_softmax(&x, 1).unwrap()
    }

    /// Exhaustive oracle: probability of every collapsed sequence by
    /// enumerating all (V+1)^T paths.
    fn brute_force_best(log_probs: &Tensor) -> (Vec<usize>, f64) {
        let (t_len, v1) = (log_probs.rows(), log_probs.cols());
        let mut by_seq: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        let mut path = vec![0usize; t_len];
        loop {
            let lp: f64 = (0..t_len).map(|t| log_probs.at2(t, path[t])).sum();
            by_seq.entry(collapse(&path)).or_default().push(lp);
            let mut pos = 0;
            loop {
                if pos == t_len {
                    let mut best: Option<(Vec<usize>, f64)> = None;
                    for (seq, lps) in by_seq {
                        let total = log_sum(lps);
                        match &best {
                            Some((bseq, btot))
                                if *btot > total || (*btot == total && *bseq <= seq) => {}
                            _ => best = Some((seq, total)),
                        }
                    }
                    return best.unwrap();
                }
                path[pos] += 1;
                if path[pos] < v1 {
                    break;
                }
                path[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn unlimited_beam_matches_exhaustive_oracle() {
        let mut rng = Prng::new(61);
        for seed in 0..50 {
            let t = 1 + (seed % 4);
            let v = 1 + (seed % 4);
            let lp = random_log_probs(t, v + 1, &mut rng);
            let (oracle_seq, oracle_logp) = brute_force_best(&lp);
            // Beam wide enough to hold every collapsed sequence.
            let out = prefix_beam_search(&lp, Fusion::None, &acoustic_only(4096));
            assert_eq!(out[0].prefix, oracle_seq, "seed {seed}");
            assert!(
                (out[0].acoustic_logp - oracle_logp).abs() <= 1e-10,
                "seed {seed}: {} vs {}",
                out[0].acoustic_logp,
                oracle_logp
            );
        }
    }

    #[test]
    fn t_zero_yields_empty_hypothesis_with_score_zero() {
        let out = prefix_beam_search_rows(&[], Fusion::None, &acoustic_only(4));
        assert_eq!(out.len(), 1);
        assert!(out[0].prefix.is_empty());
        assert_eq!(out[0].fused, 0.0);
    }

    /// Peaked rows: one symbol carries almost all per-frame mass, the
    /// regime where the argmax path dominates every prefix.
    fn peaked_log_probs(t: usize, v1: usize, rng: &mut Prng) -> Tensor {
        let mut lp = Tensor::zeros(&[t, v1]);
        let peak: f64 = 0.99;
        let rest = ((1.0 - peak) / (v1 - 1) as f64).ln();
        for ti in 0..t {
            let hot = rng.below(v1);
            for k in 0..v1 {
                lp.values_mut()[ti * v1 + k] = if k == hot { peak.ln() } else { rest };
            }
        }
        lp
    }

    #[test]
    fn beam_one_equals_greedy_on_one_hot_frames() {
        let mut lp = Tensor::filled(&[3, 3], -1e9);
        for (t, k) in [(0usize, 0usize), (1, 1), (2, 2)] {
            lp.values_mut()[t * 3 + k] = 0.0;
        }
        let out = prefix_beam_search(&lp, Fusion::None, &acoustic_only(1));
        assert_eq!(out[0].prefix, greedy_decode(&lp));
        assert_eq!(out[0].prefix, vec![1, 2]);
    }

    #[test]
    fn beam_one_equals_greedy_on_random_peaked_inputs() {
        let mut rng = Prng::new(67);
        for i in 0..100 {
            let t = 1 + rng.below(8);
            let v = 1 + rng.below(4);
            let lp = peaked_log_probs(t, v + 1, &mut rng);
            let out = prefix_beam_search(&lp, Fusion::None, &acoustic_only(1));
            assert_eq!(out[0].prefix, greedy_decode(&lp), "case {i}");
        }
    }

    #[test]
    fn top_score_is_monotone_in_beam_width() {
        let mut rng = Prng::new(71);
        for _ in 0..20 {
            let lp = random_log_probs(6, 4, &mut rng);
            let mut prev = f64::NEG_INFINITY;
            for b in [1usize, 2, 4, 8, 64, 1024] {
                let out = prefix_beam_search(&lp, Fusion::None, &acoustic_only(b));
                assert!(
                    out[0].fused >= prev - 1e-12,
                    "beam {b}: {} < {prev}",
                    out[0].fused
                );
                prev = out[0].fused;
            }
        }
    }

    #[test]
    fn no_duplicate_prefixes_in_nbest() {
        let mut rng = Prng::new(73);
        let lp = random_log_probs(5, 4, &mut rng);
        let out = prefix_beam_search(&lp, Fusion::None, &acoustic_only(64));
        let mut seen = std::collections::HashSet::new();
        for e in &out {
            assert!(seen.insert(e.prefix.clone()), "duplicate {:?}", e.prefix);
        }
    }

    #[test]
    fn zero_weights_make_fused_equal_acoustic() {
        let mut rng = Prng::new(79);
        let lp = random_log_probs(4, 3, &mut rng);
        let inv = build_letter_inventory(&["ab ab".to_string()]).unwrap();
        let model = lm::train(&[vec!["ab".to_string()]], 2).unwrap();
        let cfg = DecodeConfig {
            beam_width: 8,
            lm_weight: 0.0,
            insertion_bonus: 0.0,
            n_best: 8,
        };
        let out = prefix_beam_search(
            &lp,
            Fusion::WordLm {
                lm: &model,
                inventory: &inv,
            },
            &cfg,
        );
        for e in out {
            assert_eq!(e.fused, e.acoustic_logp);
        }
    }

    #[test]
    fn word_fusion_scores_completed_words_only() {
        let inv = build_letter_inventory(&["the cat".to_string()]).unwrap();
        let model = lm::train(
            &[vec!["the".to_string(), "cat".to_string()], vec!["the".to_string()]],
            2,
        )
        .unwrap();
        let enc = |s: &str| crate::units::encode_text(&inv, s).unwrap();

        // No boundary yet: nothing scored.
        let (score, words) = fuse_word_lm(&enc("th"), &inv, &model);
        assert_eq!(score, 0.0);
        assert!(words.is_empty());

        // "t h e |" scores exactly P(the | <s>).
        let mut with_boundary = enc("the");
        with_boundary.push(inv.boundary_id().unwrap());
        let (score, words) = fuse_word_lm(&with_boundary, &inv, &model);
        assert_eq!(words, vec!["the".to_string()]);
        let expect = model.logprob("the", &[]).unwrap();
        // Context is empty at the sentence start under this word LM's view.
        assert!((score - expect).abs() < 1e-12);

        // Two completed words sum their conditionals.
        let mut two = enc("the cat");
        two.push(inv.boundary_id().unwrap());
        let (score2, words2) = fuse_word_lm(&two, &inv, &model);
        assert_eq!(words2.len(), 2);
        let expect2 =
            model.logprob("the", &[]).unwrap() + model.logprob("cat", &["the"]).unwrap();
        assert!((score2 - expect2).abs() < 1e-12);
    }

    #[test]
    fn incremental_word_fusion_matches_recompute() {
        let inv = build_letter_inventory(&["the cat sat".to_string()]).unwrap();
        let model = lm::train(
            &[
                vec!["the".to_string(), "cat".to_string(), "sat".to_string()],
                vec!["the".to_string(), "cat".to_string()],
            ],
            2,
        )
        .unwrap();
        let mut rng = Prng::new(83);
        let lp = random_log_probs(6, inv.size(), &mut rng);
        let cfg = DecodeConfig {
            beam_width: 8,
            lm_weight: 1.5,
            insertion_bonus: 0.0,
            n_best: 8,
        };
        let out = prefix_beam_search(
            &lp,
            Fusion::WordLm {
                lm: &model,
                inventory: &inv,
            },
            &cfg,
        );
        for e in out {
            let (completed, words) = fuse_word_lm(&e.prefix, &inv, &model);
            // Add the trailing partial word the decoder scores at the end.
            let text = crate::units::decode_units(&inv, &e.prefix).unwrap();
            let trailing = text.split_whitespace().count() > words.len();
            let mut expect = completed;
            if trailing {
                let last = text.split_whitespace().last().unwrap();
                let ctx_start = words.len().saturating_sub(model.order() - 1);
                let ctx: Vec<&str> = words[ctx_start..].iter().map(String::as_str).collect();
                expect += model.logprob_lenient(last, &ctx);
            }
            assert!(
                (e.lm_logp - expect).abs() < 1e-12,
                "prefix {:?}: {} vs {}",
                e.prefix,
                e.lm_logp,
                expect
            );
        }
    }
}
