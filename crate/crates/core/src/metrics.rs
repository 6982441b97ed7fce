//! Scoring: edit distance, WER/CER, relative improvement, code purity,
//! and the small report tables the experiment harness renders.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference is empty; error rate undefined")]
    EmptyReference,
    #[error("code and label sequences differ in length: {codes} vs {labels}")]
    LengthMismatch { codes: usize, labels: usize },
    #[error("malformed csv at line {line}: {message}")]
    BadCsv { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Substitutions, insertions, deletions of a minimal alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal Levenshtein alignment counts. Ties between alignments with the
/// same total cost break toward substitutions rather than insert+delete
/// pairs, so the (S, I, D) split is deterministic.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let n = reference.len();
    let m = hypothesis.len();
    // dp holds (total, ins + del) and is minimized lexicographically.
    let mut dp = vec![vec![(0usize, 0usize, EditCounts::default()); m + 1]; n + 1];
    for j in 1..=m {
        dp[0][j] = (
            j,
            j,
            EditCounts {
                insertions: j,
                ..Default::default()
            },
        );
    }
    for i in 1..=n {
        dp[i][0] = (
            i,
            i,
            EditCounts {
                deletions: i,
                ..Default::default()
            },
        );
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[i - 1][j - 1];
            let sub_cost = if same { 0 } else { 1 };
            let mut sub = diag.2;
            sub.substitutions += sub_cost;
            let cand_sub = (diag.0 + sub_cost, diag.1, sub);

            let up = dp[i - 1][j];
            let mut del = up.2;
            del.deletions += 1;
            let cand_del = (up.0 + 1, up.1 + 1, del);

            let left = dp[i][j - 1];
            let mut ins = left.2;
            ins.insertions += 1;
            let cand_ins = (left.0 + 1, left.1 + 1, ins);

            let mut best = cand_sub;
            for cand in [cand_del, cand_ins] {
                if (cand.0, cand.1) < (best.0, best.1) {
                    best = cand;
                }
            }
            dp[i][j] = best;
        }
    }
    dp[n][m].2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Char,
}

/// Lowercase and collapse whitespace runs.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(text: &str, kind: TokenKind) -> Vec<String> {
    let norm = normalize(text);
    match kind {
        TokenKind::Word => norm.split_whitespace().map(str::to_string).collect(),
        TokenKind::Char => norm.chars().filter(|c| *c != ' ').map(String::from).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct UttScore {
    pub utt_id: String,
    pub counts: EditCounts,
    pub ref_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub kind: TokenKind,
    pub utts: Vec<UttScore>,
}

impl EvalReport {
    pub fn score(kind: TokenKind, pairs: &[(String, String, String)]) -> Result<EvalReport> {
        let mut utts = Vec::new();
        for (utt_id, reference, hypothesis) in pairs {
            let r = tokenize(reference, kind);
            let h = tokenize(hypothesis, kind);
            if r.is_empty() {
                return Err(MetricsError::EmptyReference);
            }
            utts.push(UttScore {
                utt_id: utt_id.clone(),
                counts: edit_distance(&r, &h),
                ref_tokens: r.len(),
            });
        }
        Ok(EvalReport { kind, utts })
    }

    pub fn total_counts(&self) -> EditCounts {
        let mut total = EditCounts::default();
        for u in &self.utts {
            total.substitutions += u.counts.substitutions;
            total.insertions += u.counts.insertions;
            total.deletions += u.counts.deletions;
        }
        total
    }

    pub fn total_ref_tokens(&self) -> usize {
        self.utts.iter().map(|u| u.ref_tokens).sum()
    }

    /// Corpus error rate in percent: (S + I + D) / N_ref * 100.
    pub fn error_rate(&self) -> f64 {
        let n = self.total_ref_tokens();
        assert!(n > 0, "error rate needs a non-empty reference");
        self.total_counts().total() as f64 / n as f64 * 100.0
    }
}

/// (baseline - new) / baseline * 100.
pub fn relative_improvement(baseline_pct: f64, new_pct: f64) -> f64 {
    assert!(baseline_pct > 0.0, "baseline must be positive");
    (baseline_pct - new_pct) / baseline_pct * 100.0
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Fraction of frames whose code's majority label matches their own label.
pub fn code_purity(codes: &[usize], labels: &[usize]) -> Result<f64> {
    if codes.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            codes: codes.len(),
            labels: labels.len(),
        });
    }
    if codes.is_empty() {
        return Ok(1.0);
    }
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&c, &l) in codes.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table
        .values()
        .map(|by_label| by_label.values().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / codes.len() as f64)
}

// ----- report tables -------------------------------------------------------------

/// Rectangular result grid with labeled rows/columns; cells may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub title: String,
    pub col_labels: Vec<String>,
    pub row_labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ResultTable {
    pub fn new(title: &str, cols: &[&str], rows: &[&str]) -> ResultTable {
        ResultTable {
            title: title.to_string(),
            col_labels: cols.iter().map(|s| s.to_string()).collect(),
            row_labels: rows.iter().map(|s| s.to_string()).collect(),
            cells: vec![vec![None; cols.len()]; rows.len()],
        }
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.cells[row][col] = Some(value);
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        out.push_str(&format!("| | {} |\n", self.col_labels.join(" | ")));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.col_labels.len())));
        for (r, label) in self.row_labels.iter().enumerate() {
            let cells: Vec<String> = self.cells[r]
                .iter()
                .map(|c| match c {
                    Some(v) => format!("{:.2}", v),
                    None => "—".to_string(),
                })
                .collect();
            out.push_str(&format!("| {} | {} |\n", label, cells.join(" | ")));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("row,{}\n", self.col_labels.join(","));
        for (r, label) in self.row_labels.iter().enumerate() {
            let cells: Vec<String> = self.cells[r]
                .iter()
                .map(|c| match c {
                    Some(v) => format!("{}", v),
                    None => String::new(),
                })
                .collect();
            out.push_str(&format!("{},{}\n", label, cells.join(",")));
        }
        out
    }

    pub fn from_csv(title: &str, text: &str) -> Result<ResultTable> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MetricsError::BadCsv {
            line: 1,
            message: "missing header".into(),
        })?;
        let col_labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut cells = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label = fields.next().unwrap_or_default().to_string();
            let mut row = Vec::new();
            for f in fields {
                if f.is_empty() {
                    row.push(None);
                } else {
                    row.push(Some(f.parse::<f64>().map_err(|e| MetricsError::BadCsv {
                        line: idx + 1,
                        message: e.to_string(),
                    })?));
                }
            }
            if row.len() != col_labels.len() {
                return Err(MetricsError::BadCsv {
                    line: idx + 1,
                    message: format!("expected {} cells, got {}", col_labels.len(), row.len()),
                });
            }
            row_labels.push(label);
            cells.push(row);
        }
        Ok(ResultTable {
            title: title.to_string(),
            col_labels,
            row_labels,
            cells,
        })
    }
}

/// Reference WER pairs for the built-in relative-improvement self-check:
/// (tag, baseline %, improved %, published relative improvement %).
pub const REFERENCE_IMPROVEMENT_PAIRS: [(&str, f64, f64, f64); 6] = [
    ("AR", 48.35, 35.62, 26.3),
    ("EN", 33.77, 16.07, 52.4),
    ("MA", 37.62, 28.16, 25.1),
    ("JA", 36.99, 28.32, 23.4),
    ("GE", 44.98, 25.70, 42.9),
    ("SP", 51.54, 39.11, 24.1),
];
