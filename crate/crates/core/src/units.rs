//! Modeling-unit inventories: letter, character, BPE subword, and
//! externally supplied phone sets. Blank is always id 0.
//!
//! Subwords use a word-end marker: the final character of each word carries
//! a `</w>` suffix, merges are learned word-internally on those symbol
//! sequences, and decoding emits a space after any piece carrying the
//! marker. Letter inventories instead insert an explicit `|` boundary
//! symbol between words.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::metrics::normalize;

pub const BLANK_SYMBOL: &str = "<blank>";
pub const WORD_BOUNDARY: &str = "|";
pub const END_MARKER: &str = "</w>";

#[derive(Debug, Error)]
pub enum UnitsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target size {target} is smaller than the base alphabet ({base} symbols)")]
    TargetTooSmall { target: usize, base: usize },
    #[error("text contains symbols outside the inventory: {0:?}")]
    OutOfVocabulary(Vec<String>),
    #[error("unit id {id} out of range (inventory has {size} symbols)")]
    BadUnitId { id: usize, size: usize },
    #[error("vocab file {path} line {line}: {message}")]
    BadVocabFile {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, UnitsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Letter,
    Char,
    Subword,
    Phone,
}

/// Ordered symbol table. `symbols[0]` is always the CTC blank.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitInventory {
    pub kind: UnitKind,
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
    /// Replayable merge list; non-empty only for subword inventories.
    merges: Vec<(String, String)>,
}

/// Ordered BPE merge list with its configured size budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
    pub target_size: usize,
}

/// Serializable form of an inventory, for embedding in checkpoints.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct InventorySpec {
    pub kind: UnitKind,
    /// Unit symbols without the blank.
    pub symbols: Vec<String>,
    #[serde(default)]
    pub merges: Vec<(String, String)>,
}

impl From<&UnitInventory> for InventorySpec {
    fn from(inv: &UnitInventory) -> InventorySpec {
        InventorySpec {
            kind: inv.kind,
            symbols: inv.symbols[1..].to_vec(),
            merges: inv.merges.clone(),
        }
    }
}

impl InventorySpec {
    pub fn build(&self) -> UnitInventory {
        UnitInventory::from_symbols(self.kind, self.symbols.clone(), self.merges.clone())
    }
}

impl UnitInventory {
    fn from_symbols(kind: UnitKind, units: Vec<String>, merges: Vec<(String, String)>) -> UnitInventory {
        let mut symbols = Vec::with_capacity(units.len() + 1);
        symbols.push(BLANK_SYMBOL.to_string());
        symbols.extend(units);
        let ids = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        UnitInventory {
            kind,
            symbols,
            ids,
            merges,
        }
    }

    /// Symbols including blank.
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Non-blank unit count (the V of the CTC head).
    pub fn unit_count(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> Result<&str> {
        self.symbols
            .get(id)
            .map(String::as_str)
            .ok_or(UnitsError::BadUnitId {
                id,
                size: self.symbols.len(),
            })
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn boundary_id(&self) -> Option<usize> {
        self.ids.get(WORD_BOUNDARY).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }
}

// ----- inventory builders --------------------------------------------------------

/// Distinct characters of the normalized corpus, sorted by codepoint.
pub fn build_char_inventory(corpus: &[String]) -> Result<UnitInventory> {
    if corpus.is_empty() {
        return Err(UnitsError::EmptyCorpus);
    }
    let mut set = BTreeSet::new();
    for line in corpus {
        for c in normalize(line).chars() {
            set.insert(c.to_string());
        }
    }
    Ok(UnitInventory::from_symbols(
        UnitKind::Char,
        set.into_iter().collect(),
        Vec::new(),
    ))
}

/// Distinct non-space characters plus the `|` word boundary, sorted by codepoint.
pub fn build_letter_inventory(corpus: &[String]) -> Result<UnitInventory> {
    if corpus.is_empty() {
        return Err(UnitsError::EmptyCorpus);
    }
    let mut set = BTreeSet::new();
    set.insert(WORD_BOUNDARY.to_string());
    for line in corpus {
        for c in normalize(line).chars() {
            if c != ' ' {
                set.insert(c.to_string());
            }
        }
    }
    Ok(UnitInventory::from_symbols(
        UnitKind::Letter,
        set.into_iter().collect(),
        Vec::new(),
    ))
}

/// Whitespace-separated symbols from an external phone symbol file.
pub fn build_phone_inventory(symbols: &[String]) -> Result<UnitInventory> {
    if symbols.is_empty() {
        return Err(UnitsError::EmptyCorpus);
    }
    let mut set = BTreeSet::new();
    for s in symbols {
        set.insert(s.to_lowercase());
    }
    Ok(UnitInventory::from_symbols(
        UnitKind::Phone,
        set.into_iter().collect(),
        Vec::new(),
    ))
}

// ----- BPE ------------------------------------------------------------------------

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_MARKER}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_in_place(symbols: &mut Vec<String>, pair: &(String, String)) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            let joined = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols[i] = joined;
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Learn word-internal merges until the vocabulary reaches `target_size`
/// units (blank excluded) or no pair occurs at least twice. Ties between
/// equally frequent pairs break toward the lexicographically smallest pair.
pub fn train_bpe(corpus: &[String], target_size: usize) -> Result<(BpeModel, UnitInventory)> {
    if corpus.is_empty() {
        return Err(UnitsError::EmptyCorpus);
    }
    // Word frequency table over the normalized corpus.
    let mut word_freq: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for w in normalize(line).split_whitespace() {
            *word_freq.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(UnitsError::EmptyCorpus);
    }
    let mut words: Vec<(Vec<String>, usize)> = {
        let mut sorted: Vec<_> = word_freq.into_iter().collect();
        sorted.sort(); // fixed iteration order, independent of hash state
        sorted
            .into_iter()
            .map(|(w, f)| (word_symbols(&w), f))
            .collect()
    };

    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for (symbols, _) in &words {
        for s in symbols {
            vocab.insert(s.clone());
        }
    }
    let base_size = vocab.len();
    if target_size < base_size {
        return Err(UnitsError::TargetTooSmall {
            target: target_size,
            base: base_size,
        });
    }

    let base_symbols: Vec<String> = vocab.iter().cloned().collect();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut merged_symbols: Vec<String> = Vec::new();

    while vocab.len() < target_size {
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        for (symbols, freq) in &words {
            for pair in symbols.windows(2) {
                *counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_default() += freq;
            }
        }
        let best = counts
            .into_iter()
            .filter(|(_, c)| *c >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some((pair, _)) = best else { break };
        for (symbols, _) in words.iter_mut() {
            merge_in_place(symbols, &pair);
        }
        let joined = format!("{}{}", pair.0, pair.1);
        if vocab.insert(joined.clone()) {
            merged_symbols.push(joined);
        }
        merges.push(pair);
    }

    // Base symbols sorted by codepoint, then merge products in merge order.
    let mut units = base_symbols;
    units.extend(merged_symbols);
    let inventory = UnitInventory::from_symbols(UnitKind::Subword, units, merges.clone());
    Ok((
        BpeModel {
            merges,
            target_size,
        },
        inventory,
    ))
}

// ----- encode / decode ---------------------------------------------------------------

pub fn encode_text(inv: &UnitInventory, text: &str) -> Result<Vec<usize>> {
    let norm = normalize(text);
    let mut out = Vec::new();
    let mut oov: BTreeSet<String> = BTreeSet::new();
    match inv.kind {
        UnitKind::Char => {
            for c in norm.chars() {
                match inv.id(&c.to_string()) {
                    Some(id) => out.push(id),
                    None => {
                        oov.insert(c.to_string());
                    }
                }
            }
        }
        UnitKind::Letter => {
            let boundary = inv.boundary_id().expect("letter inventory has boundary");
            for (w, word) in norm.split_whitespace().enumerate() {
                if w > 0 {
                    out.push(boundary);
                }
                for c in word.chars() {
                    match inv.id(&c.to_string()) {
                        Some(id) => out.push(id),
                        None => {
                            oov.insert(c.to_string());
                        }
                    }
                }
            }
        }
        UnitKind::Subword => {
            for word in norm.split_whitespace() {
                let mut symbols = word_symbols(word);
                for pair in &inv.merges {
                    merge_in_place(&mut symbols, pair);
                }
                for s in symbols {
                    match inv.id(&s) {
                        Some(id) => out.push(id),
                        None => {
                            oov.insert(s);
                        }
                    }
                }
            }
        }
        UnitKind::Phone => {
            for tok in norm.split_whitespace() {
                match inv.id(tok) {
                    Some(id) => out.push(id),
                    None => {
                        oov.insert(tok.to_string());
                    }
                }
            }
        }
    }
    if !oov.is_empty() {
        return Err(UnitsError::OutOfVocabulary(oov.into_iter().collect()));
    }
    Ok(out)
}

pub fn decode_units(inv: &UnitInventory, ids: &[usize]) -> Result<String> {
    let mut out = String::new();
    match inv.kind {
        UnitKind::Char => {
            for &id in ids {
                out.push_str(inv.symbol(id)?);
            }
        }
        UnitKind::Letter => {
            for &id in ids {
                let s = inv.symbol(id)?;
                if s == WORD_BOUNDARY {
                    out.push(' ');
                } else {
                    out.push_str(s);
                }
            }
        }
        UnitKind::Subword => {
            for &id in ids {
                let s = inv.symbol(id)?;
                if let Some(stem) = s.strip_suffix(END_MARKER) {
                    out.push_str(stem);
                    out.push(' ');
                } else {
                    out.push_str(s);
                }
            }
            while out.ends_with(' ') {
                out.pop();
            }
        }
        UnitKind::Phone => {
            let mut first = true;
            for &id in ids {
                if !first {
                    out.push(' ');
                }
                out.push_str(inv.symbol(id)?);
                first = false;
            }
        }
    }
    Ok(out)
}

// ----- file formats --------------------------------------------------------------------

/// Vocab file: one symbol per line, line number = id, line 0 = `<blank>`.
pub fn write_vocab(inv: &UnitInventory, path: &Path) -> Result<()> {
    let mut text = String::new();
    for s in &inv.symbols {
        let _ = writeln!(text, "{s}");
    }
    std::fs::write(path, text).map_err(|e| UnitsError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_vocab(path: &Path, kind: UnitKind, merges: Vec<(String, String)>) -> Result<UnitInventory> {
    let text = std::fs::read_to_string(path).map_err(|e| UnitsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut symbols = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line != BLANK_SYMBOL {
            return Err(UnitsError::BadVocabFile {
                path: path.display().to_string(),
                line: 1,
                message: format!("line 0 must be {BLANK_SYMBOL}, got {line:?}"),
            });
        }
        if i > 0 {
            symbols.push(line.to_string());
        }
    }
    if symbols.is_empty() {
        return Err(UnitsError::BadVocabFile {
            path: path.display().to_string(),
            line: 1,
            message: "vocab has no units".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for (i, s) in symbols.iter().enumerate() {
        if !seen.insert(s.clone()) || s == BLANK_SYMBOL {
            return Err(UnitsError::BadVocabFile {
                path: path.display().to_string(),
                line: i + 2,
                message: format!("duplicate symbol {s:?}"),
            });
        }
    }
    Ok(UnitInventory::from_symbols(kind, symbols, merges))
}

/// BPE model file: one merge per line, `left<SPACE>right`.
pub fn write_bpe_model(model: &BpeModel, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (a, b) in &model.merges {
        let _ = writeln!(text, "{a} {b}");
    }
    std::fs::write(path, text).map_err(|e| UnitsError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_bpe_model(path: &Path, target_size: usize) -> Result<BpeModel> {
    let text = std::fs::read_to_string(path).map_err(|e| UnitsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ' ');
        let (a, b) = (parts.next(), parts.next());
        match (a, b) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                merges.push((a.to_string(), b.to_string()));
            }
            _ => {
                return Err(UnitsError::BadVocabFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: "merge line must be `left right`".into(),
                })
            }
        }
    }
    Ok(BpeModel {
        merges,
        target_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bpe_first_merge_is_hand_counted_pair() {
        // {low x2, lowest x1}: pair (l,o) occurs 3 times and wins.
        let (model, _) = train_bpe(&corpus(&["low low", "lowest"]), 20).unwrap();
        assert_eq!(model.merges[0], ("l".to_string(), "o".to_string()));
        // Second merge joins `lo` with the word-final `w`.
        assert_eq!(
            model.merges[1],
            ("lo".to_string(), format!("w{END_MARKER}"))
        );
        // Nothing else repeats, so training stops there.
        assert_eq!(model.merges.len(), 2);
    }

    #[test]
    fn bpe_encodes_trained_word_as_single_unit() {
        let (_, inv) = train_bpe(&corpus(&["low low", "lowest"]), 20).unwrap();
        let ids = encode_text(&inv, "low").unwrap();
        assert_eq!(ids.len(), 1);
        assert_eq!(decode_units(&inv, &ids).unwrap(), "low");
    }

    #[test]
    fn bpe_target_equal_to_alphabet_yields_zero_merges() {
        let lines = corpus(&["low low", "lowest"]);
        // Base alphabet: e l o s w t</w> w</w> = 7 symbols.
        let (model, inv) = train_bpe(&lines, 7).unwrap();
        assert!(model.merges.is_empty());
        assert_eq!(inv.unit_count(), 7);
        assert!(matches!(
            train_bpe(&lines, 6),
            Err(UnitsError::TargetTooSmall { target: 6, base: 7 })
        ));
    }

    #[test]
    fn bpe_inventory_never_exceeds_target() {
        // Base alphabet of this corpus: l o w e s w</w> t</w> r</w> y</w>.
        for target in 9..=30 {
            let (_, inv) = train_bpe(&corpus(&["low low lowest lower lowly"]), target).unwrap();
            assert!(inv.unit_count() <= target, "target {target}: {}", inv.unit_count());
        }
    }

    #[test]
    fn bpe_is_deterministic() {
        let lines = corpus(&["banana bandana", "ban ban"]);
        let (m1, i1) = train_bpe(&lines, 25).unwrap();
        let (m2, i2) = train_bpe(&lines, 25).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(i1, i2);
    }

    #[test]
    fn char_inventory_from_small_corpus() {
        let inv = build_char_inventory(&corpus(&["abab"])).unwrap();
        assert_eq!(inv.symbols(), &["<blank>", "a", "b"]);
        assert_eq!(inv.unit_count(), 2);
    }

    #[test]
    fn inventories_ignore_corpus_order() {
        let a = build_char_inventory(&corpus(&["abc", "cba"])).unwrap();
        let b = build_char_inventory(&corpus(&["cba", "abc"])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn char_round_trip() {
        let inv = build_char_inventory(&corpus(&["aba"])).unwrap();
        let ids = encode_text(&inv, "aba").unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(decode_units(&inv, &ids).unwrap(), "aba");
    }

    #[test]
    fn letter_kind_inserts_boundary_between_words() {
        let inv = build_letter_inventory(&corpus(&["a b"])).unwrap();
        let ids = encode_text(&inv, "a b").unwrap();
        let symbols: Vec<&str> = ids.iter().map(|&i| inv.symbol(i).unwrap()).collect();
        assert_eq!(symbols, vec!["a", "|", "b"]);
        assert_eq!(decode_units(&inv, &ids).unwrap(), "a b");
    }

    #[test]
    fn oov_errors_list_offending_symbols() {
        let inv = build_char_inventory(&corpus(&["ab"])).unwrap();
        match encode_text(&inv, "abxzy") {
            Err(UnitsError::OutOfVocabulary(chars)) => {
                assert_eq!(chars, vec!["x".to_string(), "y".to_string(), "z".to_string()]);
            }
            other => panic!("expected OOV error, got {other:?}"),
        }
    }

    #[test]
    fn blank_is_always_id_zero_and_symbols_unique() {
        for inv in [
            build_char_inventory(&corpus(&["hello world"])).unwrap(),
            build_letter_inventory(&corpus(&["hello world"])).unwrap(),
            train_bpe(&corpus(&["hello world"]), 30).unwrap().1,
        ] {
            assert_eq!(inv.symbol(0).unwrap(), BLANK_SYMBOL);
            let mut set = BTreeSet::new();
            for s in inv.symbols() {
                assert!(set.insert(s.clone()), "duplicate symbol {s}");
            }
        }
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let inv = build_letter_inventory(&corpus(&["the cat"])).unwrap();
        write_vocab(&inv, &path).unwrap();
        let back = read_vocab(&path, UnitKind::Letter, Vec::new()).unwrap();
        assert_eq!(back, inv);
    }

    #[test]
    fn bpe_model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bpe.txt");
        let (model, _) = train_bpe(&corpus(&["low low", "lowest"]), 20).unwrap();
        write_bpe_model(&model, &path).unwrap();
        let back = read_bpe_model(&path, model.target_size).unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #[test]
        fn char_encode_decode_identity(s in "[ab c]{0,24}") {
            let inv = build_char_inventory(&corpus(&["abc abc"])).unwrap();
            let norm = normalize(&s);
            let ids = encode_text(&inv, &s).unwrap();
            prop_assert_eq!(decode_units(&inv, &ids).unwrap(), norm);
        }

        #[test]
        fn letter_encode_decode_identity(s in "[abc]{1,6}( [abc]{1,6}){0,3}") {
            let inv = build_letter_inventory(&corpus(&["abc abc"])).unwrap();
            let norm = normalize(&s);
            let ids = encode_text(&inv, &s).unwrap();
            prop_assert_eq!(decode_units(&inv, &ids).unwrap(), norm);
        }

        #[test]
        fn subword_encode_decode_identity(words in proptest::collection::vec("[lowest]{1,6}", 1..4)) {
            // Train on a corpus that covers every char in final and internal
            // position so arbitrary words over the alphabet stay in-vocab.
            let mut lines = vec!["l o w e s t".to_string(), "low lowest west stew".to_string()];
            lines.push("ll oo ww ee ss tt".to_string());
            let (_, inv) = train_bpe(&lines, 40).unwrap();
            let text = words.join(" ");
            let norm = normalize(&text);
            let ids = encode_text(&inv, &text).unwrap();
            prop_assert_eq!(decode_units(&inv, &ids).unwrap(), norm);
        }
    }
}
