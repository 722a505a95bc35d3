//! Vocabulary, tokenization and author feature extraction.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AdhocEventTree, BipartiteTrees, Label, RawAuthorProfile, Topology};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BASIC_FEATURES: usize = 10;
pub const HABIT_FEATURES: usize = 6;
pub const AUTHOR_ROWS: usize = BASIC_FEATURES + HABIT_FEATURES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("timestamp {ts} precedes reference {reference}")]
    NegativeInterval { ts: i64, reference: i64 },
    #[error("vocabulary file: {0}")]
    VocabFile(String),
}

/// Splits on whitespace, lowercases, and emits every non-alphanumeric
/// character as its own token.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Token ↔ index map with `0 = <pad>` and `1 = <unk>` reserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(words: Vec<String>) -> Vocab {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(words);
        let index = tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// One token per line; line `k` holds index `k + 2`.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens[2..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Vocab, FeatureError> {
        let words: Vec<String> = r.lines().collect::<Result<_, _>>().map_err(|e| FeatureError::VocabFile(e.to_string()))?;
        let mut seen = HashSet::new();
        if let Some(dup) = words.iter().find(|w| !seen.insert(w.as_str())) {
            return Err(FeatureError::VocabFile(format!("duplicate token {dup:?}")));
        }
        Ok(Vocab::from_tokens(words))
    }
}

/// Indexes tokens occurring at least `min_count` times, most frequent first,
/// ties alphabetical, starting at index 2.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Result<Vocab, FeatureError>
where
    I: IntoIterator<Item = &'a str>,
{
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for tok in tokenize_text(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t).collect()))
}

/// Post ids padded or truncated to `L_m`, with in-post token counts.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedPost {
    pub ids: Vec<usize>,
    pub freq: Vec<f64>,
}

impl TokenizedPost {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Positions holding a real (non-padding) token.
    pub fn real_positions(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&j| self.ids[j] != PAD).collect()
    }

    pub fn real_len(&self) -> usize {
        self.ids.iter().filter(|&&i| i != PAD).count()
    }

    /// Same post re-padded to a different length (truncating if shorter).
    pub fn with_len(&self, max_len: usize) -> TokenizedPost {
        let mut ids = self.ids.clone();
        let mut freq = self.freq.clone();
        ids.resize(max_len, PAD);
        freq.resize(max_len, 0.0);
        TokenizedPost { ids, freq }
    }
}

pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> TokenizedPost {
    assert!(max_len >= 1, "L_m must be at least 1");
    let all: Vec<usize> = tokenize_text(text).iter().map(|t| vocab.id(t)).collect();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &id in &all {
        *counts.entry(id).or_default() += 1;
    }
    let mut ids: Vec<usize> = all.into_iter().take(max_len).collect();
    let mut freq: Vec<f64> = ids.iter().map(|id| counts[id] as f64).collect();
    ids.resize(max_len, PAD);
    freq.resize(max_len, 0.0);
    TokenizedPost { ids, freq }
}

/// `ln(s_i − s_0 + 1)`.
pub fn timestamp_interval(ts: i64, reference: i64) -> Result<f64, FeatureError> {
    if ts < reference {
        return Err(FeatureError::NegativeInterval { ts, reference });
    }
    Ok(((ts - reference) as f64 + 1.0).ln())
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets give 0.
pub fn jaccard_similarity<S: AsRef<str> + Eq + std::hash::Hash>(a: &HashSet<S>, b: &HashSet<S>) -> f64 {
    let inter = a.iter().filter(|x| b.contains(*x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn token_set(text: &str) -> HashSet<String> {
    tokenize_text(text).into_iter().collect()
}

/// Upper bounds applied to the raw writing-habit values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCaps {
    pub post_length: usize,
    pub word_length: usize,
    pub punctuation: usize,
}

impl Default for FeatureCaps {
    fn default() -> Self {
        FeatureCaps { post_length: 30, word_length: 20, punctuation: 10 }
    }
}

/// Word count of a post (punctuation tokens excluded), uncapped.
pub fn word_count(text: &str) -> usize {
    tokenize_text(text).iter().filter(|t| is_word(t)).count()
}

/// Raw writing-habit features given the tree's (uncapped) maximum word count:
/// `[claim similarity, post length, max length in tree, mean word length, '?' count, '!' count]`.
pub fn writing_habit_features_with(post: &str, claim: &str, tree_max_len: usize, caps: FeatureCaps) -> [f64; HABIT_FEATURES] {
    let tokens = tokenize_text(post);
    let words: Vec<&String> = tokens.iter().filter(|t| is_word(t)).collect();
    let mean_word = if words.is_empty() {
        0.0
    } else {
        words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / words.len() as f64
    };
    let count = |c: char| post.chars().filter(|&x| x == c).count().min(caps.punctuation) as f64;
    [
        jaccard_similarity(&token_set(post), &token_set(claim)),
        words.len().min(caps.post_length) as f64,
        tree_max_len.min(caps.post_length) as f64,
        mean_word.min(caps.word_length as f64),
        count('?'),
        count('!'),
    ]
}

pub fn writing_habit_features(post: &str, claim: &str, tree: &AdhocEventTree) -> [f64; HABIT_FEATURES] {
    let max_len = tree.nodes().iter().map(|n| word_count(&n.text)).max().unwrap_or(0);
    writing_habit_features_with(post, claim, max_len, FeatureCaps::default())
}

/// Raw basic features:
/// `[followers, friends, favorites, reposts, statuses, verified, geo, tz, Δpost, Δaccount]`.
pub fn basic_features(profile: &RawAuthorProfile, post_ts: i64, root_ts: i64) -> Result<[f64; BASIC_FEATURES], FeatureError> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok([
        profile.followers as f64,
        profile.friends as f64,
        profile.favorites as f64,
        profile.reposts as f64,
        profile.statuses as f64,
        flag(profile.verified),
        flag(profile.geo_enabled),
        flag(profile.time_zone_enabled),
        timestamp_interval(post_ts, root_ts)?,
        ((root_ts - profile.account_created).unsigned_abs() as f64 + 1.0).ln(),
    ])
}

/// Per-column `(x − min)/(max − min)`; constant columns become 0.
pub fn minmax_normalize<const N: usize>(rows: &[[f64; N]]) -> Vec<[f64; N]> {
    let mut out = rows.to_vec();
    for c in 0..N {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[c]), hi.max(r[c])));
        for r in &mut out {
            r[c] = if hi > lo { (r[c] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuthorFeatures {
    pub basic: [f64; BASIC_FEATURES],
    pub habit: [f64; HABIT_FEATURES],
}

/// Normalized author features for every node of one tree. A node without a
/// profile keeps its posting-time interval and habit features; its profile
/// columns read as zero.
pub fn author_features(trees: &BipartiteTrees, caps: FeatureCaps) -> Result<Vec<AuthorFeatures>, FeatureError> {
    let root_ts = trees.root_timestamp();
    let claim = &trees.authors[0].text;
    let max_len = trees.authors.iter().map(|a| word_count(&a.text)).max().unwrap_or(0);
    let mut basic = Vec::with_capacity(trees.len());
    let mut habit = Vec::with_capacity(trees.len());
    for a in &trees.authors {
        let b = match &a.profile {
            Some(p) => basic_features(p, a.post_timestamp, root_ts)?,
            None => {
                let mut z = [0.0; BASIC_FEATURES];
                z[8] = timestamp_interval(a.post_timestamp, root_ts)?;
                z
            }
        };
        basic.push(b);
        habit.push(writing_habit_features_with(&a.text, claim, max_len, caps));
    }
    let basic = minmax_normalize(&basic);
    let habit = minmax_normalize(&habit);
    Ok(basic.into_iter().zip(habit).map(|(basic, habit)| AuthorFeatures { basic, habit }).collect())
}

/// Everything the model consumes for one event.
#[derive(Clone, Debug)]
pub struct PreparedEvent {
    pub event_id: String,
    pub label: Label,
    pub node_ids: Vec<String>,
    pub topology: Topology,
    pub posts: Vec<TokenizedPost>,
    pub authors: Vec<AuthorFeatures>,
}

impl PreparedEvent {
    pub fn len(&self) -> usize {
        self.topology.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }

    pub fn responsive_count(&self) -> usize {
        self.len() - 1
    }
}

pub fn prepare_event(tree: &AdhocEventTree, vocab: &Vocab, max_len: usize, caps: FeatureCaps) -> Result<PreparedEvent, FeatureError> {
    let split = crate::ingest::split_bipartite(tree);
    let authors = author_features(&split, caps)?;
    Ok(PreparedEvent {
        event_id: split.event_id,
        label: split.label,
        node_ids: split.posts.iter().map(|p| p.node_id.clone()).collect(),
        topology: split.topology,
        posts: split.posts.iter().map(|p| tokenize(&p.text, vocab, max_len)).collect(),
        authors,
    })
}
