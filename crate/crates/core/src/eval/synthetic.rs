//! Labelled toy corpora with planted signals.
//!
//! Rumor claims carry a marker token, rumor replies ask more questions, and
//! the claim author's standing relative to the repliers depends on the label:
//! an old, verified account with the largest counts for non-rumors, a new,
//! unverified one with the smallest counts for rumors. The author signal is
//! relative because author features are normalized within each tree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::{AdhocEventTree, EventNode, Label, RawAuthorProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub events: usize,
    /// Share of rumor events; the count is rounded and exact.
    pub rumor_fraction: f64,
    pub marker: String,
    /// Chance that a rumor claim contains the marker.
    pub marker_prob: f64,
    /// Chance that the claim author follows the label's pattern.
    pub author_signal: f64,
    /// Chance that a reply ends in a question, per label (rumor, non-rumor).
    pub question_prob: [f64; 2],
    pub min_replies: usize,
    pub max_replies: usize,
    /// Chance that a reply answers the claim rather than an earlier reply.
    pub root_reply_prob: f64,
    pub max_depth: usize,
    /// Size of the shared filler vocabulary.
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            events: 200,
            rumor_fraction: 0.5,
            marker: "unconfirmed".to_string(),
            marker_prob: 0.9,
            author_signal: 0.9,
            question_prob: [0.6, 0.15],
            min_replies: 3,
            max_replies: 10,
            root_reply_prob: 0.5,
            max_depth: 4,
            filler_words: 200,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidSpec(m.to_string()));
        let probs = [self.rumor_fraction, self.marker_prob, self.author_signal, self.question_prob[0], self.question_prob[1], self.root_reply_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.events == 0 || self.filler_words == 0 || self.max_depth == 0 {
            return bad("events, filler_words and max_depth must be at least 1");
        }
        if self.min_replies > self.max_replies {
            return bad("min_replies exceeds max_replies");
        }
        if self.marker.is_empty() || !self.marker.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase()) {
            return bad("marker must be a non-empty lowercase alphanumeric word");
        }
        Ok(())
    }
}

const BASE_TIME: i64 = 1_420_070_400;

fn sentence<R: Rng>(rng: &mut R, spec: &SyntheticSpec, words: std::ops::RangeInclusive<usize>) -> Vec<String> {
    let n = rng.gen_range(words);
    (0..n).map(|_| format!("w{}", rng.gen_range(0..spec.filler_words))).collect()
}

/// Account standing; every count of an established account exceeds every
/// ordinary one, which in turn exceeds every fringe one.
#[derive(Clone, Copy, PartialEq)]
enum Standing {
    Fringe,
    Ordinary,
    Established,
}

fn profile<R: Rng>(rng: &mut R, id: String, standing: Standing, flags: Option<bool>) -> RawAuthorProfile {
    let (scale, age_days) = match standing {
        Standing::Fringe => (0.0..0.1, 1..60),
        Standing::Ordinary => (0.1..1.0, 60..2000),
        Standing::Established => (1.0..10.0, 2000..4000),
    };
    let mut count = |base: f64| (base * rng.gen_range(scale.clone())) as u64;
    let (followers, friends, favorites, reposts, statuses) = (count(5000.0), count(1000.0), count(20_000.0), count(3000.0), count(40_000.0));
    let flags = match (standing, flags) {
        (Standing::Fringe, _) => [false; 3],
        (Standing::Established, _) => [true; 3],
        (Standing::Ordinary, Some(f)) => [f; 3],
        (Standing::Ordinary, None) => [rng.gen_bool(0.3), rng.gen(), rng.gen()],
    };
    RawAuthorProfile {
        id: Some(id),
        followers,
        friends,
        favorites,
        reposts,
        statuses,
        verified: flags[0],
        geo_enabled: flags[1],
        time_zone_enabled: flags[2],
        account_created: BASE_TIME - 86_400 * rng.gen_range(age_days),
    }
}

fn event<R: Rng>(rng: &mut R, spec: &SyntheticSpec, k: usize, label: Label) -> Result<AdhocEventTree, EvalError> {
    let event_id = format!("syn-{k:05}");
    let rumor = label == Label::Rumor;
    let start = BASE_TIME + 86_400 * k as i64;

    let mut claim = sentence(rng, spec, 5..=12);
    if rumor && rng.gen_bool(spec.marker_prob) {
        let at = rng.gen_range(0..=claim.len());
        claim.insert(at, spec.marker.clone());
    }

    let replies = rng.gen_range(spec.min_replies..=spec.max_replies);
    // repliers: one with every flag set and one with none, so flag columns vary
    let mut reply_authors = Vec::with_capacity(replies);
    for i in 0..replies {
        let flags = [Some(true), Some(false)].get(i).copied().flatten();
        reply_authors.push(profile(rng, format!("{event_id}-u{}", i + 1), Standing::Ordinary, flags));
    }
    reply_authors.shuffle(rng);
    let typical = rng.gen_bool(spec.author_signal);
    let standing = if typical == rumor { Standing::Fringe } else { Standing::Established };
    let root_author = profile(rng, format!("{event_id}-u0"), standing, None);

    let mut nodes = vec![EventNode {
        node_id: format!("{event_id}-0"),
        parent_id: None,
        text: claim.join(" "),
        timestamp: start,
        author: Some(root_author),
    }];
    let mut depth = vec![0usize];
    let mut time = start;
    let q = spec.question_prob[label.index()];
    for (i, author) in reply_authors.into_iter().enumerate() {
        let parent = if rng.gen_bool(spec.root_reply_prob) {
            0
        } else {
            let open: Vec<usize> = (0..nodes.len()).filter(|&j| depth[j] < spec.max_depth).collect();
            *open.choose(rng).expect("root is always open")
        };
        time += rng.gen_range(1..600);
        let mut words = sentence(rng, spec, 3..=10);
        if rng.gen_bool(q) {
            words.push("?".to_string());
        }
        depth.push(depth[parent] + 1);
        nodes.push(EventNode {
            node_id: format!("{event_id}-{}", i + 1),
            parent_id: Some(nodes[parent].node_id.clone()),
            text: words.join(" "),
            timestamp: time,
            author: Some(author),
        });
    }
    Ok(AdhocEventTree::new(event_id, label, nodes)?)
}

/// Generates `spec.events` valid events. Identical specs give identical corpora.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<AdhocEventTree>, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rumors = (spec.events as f64 * spec.rumor_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..spec.events).map(|i| if i < rumors { Label::Rumor } else { Label::NonRumor }).collect();
    labels.shuffle(&mut rng);
    labels.iter().enumerate().map(|(k, &label)| event(&mut rng, spec, k, label)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize_text;
    use crate::ingest::{parse_line, prune_events, to_json_line};

    #[test]
    fn deterministic_and_exact_balance() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(a.iter().filter(|e| e.label == Label::Rumor).count(), 100);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn marker_always_present_at_probability_one() {
        let spec = SyntheticSpec { events: 60, marker_prob: 1.0, ..SyntheticSpec::default() };
        for e in generate_synthetic(&spec).unwrap() {
            let has = tokenize_text(&e.root().text).contains(&spec.marker);
            assert_eq!(has, e.label == Label::Rumor);
        }
    }

    #[test]
    fn events_survive_ingest_and_pruning() {
        let events = generate_synthetic(&SyntheticSpec { events: 50, ..SyntheticSpec::default() }).unwrap();
        for e in &events {
            assert_eq!(&parse_line(&to_json_line(e)).unwrap(), e);
            assert!(e.topology().depth() <= 4);
        }
        assert_eq!(prune_events(events.clone()).len(), events.len());
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec { events: 0, ..SyntheticSpec::default() },
            SyntheticSpec { marker_prob: 1.5, ..SyntheticSpec::default() },
            SyntheticSpec { min_replies: 5, max_replies: 2, ..SyntheticSpec::default() },
            SyntheticSpec { marker: "two words".into(), ..SyntheticSpec::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(EvalError::InvalidSpec(_))));
        }
    }
}
