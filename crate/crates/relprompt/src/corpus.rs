//! Session corpora, labeled intent data, K-shot episode sampling, and the
//! synthetic corpus generator.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Pcg32};
use crate::streams;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub query: String,
    /// Empty string marks an answerless turn; such turns still pair for
    /// query-query relations but are skipped for query-answer ones.
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub turns: Vec<DialogueTurn>,
}

/// Labeled query with the intent resolved to its schema index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledQuery {
    pub query: String,
    pub intent: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntentSchema {
    labels: Vec<String>,
}

impl IntentSchema {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::data(format!(
                "intent schema needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.trim().is_empty() {
                return Err(Error::data("intent schema contains an empty label"));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::data(format!("duplicate intent label '{l}'")));
            }
        }
        Ok(IntentSchema { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FewShotEpisode {
    pub train: Vec<LabeledQuery>,
    pub validation: Vec<LabeledQuery>,
    pub test: Vec<LabeledQuery>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub sessions_kept: usize,
    pub sessions_dropped: usize,
    pub queries_dropped: usize,
}

/// Loads a session JSONL file, removes turns whose query is empty after
/// trimming, and drops sessions left with fewer than three turns.
pub fn load_sessions(path: &Path) -> Result<(Vec<Session>, LoadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut kept = Vec::new();
    let mut stats = LoadStats::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut session: Session = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, lineno + 1, e.to_string()))?;
        let before = session.turns.len();
        session.turns.retain(|t| !t.query.trim().is_empty());
        stats.queries_dropped += before - session.turns.len();
        if session.turns.len() >= 3 {
            kept.push(session);
        } else {
            stats.sessions_dropped += 1;
        }
    }
    if kept.is_empty() {
        return Err(Error::data(format!(
            "empty corpus: no session in {} has 3 or more non-empty turns",
            path.display()
        )));
    }
    stats.sessions_kept = kept.len();
    Ok((kept, stats))
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sessions {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct LabeledRecord {
    query: String,
    intent: String,
}

/// Loads labeled queries, resolving intent names through the schema.
pub fn load_labeled(path: &Path, schema: &IntentSchema) -> Result<Vec<LabeledQuery>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, lineno + 1, e.to_string()))?;
        if rec.query.trim().is_empty() {
            return Err(Error::malformed(path, lineno + 1, "empty query"));
        }
        let intent = schema.index_of(&rec.intent).ok_or_else(|| {
            Error::malformed(
                path,
                lineno + 1,
                format!("intent '{}' not in schema", rec.intent),
            )
        })?;
        out.push(LabeledQuery {
            query: rec.query,
            intent,
        });
    }
    if out.is_empty() {
        return Err(Error::data(format!(
            "empty corpus: no labeled queries in {}",
            path.display()
        )));
    }
    Ok(out)
}

pub fn write_labeled(path: &Path, labeled: &[LabeledQuery], schema: &IntentSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in labeled {
        let rec = LabeledRecord {
            query: q.query.clone(),
            intent: schema.label(q.intent).to_string(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a schema file: a JSON array of intent names, array order defining
/// class indices.
pub fn load_schema(path: &Path) -> Result<IntentSchema> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::malformed(path, 1, e.to_string()))?;
    IntentSchema::new(labels)
}

pub fn write_schema(path: &Path, schema: &IntentSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, schema.labels()).map_err(|e| Error::data(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Partner turn for the query-query relation: the successor, or the
/// predecessor when `i` is the last turn.
pub fn select_partner(session: &Session, i: usize) -> usize {
    let n = session.turns.len();
    assert!(n >= 2, "partner selection needs at least 2 turns");
    assert!(i < n, "turn index out of range");
    if i + 1 < n {
        i + 1
    } else {
        i - 1
    }
}

/// Samples a K-shot episode: exactly K train queries per class, remainder
/// split 50/50 per class into validation and test (validation receives the
/// extra element when odd).
pub fn sample_episode(
    data: &[LabeledQuery],
    schema: &IntentSchema,
    k: usize,
    seed: u64,
) -> Result<FewShotEpisode> {
    if k == 0 {
        return Err(Error::config("shots must be at least 1"));
    }
    let mut episode = FewShotEpisode {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for c in 0..schema.len() {
        let mut idxs: Vec<usize> = (0..data.len()).filter(|&i| data[i].intent == c).collect();
        if idxs.len() < k + 2 {
            return Err(Error::data(format!(
                "class '{}' has {} labeled queries, need at least {} for a {}-shot episode",
                schema.label(c),
                idxs.len(),
                k + 2,
                k
            )));
        }
        let mut rng = Pcg32::seeded(derive_seed(seed, &[streams::EPISODE, c as u64]));
        rng.shuffle(&mut idxs);
        for &i in &idxs[..k] {
            episode.train.push(data[i].clone());
        }
        let rest = &idxs[k..];
        let val_n = rest.len().div_ceil(2);
        for &i in &rest[..val_n] {
            episode.validation.push(data[i].clone());
        }
        for &i in &rest[val_n..] {
            episode.test.push(data[i].clone());
        }
    }
    Ok(episode)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntentTheme {
    pub name: String,
    pub pool: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusSpec {
    pub num_sessions: usize,
    pub turns_min: usize,
    pub turns_max: usize,
    pub vocab_themes: Vec<IntentTheme>,
    /// Fraction of query tokens replaced by filler-lexicon words.
    pub noise_rate: f64,
    /// Off-topic lexicon; must be disjoint from every theme pool so noise is
    /// measurable as the off-pool token fraction.
    pub filler_words: Vec<String>,
    pub words_per_query: usize,
    pub words_per_answer: usize,
    /// Labeled queries generated per intent.
    pub labeled_per_intent: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            num_sessions: 300,
            turns_min: 3,
            turns_max: 6,
            vocab_themes: default_themes(),
            noise_rate: 0.25,
            filler_words: default_fillers(),
            words_per_query: 6,
            words_per_answer: 5,
            labeled_per_intent: 40,
            seed: 13,
        }
    }
}

/// Built-in themes for the desk-scale corpus. Each pool contains the intent
/// name itself so intent names land in the vocabulary with co-occurrence
/// statistics tied to their theme.
pub fn default_themes() -> Vec<IntentTheme> {
    let raw: [(&str, &[&str]); 5] = [
        (
            "refund",
            &[
                "refund", "money", "charge", "return", "payment", "cancel", "order", "receipt",
            ],
        ),
        (
            "shipping",
            &[
                "shipping", "track", "package", "delivery", "arrive", "courier", "address",
                "parcel",
            ],
        ),
        (
            "account",
            &[
                "account", "password", "login", "email", "reset", "profile", "username", "signin",
            ],
        ),
        (
            "pricing",
            &[
                "pricing", "plan", "cost", "subscription", "upgrade", "discount", "tier",
                "invoice",
            ],
        ),
        (
            "support",
            &[
                "support", "help", "issue", "broken", "error", "crash", "fix", "bug",
            ],
        ),
    ];
    raw.iter()
        .map(|(name, pool)| IntentTheme {
            name: name.to_string(),
            pool: pool.iter().map(|w| w.to_string()).collect(),
        })
        .collect()
}

pub fn default_fillers() -> Vec<String> {
    [
        "please", "kindly", "hello", "thanks", "quickly", "really", "maybe", "just", "still",
        "again", "right", "away", "soon", "very", "okay", "anyway",
    ]
    .iter()
    .map(|w| w.to_string())
    .collect()
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub sessions: Vec<Session>,
    pub labeled: Vec<LabeledQuery>,
    pub schema: IntentSchema,
}

/// Generates sessions, labeled queries, and a schema from themed word pools.
/// Each session draws one latent intent; queries mix pool words with filler
/// noise, answers echo pool words only.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    validate_spec(spec)?;
    let schema = IntentSchema::new(spec.vocab_themes.iter().map(|t| t.name.clone()).collect())?;
    let mut rng = Pcg32::seeded(derive_seed(spec.seed, &[streams::CORPUS_GEN]));
    let user_pool = (spec.num_sessions / 5).max(1);

    let mut sessions = Vec::with_capacity(spec.num_sessions);
    for s in 0..spec.num_sessions {
        let intent = rng.below(schema.len());
        let pool = &spec.vocab_themes[intent].pool;
        let n_turns = spec.turns_min + rng.below(spec.turns_max - spec.turns_min + 1);
        let mut turns = Vec::with_capacity(n_turns);
        for _ in 0..n_turns {
            let query = sample_text(pool, &spec.filler_words, spec.words_per_query, spec.noise_rate, &mut rng);
            let answer = sample_text(pool, &spec.filler_words, spec.words_per_answer, 0.0, &mut rng);
            turns.push(DialogueTurn { query, answer });
        }
        sessions.push(Session {
            session_id: format!("s{s:05}"),
            user_id: format!("u{:04}", rng.below(user_pool)),
            timestamp: 1_700_000_000 + (s as i64) * 60,
            turns,
        });
    }

    let mut labeled = Vec::new();
    for (c, theme) in spec.vocab_themes.iter().enumerate() {
        let mut seen = HashSet::new();
        let mut attempts = 0usize;
        while seen.len() < spec.labeled_per_intent {
            attempts += 1;
            if attempts > spec.labeled_per_intent * 200 {
                return Err(Error::config(format!(
                    "word pool for intent '{}' is too small to generate {} distinct queries",
                    theme.name, spec.labeled_per_intent
                )));
            }
            let query = sample_text(
                &theme.pool,
                &spec.filler_words,
                spec.words_per_query,
                spec.noise_rate,
                &mut rng,
            );
            if seen.insert(query.clone()) {
                labeled.push(LabeledQuery { query, intent: c });
            }
        }
    }

    Ok(SyntheticCorpus {
        sessions,
        labeled,
        schema,
    })
}

fn validate_spec(spec: &SyntheticCorpusSpec) -> Result<()> {
    if spec.vocab_themes.is_empty() {
        return Err(Error::config("no intent themes given"));
    }
    for theme in &spec.vocab_themes {
        if theme.pool.is_empty() {
            return Err(Error::config(format!(
                "empty word pool for intent '{}'",
                theme.name
            )));
        }
    }
    if !(0.0..=1.0).contains(&spec.noise_rate) {
        return Err(Error::config(format!(
            "noise_rate {} outside [0, 1]",
            spec.noise_rate
        )));
    }
    if spec.turns_min == 0 || spec.turns_min > spec.turns_max {
        return Err(Error::config(format!(
            "invalid turns range [{}, {}]",
            spec.turns_min, spec.turns_max
        )));
    }
    if spec.words_per_query == 0 || spec.words_per_answer == 0 {
        return Err(Error::config("queries and answers need at least one word"));
    }
    if spec.noise_rate > 0.0 && spec.filler_words.is_empty() {
        return Err(Error::config("noise_rate > 0 requires filler words"));
    }
    for theme in &spec.vocab_themes {
        for w in &theme.pool {
            if spec.filler_words.iter().any(|f| f == w) {
                return Err(Error::config(format!(
                    "word '{w}' appears in both the '{}' pool and the filler lexicon",
                    theme.name
                )));
            }
        }
    }
    Ok(())
}

fn sample_text(
    pool: &[String],
    fillers: &[String],
    n_words: usize,
    noise_rate: f64,
    rng: &mut Pcg32,
) -> String {
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        if noise_rate > 0.0 && rng.uniform() < noise_rate {
            words.push(fillers[rng.below(fillers.len())].as_str());
        } else {
            words.push(pool[rng.below(pool.len())].as_str());
        }
    }
    words.join(" ")
}
