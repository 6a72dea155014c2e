//! Metrics, repeated-run experiment orchestration over the variant/shot
//! matrix, and timing instrumentation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{sample_episode, IntentSchema, LabeledQuery, Session};
use crate::error::{Error, Result};
use crate::finetune::{
    finetune, ClassifierMode, FinetuneConfig, IntentModel, TransferStrategy,
};
use crate::model::{Checkpoint, CheckpointExtras, EncoderConfig, ParamSet};
use crate::numerics::derive_seed;
use crate::pretrain::{pretrain, PretrainConfig, RelationMix};
use crate::streams;
use crate::tokenizer::Vocabulary;

/// Fraction of predictions equal to their labels. Undefined (an error) on
/// empty input.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::data(format!(
            "{} predictions against {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::data("accuracy of an empty prediction set is undefined"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn counts(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<(u64, u64, u64)>> {
    if preds.len() != labels.len() {
        return Err(Error::data(format!(
            "{} predictions against {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::data("metrics need at least one class"));
    }
    let mut tally = vec![(0u64, 0u64, 0u64); num_classes]; // (tp, fp, fn)
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::data(format!(
                "prediction {p} or label {l} outside the {num_classes}-class range"
            )));
        }
        if p == l {
            tally[p].0 += 1;
        } else {
            tally[p].1 += 1;
            tally[l].2 += 1;
        }
    }
    Ok(tally)
}

/// Per-class precision, recall, and F1 from confusion counts; every 0/0
/// ratio is defined as 0. F1 is computed as 2*tp / (2*tp + fp + fn), which
/// equals the harmonic mean of precision and recall.
pub fn per_class_metrics(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<ClassMetrics>> {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(counts(preds, labels, num_classes)?
        .into_iter()
        .map(|(tp, fp, fnn)| ClassMetrics {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fnn),
            f1: ratio(2 * tp, 2 * tp + fp + fnn),
        })
        .collect())
}

/// Unweighted mean of per-class F1 over all `num_classes` classes; classes
/// absent from predictions and labels contribute 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::data("macro-F1 of an empty prediction set is undefined"));
    }
    let metrics = per_class_metrics(preds, labels, num_classes)?;
    Ok(metrics.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64)
}

/// Pretraining/classifier ablations of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Fine-tune a randomly initialized encoder.
    WithoutPretraining,
    /// Pretrain on plain text spans, no relation prompts.
    WithoutRelations,
    /// Pretrain with query-answer prompts only.
    WithoutQueryQuery,
    /// Pretrain with query-query prompts only.
    WithoutQueryAnswer,
    /// Full pretraining, but classify with a plain C-way linear head.
    WithoutPromptClassifier,
}

/// One row of the report: a transfer strategy on the fully pretrained
/// encoder, or an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full(TransferStrategy),
    Ablated(Ablation),
}

impl Variant {
    pub fn name(self) -> String {
        match self {
            Variant::Full(TransferStrategy::FreshRandom) => "said".to_string(),
            Variant::Full(s) => format!("transfer_{}", s.name()),
            Variant::Ablated(Ablation::WithoutPretraining) => "without_pretraining".to_string(),
            Variant::Ablated(Ablation::WithoutRelations) => {
                "without_relational_pretraining".to_string()
            }
            Variant::Ablated(Ablation::WithoutQueryQuery) => "without_query_query".to_string(),
            Variant::Ablated(Ablation::WithoutQueryAnswer) => "without_query_answer".to_string(),
            Variant::Ablated(Ablation::WithoutPromptClassifier) => {
                "without_prompt_classifier".to_string()
            }
        }
    }

    /// Relation mix to pretrain with; None skips pretraining entirely.
    fn mix(self) -> Option<RelationMix> {
        match self {
            Variant::Full(_) | Variant::Ablated(Ablation::WithoutPromptClassifier) => {
                Some(RelationMix::Both)
            }
            Variant::Ablated(Ablation::WithoutPretraining) => None,
            Variant::Ablated(Ablation::WithoutRelations) => Some(RelationMix::TextOnly),
            Variant::Ablated(Ablation::WithoutQueryQuery) => Some(RelationMix::QueryAnswerOnly),
            Variant::Ablated(Ablation::WithoutQueryAnswer) => Some(RelationMix::QueryQueryOnly),
        }
    }

    fn strategy(self) -> TransferStrategy {
        match self {
            Variant::Full(s) => s,
            Variant::Ablated(_) => TransferStrategy::FreshRandom,
        }
    }

    fn classifier(self) -> ClassifierMode {
        match self {
            Variant::Ablated(Ablation::WithoutPromptClassifier) => ClassifierMode::LinearHead,
            _ => ClassifierMode::IntentPrompt,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentMatrix {
    pub shots: Vec<usize>,
    pub strategies: Vec<TransferStrategy>,
    pub ablations: Vec<Ablation>,
    pub n_runs: usize,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        ExperimentMatrix {
            shots: vec![3, 5, 10, 20],
            strategies: vec![TransferStrategy::FreshRandom],
            ablations: Vec::new(),
            n_runs: 5,
        }
    }
}

impl ExperimentMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() {
            return Err(Error::config("experiment matrix has no shot settings"));
        }
        if self.shots.iter().any(|&k| k == 0) {
            return Err(Error::config("shot counts must be at least 1"));
        }
        if self.strategies.is_empty() && self.ablations.is_empty() {
            return Err(Error::config("experiment matrix has no variants"));
        }
        if self.n_runs == 0 {
            return Err(Error::config("n_runs must be at least 1"));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        self.strategies
            .iter()
            .map(|&s| Variant::Full(s))
            .chain(self.ablations.iter().map(|&a| Variant::Ablated(a)))
            .collect()
    }
}

/// Metrics of a single run, in percent.
#[derive(Clone, Debug, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// One (variant, shots) cell: per-run and mean metrics in percent, per-class
/// metrics averaged over runs, and wall-clock timing (reported separately
/// from the deterministic metric report).
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub variant: String,
    pub shots: usize,
    pub runs: Vec<RunMetrics>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub train_seconds_per_epoch: f64,
    pub inference_seconds_per_query: f64,
}

/// Everything an experiment needs besides the matrix and the seed.
pub struct ExperimentInputs<'a> {
    pub sessions: &'a [Session],
    pub labeled: &'a [LabeledQuery],
    pub schema: &'a IntentSchema,
    pub vocab: &'a Vocabulary,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

fn fingerprint(inputs: &ExperimentInputs, matrix: &ExperimentMatrix, base_seed: u64) -> String {
    #[derive(Serialize)]
    struct Fingerprint<'a> {
        encoder: &'a EncoderConfig,
        pretrain: &'a PretrainConfig,
        finetune: &'a FinetuneConfig,
        matrix: &'a ExperimentMatrix,
        base_seed: u64,
        vocab: String,
    }
    let json = serde_json::to_string(&Fingerprint {
        encoder: &inputs.encoder,
        pretrain: &inputs.pretrain,
        finetune: &inputs.finetune,
        matrix,
        base_seed,
        vocab: inputs.vocab.content_hash(),
    })
    .expect("fingerprint serialization");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

fn evaluate_on(
    model: &IntentModel<f32>,
    vocab: &Vocabulary,
    set: &[LabeledQuery],
    num_classes: usize,
) -> Result<(f64, f64, Vec<ClassMetrics>)> {
    let mut preds = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for ex in set {
        preds.push(model.predict(&vocab.encode(&ex.query))?);
        labels.push(ex.intent);
    }
    Ok((
        accuracy(&preds, &labels)?,
        macro_f1(&preds, &labels, num_classes)?,
        per_class_metrics(&preds, &labels, num_classes)?,
    ))
}

/// Runs the full matrix: for every (variant, shots) cell, `n_runs` episodes
/// are resampled, fine-tuned, and scored on their test split. Episodes and
/// fine-tune seeds are shared across variants at equal (shots, run), so
/// variant comparisons are paired. Encoders are pretrained once per needed
/// relation mix.
pub fn run_experiment(
    inputs: &ExperimentInputs,
    matrix: &ExperimentMatrix,
    base_seed: u64,
) -> Result<Vec<ExperimentReport>> {
    matrix.validate()?;
    inputs.encoder.validate()?;
    let fingerprint = fingerprint(inputs, matrix, base_seed);
    let variants = matrix.variants();

    let mut checkpoints: HashMap<Option<RelationMix>, Checkpoint> = HashMap::new();
    for variant in &variants {
        let mix = variant.mix();
        if checkpoints.contains_key(&mix) {
            continue;
        }
        let ckpt = match mix {
            Some(mix) => {
                let mut config = inputs.pretrain.clone();
                config.relation_mix = mix;
                config.seed = derive_seed(base_seed, &[streams::PRETRAIN_EPOCH, mix as u64]);
                let (ckpt, _) = pretrain(inputs.sessions, inputs.vocab, &inputs.encoder, &config)?;
                ckpt
            }
            None => Checkpoint {
                config: inputs.encoder.clone(),
                vocab_hash: inputs.vocab.content_hash(),
                params: ParamSet::init(
                    &inputs.encoder,
                    derive_seed(base_seed, &[streams::MODEL_INIT, u64::MAX]),
                ),
                extra: Vec::new(),
                extras: CheckpointExtras {
                    pretrained_relations: false,
                    finetune: None,
                },
                optimizer: None,
            },
        };
        checkpoints.insert(mix, ckpt);
    }

    let mut reports = Vec::new();
    for variant in &variants {
        let ckpt = &checkpoints[&variant.mix()];
        for &shots in &matrix.shots {
            let mut runs = Vec::with_capacity(matrix.n_runs);
            let mut seeds = Vec::with_capacity(matrix.n_runs);
            let mut class_sums: Vec<ClassMetrics> = vec![
                ClassMetrics {
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0
                };
                inputs.schema.len()
            ];
            let mut train_seconds = 0.0f64;
            let mut train_epochs = 0usize;
            let mut infer_seconds = 0.0f64;
            let mut infer_queries = 0usize;
            for run in 0..matrix.n_runs {
                // shared across variants: paired comparisons
                let episode_seed =
                    derive_seed(base_seed, &[streams::EVAL_RUN, shots as u64, run as u64]);
                let episode = sample_episode(inputs.labeled, inputs.schema, shots, episode_seed)?;
                let mut ft = inputs.finetune.clone();
                ft.strategy = variant.strategy();
                ft.classifier = variant.classifier();
                ft.seed = derive_seed(base_seed, &[streams::FINETUNE, shots as u64, run as u64]);

                let started = Instant::now();
                let outcome = finetune(&episode, inputs.schema, inputs.vocab, ckpt, &ft)?;
                train_seconds += started.elapsed().as_secs_f64();
                train_epochs += outcome.grid.iter().map(|g| g.epochs_run).sum::<usize>();

                let started = Instant::now();
                let (acc, f1, classes) = evaluate_on(
                    &outcome.model,
                    inputs.vocab,
                    &episode.test,
                    inputs.schema.len(),
                )?;
                infer_seconds += started.elapsed().as_secs_f64();
                infer_queries += episode.test.len();

                for (sum, c) in class_sums.iter_mut().zip(&classes) {
                    sum.precision += c.precision;
                    sum.recall += c.recall;
                    sum.f1 += c.f1;
                }
                runs.push(RunMetrics {
                    seed: episode_seed,
                    accuracy: 100.0 * acc,
                    macro_f1: 100.0 * f1,
                });
                seeds.push(episode_seed);
            }
            let n = matrix.n_runs as f64;
            reports.push(ExperimentReport {
                variant: variant.name(),
                shots,
                mean_accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / n,
                mean_macro_f1: runs.iter().map(|r| r.macro_f1).sum::<f64>() / n,
                per_class: class_sums
                    .into_iter()
                    .map(|s| ClassMetrics {
                        precision: 100.0 * s.precision / n,
                        recall: 100.0 * s.recall / n,
                        f1: 100.0 * s.f1 / n,
                    })
                    .collect(),
                runs,
                config_fingerprint: fingerprint.clone(),
                seeds,
                train_seconds_per_epoch: if train_epochs == 0 {
                    0.0
                } else {
                    train_seconds / train_epochs as f64
                },
                inference_seconds_per_query: if infer_queries == 0 {
                    0.0
                } else {
                    infer_seconds / infer_queries as f64
                },
            });
        }
    }
    Ok(reports)
}

fn fmt_list(values: impl Iterator<Item = String>) -> String {
    values.collect::<Vec<_>>().join(",")
}

/// Renders the metric table: one record per (variant, shots) cell, rows in
/// matrix order. Timing is deliberately excluded so identical matrix and
/// seed produce identical bytes; see emit_timing_report.
pub fn emit_report(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    out.push_str("# few-shot intent detection report\n");
    out.push_str("# metrics in percent; f1 is macro-averaged (unweighted over classes)\n");
    out.push_str("# each run resamples its episode; means are arithmetic over runs\n");
    if let Some(first) = reports.first() {
        let _ = writeln!(out, "# config {}", first.config_fingerprint);
    }
    for r in reports {
        let _ = writeln!(
            out,
            "record variant={} shots={} runs={}",
            r.variant,
            r.shots,
            r.runs.len()
        );
        let _ = writeln!(out, "  seeds {}", fmt_list(r.seeds.iter().map(|s| s.to_string())));
        let _ = writeln!(
            out,
            "  accuracy_runs {}",
            fmt_list(r.runs.iter().map(|x| format!("{:.2}", x.accuracy)))
        );
        let _ = writeln!(
            out,
            "  f1_runs {}",
            fmt_list(r.runs.iter().map(|x| format!("{:.2}", x.macro_f1)))
        );
        let _ = writeln!(out, "  accuracy_mean {:.2}", r.mean_accuracy);
        let _ = writeln!(out, "  f1_mean {:.2}", r.mean_macro_f1);
        for (c, m) in r.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "  class {c} precision={:.2} recall={:.2} f1={:.2}",
                m.precision, m.recall, m.f1
            );
        }
    }
    out
}

/// Wall-clock sidecar: training seconds per epoch and inference seconds per
/// query for every cell. Non-deterministic by nature.
pub fn emit_timing_report(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    out.push_str("# timing report (wall clock, non-deterministic)\n");
    for r in reports {
        let _ = writeln!(
            out,
            "timing variant={} shots={} train_seconds_per_epoch={:.6} inference_seconds_per_query={:.6}",
            r.variant, r.shots, r.train_seconds_per_epoch, r.inference_seconds_per_query
        );
    }
    out
}

/// Mean seconds per predict call over `queries`, repeated `repeats` times.
pub fn mean_inference_seconds(
    model: &IntentModel<f32>,
    queries: &[Vec<u32>],
    repeats: usize,
) -> Result<f64> {
    if queries.is_empty() || repeats == 0 {
        return Err(Error::data("latency needs at least one query and one repeat"));
    }
    let started = Instant::now();
    for _ in 0..repeats {
        for q in queries {
            let _ = model.predict(q)?;
        }
    }
    Ok(started.elapsed().as_secs_f64() / (repeats * queries.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticCorpusSpec};
    use crate::numerics::Pcg32;

    #[test]
    fn accuracy_matches_hand_counts() {
        assert_eq!(accuracy(&[1, 2, 0], &[1, 2, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_reproduces_the_worked_example() {
        // class 0: tp=1 fp=1 fn=0 → f1 = 2/3; class 1: tp=2 fp=0 fn=1 → 4/5
        let got = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((got - 11.0 / 15.0).abs() < 1e-12, "{got}");
        let perfect = macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(perfect, 1.0);
    }

    #[test]
    fn absent_class_contributes_zero_and_lowers_the_average() {
        // class 2 never appears: its 0/0 f1 counts as 0 in the mean
        let got = macro_f1(&[0, 1, 0, 1], &[0, 1, 0, 1], 3).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-15, "{got}");
        let m = per_class_metrics(&[0, 1, 0, 1], &[0, 1, 0, 1], 3).unwrap();
        assert_eq!(m[2], ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0 });
    }

    /// Independent oracle: build the full confusion matrix, then read the
    /// per-class counts from its rows/columns.
    fn oracle_metrics(preds: &[usize], labels: &[usize], c: usize) -> (f64, Vec<ClassMetrics>) {
        let mut m = vec![vec![0u64; c]; c]; // m[label][pred]
        for (&p, &l) in preds.iter().zip(labels) {
            m[l][p] += 1;
        }
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mut per = Vec::new();
        for k in 0..c {
            let tp = m[k][k];
            let pred_k: u64 = (0..c).map(|l| m[l][k]).sum();
            let label_k: u64 = m[k].iter().sum();
            per.push(ClassMetrics {
                precision: ratio(tp, pred_k),
                recall: ratio(tp, label_k),
                f1: ratio(2 * tp, tp + pred_k + (label_k - tp)),
            });
        }
        let macro_f1 = per.iter().map(|x| x.f1).sum::<f64>() / c as f64;
        (macro_f1, per)
    }

    #[test]
    fn metrics_match_an_independent_confusion_matrix_on_random_vectors() {
        let mut rng = Pcg32::seeded(99);
        for _ in 0..1000 {
            let c = 1 + rng.below(6);
            let n = 1 + rng.below(30);
            let preds: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let (want_f1, want_per) = oracle_metrics(&preds, &labels, c);
            assert_eq!(macro_f1(&preds, &labels, c).unwrap(), want_f1);
            assert_eq!(per_class_metrics(&preds, &labels, c).unwrap(), want_per);
        }
    }

    #[test]
    fn accuracy_equals_micro_averaged_recall() {
        let mut rng = Pcg32::seeded(123);
        for _ in 0..200 {
            let c = 1 + rng.below(5);
            let n = 1 + rng.below(40);
            let preds: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let tally = counts(&preds, &labels, c).unwrap();
            let tp: u64 = tally.iter().map(|t| t.0).sum();
            let total: u64 = tally.iter().map(|t| t.0 + t.2).sum();
            assert_eq!(accuracy(&preds, &labels).unwrap(), tp as f64 / total as f64);
        }
    }

    #[test]
    fn out_of_range_classes_are_rejected() {
        assert!(macro_f1(&[0, 3], &[0, 1], 2).is_err());
        assert!(macro_f1(&[0, 1], &[0, 4], 2).is_err());
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(per_class_metrics(&[0], &[0], 0).is_err());
    }

    fn tiny_inputs() -> (
        Vec<Session>,
        Vec<LabeledQuery>,
        IntentSchema,
        Vocabulary,
        EncoderConfig,
        PretrainConfig,
        FinetuneConfig,
    ) {
        let spec = SyntheticCorpusSpec {
            num_sessions: 6,
            turns_min: 2,
            turns_max: 3,
            vocab_themes: crate::corpus::default_themes().into_iter().take(2).collect(),
            labeled_per_intent: 8,
            seed: 5,
            ..SyntheticCorpusSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let texts: Vec<String> = corpus
            .sessions
            .iter()
            .flat_map(|s| s.turns.iter().flat_map(|t| [t.query.clone(), t.answer.clone()]))
            .chain(corpus.labeled.iter().map(|l| l.query.clone()))
            .chain(corpus.schema.labels().iter().cloned())
            .collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let vocab = Vocabulary::build(&refs, 512, 1).unwrap();
        let encoder = EncoderConfig {
            vocab_size: vocab.len(),
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_len: 16,
            num_relation_tokens: 1,
            dropout_rate: 0.0,
            tie_mlm_weights: true,
        };
        let pretrain_config = PretrainConfig {
            epochs: 1,
            batch_size: 16,
            ..PretrainConfig::default()
        };
        let finetune_config = FinetuneConfig {
            learning_rate_grid: vec![1e-4],
            max_epochs: 2,
            patience: 2,
            ..FinetuneConfig::default()
        };
        (
            corpus.sessions,
            corpus.labeled,
            corpus.schema,
            vocab,
            encoder,
            pretrain_config,
            finetune_config,
        )
    }

    #[test]
    fn experiment_reports_are_deterministic_and_internally_consistent() {
        let (sessions, labeled, schema, vocab, encoder, pt, ft) = tiny_inputs();
        let inputs = ExperimentInputs {
            sessions: &sessions,
            labeled: &labeled,
            schema: &schema,
            vocab: &vocab,
            encoder,
            pretrain: pt,
            finetune: ft,
        };
        let matrix = ExperimentMatrix {
            shots: vec![3],
            strategies: vec![TransferStrategy::FreshRandom],
            ablations: vec![Ablation::WithoutPretraining],
            n_runs: 2,
        };
        let first = run_experiment(&inputs, &matrix, 42).unwrap();
        assert_eq!(first.len(), 2);
        for report in &first {
            assert_eq!(report.runs.len(), 2);
            assert_eq!(report.per_class.len(), schema.len());
            let mean: f64 =
                report.runs.iter().map(|r| r.accuracy).sum::<f64>() / report.runs.len() as f64;
            assert_eq!(report.mean_accuracy, mean);
            let mean: f64 =
                report.runs.iter().map(|r| r.macro_f1).sum::<f64>() / report.runs.len() as f64;
            assert_eq!(report.mean_macro_f1, mean);
        }
        assert_eq!(first[0].variant, "said");
        assert_eq!(first[1].variant, "without_pretraining");
        // paired runs: both variants saw the same episodes
        assert_eq!(first[0].seeds, first[1].seeds);

        let second = run_experiment(&inputs, &matrix, 42).unwrap();
        assert_eq!(emit_report(&first), emit_report(&second));
        let other = run_experiment(&inputs, &matrix, 43).unwrap();
        assert_ne!(emit_report(&first), emit_report(&other));
    }

    #[test]
    fn report_rendering_is_one_record_per_cell() {
        let (sessions, labeled, schema, vocab, encoder, pt, ft) = tiny_inputs();
        let inputs = ExperimentInputs {
            sessions: &sessions,
            labeled: &labeled,
            schema: &schema,
            vocab: &vocab,
            encoder,
            pretrain: pt,
            finetune: ft,
        };
        let matrix = ExperimentMatrix {
            shots: vec![3, 5],
            strategies: vec![TransferStrategy::FreshRandom],
            ablations: vec![],
            n_runs: 1,
        };
        let reports = run_experiment(&inputs, &matrix, 7).unwrap();
        let text = emit_report(&reports);
        assert_eq!(text.matches("record variant=").count(), 2);
        assert!(text.contains("record variant=said shots=3"));
        assert!(text.contains("record variant=said shots=5"));
        assert!(text.contains("macro-averaged"));
        let timing = emit_timing_report(&reports);
        assert_eq!(timing.matches("timing variant=").count(), 2);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let matrix = ExperimentMatrix {
            shots: vec![],
            ..ExperimentMatrix::default()
        };
        assert!(matrix.validate().is_err());
        let matrix = ExperimentMatrix {
            strategies: vec![],
            ablations: vec![],
            ..ExperimentMatrix::default()
        };
        assert!(matrix.validate().is_err());
    }
}
