//! End-to-end experiment pipeline behind the command-line tool: config
//! loading, per-dialogue feature extraction, training, evaluation and report
//! files.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    dialogue_paths, load_dialogue_from_dir, pseudo_dumps, save_dialogue, synthesize_corpus, DialogueRecord,
    DialogueTracks, Speaker, SynthSpec, DEFAULT_MERGE_GAP,
};
use crate::dsp::{self, FrameGrid, FrameSeries, PitchConfig, DEFAULT_FRAME_SHIFT, DEFAULT_WINDOW_LEN};
use crate::embeddings::{align, read_dump, write_dump, AlignedEmbeddings, EmbeddingKind};
use crate::error::{Error, Result};
use crate::labels::{compute_tau, eval_segments, sample_train_segments, LabelTrack, Segment};
use crate::metrics::{parse_report_csv, MetricAccumulator, MetricReport, MetricsConfig, PredRule};
use crate::nnet::{
    load_checkpoint, save_checkpoint, train, EpochRecord, FeatureStreams, InputNorm, Model, ModelConfig,
    ModelInput, TrainConfig, TrainOutcome, TrainSample, TrainingSource, Validation,
};
use crate::predict::{model_predict, oracle_predict, silence_baseline, SilenceConfig};
use crate::TIME_EPS;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Split lists given inline or as a path to a JSON file holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitsSpec {
    Inline(Splits),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split \"{other}\" (expected train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn default_merge_gap() -> f64 {
    DEFAULT_MERGE_GAP
}

/// One JSON file describing a whole experiment. Relative paths resolve
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus_dir: PathBuf,
    /// Directory of embedding dumps; required when the model uses W or G.
    #[serde(default)]
    pub dump_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Seeds segment sampling, initialization, shuffling and dropout. Overrides `train.seed`.
    pub seed: u64,
    pub splits: SplitsSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Training segments drawn per epoch; defaults to the number of training dialogues.
    #[serde(default)]
    pub segments_per_epoch: Option<usize>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "default_merge_gap")]
    pub merge_gap: f64,
}

impl ExperimentConfig {
    /// A config for in-memory use; paths are placeholders.
    pub fn in_memory(model: ModelConfig, train: TrainConfig, seed: u64) -> Self {
        let metrics = MetricsConfig {
            delta_max: model.delta_max,
            buckets_per_second: model.buckets_per_second,
            ..MetricsConfig::default()
        };
        ExperimentConfig {
            corpus_dir: PathBuf::new(),
            dump_dir: None,
            output_dir: PathBuf::new(),
            seed,
            splits: SplitsSpec::Inline(Splits::default()),
            model,
            train,
            segments_per_epoch: None,
            metrics,
            merge_gap: DEFAULT_MERGE_GAP,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus_dir);
        resolve(&mut cfg.output_dir);
        if let Some(d) = cfg.dump_dir.as_mut() {
            resolve(d);
        }
        if let SplitsSpec::File(p) = &mut cfg.splits {
            resolve(p);
            let text = fs::read_to_string(&*p).map_err(|e| Error::io(&*p, e))?;
            let splits: Splits = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            cfg.splits = SplitsSpec::Inline(splits);
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        if !cfg.corpus_dir.is_dir() {
            return Err(Error::Config(format!("corpus_dir {} does not exist", cfg.corpus_dir.display())));
        }
        for id in cfg.splits()?.train.iter().chain(&cfg.splits()?.val).chain(&cfg.splits()?.test) {
            let (wav, _, _) = dialogue_paths(&cfg.corpus_dir, id);
            if !wav.is_file() {
                return Err(Error::Config(format!("dialogue {id}: {} does not exist", wav.display())));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.metrics.validate()?;
        if (self.metrics.delta_max - self.model.delta_max).abs() > TIME_EPS
            || self.metrics.buckets_per_second != self.model.buckets_per_second
        {
            return Err(Error::Config(
                "metrics.delta_max and metrics.buckets_per_second must match the model".into(),
            ));
        }
        if !(self.merge_gap >= 0.0) {
            return Err(Error::Config("merge_gap must be non-negative".into()));
        }
        if self.segments_per_epoch == Some(0) {
            return Err(Error::Config("segments_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn splits(&self) -> Result<&Splits> {
        match &self.splits {
            SplitsSpec::Inline(s) => Ok(s),
            SplitsSpec::File(p) => Err(Error::Config(format!("split file {} was not loaded", p.display()))),
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
        }
        self
    }
}

/// Which per-speaker streams to compute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamNeeds {
    pub prosody: bool,
    pub acoustic: bool,
    pub word: bool,
}

impl StreamNeeds {
    pub fn for_model(config: &ModelConfig) -> Self {
        StreamNeeds {
            prosody: config.features.prosody,
            acoustic: config.features.acoustic,
            word: config.features.word,
        }
    }
}

/// Dialogue-level streams of one speaker's channel.
#[derive(Debug, Clone)]
pub struct SpeakerStreams {
    pub rmse: FrameSeries,
    pub prosody: Option<FrameSeries>,
    pub embeddings: AlignedEmbeddings,
}

/// Everything the pipeline needs from a dialogue once its audio is gone.
#[derive(Debug, Clone)]
pub struct DialogueData {
    pub tracks: DialogueTracks,
    pub grid: FrameGrid,
    streams: [SpeakerStreams; 2],
}

/// Labels and model-ready streams for one segment.
#[derive(Debug, Clone)]
pub struct SegmentView {
    pub labels: LabelTrack,
    pub streams: FeatureStreams,
}

pub fn dump_path(dump_dir: &Path, id: &str, speaker: Speaker, kind: EmbeddingKind) -> PathBuf {
    let kind = match kind {
        EmbeddingKind::Acoustic => "acoustic",
        EmbeddingKind::Word => "word",
    };
    dump_dir.join(format!("{id}.{}.{kind}.ilde", speaker.tag()))
}

fn load_embeddings(
    id: &str,
    speaker: Speaker,
    grid: &FrameGrid,
    needs: StreamNeeds,
    dump_dir: Option<&Path>,
) -> Result<AlignedEmbeddings> {
    let mut out = AlignedEmbeddings::empty(*grid);
    for (needed, kind, which) in [
        (needs.acoustic, EmbeddingKind::Acoustic, "acoustic"),
        (needs.word, EmbeddingKind::Word, "word"),
    ] {
        if !needed {
            continue;
        }
        let missing = |detail: String| {
            Error::MissingStream(format!(
                "{detail}; generate dumps with `extract --manifest <manifest> --out {} --which {which}`",
                dump_dir.map_or("<dump_dir>".into(), |d| d.display().to_string())
            ))
        };
        let dir = dump_dir.ok_or_else(|| missing(format!("feature set needs {which} embeddings but dump_dir is unset")))?;
        let path = dump_path(dir, id, speaker, kind);
        if !path.is_file() {
            return Err(missing(format!("missing {which} dump {}", path.display())));
        }
        let dump = read_dump(&path)?;
        if dump.kind != kind {
            return Err(Error::Dump(format!("{} holds the wrong kind of embeddings", path.display())));
        }
        out = out.merge(align(&dump, grid))?;
    }
    Ok(out)
}

impl DialogueData {
    pub fn from_record(
        record: &DialogueRecord,
        needs: StreamNeeds,
        dump_dir: Option<&Path>,
        merge_gap: f64,
    ) -> Result<Self> {
        record.validate()?;
        let grid = FrameGrid::for_samples(
            record.channel_a.len(),
            record.sample_rate,
            DEFAULT_FRAME_SHIFT,
            DEFAULT_WINDOW_LEN,
        )?;
        let pitch_cfg = PitchConfig::default();
        let speaker_streams = |speaker: Speaker| -> Result<SpeakerStreams> {
            let wave = record.channel(speaker);
            let prosody = if needs.prosody {
                let p = dsp::pitch(wave, record.sample_rate, &grid, &pitch_cfg);
                let f = dsp::yin_f0(wave, record.sample_rate, &grid, &pitch_cfg);
                Some(FrameSeries::concat(&[&p, &f])?)
            } else {
                None
            };
            Ok(SpeakerStreams {
                rmse: dsp::rmse(wave, record.sample_rate, &grid),
                prosody,
                embeddings: load_embeddings(&record.id, speaker, &grid, needs, dump_dir)?,
            })
        };
        Ok(DialogueData {
            tracks: DialogueTracks::from_record(record, merge_gap),
            grid,
            streams: [speaker_streams(Speaker::A)?, speaker_streams(Speaker::B)?],
        })
    }

    pub fn id(&self) -> &str {
        &self.tracks.id
    }

    pub fn speaker_streams(&self, speaker: Speaker) -> &SpeakerStreams {
        &self.streams[speaker as usize]
    }

    /// Whole-dialogue streams of `speaker`'s channel.
    pub fn feature_streams(&self, speaker: Speaker) -> FeatureStreams {
        let s = self.speaker_streams(speaker);
        FeatureStreams {
            grid: self.grid,
            rmse: Some(s.rmse.clone()),
            prosody: s.prosody.clone(),
            embeddings: s.embeddings.clone(),
        }
    }

    /// Labels for the segment's target and features of its current speaker,
    /// with the segment start snapped to the frame grid.
    pub fn segment_view(&self, segment: &Segment, delta_max: f64) -> Result<SegmentView> {
        let shift = self.grid.frame_shift;
        let start = (segment.start / shift).round().max(0.0) as usize;
        if start >= self.grid.n_frames {
            return Err(Error::Validation(format!(
                "segment start {} beyond dialogue {}",
                segment.start,
                self.id()
            )));
        }
        let len = ((segment.duration() / shift) - TIME_EPS).ceil().max(0.0) as usize;
        let len = len.min(self.grid.n_frames - start);
        let offset = start as f64 * shift;
        let streams = self.feature_streams(segment.current_speaker()).slice_frames(start, len);
        let target = self.tracks.track(segment.target_speaker).shifted(-offset);
        let current = self.tracks.track(segment.current_speaker()).shifted(-offset);
        let labels = compute_tau(&target, &current, &streams.grid, delta_max)?;
        Ok(SegmentView { labels, streams })
    }
}

/// Loads and featurizes the listed dialogues.
pub fn load_split(cfg: &ExperimentConfig, ids: &[String], needs: StreamNeeds) -> Result<Vec<DialogueData>> {
    ids.iter()
        .map(|id| {
            let record = load_dialogue_from_dir(&cfg.corpus_dir, id)?;
            DialogueData::from_record(&record, needs, cfg.dump_dir.as_deref(), cfg.merge_gap)
        })
        .collect()
}

fn tracks_of(data: &[DialogueData]) -> Vec<DialogueTracks> {
    data.iter().map(|d| d.tracks.clone()).collect()
}

fn find<'a>(data: &'a [DialogueData], id: &str) -> Result<&'a DialogueData> {
    data.iter()
        .find(|d| d.id() == id)
        .ok_or_else(|| Error::Validation(format!("segment refers to unknown dialogue {id}")))
}

/// Evaluation segments of `data` with their views.
pub fn eval_views(data: &[DialogueData], seed: u64, delta_max: f64) -> Result<Vec<SegmentView>> {
    let segments = eval_segments(&tracks_of(data), seed);
    if segments.is_empty() {
        return Err(Error::NoSegments("the split yields no evaluation segments".into()));
    }
    segments
        .iter()
        .map(|s| find(data, &s.dialogue_id)?.segment_view(s, delta_max))
        .collect()
}

fn train_sample(config: &ModelConfig, view: &SegmentView) -> Result<TrainSample> {
    Ok(TrainSample {
        input: ModelInput::assemble(config, &view.streams)?,
        tau: view.labels.tau.clone(),
        mask: view.labels.loss_mask.clone(),
    })
}

struct SegmentSource<'a> {
    data: &'a [DialogueData],
    tracks: Vec<DialogueTracks>,
    config: &'a ModelConfig,
    per_epoch: usize,
    seed: u64,
}

impl TrainingSource for SegmentSource<'_> {
    fn epoch_samples(&mut self, epoch: usize) -> Result<Vec<TrainSample>> {
        let seed = self.seed.wrapping_add(epoch as u64);
        let segments = sample_train_segments(&self.tracks, self.per_epoch, seed, DEFAULT_FRAME_SHIFT);
        segments
            .iter()
            .map(|s| train_sample(self.config, &find(self.data, &s.dialogue_id)?.segment_view(s, self.config.delta_max)?))
            .collect()
    }
}

/// Which predictor produces the evaluated lead times.
#[derive(Debug, Clone)]
pub enum Predictor {
    Model(Model),
    Silence(SilenceConfig),
    /// The ground-truth labels themselves.
    Oracle,
}

impl Predictor {
    pub fn rule(&self) -> PredRule {
        match self {
            Predictor::Silence(_) => PredRule::Endpoints,
            _ => PredRule::Range,
        }
    }

    pub fn predict(&self, view: &SegmentView) -> Result<Vec<f64>> {
        match self {
            Predictor::Model(m) => Ok(model_predict(m, &view.streams)?.tau_hat),
            Predictor::Silence(cfg) => {
                let rmse = view
                    .streams
                    .rmse
                    .as_ref()
                    .ok_or_else(|| Error::MissingStream("missing stream R".into()))?;
                Ok(silence_baseline(rmse, cfg)?.tau_hat)
            }
            Predictor::Oracle => Ok(oracle_predict(&view.labels).tau_hat),
        }
    }
}

pub fn evaluate_views(views: &[SegmentView], predictor: &Predictor, metrics: &MetricsConfig) -> Result<MetricReport> {
    if views.is_empty() {
        return Err(Error::NoSegments("nothing to evaluate".into()));
    }
    let mut acc = MetricAccumulator::new(*metrics);
    for view in views {
        acc.add_segment(&predictor.predict(view)?, &view.labels)?;
    }
    acc.report(predictor.rule())
}

/// Mean loss over masked-in frames of all views.
pub fn mean_loss(model: &Model, samples: &[TrainSample]) -> Result<f64> {
    let (mut total, mut frames) = (0.0, 0usize);
    for s in samples {
        let (loss, n, _) = model.loss_and_grad(&[s], None, false)?;
        total += loss * n as f64;
        frames += n;
    }
    if frames == 0 {
        return Err(Error::NoSegments("validation segments have no masked-in frames".into()));
    }
    Ok(total / frames as f64)
}

/// Validation MMAE and NLL of `model` on prepared views.
pub struct Validator {
    views: Vec<SegmentView>,
    samples: Vec<TrainSample>,
    metrics: MetricsConfig,
}

impl Validator {
    pub fn new(config: &ModelConfig, views: Vec<SegmentView>, metrics: MetricsConfig) -> Result<Self> {
        let samples = views.iter().map(|v| train_sample(config, v)).collect::<Result<_>>()?;
        Ok(Validator { views, samples, metrics })
    }

    pub fn validate(&self, model: &Model) -> Result<Validation> {
        let report = evaluate_views(&self.views, &Predictor::Model(model.clone()), &self.metrics)?;
        Ok(Validation {
            mmae: report.mmae,
            nll: mean_loss(model, &self.samples)?,
        })
    }
}

/// Fits input normalization on whole-dialogue streams of both speakers.
pub fn fit_norm(config: &ModelConfig, data: &[DialogueData]) -> Result<InputNorm> {
    let mut inputs = Vec::with_capacity(2 * data.len());
    for d in data {
        for s in [Speaker::A, Speaker::B] {
            inputs.push(ModelInput::assemble(config, &d.feature_streams(s))?);
        }
    }
    Ok(InputNorm::fit(config, &inputs))
}

/// Initializes, normalizes and trains a model on in-memory data.
pub fn train_on(
    cfg: &ExperimentConfig,
    train_data: &[DialogueData],
    val_data: &[DialogueData],
    on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::NoSegments("training split is empty".into()));
    }
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    model.norm = fit_norm(&cfg.model, train_data)?;
    let validator = Validator::new(&cfg.model, eval_views(val_data, cfg.seed, cfg.model.delta_max)?, cfg.metrics)?;
    let mut source = SegmentSource {
        data: train_data,
        tracks: tracks_of(train_data),
        config: &cfg.model,
        per_epoch: cfg.segments_per_epoch.unwrap_or(train_data.len()),
        seed: cfg.seed,
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    train(model, &mut source, &train_cfg, |m| validator.validate(m), on_epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub epochs: Vec<EpochRecord>,
}

/// Trains the configured model and writes `best.ilck`, `epoch_<k>.ilck` and
/// `train_log.jsonl` into the output directory.
pub fn cmd_train(config_path: &Path, seed: Option<u64>) -> Result<TrainSummary> {
    let cfg = ExperimentConfig::load(config_path)?.with_seed(seed);
    let splits = cfg.splits()?;
    let needs = StreamNeeds::for_model(&cfg.model);
    info!("loading {} training and {} validation dialogues", splits.train.len(), splits.val.len());
    let train_data = load_split(&cfg, &splits.train, needs)?;
    let val_data = load_split(&cfg, &splits.val, needs)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train_on(&cfg, &train_data, &val_data, |record, model| {
        save_checkpoint(model, &out.join(format!("epoch_{}.ilck", record.epoch)))?;
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))
    })?;
    let best_checkpoint = out.join("best.ilck");
    save_checkpoint(&outcome.best, &best_checkpoint)?;
    info!("best epoch {} written to {}", outcome.best_epoch, best_checkpoint.display());
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_checkpoint,
        epochs: outcome.epochs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalMode {
    Checkpoint(PathBuf),
    Silence,
    Oracle,
}

impl EvalMode {
    fn tag(&self) -> String {
        match self {
            EvalMode::Checkpoint(p) => p
                .file_stem()
                .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned()),
            EvalMode::Silence => "silence".into(),
            EvalMode::Oracle => "oracle".into(),
        }
    }
}

/// Evaluates a predictor on a split and writes `<split>_<mode>.csv` and
/// `<split>_<mode>.json` into the output directory. Returns the report and
/// the CSV path.
pub fn cmd_evaluate(config_path: &Path, mode: &EvalMode, split: Split, seed: Option<u64>) -> Result<(MetricReport, PathBuf)> {
    let cfg = ExperimentConfig::load(config_path)?.with_seed(seed);
    let (predictor, needs) = match mode {
        EvalMode::Checkpoint(path) => {
            let model = load_checkpoint(path)?;
            let needs = StreamNeeds::for_model(&model.config);
            if (model.config.delta_max - cfg.metrics.delta_max).abs() > TIME_EPS {
                return Err(Error::Config("checkpoint delta_max differs from the metrics config".into()));
            }
            (Predictor::Model(model), needs)
        }
        EvalMode::Silence => (
            Predictor::Silence(SilenceConfig {
                delta_max: cfg.metrics.delta_max,
                ..SilenceConfig::default()
            }),
            StreamNeeds::default(),
        ),
        EvalMode::Oracle => (Predictor::Oracle, StreamNeeds::default()),
    };
    let ids = cfg.splits()?.ids(split);
    if ids.is_empty() {
        return Err(Error::NoSegments(format!("split {split} lists no dialogues")));
    }
    let data = load_split(&cfg, ids, needs)?;
    let views = eval_views(&data, cfg.seed, cfg.metrics.delta_max)?;
    let report = evaluate_views(&views, &predictor, &cfg.metrics)?;
    let stem = format!("{split}_{}", mode.tag());
    report.write(&cfg.output_dir, &stem)?;
    info!("{split} {}: MMAE {:.4} (true {:.4}, pred {:.4})", mode.tag(), report.mmae, report.mmae_true, report.mmae_pred);
    Ok((report, cfg.output_dir.join(format!("{stem}.csv"))))
}

/// Turns a report CSV into one table keyed by bucket value with columns
/// `mae_true`, `mae_pred` and `mean_pred_at_true` (empty where undefined).
pub fn curves_table(report_csv: &str, path: &Path) -> Result<String> {
    let curves = parse_report_csv(report_csv, path)?;
    let key = |v: f64| (v * 1e9).round() as i64;
    let mut keys = BTreeSet::new();
    for rows in [&curves.mae_true, &curves.mae_pred, &curves.mean_pred_at_true] {
        keys.extend(rows.iter().map(|r| key(r.bucket_value)));
    }
    let lookup = |rows: &[crate::metrics::BucketRow], k: i64| {
        rows.iter()
            .find(|r| key(r.bucket_value) == k)
            .map_or(String::new(), |r| r.value.to_string())
    };
    let mut out = String::from("bucket_value,mae_true,mae_pred,mean_pred_at_true\n");
    for k in keys {
        writeln!(
            out,
            "{},{},{},{}",
            k as f64 / 1e9,
            lookup(&curves.mae_true, k),
            lookup(&curves.mae_pred, k),
            lookup(&curves.mean_pred_at_true, k)
        )
        .expect("string write");
    }
    Ok(out)
}

/// Writes the curve table next to the report as `<stem>.curves.csv`, or to `out`.
pub fn cmd_curves(report_path: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let text = fs::read_to_string(report_path).map_err(|e| Error::io(report_path, e))?;
    let table = curves_table(&text, report_path)?;
    let dest = out.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = report_path.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
        report_path.with_file_name(format!("{stem}.curves.csv"))
    });
    fs::write(&dest, table).map_err(|e| Error::io(&dest, e))?;
    Ok(dest)
}

/// Writes a synthetic corpus, its pseudo dumps when requested, and, given split
/// sizes, a `splits.json` assigning dialogues in order.
pub fn cmd_synth(spec_path: &Path, out_dir: &Path, seed: u64, split_sizes: Option<[usize; 3]>) -> Result<Vec<String>> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: spec_path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    write_synth(&spec, out_dir, seed, split_sizes)
}

pub fn write_synth(spec: &SynthSpec, out_dir: &Path, seed: u64, split_sizes: Option<[usize; 3]>) -> Result<Vec<String>> {
    if let Some(sizes) = split_sizes {
        if sizes.iter().sum::<usize>() > spec.n_dialogues {
            return Err(Error::Config(format!(
                "split sizes {sizes:?} exceed the {} dialogues generated",
                spec.n_dialogues
            )));
        }
    }
    let records = synthesize_corpus(spec, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut ids = Vec::with_capacity(records.len());
    for record in &records {
        save_dialogue(record, out_dir)?;
        if let Some(pe) = &spec.pseudo_embeddings {
            for (speaker, acoustic, word) in pseudo_dumps(record, pe, seed)? {
                write_dump(&dump_path(out_dir, &record.id, speaker, EmbeddingKind::Acoustic), &acoustic)?;
                write_dump(&dump_path(out_dir, &record.id, speaker, EmbeddingKind::Word), &word)?;
            }
        }
        ids.push(record.id.clone());
    }
    if let Some([tr, va, te]) = split_sizes {
        let splits = Splits {
            train: ids[..tr].to_vec(),
            val: ids[tr..tr + va].to_vec(),
            test: ids[tr + va..tr + va + te].to_vec(),
        };
        let path = out_dir.join("splits.json");
        let text = serde_json::to_string_pretty(&splits).expect("splits serialize");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(ids)
}
