//! One function per pipeline stage. Each reads its inputs from the output
//! directory, writes its artifacts there and reports what it touched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use stopdetect::detect::detect_corpus;
use stopdetect::eval::{
    baseline_recovery, daily_counts, dual_recall, fp_distance_quantiles, from_confusion, hourly_stop_histogram, confusion,
    pearson_matrix, permutation_importance, roc_auc, roc_curve, write_correlation, write_daily_counts,
    write_distance_quantiles, write_hourly_histogram, EvalReport, ModelReport,
};
use stopdetect::features::{
    assemble_features, fit_scaler, read_scaler, training_columns, transform, write_entropy, write_scaler, FeatureTable,
    HistoryIndex,
};
use stopdetect::gaps::{apply_gaps, plan_gaps, read_gap_plan, read_positives, write_gap_plan, write_positives};
use stopdetect::io::{parse_labeled, parse_pings, read_stops, write_labeled, write_pings, write_stops, ParseConfig};
use stopdetect::model::{group_into_trajectories, stops_from_labels, LabeledPing, Ping, PingId};
use stopdetect::models::{classify, load_model, save_model, write_predictions, Ffnn, Forest, Scorer};
use stopdetect::models::ffnn::train_ffnn;
use stopdetect::models::forest::train_forest;
use stopdetect::quality::{assess_quality, utc_day, QualityConfig};
use stopdetect::split::{read_split, temporal_split, write_split, DatasetSplit, SplitSet};
use stopdetect::synth::{generate, write_ground_truth, DAY_S};

use crate::config::{render_config, RunConfig, Stage as SeedStage};
use crate::error::{CliError, CliResult};
use crate::manifest::{self, hash_files, ManifestEntry};

pub mod files {
    pub const PINGS: &str = "pings.csv";
    pub const GROUND_TRUTH: &str = "ground_truth_stops.csv";
    pub const QUALITY: &str = "quality.csv";
    pub const STOPS: &str = "stops.csv";
    pub const LABELED: &str = "labeled_pings.csv";
    pub const GAP_PLAN: &str = "gap_plan.csv";
    pub const POSITIVES: &str = "positives_manifest.csv";
    pub const GAPPED: &str = "gapped_pings.csv";
    pub const FEATURES: &str = "features.csv";
    pub const ENTROPY: &str = "entropy.csv";
    pub const SPLIT: &str = "split.csv";
    pub const SCALER: &str = "scaler.csv";
    pub const FOREST: &str = "model_forest.json";
    pub const FFNN: &str = "model_ffnn.json";
    pub const PREDICTIONS_FOREST: &str = "predictions_forest.csv";
    pub const PREDICTIONS_FFNN: &str = "predictions_ffnn.csv";
    pub const ROC_FOREST: &str = "roc_forest.csv";
    pub const ROC_FFNN: &str = "roc_ffnn.csv";
    pub const REPORT: &str = "report.json";
    pub const CORRELATION: &str = "correlation.csv";
    pub const IMPORTANCE: &str = "importance.csv";
    pub const DISTANCES: &str = "fp_distance_quantiles.csv";
    pub const DAILY: &str = "daily_counts.csv";
    pub const HOURLY: &str = "hourly_stops.csv";
    pub const CONFIG_RESOLVED: &str = "config.resolved";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageName {
    Generate,
    Label,
    InjectGaps,
    Features,
    Split,
    Train,
    Evaluate,
}

impl StageName {
    pub const PIPELINE: [StageName; 7] = [
        StageName::Generate,
        StageName::Label,
        StageName::InjectGaps,
        StageName::Features,
        StageName::Split,
        StageName::Train,
        StageName::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Generate => "generate",
            StageName::Label => "label",
            StageName::InjectGaps => "inject-gaps",
            StageName::Features => "features",
            StageName::Split => "split",
            StageName::Train => "train",
            StageName::Evaluate => "evaluate",
        }
    }
}

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
}

#[derive(Default)]
struct Touched {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

impl Touched {
    fn input(&mut self, ctx: &Ctx, name: &str) -> CliResult<PathBuf> {
        let p = ctx.path(name);
        if !p.is_file() {
            return Err(CliError::MissingInput(p));
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    fn external_input(&mut self, p: &Path) -> CliResult<PathBuf> {
        if !p.is_file() {
            return Err(CliError::MissingInput(p.to_path_buf()));
        }
        self.inputs.push(p.to_path_buf());
        Ok(p.to_path_buf())
    }

    fn output(&mut self, ctx: &Ctx, name: &str) -> CliResult<BufWriter<File>> {
        let p = ctx.path(name);
        let f = File::create(&p).map_err(|source| CliError::Io { path: p.clone(), source })?;
        self.outputs.push(p);
        Ok(BufWriter::new(f))
    }
}

fn open(p: &Path) -> CliResult<BufReader<File>> {
    File::open(p).map(BufReader::new).map_err(|source| CliError::Io { path: p.to_path_buf(), source })
}

fn read_labeled(p: &Path) -> CliResult<Vec<LabeledPing>> {
    Ok(parse_labeled(open(p)?, &ParseConfig::default())?.rows)
}

fn read_features(p: &Path) -> CliResult<FeatureTable> {
    Ok(FeatureTable::read_csv(open(p)?)?)
}

fn rows_in(table: &FeatureTable, split: &DatasetSplit, set: SplitSet) -> CliResult<Vec<usize>> {
    let mut rows = Vec::new();
    for (i, id) in table.ping_ids.iter().enumerate() {
        match split.set_of(*id) {
            Some(s) if s == set => rows.push(i),
            Some(_) => {}
            None => return Err(CliError::Stage(format!("ping {id} has no split assignment"))),
        }
    }
    Ok(rows)
}

/// Training-schema rows of one split set, standardized with `scaler`.
fn prepared(ctx: &Ctx, table: &FeatureTable, split: &DatasetSplit, set: SplitSet, scaler: Option<&stopdetect::features::ScalerParams>) -> CliResult<FeatureTable> {
    let cols = training_columns(ctx.cfg.include_collective);
    let subset = table.select_rows(&rows_in(table, split, set)?).select_columns(&cols)?;
    Ok(match scaler {
        Some(s) => transform(&subset, s)?,
        None => subset,
    })
}

fn generate_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let gcfg = ctx.cfg.generator_config();
    t.seed = Some(gcfg.seed);
    let g = generate(&gcfg)?;
    info!("generated {} pings and {} planted stops", g.pings.len(), g.ground_truth.stops.len());
    let mut pings = g.pings;
    pings.sort_by(|a, b| a.device_id.cmp(&b.device_id).then_with(|| a.tie_break_cmp(b)));
    write_pings(t.output(ctx, files::PINGS)?, &pings)?;
    write_ground_truth(t.output(ctx, files::GROUND_TRUTH)?, &g.ground_truth)?;
    Ok(())
}

fn label_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let src = match &ctx.cfg.paths.input_pings {
        Some(p) => t.external_input(p)?,
        None => t.input(ctx, files::PINGS)?,
    };
    let pings = parse_pings(open(&src)?, &ParseConfig::default())?.rows;
    let mut devices = group_into_trajectories(pings);
    let g = &ctx.cfg.generator;
    let start = utc_day(g.window_start_ts);
    let end = utc_day(g.window_start_ts + g.window_days as i64 * DAY_S);
    let mut qcfg = QualityConfig::new(start, end);
    qcfg.min_active_days = ctx.cfg.filter.min_active_days;
    qcfg.min_daily_pings = ctx.cfg.filter.min_daily_pings;
    qcfg.mean_basis = ctx.cfg.filter.mean_basis;
    let quality = assess_quality(&devices, &qcfg);
    {
        let mut w = csv::Writer::from_writer(t.output(ctx, files::QUALITY)?);
        w.write_record(["device_id", "active_before_start", "active_days", "min_month_active_days", "mean_daily_pings", "retained"])?;
        for q in &quality {
            let min_month = q.active_days_per_month.iter().map(|m| m.2).min().unwrap_or(0);
            w.write_record([
                q.device_id.clone(),
                q.active_before_start.to_string(),
                q.active_days.to_string(),
                min_month.to_string(),
                q.mean_daily_pings.to_string(),
                q.retained.to_string(),
            ])?;
        }
        w.flush().map_err(stopdetect::Error::from)?;
    }
    if ctx.cfg.filter.enabled {
        let keep: BTreeSet<&str> = quality.iter().filter(|q| q.retained).map(|q| q.device_id.as_str()).collect();
        devices.retain(|d, _| keep.contains(d.as_str()));
    }
    info!("{} devices pass the quality filter", devices.len());
    ctx.cfg.detector.validate()?;
    let det = detect_corpus(&devices, &ctx.cfg.detector);
    info!("density labeling found {} stops over {} pings", det.stops.len(), det.labels.len());
    write_stops(t.output(ctx, files::STOPS)?, &det.stops)?;
    write_labeled(t.output(ctx, files::LABELED)?, &det.labels)?;
    Ok(())
}

fn inject_gaps_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let labeled = read_labeled(&t.input(ctx, files::LABELED)?)?;
    let stops = read_stops(open(&t.input(ctx, files::STOPS)?)?)?;
    let seed = ctx.cfg.stage_seed(SeedStage::Gaps);
    t.seed = Some(seed);
    let plan = plan_gaps(&stops, &labeled, ctx.cfg.gaps.fraction, seed, ctx.cfg.gaps.strata)?;
    let (gapped, positives) = apply_gaps(&labeled, &plan)?;
    info!("masked {} of {} stops, {} pings removed", plan.masked.len(), stops.len(), labeled.len() - gapped.len());
    write_gap_plan(t.output(ctx, files::GAP_PLAN)?, &plan)?;
    write_positives(t.output(ctx, files::POSITIVES)?, &positives)?;
    write_labeled(t.output(ctx, files::GAPPED)?, &gapped)?;
    Ok(())
}

fn features_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let gapped = read_labeled(&t.input(ctx, files::GAPPED)?)?;
    let masked = read_gap_plan(open(&t.input(ctx, files::GAP_PLAN)?)?)?;
    let exclude: HashSet<String> = masked.into_iter().map(|m| m.stop_id).collect();
    let index = HistoryIndex::build(&gapped, &exclude);
    let table = assemble_features(&gapped, &index);
    table.write_csv(t.output(ctx, files::FEATURES)?)?;
    write_entropy(t.output(ctx, files::ENTROPY)?, &index.visits)?;
    Ok(())
}

fn split_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let gapped = read_labeled(&t.input(ctx, files::GAPPED)?)?;
    let stops = stops_from_labels(&gapped);
    let split = temporal_split(&gapped, &stops, ctx.cfg.split)?;
    let c = split.counts();
    info!("split rows train/validation/test = {}/{}/{}; {} stops repaired", c[0], c[1], c[2], split.repairs.len());
    write_split(t.output(ctx, files::SPLIT)?, &split)?;
    Ok(())
}

fn train_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let table = read_features(&t.input(ctx, files::FEATURES)?)?;
    let split = read_split(open(&t.input(ctx, files::SPLIT)?)?)?;
    let raw = prepared(ctx, &table, &split, SplitSet::Train, None)?;
    let scaler = fit_scaler(&raw);
    let train = transform(&raw, &scaler)?;
    write_scaler(t.output(ctx, files::SCALER)?, &scaler)?;
    let fcfg = ctx.cfg.forest_config();
    let ncfg = ctx.cfg.ffnn_config();
    t.seed = Some(fcfg.seed);
    info!("training forest on {} rows x {} columns", train.n_rows(), train.n_cols());
    let forest = train_forest(&train, &fcfg)?;
    t.output(ctx, files::FOREST)?;
    save_model(&ctx.path(files::FOREST), &forest)?;
    info!("training ffnn");
    let net = train_ffnn(&train, &ncfg)?;
    t.output(ctx, files::FFNN)?;
    save_model(&ctx.path(files::FFNN), &net)?;
    Ok(())
}

fn evaluate_stage(ctx: &Ctx, t: &mut Touched) -> CliResult<()> {
    let cfg = ctx.cfg;
    let table = read_features(&t.input(ctx, files::FEATURES)?)?;
    let split = read_split(open(&t.input(ctx, files::SPLIT)?)?)?;
    let scaler = read_scaler(open(&t.input(ctx, files::SCALER)?)?)?;
    let forest: Forest = load_model(&t.input(ctx, files::FOREST)?)?;
    let net: Ffnn = load_model(&t.input(ctx, files::FFNN)?)?;
    let positives = read_positives(open(&t.input(ctx, files::POSITIVES)?)?)?;
    let labeled = read_labeled(&t.input(ctx, files::LABELED)?)?;
    let stops = read_stops(open(&t.input(ctx, files::STOPS)?)?)?;
    let gapped = read_labeled(&t.input(ctx, files::GAPPED)?)?;
    let seed = cfg.stage_seed(SeedStage::Eval);
    t.seed = Some(seed);

    let test = prepared(ctx, &table, &split, SplitSet::Test, Some(&scaler))?;
    let validation = prepared(ctx, &table, &split, SplitSet::Validation, Some(&scaler))?;
    let ping_of: HashMap<PingId, &Ping> = gapped.iter().map(|l| (l.ping_id, &l.ping)).collect();
    let member_counts: HashMap<String, usize> = stops.iter().map(|s| (s.stop_id.clone(), s.member_ping_count)).collect();
    let importance_rows = (cfg.eval.importance_max_rows > 0).then_some(cfg.eval.importance_max_rows);

    let mut reports = Vec::new();
    let models: [(&str, &dyn Scorer, &str, &str); 2] = [
        ("forest", &forest, files::PREDICTIONS_FOREST, files::ROC_FOREST),
        ("ffnn", &net, files::PREDICTIONS_FFNN, files::ROC_FFNN),
    ];
    for (name, model, pred_file, roc_file) in models {
        let scores = model.predict_proba(&test)?;
        let predicted = classify(&scores, cfg.eval.threshold);
        write_predictions(t.output(ctx, pred_file)?, &test.ping_ids, &scores, cfg.eval.threshold)?;
        {
            let mut w = csv::Writer::from_writer(t.output(ctx, roc_file)?);
            w.write_record(["threshold", "fpr", "tpr"])?;
            for (thr, fpr, tpr) in roc_curve(&scores, &test.labels) {
                w.write_record([thr.to_string(), fpr.to_string(), tpr.to_string()])?;
            }
            w.flush().map_err(stopdetect::Error::from)?;
        }
        let auc = roc_auc(&scores, &test.labels)?;
        let metrics = from_confusion(confusion(&predicted, &test.labels)?);
        let by_id: HashMap<PingId, bool> = test.ping_ids.iter().copied().zip(predicted.iter().copied()).collect();
        let masked_recall = dual_recall(&by_id, &positives, &member_counts);
        let (mut fp, mut tn) = (Vec::new(), Vec::new());
        for (i, id) in test.ping_ids.iter().enumerate() {
            if test.labels[i] {
                continue;
            }
            let p = ping_of
                .get(id)
                .copied()
                .ok_or_else(|| CliError::Stage(format!("feature row {id} not found in {}", files::GAPPED)))?;
            if predicted[i] {
                fp.push(p);
            } else {
                tn.push(p);
            }
        }
        let distances = fp_distance_quantiles(&fp, &tn, &stops, cfg.eval.tn_sample, seed);
        let importance = permutation_importance(model, &validation, cfg.eval.importance_repeats, seed, importance_rows)?;
        info!(
            "{name}: auc {auc:.4}, precision {:.4}, recall {:.4}, masked recall {:.4}",
            metrics.precision, metrics.recall, masked_recall.retained_basis
        );
        reports.push(ModelReport {
            model: name.to_string(),
            threshold: cfg.eval.threshold,
            test_rows: test.n_rows(),
            auc,
            metrics,
            masked_recall,
            distances,
            importance,
        });
    }

    let baseline = baseline_recovery(&gapped, &cfg.detector, &positives);
    let correlation = pearson_matrix(&table.select_rows(&rows_in(&table, &split, SplitSet::Train)?))?;
    let counts = split.counts();
    let split_counts: BTreeMap<String, usize> =
        SplitSet::ALL.iter().map(|s| (s.as_str().to_string(), counts[*s as usize])).collect();
    let report = EvalReport { models: reports, baseline, correlation, split_counts, columns: test.columns.clone() };

    write_correlation(t.output(ctx, files::CORRELATION)?, &report.correlation)?;
    {
        let mut w = csv::Writer::from_writer(t.output(ctx, files::IMPORTANCE)?);
        w.write_record(["model", "rank", "column", "mean_auc_drop"])?;
        for m in &report.models {
            for (rank, imp) in m.importance.iter().enumerate() {
                w.write_record([m.model.clone(), (rank + 1).to_string(), imp.column.clone(), imp.mean_drop.to_string()])?;
            }
        }
        w.flush().map_err(stopdetect::Error::from)?;
    }
    let rows: Vec<(String, &stopdetect::eval::DistanceReport)> =
        report.models.iter().map(|m| (m.model.clone(), &m.distances)).collect();
    write_distance_quantiles(t.output(ctx, files::DISTANCES)?, &rows)?;
    write_daily_counts(t.output(ctx, files::DAILY)?, &daily_counts(&labeled))?;
    write_hourly_histogram(t.output(ctx, files::HOURLY)?, &hourly_stop_histogram(&labeled))?;
    let json = serde_json::to_vec_pretty(&report).map_err(stopdetect::Error::from)?;
    let p = ctx.path(files::REPORT);
    fs::write(&p, json).map_err(|source| CliError::Io { path: p.clone(), source })?;
    t.outputs.push(p);
    Ok(())
}

/// Run one stage and append its manifest line, whatever the outcome.
pub fn run_stage(stage: StageName, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let resolved = out.join(files::CONFIG_RESOLVED);
    fs::write(&resolved, render_config(cfg)).map_err(|source| CliError::Io { path: resolved.clone(), source })?;
    let ctx = Ctx { cfg, out };
    let mut touched = Touched::default();
    let started = Instant::now();
    info!("stage {}", stage.as_str());
    let result = match stage {
        StageName::Generate => generate_stage(&ctx, &mut touched),
        StageName::Label => label_stage(&ctx, &mut touched),
        StageName::InjectGaps => inject_gaps_stage(&ctx, &mut touched),
        StageName::Features => features_stage(&ctx, &mut touched),
        StageName::Split => split_stage(&ctx, &mut touched),
        StageName::Train => train_stage(&ctx, &mut touched),
        StageName::Evaluate => evaluate_stage(&ctx, &mut touched),
    };
    let entry = ManifestEntry {
        stage: stage.as_str().to_string(),
        status: if result.is_ok() { "ok" } else { "failed" }.to_string(),
        seed: touched.seed,
        inputs: hash_files(&touched.inputs),
        outputs: if result.is_ok() { hash_files(&touched.outputs) } else { BTreeMap::new() },
        duration_ms: started.elapsed().as_millis(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    manifest::append(out, &entry).map_err(|source| CliError::Io { path: out.join(manifest::MANIFEST_FILE), source })?;
    result
}

/// All stages in order; stops at the first failure. Generation is skipped
/// when an external ping file is configured.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let m = out.join(manifest::MANIFEST_FILE);
    if m.exists() {
        fs::remove_file(&m).map_err(|source| CliError::Io { path: m.clone(), source })?;
    }
    for stage in StageName::PIPELINE {
        if stage == StageName::Generate && cfg.paths.input_pings.is_some() {
            continue;
        }
        run_stage(stage, cfg, out)?;
    }
    Ok(())
}
