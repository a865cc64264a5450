//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stopdetect::detect::{detect_corpus, DetectorParams};
use stopdetect::eval::roc_auc;
use stopdetect::features::{
    assemble_features, entropy_of, feature_row, fit_scaler, neighbor_intervals, stop_occurrences, transform, FeatureTable,
    HistoryIndex, VisitTable, HISTORY_COLUMNS,
};
use stopdetect::gaps::{apply_gaps, plan_gaps, StrataKeys};
use stopdetect::geo::{geohash_decode, geohash_encode, haversine_m, EARTH_RADIUS_M};
use stopdetect::model::group_into_trajectories;
use stopdetect::models::class_weights;
use stopdetect::models::ffnn::{Ffnn, FfnnConfig};
use stopdetect::split::{temporal_split, SplitFractions, SplitSet};
use stopdetect::synth::{generate, GeneratorConfig};
use stopdetect::{LabeledPing, Ping, StopEvent};
use stopdetect_cli::{run_pipeline, validate_config};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn corpus(seed: u64, n_devices: usize, days: u32) -> (Vec<StopEvent>, Vec<LabeledPing>) {
    let cfg = GeneratorConfig { seed, n_devices, window_days: days, ..GeneratorConfig::default() };
    let g = generate(&cfg).expect("generator");
    let det = detect_corpus(&group_into_trajectories(g.pings), &DetectorParams::default());
    (det.stops, det.labels)
}

fn geo_kernels() -> Outcome {
    let started = Instant::now();
    let eq = haversine_m((0.0, 0.0), (0.0, 1.0));
    ensure((eq - 111_194.93).abs() <= 0.01, || format!("equator degree {eq}"))?;
    ensure((eq - EARTH_RADIUS_M * std::f64::consts::PI / 180.0).abs() < 1e-6, || "equator closed form".into())?;
    let anti = haversine_m((0.0, 0.0), (0.0, 180.0));
    ensure((anti - 20_015_086.8).abs() <= 0.1, || format!("antipodal {anti}"))?;
    ensure(haversine_m((12.5, -7.25), (12.5, -7.25)) == 0.0, || "identical points".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    for _ in 0..n {
        let lat = rng.random_range(-90.0..=90.0);
        let lon = rng.random_range(-180.0..=180.0);
        let precision = rng.random_range(1..=12);
        let code = geohash_encode(lat, lon, precision).map_err(|e| e.to_string())?;
        let cell = geohash_decode(&code).map_err(|e| e.to_string())?;
        ensure(cell.bbox.contains(lat, lon), || format!("{code} does not contain ({lat}, {lon})"))?;
        let (clat, clon) = cell.center();
        let again = geohash_encode(clat, clon, precision).map_err(|e| e.to_string())?;
        ensure(again == code, || format!("center of {code} re-encodes to {again}"))?;
    }

    let cell = geohash_decode(&geohash_encode(0.0001, 0.0001, 8).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (width, height) = cell.bbox.size_m();
    ensure((width - 38.0).abs() <= 0.05 * 38.0, || format!("cell width {width:.2} m"))?;
    ensure((height - 19.0).abs() <= 0.05 * 19.0, || format!("cell height {height:.2} m"))?;
    within(started.elapsed(), 5)?;
    Ok(format!("{n} roundtrips, equator cell {width:.1} m x {height:.1} m, {:.2}s", started.elapsed().as_secs_f64()))
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pos) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        pos += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    let neg = labels.len() as u64 - pos;
    twice_wins as f64 / 2.0 / (pos as f64 * neg as f64)
}

fn auc_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut done = 0;
    while done < 500 {
        let n = rng.random_range(2..=200);
        // coarse grid so ties are common
        let levels = rng.random_range(1..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let fast = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let slow = brute_auc(&scores, &labels);
        ensure(fast.to_bits() == slow.to_bits(), || format!("instance {done}: {fast} vs {slow}"))?;
        done += 1;
    }
    within(started.elapsed(), 10)?;
    Ok(format!("{done} instances equal bit for bit, {:.2}s", started.elapsed().as_secs_f64()))
}

fn entropy_suite() -> Outcome {
    let always = entropy_of([(4, 4)]);
    ensure(always.abs() <= 1e-12, || format!("p = 1 gives {always}"))?;
    let halves = entropy_of([(1, 2), (3, 6)]);
    ensure((halves - std::f64::consts::LN_2).abs() <= 1e-12, || format!("two halves give {halves}"))?;
    let with_zero = entropy_of([(1, 2), (3, 6), (0, 9)]);
    ensure((with_zero - halves).abs() <= 1e-12, || format!("p = 0 device changed entropy to {with_zero}"))?;

    // same cases through the visit table
    let ping = |dev: &str, ts: i64, east: f64| {
        let (lat, lon) = stopdetect::geo::offset_m(40.0, -73.0, 0.0, east);
        Ping::new(dev, ts, lat, lon, 10.0, stopdetect::PointType::Other).unwrap()
    };
    let mut labeled = Vec::new();
    let mut id = 0;
    for (dev, stop_first) in [("a", true), ("b", false)] {
        // two passes through the cell; the device stops on one of them
        for (k, ts) in [1_000, 50_000].into_iter().enumerate() {
            let stop = (k == 0) == stop_first;
            for j in 0..3 {
                id += 1;
                let sid = stop.then(|| format!("{dev}-{k}"));
                labeled.push(LabeledPing::new(id, ping(dev, ts + j * 60, 0.0), sid));
            }
            id += 1;
            labeled.push(LabeledPing::new(id, ping(dev, ts + 600, 5_000.0), None));
        }
    }
    let occ = stop_occurrences(&labeled, &HashSet::new());
    let visits = VisitTable::build(&labeled, &occ);
    let cell = labeled[0].ping.geohash8.clone();
    let e = visits.entropy(&cell);
    ensure((e.value - std::f64::consts::LN_2).abs() <= 1e-12 && e.n_devices == 2, || format!("visit table gives {e:?}"))?;
    Ok(format!("0, ln 2 and the zero-term convention within 1e-12 (ln 2 case = {halves:.15})"))
}

fn scaler_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let columns: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let mut table = FeatureTable::new(columns);
    let n = 1_000_000;
    table.values.reserve(n * 4);
    for i in 0..n {
        let row = [
            rng.random_range(-1.0..1.0) * 1e4 + 5e5,
            rng.random_range(0..50) as f64,
            (rng.random_range(0.0..1.0f64)).powi(3) * 1e-3,
            rng.random_range(-3.0..3.0),
        ];
        table.push_row(i as u64, i % 2 == 0, &row);
    }
    let params = fit_scaler(&table);
    let scaled = transform(&table, &params).map_err(|e| e.to_string())?;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for j in 0..scaled.n_cols() {
        let col = scaled.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        worst_mean = worst_mean.max(mean.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    ensure(worst_mean < 1e-9, || format!("|mean| {worst_mean:e}"))?;
    ensure(worst_var < 1e-6, || format!("|var - 1| {worst_var:e}"))?;
    within(started.elapsed(), 30)?;
    Ok(format!("max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}, {:.2}s", started.elapsed().as_secs_f64()))
}

fn leakage() -> Outcome {
    let (_, labeled) = corpus(5, 10, 21);
    let full_index = HistoryIndex::build(&labeled, &HashSet::new());
    let table = assemble_features(&labeled, &full_index);
    let occurrences = stop_occurrences(&labeled, &HashSet::new());
    let cols: Vec<usize> = HISTORY_COLUMNS.iter().map(|c| table.column_index(c).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut nonzero = 0;
    for _ in 0..1000 {
        let i = rng.random_range(0..labeled.len());
        let p = &labeled[i].ping;
        let t = p.timestamp;
        let before: Vec<LabeledPing> = labeled.iter().filter(|l| l.ping.timestamp < t).cloned().collect();
        let kept: Vec<_> = occurrences.iter().filter(|o| o.ts < t).cloned().collect();
        let truncated = HistoryIndex::from_parts(&kept, VisitTable::build(&before, &kept));
        let mine = [p];
        let row = feature_row(&truncated, p, &neighbor_intervals(&mine, 0));
        for &j in &cols {
            let (a, b) = (table.row(i)[j], row[j]);
            ensure(a.to_bits() == b.to_bits(), || format!("ping {} column {}: {a} vs {b}", labeled[i].ping_id, table.columns[j]))?;
        }
        if cols.iter().any(|&j| row[j] != 0.0) {
            nonzero += 1;
        }
    }
    ensure(nonzero > 100, || format!("only {nonzero} sampled pings had any history"))?;
    Ok(format!("1000 pings bit-exact over {} history columns ({nonzero} with nonzero history)", cols.len()))
}

fn split_integrity() -> Outcome {
    let mut repairs = 0;
    for seed in 0..50 {
        let (stops, labeled) = corpus(1000 + seed, 3, 14);
        let split = temporal_split(&labeled, &stops, SplitFractions::default()).map_err(|e| e.to_string())?;
        let start: HashMap<&str, i64> = stops.iter().map(|s| (s.stop_id.as_str(), s.start_ts)).collect();
        let repaired: HashSet<&str> = split.repairs.iter().map(|r| r.stop_id.as_str()).collect();
        let mut stop_sets: BTreeMap<&str, HashSet<SplitSet>> = BTreeMap::new();
        let mut spans: HashSet<&str> = HashSet::new();
        for lp in &labeled {
            let set = split.set_of(lp.ping_id).ok_or_else(|| format!("seed {seed}: ping {} unassigned", lp.ping_id))?;
            let bucket = split.bucket(lp.ping.timestamp);
            match &lp.stop_id {
                Some(sid) => {
                    stop_sets.entry(sid.as_str()).or_default().insert(set);
                    let home = split.bucket(start[sid.as_str()]);
                    ensure(set == home, || format!("seed {seed}: stop {sid} not in its start bucket"))?;
                    if bucket != home {
                        spans.insert(sid.as_str());
                    }
                }
                None => ensure(set == bucket, || format!("seed {seed}: non-stop ping {} off its date bucket", lp.ping_id))?,
            }
        }
        ensure(stop_sets.values().all(|s| s.len() == 1), || format!("seed {seed}: a stop straddles sets"))?;
        ensure(spans == repaired, || format!("seed {seed}: repairs {repaired:?} vs spanning stops {spans:?}"))?;
        repairs += repaired.len();
        let fr = SplitFractions::default();
        let n = stops.len() as f64;
        for (set, frac) in [(SplitSet::Train, fr.train), (SplitSet::Validation, fr.validation), (SplitSet::Test, fr.test)] {
            let count = stop_sets.values().filter(|s| s.contains(&set)).count() as f64;
            ensure((count - frac * n).abs() <= 2.0, || format!("seed {seed}: {count} {} stops of {n}", set.as_str()))?;
        }
    }
    Ok(format!("50 corpora, no straddlers, {repairs} logged repairs"))
}

fn gap_injector() -> Outcome {
    let (stops, labeled) = corpus(7, 20, 28);
    let plan = plan_gaps(&stops, &labeled, 0.1, 7, StrataKeys::default()).map_err(|e| e.to_string())?;
    let (gapped, positives) = apply_gaps(&labeled, &plan).map_err(|e| e.to_string())?;
    let sized: usize = plan.strata.values().map(|s| s.0).sum();
    ensure(sized == stops.len(), || format!("strata cover {sized} of {} stops", stops.len()))?;
    let mut masked_per: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &plan.masked {
        *masked_per.entry(m.stratum.as_str()).or_default() += 1;
    }
    for (name, &(n, _)) in &plan.strata {
        let got = masked_per.get(name.as_str()).copied().unwrap_or(0) as f64;
        ensure((got - 0.1 * n as f64).abs() <= 1.0, || format!("stratum {name}: {got} of {n} masked"))?;
    }
    let members: HashMap<&str, usize> = stops.iter().map(|s| (s.stop_id.as_str(), s.member_ping_count)).collect();
    let mut kept: HashMap<&str, usize> = HashMap::new();
    for lp in &gapped {
        if let Some(s) = &lp.stop_id {
            *kept.entry(s.as_str()).or_default() += 1;
        }
    }
    let masked: HashSet<&str> = plan.masked_ids();
    for sid in &masked {
        let want = members[sid].min(2);
        ensure(kept.get(sid).copied().unwrap_or(0) == want, || format!("stop {sid} keeps {:?}, want {want}", kept.get(sid)))?;
    }
    ensure(positives.len() == masked.iter().map(|s| members[s].min(2)).sum::<usize>(), || "positives count".into())?;
    let outside = |v: &[LabeledPing]| -> Vec<LabeledPing> {
        let mut out: Vec<LabeledPing> =
            v.iter().filter(|l| l.stop_id.as_deref().is_none_or(|s| !masked.contains(s))).cloned().collect();
        out.sort_by_key(|l| l.ping_id);
        out
    };
    ensure(outside(&labeled) == outside(&gapped), || "unmasked pings changed".into())?;
    Ok(format!("{} of {} stops masked over {} strata", masked.len(), stops.len(), plan.strata.len()))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let columns: Vec<String> = (0..6).map(|j| format!("x{j}")).collect();
        let mut table = FeatureTable::new(columns.clone());
        for i in 0..64 {
            let row: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let label = row[0] + 0.5 * row[1] > rng.random_range(-0.5..0.5);
            table.push_row(i, label, &row);
        }
        let cfg = FfnnConfig { seed, ..FfnnConfig::default() };
        let mut net = Ffnn::new(columns, &cfg);
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        let cw = class_weights(&table.labels, true).map_err(|e| e.to_string())?;
        let analytic = net.gradient(&table, &rows, cw);
        let base = net.params();
        let h = 1e-5;
        for _ in 0..10 {
            let k = rng.random_range(0..base.len());
            let mut p = base.clone();
            p[k] = base[k] + h;
            net.set_params(&p);
            let up = net.loss(&table, &rows, cw);
            p[k] = base[k] - h;
            net.set_params(&p);
            let down = net.loss(&table, &rows, cw);
            net.set_params(&base);
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
            ensure(err < 1e-4, || format!("seed {seed} param {k}: analytic {} numeric {numeric}", analytic[k]))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("50 parameters, worst relative error {worst:.2e}"))
}

fn benchmark_config() -> stopdetect_cli::RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.conf");
    let text = fs::read_to_string(&path).expect("benchmark config");
    validate_config(&text).expect("benchmark config is valid")
}

fn benchmark(out: &Path) -> Outcome {
    let started = Instant::now();
    let cfg = benchmark_config();
    run_pipeline(&cfg, out).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let models = report["models"].as_array().ok_or("report has no models")?;
    let forest = models.iter().find(|m| m["model"] == "forest").ok_or("no forest report")?;
    let num = |v: &serde_json::Value| v.as_f64().ok_or_else(|| format!("missing number {v}"));
    let auc = num(&forest["auc"])?;
    let recall = num(&forest["masked_recall"]["retained_basis"])?;
    let baseline = num(&report["baseline"]["fraction"])?;
    let fp_median = num(&forest["distances"]["false_positives"]["quantiles"]["q50"])?;
    let tn_median = num(&forest["distances"]["true_negatives"]["quantiles"]["q50"])?;
    let others: Vec<String> = models
        .iter()
        .filter(|m| m["model"] != "forest")
        .map(|m| {
            let (a, r) = (m["auc"].as_f64().unwrap_or(f64::NAN), m["masked_recall"]["retained_basis"].as_f64().unwrap_or(f64::NAN));
            format!("{} auc {a:.4} masked recall {r:.3}", m["model"].as_str().unwrap_or("?"))
        })
        .collect();
    let summary = format!(
        "forest auc {auc:.4}, masked recall {recall:.3}, baseline recovery {baseline:.3}, fp/tn median {fp_median:.1}/{tn_median:.1} m, {:.0}s [{}]",
        elapsed.as_secs_f64(),
        others.join("; ")
    );
    ensure(auc > 0.9, || format!("(a) auc {auc}; {summary}"))?;
    ensure(recall >= 0.6, || format!("(a) masked recall {recall}; {summary}"))?;
    ensure(baseline < 0.1, || format!("(b) baseline recovery {baseline}; {summary}"))?;
    ensure(fp_median < tn_median, || format!("(c) fp median {fp_median} vs tn {tn_median}; {summary}"))?;
    within(elapsed, 600)?;
    Ok(summary)
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let cfg = benchmark_config();
    if !first.join("report.json").is_file() {
        run_pipeline(&cfg, first).map_err(|e| e.to_string())?;
    }
    run_pipeline(&cfg, second).map_err(|e| e.to_string())?;
    let names = |dir: &Path| -> Result<Vec<String>, String> {
        let mut v: Vec<String> = fs::read_dir(dir)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            // stage timings live only in the manifest
            .filter(|n| n != "manifest.jsonl")
            .collect();
        v.sort();
        Ok(v)
    };
    let files = names(first)?;
    ensure(files == names(second)?, || "artifact sets differ".into())?;
    for f in &files {
        let a = fs::read(first.join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(second.join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs"))?;
    }
    Ok(format!("{} artifacts byte-identical", files.len()))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 geo kernels", Box::new(geo_kernels)),
        ("2 auc oracle", Box::new(auc_oracle)),
        ("3 entropy", Box::new(entropy_suite)),
        ("4 scaler", Box::new(scaler_suite)),
        ("5 leakage freedom", Box::new(leakage)),
        ("6 split integrity", Box::new(split_integrity)),
        ("7 gap injector", Box::new(gap_injector)),
        ("8 ffnn gradient", Box::new(gradient_check)),
        ("9 benchmark", Box::new(|| benchmark(&run_a))),
        ("10 determinism", Box::new(|| determinism(&run_a, &run_b))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
