use std::collections::HashSet;

use stopdetect::detect::{detect_corpus, DetectorParams};
use stopdetect::eval::{dual_recall, roc_auc};
use stopdetect::features::{assemble_features, fit_scaler, training_columns, transform, HistoryIndex};
use stopdetect::gaps::{apply_gaps, plan_gaps, StrataKeys};
use stopdetect::io::{parse_labeled, parse_pings, read_stops, write_labeled, write_pings, write_stops, ParseConfig};
use stopdetect::model::group_into_trajectories;
use stopdetect::models::forest::{train_forest, Forest, ForestConfig};
use stopdetect::models::{classify, load_model, save_model, Scorer};
use stopdetect::split::{temporal_split, SplitFractions, SplitSet};
use stopdetect::synth::{generate, GeneratorConfig};

#[test]
fn library_pipeline_recovers_masked_stops() {
    let g = generate(&GeneratorConfig { seed: 3, n_devices: 12, window_days: 21, ..GeneratorConfig::default() }).unwrap();

    let mut buf = Vec::new();
    write_pings(&mut buf, &g.pings).unwrap();
    let pings = parse_pings(buf.as_slice(), &ParseConfig::default()).unwrap().rows;
    assert_eq!(pings.len(), g.pings.len());

    let det = detect_corpus(&group_into_trajectories(pings), &DetectorParams::default());
    assert!(det.stops.len() > 100);
    let mut buf = Vec::new();
    write_labeled(&mut buf, &det.labels).unwrap();
    assert_eq!(parse_labeled(buf.as_slice(), &ParseConfig::default()).unwrap().rows, det.labels);
    let mut buf = Vec::new();
    write_stops(&mut buf, &det.stops).unwrap();
    assert_eq!(read_stops(buf.as_slice()).unwrap(), det.stops);

    let plan = plan_gaps(&det.stops, &det.labels, 0.1, 3, StrataKeys::default()).unwrap();
    let (gapped, positives) = apply_gaps(&det.labels, &plan).unwrap();
    let exclude: HashSet<String> = plan.masked.iter().map(|m| m.stop_id.clone()).collect();
    let index = HistoryIndex::build(&gapped, &exclude);
    let table = assemble_features(&gapped, &index);
    assert_eq!(table.n_rows(), gapped.len());

    let stops = stopdetect::model::stops_from_labels(&gapped);
    let split = temporal_split(&gapped, &stops, SplitFractions::default()).unwrap();
    let rows = |set: SplitSet| -> Vec<usize> {
        (0..table.n_rows()).filter(|&i| split.set_of(table.ping_ids[i]) == Some(set)).collect()
    };
    let cols = training_columns(false);
    let raw_train = table.select_rows(&rows(SplitSet::Train)).select_columns(&cols).unwrap();
    let scaler = fit_scaler(&raw_train);
    let train = transform(&raw_train, &scaler).unwrap();
    let test = transform(&table.select_rows(&rows(SplitSet::Test)).select_columns(&cols).unwrap(), &scaler).unwrap();

    let forest = train_forest(&train, &ForestConfig { n_trees: 30, max_depth: 16, min_leaf: 1, ..ForestConfig::default() }).unwrap();
    let scores = forest.predict_proba(&test).unwrap();
    let auc = roc_auc(&scores, &test.labels).unwrap();
    assert!(auc > 0.9, "auc {auc}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forest.json");
    save_model(&path, &forest).unwrap();
    let loaded: Forest = load_model(&path).unwrap();
    assert_eq!(loaded.predict_proba(&test).unwrap(), scores);

    let predicted = classify(&scores, 0.5);
    let by_id = test.ping_ids.iter().copied().zip(predicted).collect();
    let members = det.stops.iter().map(|s| (s.stop_id.clone(), s.member_ping_count)).collect();
    let recall = dual_recall(&by_id, &positives, &members);
    assert!(recall.retained_positives > 0);
    assert!(recall.all_members_basis <= recall.retained_basis);
}
