use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use attrex_core::backends::mock::{FnBackend, OracleBackend};
use attrex_core::backends::replay::ReplayBackend;
use attrex_core::backends::{BackendError, ChatBackend, ChatClient, ChatResponse, PriceTable, RetryPolicy};
use attrex_core::demos::{SelectorConfig, SelectorStrategy};
use attrex_core::metrics::MatchMode;
use attrex_core::pipeline::{
    cmd_describe, cmd_dictionary_baseline, cmd_evaluate, cmd_extract, cmd_prepare, parse_design, read_manifest,
    DataDir, DatasetKind, ExtractOptions, PipelineError, RunStatus, TrainSize, RAW_FILE, RESULTS_FILE,
};
use attrex_core::prompts::{MessageRole, TemplateSet};
use attrex_core::{Dataset, ProductOffer};

fn prepared_toy(root: &Path) -> DataDir {
    let dir = root.join("toy");
    cmd_prepare(DatasetKind::Toy, None, &dir, 42).unwrap();
    DataDir(dir)
}

fn oracle(data: &DataDir) -> Arc<dyn ChatBackend> {
    Arc::new(OracleBackend::new(&data.test().unwrap(), 0.0, 0, TemplateSet::builtin()).unwrap())
}

fn options(data: &DataDir, run_dir: &Path) -> ExtractOptions {
    let mut opts = ExtractOptions::new(data.0.clone(), run_dir);
    opts.model = "oracle".into();
    opts.retry = RetryPolicy::new(2, Duration::from_millis(1), 2.0).unwrap();
    opts
}

/// Oracle that fails fatally once `limit` calls have been answered.
fn failing_after(data: &DataDir, limit: usize) -> Arc<dyn ChatBackend> {
    let inner = oracle(data);
    let calls = AtomicUsize::new(0);
    Arc::new(FnBackend::new("oracle", move |req| {
        if calls.fetch_add(1, Ordering::SeqCst) >= limit {
            return Err(BackendError::Auth("key revoked".into()));
        }
        inner.complete(req)
    }))
}

#[test]
fn prepare_is_deterministic_and_splits_small_categories() {
    let tmp = tempfile::tempdir().unwrap();
    let offers: Vec<ProductOffer> = ["a", "b"]
        .iter()
        .flat_map(|c| {
            (0..8).map(move |i| {
                let truth = BTreeMap::from([("Brand".to_string(), format!("B{}", i % 3))]);
                ProductOffer::new(format!("{c}{i}"), *c, format!("B{} thing {c}{i}", i % 3), truth).unwrap()
            })
        })
        .collect();
    let raw = tmp.path().join("raw.jsonl");
    Dataset::new("tiny", offers).unwrap().write(&raw).unwrap();

    let first = cmd_prepare(DatasetKind::Canonical, Some(&raw), &tmp.path().join("one"), 9).unwrap();
    cmd_prepare(DatasetKind::Canonical, Some(&raw), &tmp.path().join("two"), 9).unwrap();
    for file in ["train_large.jsonl", "train_small.jsonl", "test.jsonl", "stats.json", "schemas/a.json"] {
        assert_eq!(
            fs::read(tmp.path().join("one").join(file)).unwrap(),
            fs::read(tmp.path().join("two").join(file)).unwrap(),
            "{file}"
        );
    }
    assert_eq!(first.row("train_large").unwrap().offers, 12);
    assert_eq!(first.row("test").unwrap().offers, 4);
    let data = DataDir(tmp.path().join("one"));
    for category in ["a", "b"] {
        assert_eq!(data.train(TrainSize::Large).unwrap().offers_in(category).count(), 6);
        assert_eq!(data.test().unwrap().offers_in(category).count(), 2);
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());

    let full_dir = tmp.path().join("full");
    let summary = cmd_extract(&options(&data, &full_dir), oracle(&data)).unwrap();
    assert_eq!(summary.manifest.status, RunStatus::Complete);
    assert_eq!(summary.processed, 15);

    let resumed_dir = tmp.path().join("resumed");
    let mut opts = options(&data, &resumed_dir);
    opts.workers = 3;
    let err = cmd_extract(&opts, failing_after(&data, 6)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let manifest = read_manifest(&resumed_dir).unwrap().unwrap();
    assert_eq!(manifest.status, RunStatus::Incomplete);
    assert!(manifest.offers_done < 15);

    // simulate a kill in the middle of a write
    let results = resumed_dir.join(RESULTS_FILE);
    let mut text = fs::read_to_string(&results).unwrap();
    text.push_str("{\"offer_id\": \"headphones-1");
    fs::write(&results, text).unwrap();

    let evaluated = cmd_evaluate(&resumed_dir, &data, MatchMode::Exact, &PriceTable::builtin());
    assert!(matches!(&evaluated, Err(PipelineError::Data(m)) if m.contains("incomplete")), "{:?}", evaluated.map(|_| ()));

    let summary = cmd_extract(&opts, oracle(&data)).unwrap();
    assert_eq!(summary.manifest.status, RunStatus::Complete);
    assert!(summary.resumed > 0);
    assert_eq!(summary.resumed + summary.processed, 15);
    for file in [RESULTS_FILE, RAW_FILE] {
        assert_eq!(
            fs::read(full_dir.join(file)).unwrap(),
            fs::read(resumed_dir.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn replay_store_reproduces_run_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());
    let store = tmp.path().join("store");

    let recorded = tmp.path().join("recorded");
    let recorder: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::recording(&store, oracle(&data)));
    cmd_extract(&options(&data, &recorded), recorder).unwrap();

    let replayed = tmp.path().join("replayed");
    cmd_extract(&options(&data, &replayed), Arc::new(ReplayBackend::replay(&store))).unwrap();
    assert_eq!(
        fs::read(recorded.join(RESULTS_FILE)).unwrap(),
        fs::read(replayed.join(RESULTS_FILE)).unwrap()
    );
    let a = read_manifest(&recorded).unwrap().unwrap();
    let b = read_manifest(&replayed).unwrap().unwrap();
    assert_eq!(a.run_id, b.run_id);

    // a different design misses the store
    let mut other = options(&data, &tmp.path().join("other"));
    other.design = parse_design("list", 10).unwrap();
    let err = cmd_extract(&other, Arc::new(ReplayBackend::replay(&store))).unwrap_err();
    assert!(matches!(err, PipelineError::Backend(BackendError::ReplayMiss { .. })));
}

#[test]
fn run_directory_rejects_a_different_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());
    let run = tmp.path().join("run");
    cmd_extract(&options(&data, &run), oracle(&data)).unwrap();
    let mut changed = options(&data, &run);
    changed.example_seed = 99;
    assert!(matches!(cmd_extract(&changed, oracle(&data)), Err(PipelineError::Usage(_))));
}

#[test]
fn list_with_ten_similar_demos_sends_23_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());
    let inner = oracle(&data);
    let lengths = Arc::new(Mutex::new(Vec::new()));
    let seen = lengths.clone();
    let backend = FnBackend::new("counting", move |req| {
        let msgs = req.messages.messages();
        seen.lock().unwrap().push(msgs.len());
        let query_input = msgs.last().unwrap().content.lines().last().unwrap().to_string();
        let demo_inputs = msgs.iter().skip(2).rev().skip(1).filter(|m| m.role == MessageRole::User);
        assert!(demo_inputs.into_iter().all(|m| m.content != query_input), "query used as its own demo");
        inner.complete(req)
    });
    let mut opts = options(&data, &tmp.path().join("run"));
    opts.design = parse_design("list", 10).unwrap();
    opts.selector = SelectorConfig::new(SelectorStrategy::SemanticSimilarity, 10, 0);
    cmd_extract(&opts, Arc::new(backend)).unwrap();
    let lengths = lengths.lock().unwrap();
    assert_eq!(lengths.len(), 15);
    assert!(lengths.iter().all(|&n| n == 23), "{lengths:?}");
}

#[test]
fn query_is_never_its_own_demonstration() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());
    // make the training file contain the test offers themselves
    fs::copy(data.0.join("test.jsonl"), data.0.join("train_large.jsonl")).unwrap();
    let test = data.test().unwrap();
    let inner = oracle(&data);
    let titles: Vec<String> = test.offers().iter().map(|o| o.title.clone()).collect();
    let backend = Arc::new(FnBackend::new("checking", move |req| {
        let msgs = req.messages.messages();
        let query = msgs.last().unwrap().content.lines().last().unwrap().to_string();
        for m in &msgs[2..msgs.len() - 1] {
            if m.role == MessageRole::User {
                assert_ne!(m.content, query);
            }
        }
        let title = TemplateSet::builtin().extract_title(&req.messages).unwrap().to_string();
        assert!(titles.contains(&title));
        inner.complete(req)
    }));
    for strategy in SelectorStrategy::ALL {
        let mut opts = options(&data, &tmp.path().join(strategy.to_string()));
        opts.design = parse_design("json", 4).unwrap();
        opts.selector = SelectorConfig::new(strategy, 4, 1);
        cmd_extract(&opts, backend.clone()).unwrap();
    }
}

#[test]
fn dictionary_baseline_scores_above_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());
    let run = tmp.path().join("dict");
    assert_eq!(cmd_dictionary_baseline(&data, TrainSize::Large, &run).unwrap(), 15);
    let out = cmd_evaluate(&run, &data, MatchMode::Exact, &PriceTable::builtin()).unwrap();
    assert!(out.report.overall.metrics.f1 > 0.5, "{:?}", out.report.overall);
    assert_eq!(out.report.overall.counts.total(), 75);
}

#[test]
fn descriptions_fill_gaps_and_report_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared_toy(tmp.path());
    let backend = FnBackend::new("describer", |req| {
        let ask = &req.messages.messages()[1].content;
        if ask.contains("\"Color\"") {
            return Err(BackendError::Http { status: 400, body: "no".into() });
        }
        Ok(ChatResponse {
            text: "desc".into(),
            usage: None,
            model: req.model.clone(),
            latency: Duration::ZERO,
        })
    });
    let client = ChatClient::new(Arc::new(backend)).with_sleeper(Arc::new(|_| {}));
    let failures = cmd_describe(&data, &client, "m", &TemplateSet::builtin()).unwrap();
    let registry = data.schemas().unwrap();
    for schema in registry.iter() {
        for attribute in schema.attributes() {
            if failures.iter().any(|(c, a, _)| c == &schema.category && a == &attribute.name) {
                assert_eq!(attribute.description, None);
            } else {
                assert_eq!(attribute.description.as_deref(), Some("desc"), "{}", attribute.name);
            }
        }
    }
    let failed: Vec<&str> = failures.iter().map(|(_, a, _)| a.as_str()).collect();
    assert!(!failed.is_empty() && failed.iter().all(|a| *a == "Color"), "{failed:?}");
}
