//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 1 7`.

use std::collections::BTreeMap;
use std::fs;
use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setexpand_core::cluster::{
    cop_kmeans, cop_kmeans_from_assignment, satisfies, ConstraintSet, Points,
};
use setexpand_core::corpus::synth::{generate, SynthCorpusConfig};
use setexpand_core::eval::{evaluate, metrics};
use setexpand_core::index::{build_mlt_query, Field, MltQuery};
use setexpand_core::model::{Arch, ArchConfig, Example, ModelParams, Vocabulary};
use setexpand_core::pipeline::{
    baseline_all_positive, evaluate_run, load_run, train_task, RunConfig, TrainMode,
};
use setexpand_core::risk::{pn_risk, upu_risk, Branch, Loss, RiskConfig, RiskMode, RiskOutput};
use setexpand_core::sampler::{plan, ProportionalSampler};
use setexpand_core::taskgen::synthetic::{SyntheticPuSpec, SyntheticSource};
use setexpand_core::taskgen::{
    generate_case_control, load_task, save_task, CaseControlParams, LoadedTask, Selector,
};
use setexpand_core::trainer::{train, Split, TrainConfig};
use setexpand_core::{ConfusionCounts, Corpus, Document, Error, InvertedIndex, MltParams, Topic};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }

    fn within(self, elapsed: Duration, budget: Duration) -> Self {
        if elapsed <= budget {
            return self;
        }
        Outcome::new(
            false,
            format!("{}; over the {}s budget", self.detail, budget.as_secs()),
        )
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<u64>);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", gradients, Some(30)),
        (2, "uPU unbiasedness", upu_unbiased, Some(60)),
        (3, "constant classifier BER risk", constant_ber, None),
        (4, "true prior vs 0.5 pattern", prior_pattern, Some(300)),
        (5, "small-batch imbalance pattern", batching_pattern, Some(600)),
        (6, "pipeline ordering", pipeline_ordering, Some(1200)),
        (7, "BM25 exactness", bm25_exact, None),
        (8, "proportional batching invariants", sampler_invariants, None),
        (9, "COP-Kmeans", cop_kmeans_checks, None),
        (10, "determinism", determinism, None),
        (11, "metric formulas", metric_formulas, None),
    ];
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (n, name, run, budget) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match budget {
            Some(s) => outcome.within(elapsed, Duration::from_secs(s)),
            None => outcome,
        };
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
        if !outcome.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;

struct GradInstance {
    params: ModelParams,
    p: Vec<Example>,
    u: Vec<Example>,
    n: Vec<Example>,
}

fn small_arch(arch: Arch) -> ArchConfig {
    ArchConfig {
        arch,
        embed_dim: 3,
        title_filters: 2,
        abstract_filters: 2,
        windows: vec![2, 3],
        max_abstract_tokens: 600,
        dense_dim: 3,
    }
}

const SMALL_VOCAB: usize = 12;

fn random_example(rng: &mut ChaCha8Rng) -> Example {
    let mut ids = |lo: usize, hi: usize| -> Vec<u32> {
        let len = rng.random_range(lo..hi);
        (0..len).map(|_| rng.random_range(1..SMALL_VOCAB as u32)).collect()
    };
    let title = ids(0, 6);
    let abs = ids(1, 12);
    let dense = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Example::from_ids(title, abs, Some(dense))
}

fn random_params(cfg: &ArchConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    let words: Vec<String> = (2..SMALL_VOCAB).map(|i| format!("t{i}")).collect();
    let doc = Document::new("v", "", words.join(" "), ["L"]);
    let vocab = Vocabulary::build([&doc], 1, SMALL_VOCAB);
    assert_eq!(vocab.len(), SMALL_VOCAB);
    let mut params = ModelParams::init(&vocab, cfg, 0).unwrap();
    for v in params.values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    params
}

fn risk_at(inst: &GradInstance, values: &[f64], risk: &RiskConfig) -> RiskOutput {
    let params = ModelParams::from_values(inst.params.config(), SMALL_VOCAB, values.to_vec()).unwrap();
    let scores = |xs: &[Example]| xs.iter().map(|x| params.forward(x)).collect::<Vec<_>>();
    risk.evaluate(&scores(&inst.p), &scores(&inst.u), &scores(&inst.n))
        .unwrap()
}

/// The quantity whose gradient the estimator's directive is: the risk on
/// the descent branch, `−γ·negative part` on the ascent branch.
fn objective(out: &RiskOutput, risk: &RiskConfig) -> f64 {
    match out.branch {
        Branch::Descent => out.risk,
        Branch::Ascent => -risk.nn_gamma * out.negative_part,
    }
}

fn analytic_gradient(inst: &GradInstance, out: &RiskOutput) -> Vec<f64> {
    let mut g = vec![0.0; inst.params.len()];
    for (xs, up) in [(&inst.p, &out.grad_p), (&inst.u, &out.grad_u), (&inst.n, &out.grad_n)] {
        for (x, &d) in xs.iter().zip(up.iter()) {
            inst.params.backward_into(x, d, &mut g);
        }
    }
    g
}

/// Random instance on the requested branch, or None when the draw lands on
/// the other branch.
fn draw_instance(
    arch: Arch,
    risk: &RiskConfig,
    want: Branch,
    rng: &mut ChaCha8Rng,
) -> Option<GradInstance> {
    let params = random_params(&small_arch(arch), rng);
    let mut all: Vec<Example> = (0..rng.random_range(4..12)).map(|_| random_example(rng)).collect();
    let n_p = rng.random_range(1..=all.len() / 3);
    let n_n = rng.random_range(1..=all.len() / 3);
    if want == Branch::Ascent {
        // Highest scores to P, lowest to U: the negative part turns negative.
        all.sort_by(|a, b| params.forward(b).total_cmp(&params.forward(a)));
    }
    let p: Vec<Example> = all.drain(..n_p).collect();
    let n: Vec<Example> = if want == Branch::Ascent {
        Vec::new()
    } else {
        all.drain(..n_n).collect()
    };
    let inst = GradInstance { params, p, u: all, n };
    let base = risk_at(&inst, inst.params.values(), risk);
    if base.branch != want {
        return None;
    }
    Some(inst)
}

fn gradient_error(inst: &GradInstance, risk: &RiskConfig) -> Option<f64> {
    let base = risk_at(inst, inst.params.values(), risk);
    let analytic = analytic_gradient(inst, &base);
    let mut values = inst.params.values().to_vec();
    let mut numeric = vec![0.0; values.len()];
    for i in 0..values.len() {
        let v = values[i];
        values[i] = v + FD_STEP;
        let hi = risk_at(inst, &values, risk);
        values[i] = v - FD_STEP;
        let lo = risk_at(inst, &values, risk);
        values[i] = v;
        if hi.branch != base.branch || lo.branch != base.branch {
            return None;
        }
        numeric[i] = (objective(&hi, risk) - objective(&lo, risk)) / (2.0 * FD_STEP);
    }
    let diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Some(diff / norm(&analytic).max(norm(&numeric)).max(1e-12))
}

fn gradients() -> Outcome {
    let with = |mode, prior, f: &dyn Fn(&mut RiskConfig)| {
        let mut r = RiskConfig::new(mode, prior);
        f(&mut r);
        r
    };
    let cases: Vec<(&str, RiskConfig, Branch)> = vec![
        ("pn", with(RiskMode::Pn, 0.3, &|_| {}), Branch::Descent),
        ("naive", with(RiskMode::Naive, 0.5, &|_| {}), Branch::Descent),
        ("upu a=1", with(RiskMode::Upu, 0.4, &|_| {}), Branch::Descent),
        ("upu a=10", with(RiskMode::Upu, 0.4, &|r| r.alpha = 10.0), Branch::Descent),
        ("nnpu descent", with(RiskMode::Nnpu, 0.2, &|_| {}), Branch::Descent),
        ("nnpu ascent", with(RiskMode::Nnpu, 0.9, &|r| r.nn_gamma = 0.7), Branch::Ascent),
        ("pnu g=0", with(RiskMode::Pnu, 0.3, &|r| r.pnu_gamma = 0.0), Branch::Descent),
        ("pnu g=0.5", with(RiskMode::Pnu, 0.3, &|r| r.pnu_gamma = 0.5), Branch::Descent),
        ("pnu g=1", with(RiskMode::Pnu, 0.3, &|r| r.pnu_gamma = 1.0), Branch::Descent),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut bad = Vec::new();
    for arch in [Arch::LinearBow, Arch::Conv] {
        for (name, risk, want) in &cases {
            let mut done = 0;
            let mut attempts = 0;
            while done < 50 {
                attempts += 1;
                assert!(attempts < 5000, "{name}: cannot draw {want:?} instances");
                let Some(inst) = draw_instance(arch, risk, *want, &mut rng) else {
                    continue;
                };
                let Some(err) = gradient_error(&inst, risk) else {
                    continue;
                };
                worst = worst.max(err);
                if err >= 1e-4 {
                    bad.push(format!("{arch:?}/{name}: {err:.2e}"));
                }
                done += 1;
                checked += 1;
            }
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!(
            "{checked} instances over 2 archs x {} estimators, worst relative error {worst:.2e}{}",
            cases.len(),
            if bad.is_empty() { String::new() } else { format!("; {}", bad.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

fn upu_unbiased() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (k, &prior) in [0.1, 0.5].iter().enumerate() {
        let spec = SyntheticPuSpec::isotropic(5, prior, 1.0, 100, 1000, k as u64);
        let src = SyntheticSource::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20 + k as u64);
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(-0.5..0.5);
        let g = |x: &Vec<f64>| x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;

        let n_ref = 100_000;
        let n_pos = (prior * n_ref as f64).round() as usize;
        let labeled = src.draw(n_pos, 0, n_ref - n_pos, &mut rng);
        let gp: Vec<f64> = labeled.p.iter().map(g).collect();
        let gn: Vec<f64> = labeled.n.iter().map(g).collect();
        let reference = pn_risk(&gp, &gn, prior, Loss::Sigmoid).unwrap().risk;

        let risks: Vec<f64> = (0..1000)
            .map(|_| {
                let d = src.draw(100, 1000, 0, &mut rng);
                let sp: Vec<f64> = d.p.iter().map(g).collect();
                let su: Vec<f64> = d.u.iter().map(g).collect();
                upu_risk(&sp, &su, prior, 1.0, Loss::Sigmoid).unwrap().risk
            })
            .collect();
        let m = risks.len() as f64;
        let mean = risks.iter().sum::<f64>() / m;
        let var = risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        let z = (mean - reference).abs() / se;
        pass &= z < 3.0;
        lines.push(format!(
            "prior {prior}: mean {mean:.5} vs PN {reference:.5}, {z:.2} SE"
        ));
    }
    Outcome::new(pass, lines.join("; "))
}

// ---------------------------------------------------------------- 3

fn constant_ber() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let cfg = ArchConfig::linear().with_dense(4);
    for _ in 0..1000 {
        let c = rng.random_range(-30.0..30.0);
        // A model with zero weights scores every document with its bias.
        let mut params = ModelParams::init(&Vocabulary::build([], 1, 0), &cfg, 0).unwrap();
        params.values_mut().fill(0.0);
        let bias_at = params.len() - 1;
        params.values_mut()[bias_at] = c;
        assert_eq!(params.bias(), c);
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
                    params.forward(&Example::dense(z))
                })
                .collect()
        };
        let n_p = rng.random_range(1..50);
        let n_u = rng.random_range(1..500);
        let p = draw(&mut rng, n_p);
        let u = draw(&mut rng, n_u);
        for mode in [RiskMode::Upu, RiskMode::Nnpu] {
            let r = RiskConfig::new(mode, 0.5).evaluate(&p, &u, &[]).unwrap();
            worst = worst.max((r.risk - 0.5).abs());
        }
    }
    Outcome::new(
        worst <= 1e-9,
        format!("1000 constants in [-30, 30], max |risk - 0.5| = {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 4, 5

fn dense(xs: &[Vec<f64>]) -> Vec<Example> {
    xs.iter().map(|x| Example::dense(x.clone())).collect()
}

struct DenseTask {
    train: Split,
    valid: Split,
    test: (Vec<Vec<f64>>, Vec<bool>),
}

#[derive(Clone, Copy)]
struct Fit {
    mode: RiskMode,
    prior: f64,
    batch_size: usize,
    proportional: bool,
    seed: u64,
}

/// Trains a linear model on the dense task; returns test (accuracy, F1).
fn fit(task: &DenseTask, f: Fit) -> (f64, f64) {
    let dim = task.test.0[0].len();
    let empty = Vocabulary::build([], 1, 0);
    let init = ModelParams::init(&empty, &ArchConfig::linear().with_dense(dim), f.seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: f.batch_size,
        proportional: f.proportional,
        risk: RiskConfig::new(f.mode, f.prior),
        seed: f.seed,
        max_epochs: 100,
        patience: 10,
        ..TrainConfig::default()
    };
    let (params, _) = train(init, &task.train, &task.valid, &cfg).unwrap();
    let preds: Vec<bool> = task
        .test
        .0
        .iter()
        .map(|x| params.forward(&Example::dense(x.clone())) > 0.0)
        .collect();
    let m = evaluate(&preds, &task.test.1).unwrap();
    (m.accuracy, m.f1)
}

/// Gaussian task: `train`/`valid` are (P, U, N) counts.
fn dense_task(
    prior: f64,
    separation: f64,
    train: (usize, usize, usize),
    valid: (usize, usize, usize),
    seed: u64,
) -> DenseTask {
    let spec = SyntheticPuSpec::isotropic(5, prior, separation, 1, 1, seed);
    let src = SyntheticSource::new(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let split = |d: setexpand_core::taskgen::synthetic::SyntheticPuData| Split {
        p: dense(&d.p),
        u: dense(&d.u),
        n: dense(&d.n),
    };
    let tr = split(src.draw(train.0, train.1, train.2, &mut rng));
    let va = split(src.draw(valid.0, valid.1, valid.2, &mut rng));
    DenseTask {
        train: tr,
        valid: va,
        test: src.marginal(5000, &mut rng),
    }
}

fn prior_pattern() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in 0..3 {
        // Heavily overlapping classes with a 5% positive share.
        let task = dense_task(0.05, 0.5, (50, 2000, 0), (25, 1000, 0), seed);
        let run = |prior| {
            fit(
                &task,
                Fit {
                    mode: RiskMode::Nnpu,
                    prior,
                    batch_size: 1000,
                    proportional: true,
                    seed: 100 + seed,
                },
            )
        };
        let (acc_true, f1_true) = run(0.05);
        let (acc_half, f1_half) = run(0.5);
        pass &= acc_true > acc_half && f1_true < f1_half;
        lines.push(format!(
            "seed {seed}: prior 0.05 acc {acc_true:.3} F1 {f1_true:.3}, prior 0.5 acc {acc_half:.3} F1 {f1_half:.3}"
        ));
    }
    Outcome::new(pass, lines.join("; "))
}

/// Name, estimator, class prior, assumed prior, train and valid (P, U, N).
type Imbalance = (&'static str, RiskMode, f64, f64, (usize, usize, usize), (usize, usize, usize));

fn batching_pattern() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    // PN at 15:85 with the true prior; PU at 2 labeled per 100 unlabeled
    // under the balanced prior.
    let settings: [Imbalance; 2] = [
        ("PN", RiskMode::Pn, 0.15, 0.15, (150, 0, 850), (75, 0, 425)),
        ("PU", RiskMode::Nnpu, 0.3, 0.5, (40, 2000, 0), (20, 1000, 0)),
    ];
    for (name, mode, class_prior, risk_prior, train_counts, valid_counts) in settings {
        for seed in 0..3 {
            let task = dense_task(class_prior, 2.0, train_counts, valid_counts, seed);
            let f1 = |batch_size, proportional| {
                fit(
                    &task,
                    Fit {
                        mode,
                        prior: risk_prior,
                        batch_size,
                        proportional,
                        seed: 100 + seed,
                    },
                )
                .1
            };
            let big = f1(512, false);
            let small = f1(16, false);
            let prop = f1(16, true);
            let ok = small <= 0.25 * big && prop >= 0.8 * big;
            pass &= ok;
            lines.push(format!(
                "{name} seed {seed}: F1 512 {big:.3}, 16 uniform {small:.3}, 16 proportional {prop:.3}{}",
                if ok { "" } else { " (miss)" }
            ));
        }
    }
    Outcome::new(pass, lines.join("; "))
}

// ---------------------------------------------------------------- 6

fn save_and_load(task: &setexpand_core::DseTask, corpus: &Corpus, dir: &Path) -> LoadedTask {
    save_task(task, corpus, dir).unwrap();
    load_task(dir).unwrap()
}

fn pipeline_ordering() -> Outcome {
    let cfg = SynthCorpusConfig::default();
    let corpus = generate(&cfg).unwrap();
    let index = InvertedIndex::build(&corpus).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    let mut runs = 0.0;
    for (t, labels) in cfg.default_topics().into_iter().take(3).enumerate() {
        let topic = Topic::new(labels).unwrap();
        for seed in 0..3u64 {
            let make = |selector, name: &str| {
                let mut p = CaseControlParams::new(50, 800, selector);
                p.test_size = 400;
                p.retain_truth = true;
                let task = generate_case_control(&corpus, &topic, &p, Some(&index), seed).unwrap();
                save_and_load(&task, &corpus, &tmp.path().join(format!("{t}-{seed}-{name}")))
            };
            let bm25 = make(Selector::Bm25, "bm25");
            let rand = make(Selector::Random, "rand");
            let run_cfg = |mode| RunConfig {
                mode,
                arch: Arch::LinearBow,
                batch_size: 64,
                learning_rate: 0.001,
                seed,
                ..RunConfig::default()
            };
            let jobs = [
                ("oracle", &bm25, TrainMode::Oracle),
                ("bm25+nnpu", &bm25, TrainMode::Nnpu),
                ("naive", &bm25, TrainMode::Naive),
                ("rand+nnpu", &rand, TrainMode::Nnpu),
            ];
            for (name, task, mode) in jobs {
                let dir = tmp.path().join(format!("{t}-{seed}-{name}-run"));
                train_task(task, &run_cfg(mode)).unwrap().save(&dir).unwrap();
                // Every method is scored on the BM25 task's test set.
                let m = evaluate_run(&load_run(&dir).unwrap(), &bm25).unwrap();
                *sums.entry(name).or_default() += m.f1;
            }
            let dir = tmp.path().join(format!("{t}-{seed}-all-positive"));
            *sums.entry("all-positive").or_default() += baseline_all_positive(&bm25, dir).unwrap().f1;
            runs += 1.0;
        }
    }
    let avg = |k: &str| sums[k] / runs;
    let (oracle, bm25, naive, allp, rand) = (
        avg("oracle"),
        avg("bm25+nnpu"),
        avg("naive"),
        avg("all-positive"),
        avg("rand+nnpu"),
    );
    Outcome::new(
        oracle >= bm25 && bm25 > naive.max(allp) && bm25 >= rand,
        format!(
            "mean F1 over 3 topics x 3 seeds: oracle {oracle:.3}, bm25+nnpu {bm25:.3}, rand+nnpu {rand:.3}, all-positive {allp:.3}, naive {naive:.3}"
        ),
    )
}

// ---------------------------------------------------------------- 7

const K1: f64 = 1.2;
const B: f64 = 0.75;

/// Full-scan scorer written directly from the BM25 definition.
fn brute_force(corpus: &Corpus, query: &MltQuery) -> Vec<(String, f64)> {
    let docs = corpus.documents();
    let n = docs.len() as f64;
    let field_tokens = |f: Field, d: &Document| match f {
        Field::Title => d.title_tokens.clone(),
        Field::Abstract => d.abstract_tokens.clone(),
    };
    let distinct: std::collections::BTreeSet<&str> = query
        .fields
        .iter()
        .flat_map(|f| f.terms.iter().map(|t| t.term.as_str()))
        .collect();
    let required = (query.minimum_should_match * distinct.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::new();
    for d in docs {
        let mut score = 0.0;
        let mut matched = std::collections::BTreeSet::new();
        for fq in &query.fields {
            let avg = docs.iter().map(|x| field_tokens(fq.field, x).len()).sum::<usize>() as f64 / n;
            let toks = field_tokens(fq.field, d);
            let mut field_score = 0.0;
            for wt in &fq.terms {
                let tf = toks.iter().filter(|t| **t == wt.term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                matched.insert(wt.term.as_str());
                let df = docs
                    .iter()
                    .filter(|x| field_tokens(fq.field, x).contains(&wt.term))
                    .count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let rel = if avg > 0.0 { toks.len() as f64 / avg } else { 1.0 };
                field_score += wt.weight * idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * rel));
            }
            score += fq.boost * field_score;
        }
        if matched.len() >= required {
            out.push((d.id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Corpus {
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let mut pick = |len: usize| -> String {
        (0..len)
            .map(|_| {
                // Skewed draw so that document frequencies vary.
                let r: f64 = rng.random();
                words[((r * r) * words.len() as f64) as usize].clone()
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let docs: Vec<Document> = (0..n)
        .map(|i| {
            let title = pick(i % 6);
            let abs = pick(5 + (i * 7) % 35);
            Document::new(format!("doc{i:03}"), &title, &abs, ["L"])
        })
        .collect();
    Corpus::from_documents(docs).unwrap()
}

fn bm25_exact() -> Outcome {
    // Hand values: N = 3, df(rats) = 2 in abstracts of lengths 3, 4, 1.
    // idf = ln 1.6; d1 has tf 2 at length 3, d3 tf 1 at length 1.
    let toy = Corpus::from_documents(vec![
        Document::new("d1", "Rats", "rats rats brain", ["A"]),
        Document::new("d2", "Mice", "mice brain cortex neurons", ["B"]),
        Document::new("d3", "Rats and mice", "rats", ["A", "B"]),
    ])
    .unwrap();
    let idx = InvertedIndex::build(&toy).unwrap();
    let q = MltQuery::terms(Field::Abstract, &["rats"], 0.0);
    let hand = [("d1", 0.624_306_7), ("d2", 0.0), ("d3", 0.631_455_3)];
    let mut hand_err: f64 = 0.0;
    for (id, want) in hand {
        hand_err = hand_err.max((idx.bm25_score(&q, id).unwrap() - want).abs());
    }
    // Title "rats" in d1 (length 1) and d3 (length 3): avg 5/3, idf ln 1.6.
    let qt = MltQuery::terms(Field::Title, &["rats"], 0.0);
    let idf = 1.6f64.ln();
    let t1 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 3.0 / 5.0));
    let t3 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 9.0 / 5.0));
    hand_err = hand_err.max((idx.bm25_score(&qt, "d1").unwrap() - t1).abs());
    hand_err = hand_err.max((idx.bm25_score(&qt, "d3").unwrap() - t3).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut queries = 0;
    let mut mismatches = 0;
    for _ in 0..20 {
        let corpus = random_corpus(&mut rng, 100);
        let idx = InvertedIndex::build(&corpus).unwrap();
        for _ in 0..10 {
            let query = if rng.random_bool(0.5) {
                let k = rng.random_range(1..5);
                let examples: Vec<&Document> = (0..k)
                    .map(|_| corpus.doc(rng.random_range(0..100)))
                    .collect();
                let params = MltParams {
                    min_term_freq: 1,
                    min_doc_freq: 2,
                    minimum_should_match: rng.random_range(0.0..0.6),
                    ..MltParams::default()
                };
                match build_mlt_query(&idx, &examples, &params) {
                    Ok(q) => q,
                    Err(_) => continue,
                }
            } else {
                let terms: Vec<String> = (0..rng.random_range(1..6))
                    .map(|_| format!("w{}", rng.random_range(0..32)))
                    .collect();
                let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
                let field = if rng.random_bool(0.5) { Field::Title } else { Field::Abstract };
                MltQuery::terms(field, &refs, rng.random_range(0.0..1.0))
            };
            queries += 1;
            let fast = idx.retrieve(&query, 100);
            let slow = brute_force(&corpus, &query);
            let same_order = fast.len() == slow.len()
                && fast.iter().zip(&slow).all(|(h, (id, s))| {
                    h.doc_id == *id && (h.score - s).abs() <= 1e-9 * s.abs().max(1.0)
                });
            if !same_order {
                mismatches += 1;
            }
        }
    }
    Outcome::new(
        hand_err < 1e-6 && mismatches == 0,
        format!(
            "hand scores within {hand_err:.1e}; {queries} queries on 20 corpora of 100 documents, {mismatches} ordering mismatches"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn sampler_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut batches = 0usize;
    let mut violations = Vec::new();
    while batches < 10_000 {
        let n_lp = rng.random_range(1..300);
        let n_u = if rng.random_bool(0.8) { rng.random_range(1..6000) } else { 0 };
        let n_n = if n_u == 0 || rng.random_bool(0.3) { rng.random_range(1..3000) } else { 0 };
        let batch_size = rng.random_range(2..300);
        let Ok(p) = plan(n_lp, n_u, n_n, batch_size) else {
            continue;
        };
        let mut sampler = ProportionalSampler::new(p, n_lp, n_u, n_n, ChaCha8Rng::seed_from_u64(batches as u64));
        for _ in 0..rng.random_range(1..4) {
            let epoch = sampler.epoch();
            let mut seen: Vec<usize> = epoch.iter().flat_map(|b| b.p.iter().copied()).collect();
            seen.sort_unstable();
            if seen != (0..n_lp).collect::<Vec<_>>() {
                violations.push(format!("{n_lp}/{n_u}/{n_n}@{batch_size}: positives not covered once"));
            }
            for b in &epoch {
                batches += 1;
                let r = b.p.len();
                let (want_u, want_n) = if r == p.p {
                    (p.u, p.n)
                } else {
                    ((p.u * r).div_ceil(p.p), (p.n * r).div_ceil(p.p))
                };
                if r == 0 || r > p.p || b.u.len() != want_u || b.n.len() != want_n {
                    violations.push(format!(
                        "{n_lp}/{n_u}/{n_n}@{batch_size}: batch {}/{}/{} vs plan {}/{}/{}",
                        r,
                        b.u.len(),
                        b.n.len(),
                        p.p,
                        p.u,
                        p.n
                    ));
                }
                if b.u.iter().any(|&i| i >= n_u) || b.n.iter().any(|&i| i >= n_n) {
                    violations.push("index out of range".into());
                }
            }
        }
    }
    let example = plan(50, 10_000, 0, 20).unwrap();
    let example_ok = example.p == 1
        && example.u == 19
        && example.n == 0
        && (example.alpha - (1.0 / 20.0) / (50.0 / 10_050.0)).abs() < 1e-12;
    violations.truncate(3);
    Outcome::new(
        violations.is_empty() && example_ok,
        format!(
            "{batches} batches checked{}; 50 P / 10000 U / batch 20 gives {}+{} with alpha {:.3}",
            if violations.is_empty() { String::new() } else { format!(", e.g. {}", violations.join("; ")) },
            example.p,
            example.u,
            example.alpha
        ),
    )
}

// ---------------------------------------------------------------- 9

fn clustered_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, dim: usize) -> (Points, ConstraintSet) {
    let hidden: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..dim).map(|_| hidden[i] as f64 + rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut c = ConstraintSet::default();
    for _ in 0..rng.random_range(0..n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b {
            continue;
        }
        if hidden[a] == hidden[b] {
            c.must_link.push((a, b));
        } else {
            c.cannot_link.push((a, b));
        }
    }
    (Points::from_dense(&rows), c)
}

/// Within-cluster sum of squares recomputed from scratch.
fn sse(points: &Points, labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<Vec<f64>> = (0..points.len())
            .filter(|&i| labels[i] == c)
            .map(|i| points.dense(i))
            .collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..points.dim)
            .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
            .collect();
        for m in &members {
            total += m.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total
}

/// Every constraint-satisfying labeling with no empty cluster.
fn labelings(n: usize, k: usize, c: &ConstraintSet) -> Vec<Vec<usize>> {
    (0..k.pow(n as u32))
        .filter_map(|code| {
            let labels: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
            ((0..k).all(|c| labels.contains(&c)) && satisfies(&labels, c)).then_some(labels)
        })
        .collect()
}

fn cop_kmeans_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solved = 0;
    let mut problems = Vec::new();
    for case in 0..1000u64 {
        let n = rng.random_range(3..40);
        let k = rng.random_range(2..5usize).min(n);
        let dim = rng.random_range(1..4);
        let (points, mut c) = clustered_instance(&mut rng, n, k, dim);
        let contradictory = case % 10 == 0;
        if contradictory {
            c.must_link.push((0, 1));
            c.cannot_link.push((1, 0));
        }
        match cop_kmeans(&points, &c, k, case, 100) {
            Ok(a) => {
                solved += 1;
                if !satisfies(&a.labels, &c) {
                    problems.push(format!("case {case}: constraint violated"));
                }
                if !a.history.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
                    problems.push(format!("case {case}: objective increased"));
                }
                if (a.objective - sse(&points, &a.labels, k)).abs() > 1e-6 {
                    problems.push(format!("case {case}: objective mismatch"));
                }
            }
            Err(Error::Infeasible(_)) if contradictory => {}
            // Greedy dead ends, and k above the number of must-link groups.
            Err(Error::NoValidAssignment(_)) | Err(Error::InvalidInput(_)) => {}
            Err(e) => problems.push(format!("case {case}: {e}")),
        }
    }
    let mut exhaustive = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.random_range(3..=8);
        let k = if n <= 6 { rng.random_range(2..=3) } else { 2 };
        let (points, c) = clustered_instance(&mut rng, n, k, 2);
        let all = labelings(n, k, &c);
        if all.is_empty() {
            continue;
        }
        exhaustive += 1;
        let optimum = all.iter().map(|l| sse(&points, l, k)).fold(f64::INFINITY, f64::min);
        let best = all
            .iter()
            .map(|init| cop_kmeans_from_assignment(&points, &c, k, init, 100).unwrap().objective)
            .fold(f64::INFINITY, f64::min);
        if (best - optimum).abs() > 1e-9 {
            problems.push(format!("small case {case}: {best} vs optimum {optimum}"));
        }
    }
    let count = problems.len();
    problems.truncate(3);
    Outcome::new(
        count == 0,
        format!(
            "{solved}/1000 fuzzed instances solved (100 contradictory), {exhaustive} instances with n <= 8 at the exhaustive optimum{}",
            if count == 0 { String::new() } else { format!("; {count} problems, e.g. {}", problems.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- 10

fn full_pipeline(dir: &Path) -> Vec<u8> {
    let cfg = SynthCorpusConfig {
        n_docs: 3000,
        seed: 10,
        ..SynthCorpusConfig::default()
    };
    let corpus_path = dir.join("corpus.jsonl");
    generate(&cfg).unwrap().export(&corpus_path).unwrap();
    let corpus = Corpus::ingest(&corpus_path).unwrap();
    let index_path = dir.join("index.json");
    InvertedIndex::build(&corpus).unwrap().save(&index_path).unwrap();
    let index = InvertedIndex::load(&index_path).unwrap();
    let topic = Topic::new(cfg.default_topics()[1][..2].to_vec()).unwrap();
    let mut params = CaseControlParams::new(20, 100, Selector::Bm25);
    params.test_size = 80;
    let task = generate_case_control(&corpus, &topic, &params, Some(&index), 5).unwrap();
    let loaded = save_and_load(&task, &corpus, &dir.join("task"));
    let run_cfg = RunConfig {
        max_epochs: 3,
        patience: 2,
        batch_size: 32,
        seed: 9,
        ..RunConfig::default()
    };
    let run = dir.join("run");
    train_task(&loaded, &run_cfg).unwrap().save(&run).unwrap();
    evaluate_run(&load_run(&run).unwrap(), &loaded).unwrap();
    fs::read(run.join("metrics.json")).unwrap()
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_pipeline(a.path());
    let second = full_pipeline(b.path());
    Outcome::new(
        first == second,
        format!(
            "two conv-model runs from corpus generation to metrics.json: {} vs {} bytes, {}",
            first.len(),
            second.len(),
            if first == second { "identical" } else { "different" }
        ),
    )
}

// ---------------------------------------------------------------- 11

fn metric_formulas() -> Outcome {
    let hand = metrics(ConfusionCounts {
        tp: 3,
        fp: 2,
        tn: 4,
        fn_: 1,
    });
    let expected = [
        (hand.precision, 0.6),
        (hand.recall, 0.75),
        (hand.f1, 0.6667),
        (hand.ber, 0.2917),
        (hand.accuracy, 0.7),
    ];
    let hand_ok = expected.iter().all(|(got, want)| (got - want).abs() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = ConfusionCounts {
            tp: rng.random_range(1..500),
            fp: rng.random_range(0..500),
            tn: rng.random_range(1..500),
            fn_: rng.random_range(0..500),
        };
        let m = metrics(c);
        let fpr = c.fp as f64 / (c.fp + c.tn) as f64;
        let fnr = c.fn_ as f64 / (c.fn_ + c.tp) as f64;
        let ber = 0.5 * (fpr + fnr);
        worst = worst.max((m.ber - ber).abs()).max((m.auc - (1.5 - 2.0 * ber)).abs());
    }
    Outcome::new(
        hand_ok && worst < 1e-12,
        format!(
            "hand table P {:.4} R {:.4} F1 {:.4} BER {:.4}; 100 random tables, max AUC/BER deviation {worst:.1e}",
            hand.precision, hand.recall, hand.f1, hand.ber
        ),
    )
}
