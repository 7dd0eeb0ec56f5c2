//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed. Exits non-zero if any criterion fails, except those listed as
//! known failures in the README.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anchorprobe::baselines::{
    taskres_step_equivalence, tip_adapter_logits, tip_vision_logits, TipCache,
};
use anchorprobe::data::{
    generate_synthetic, load_container, sample_few_shot, save_container, Geometry, Rng, Shift,
    SupportSet, SyntheticTaskSpec,
};
use anchorprobe::harness::{
    domain_generalization, run_benchmark, summarize, ExperimentConfig, Method, RunOptions, Task,
    TaskSource,
};
use anchorprobe::penalty::{init_lambda_star, phr, phr_derivative, PenaltyState};
use anchorprobe::probe::{
    ce_gradient, drift_norms, probe_forward, probe_objective, probe_objective_gradient,
    train_probe, LambdaChoice, PenaltySpec, PenaltyStep, TrainConfig,
};
use anchorprobe::{cross_entropy, dot, EmbeddingSet, Matrix, PrototypeBank};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    id: u32,
    name: &'static str,
    /// Known, analysed failure that does not fail the run.
    known_failure: Option<&'static str>,
    budget: Option<Duration>,
    check: fn() -> Verdict,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------- fixtures ----------

fn random_bank(rng: &mut Rng, c: usize, d: usize, t: f64) -> PrototypeBank {
    let w = Matrix::new(c, d, rng.normal_vec(c * d, 1.0)).unwrap();
    PrototypeBank::normalized(&w, t).unwrap()
}

fn random_set(rng: &mut Rng, per_class: usize, c: usize, d: usize, views: u32) -> EmbeddingSet {
    let (mut rows, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..c {
        for _ in 0..per_class {
            let base = rng.normal_vec(d, 1.0);
            for v in 0..=views {
                let row: Vec<f64> = if v == 0 {
                    base.clone()
                } else {
                    base.iter().map(|x| x + 0.1 * rng.normal()).collect()
                };
                rows.push(row);
                labels.push(class);
                ids.push(v);
            }
        }
    }
    EmbeddingSet::new(
        Matrix::from_rows(&rows).unwrap(),
        labels,
        (views > 0).then_some(ids),
        (0..c).map(|i| format!("c{i}")).collect(),
    )
    .unwrap()
    .normalized()
    .unwrap()
}

fn fd_gradient(bank: &PrototypeBank, f: impl Fn(&PrototypeBank) -> f64) -> Matrix {
    let h = 1e-6;
    let mut out = Matrix::zeros(bank.n_classes(), bank.dim());
    for i in 0..bank.n_classes() {
        for j in 0..bank.dim() {
            let (mut p, mut m) = (bank.clone(), bank.clone());
            p.weights.set(i, j, bank.weights.get(i, j) + h);
            m.weights.set(i, j, bank.weights.get(i, j) - h);
            out.set(i, j, (f(&p) - f(&m)) / (2.0 * h));
        }
    }
    out
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let n = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / n(a).max(n(b)).max(1e-8)
}

fn bundled(name: &str) -> Task {
    TaskSource::Bundled(name.into()).load().unwrap()
}

fn mean_accuracy(tasks: &[Task], method: Method, shots: usize, seeds: &[u64]) -> f64 {
    let r = run_benchmark(
        tasks,
        &[method],
        &[shots],
        seeds,
        &ExperimentConfig::default(),
        RunOptions::default(),
    )
    .unwrap();
    summarize(&r)[0].mean_accuracy
}

fn seeds20() -> Vec<u64> {
    (1..=20).collect()
}

// ---------- criteria ----------

fn c1_gradients() -> Verdict {
    let mut rng = Rng::new(1001);
    let mut worst = [0.0f64; 3];
    let n = 60;
    for _ in 0..n {
        let c = 2 + rng.index(4);
        let d = 2 + rng.index(7);
        // keep true-class probabilities above the log clamp of the loss
        let t = 1.0 + 9.0 * rng.uniform();
        let bank = random_bank(&mut rng, c, d, t);
        let anchors = random_bank(&mut rng, c, d, t);
        let (per, views) = (1 + rng.index(3), rng.index(2) as u32);
        let batch = random_set(&mut rng, per, c, d, views);
        let y = batch.targets();
        let an = ce_gradient(&bank, &batch, &y).unwrap();
        let fd = fd_gradient(&bank, |b| {
            cross_entropy(&probe_forward(b, &batch).unwrap(), &y).unwrap()
        });
        worst[0] = worst[0].max(rel_err(&an, &fd));

        let lambdas: Vec<f64> = (0..c).map(|_| 0.05 + 2.0 * rng.uniform()).collect();
        let states = [
            PenaltyState::quadratic(lambdas.clone()).unwrap(),
            PenaltyState::phr(lambdas, 0.2 + 3.0 * rng.uniform()).unwrap(),
        ];
        for (k, st) in states.iter().enumerate() {
            let an = probe_objective_gradient(&bank, &anchors, &batch, Some(st), 1.0).unwrap();
            let fd = fd_gradient(&bank, |b| {
                probe_objective(b, &anchors, &batch, Some(st), 1.0).unwrap()
            });
            worst[k + 1] = worst[k + 1].max(rel_err(&an, &fd));
        }
    }
    verdict(
        worst.iter().all(|&w| w < 1e-4),
        format!(
            "{n} instances; worst relative error ce {:.1e}, ce+quadratic {:.1e}, ce+phr {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn c2_phr_axioms() -> Verdict {
    let mut rng = Rng::new(1002);
    let mut triple = || {
        (
            20.0 * rng.uniform() - 10.0,
            10f64.powf(6.0 * rng.uniform() - 3.0),
            10f64.powf(6.0 * rng.uniform() - 3.0),
        )
    };
    let mut ok1 = true;
    let mut ok2 = true;
    for _ in 0..10_000 {
        let (z, rho, lambda) = triple();
        ok1 &= phr_derivative(z, rho, lambda).unwrap() >= 0.0;
        ok2 &= phr_derivative(0.0, rho, lambda).unwrap().to_bits() == lambda.to_bits();
        ok1 &= phr(z, rho, lambda).unwrap().is_finite();
    }
    let mut ok3 = true;
    let mut ok4 = true;
    for lambda in [0.01, 1.0, 100.0] {
        let (mut rho, mut up, mut down) = (1.0, 0.0f64, f64::INFINITY);
        for _ in 0..40 {
            let u = phr_derivative(0.5, rho, lambda).unwrap();
            let d = phr_derivative(-0.5, rho, lambda).unwrap();
            ok3 &= u > up;
            ok4 &= d <= down;
            up = u;
            down = d;
            rho *= 2.0;
        }
        ok3 &= up > 1e10;
        ok4 &= down == 0.0;
    }
    verdict(
        ok1 && ok2 && ok3 && ok4,
        format!("non-negativity {ok1}, P'(0)=lambda bitwise {ok2}, growth {ok3}, vanishing {ok4}"),
    )
}

fn c3_lambda_star() -> Verdict {
    let mut rng = Rng::new(1003);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let c = 2 + rng.index(5);
        let d = 2 + rng.index(10);
        let views = if trial % 2 == 0 {
            0
        } else {
            1 + rng.index(4) as u32
        };
        let anchors = random_bank(&mut rng, c, d, [1.0, 10.0, 100.0][trial % 3]);
        let per = 1 + rng.index(4);
        let support = SupportSet::from_set(random_set(&mut rng, per, c, d, views)).unwrap();
        let got = init_lambda_star(&anchors, &support).unwrap();
        let data = &support.data;
        let (mut sum, mut cnt) = (vec![0.0; c], vec![0usize; c]);
        for m in 0..data.len() {
            let v = data.features.row(m);
            let logits: Vec<f64> = (0..c)
                .map(|k| anchors.temperature_inv * dot(v, anchors.weights.row(k)))
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let y = data.labels[m];
            sum[y] += (logits[y] - mx).exp() / z;
            cnt[y] += 1;
        }
        for k in 0..c {
            worst = worst.max((got[k] - sum[k] / cnt[k] as f64).abs());
        }
    }
    verdict(worst < 1e-12, format!("20 tasks, worst |diff| {worst:.1e}"))
}

fn c4_reduction() -> Verdict {
    let mut all = true;
    for i in 0..5u64 {
        let spec = SyntheticTaskSpec {
            name: format!("r{i}"),
            n_classes: 3 + i as usize,
            dim: 8 + 4 * i as usize,
            geometry: Geometry::RandomUnit {
                min_pairwise_angle_deg: 40.0,
            },
            sigma: 0.3 + 0.05 * i as f64,
            shift: Shift::None,
            train_per_class: 8,
            test_per_class: 10,
            views: i as usize,
            view_sigma: 0.05,
            anchor_noise: 0.0,
            seed: 500 + i,
        };
        let task = generate_synthetic(&spec).unwrap();
        let support = sample_few_shot(&task.train, 4, i).unwrap();
        let zslp = TrainConfig {
            seed: i,
            ..TrainConfig::default()
        };
        let clap = TrainConfig {
            penalty: Some(PenaltySpec::quadratic(LambdaChoice::Uniform(0.0))),
            outer_steps: 1,
            ..zslp.clone()
        };
        let (a, _) = train_probe(&task.anchors, &support, &zslp).unwrap();
        let (b, _) = train_probe(&task.anchors, &support, &clap).unwrap();
        all &= a
            .weights
            .as_slice()
            .iter()
            .zip(b.weights.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    }
    verdict(all, "5 tasks, final banks bitwise equal".into())
}

fn c5_pinning() -> Verdict {
    let task = bundled("default");
    let support = sample_few_shot(&task.train, 4, 1).unwrap();
    let drift = |lambda: f64| {
        let cfg = TrainConfig {
            penalty: Some(PenaltySpec::quadratic(LambdaChoice::Uniform(lambda))),
            outer_steps: 1,
            penalty_step: PenaltyStep::Proximal,
            ..TrainConfig::default()
        };
        let (bank, _) = train_probe(&task.anchors, &support, &cfg).unwrap();
        let d = drift_norms(&bank, &task.anchors).unwrap();
        d.iter().sum::<f64>() / d.len() as f64
    };
    let pinned = drift(1e6);
    let sweep: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
        .iter()
        .map(|&l| drift(l))
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0] + 1e-6);
    verdict(
        pinned < 1e-3 && monotone,
        format!("proximal step; drift at 1e6 {pinned:.1e}; sweep {sweep:.3?}"),
    )
}

fn c6_taskres() -> Verdict {
    let mut rng = Rng::new(1006);
    let anchors = random_bank(&mut rng, 3, 6, 10.0);
    let support = SupportSet::from_set(random_set(&mut rng, 3, 3, 6, 0)).unwrap();
    let grid = [
        (0.1, 0.05),
        (0.25, 0.1),
        (0.5, 0.02),
        (0.5, 0.2),
        (0.75, 0.1),
        (1.0, 0.1),
        (1.5, 0.05),
        (2.0, 0.1),
        (3.0, 0.01),
        (4.0, 0.02),
    ];
    let (mut lin, mut sq, mut failing) = (0.0f64, 0.0f64, 0);
    for (alpha, eta) in grid {
        let r = taskres_step_equivalence(alpha, eta, &anchors, &support, 10).unwrap();
        lin = lin.max(r.max_diff_lr_eta_alpha);
        sq = sq.max(r.max_diff_lr_eta_alpha_sq);
        failing += (r.max_diff_lr_eta_alpha >= 1e-10) as usize;
    }
    verdict(
        lin < 1e-10,
        format!(
            "lr=eta*alpha: max diff {lin:.1e}, {failing}/10 grid points over 1e-10; \
             lr=eta*alpha^2: max diff {sq:.1e}"
        ),
    )
}

fn c7_tip() -> Verdict {
    let mut rng = Rng::new(1007);
    let (c, d) = (5, 12);
    let anchors = random_bank(&mut rng, c, d, 100.0);
    let support = SupportSet::from_set(random_set(&mut rng, 3, c, d, 0)).unwrap();
    let queries = random_set(&mut rng, 4, c, d, 0);
    let mut cache = TipCache::from_support(&support, 0.0, 5.0).unwrap();
    let exact = queries
        .features
        .iter_rows()
        .all(|v| tip_adapter_logits(&cache, &anchors, v).unwrap() == anchors.logits(v).unwrap());
    cache.alpha = 1.0;
    cache.beta = 1e4;
    let mut off_max = 0.0f64;
    for m in 0..cache.keys().rows() {
        let v = cache.keys().row(m).to_vec();
        let vis = tip_vision_logits(&cache, &v).unwrap();
        let class = cache.values().labels()[m];
        let off: f64 = (0..c).filter(|&k| k != class).map(|k| vis[k]).sum();
        off_max = off_max.max(off);
    }
    verdict(
        exact && off_max < 1e-8,
        format!("alpha=0 bitwise {exact}; beta=1e4 max off-class mass {off_max:.1e}"),
    )
}

fn c8_few_shot() -> Verdict {
    let tasks = [bundled("noisy")];
    let seeds = seeds20();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1, 2, 4] {
        let clap = mean_accuracy(&tasks, Method::Clap, k, &seeds);
        let zslp = mean_accuracy(&tasks, Method::Zslp, k, &seeds);
        ok &= clap >= zslp - 0.005;
        if k == 1 {
            ok &= clap > zslp;
        }
        parts.push(format!("K={k} clap {clap:.4} zslp {zslp:.4}"));
    }
    verdict(ok, parts.join("; "))
}

fn c9_domain_shift() -> Verdict {
    let base = SyntheticTaskSpec::bundled("default").unwrap();
    let source: Task = generate_synthetic(&base).unwrap().into();
    let target: Task = generate_synthetic(&SyntheticTaskSpec {
        name: "default-rot20".into(),
        shift: Shift::Rotate { angle_deg: 20.0 },
        ..base
    })
    .unwrap()
    .into();
    let delta = |m| {
        domain_generalization(
            &source,
            std::slice::from_ref(&target),
            m,
            &ExperimentConfig::default(),
            16,
            &seeds20(),
            RunOptions::default(),
        )
        .unwrap()
        .rows[0]
            .delta
    };
    let (clap, zslp) = (delta(Method::Clap), delta(Method::Zslp));
    verdict(
        clap > zslp,
        format!("target accuracy minus zero-shot: clap {clap:+.4}, zslp {zslp:+.4}"),
    )
}

fn c10_alm_ablation() -> Verdict {
    let tasks = [bundled("noisy")];
    let seeds = seeds20();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [2, 4] {
        let one = mean_accuracy(&tasks, Method::Clap, k, &seeds);
        let full = mean_accuracy(&tasks, Method::ClapFullalm, k, &seeds);
        ok &= one >= full;
        parts.push(format!("K={k} single {one:.4} full {full:.4}"));
    }
    verdict(ok, parts.join("; "))
}

fn cli(args: &[&str], out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_anchorprobe"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("ANCHORPROBE_WORKERS")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn c11_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("grid.json");
    fs::write(&grid, r#"[{"lambda_scale": 0.5}, {"lambda_scale": 2}]"#).unwrap();
    let g = grid.to_str().unwrap();
    let commands: [(&str, Vec<&str>); 5] = [
        (
            "train",
            vec![
                "train",
                "--synthetic",
                "default",
                "--method",
                "clap",
                "--shots",
                "4",
            ],
        ),
        (
            "bench",
            vec![
                "bench",
                "--synthetic",
                "default",
                "--methods",
                "zslp,clap,tipadapter",
                "--shots",
                "1,2",
                "--seeds",
                "1,2",
            ],
        ),
        (
            "crossshift",
            vec![
                "crossshift",
                "--synthetic",
                "default",
                "--grid",
                g,
                "--shots",
                "2",
                "--seeds",
                "1,2",
                "--epochs",
                "60",
            ],
        ),
        (
            "domgen",
            vec![
                "domgen",
                "--source",
                "default",
                "--targets",
                "default",
                "--shots",
                "4",
                "--seeds",
                "1,2",
            ],
        ),
        ("synth", vec!["synth", "--synthetic", "noisy"]),
    ];
    let mut identical = Vec::new();
    for (name, args) in &commands {
        let (a, b) = (
            tmp.path().join(format!("{name}_a")),
            tmp.path().join(format!("{name}_b")),
        );
        if let Err(e) = cli(args, &a).and_then(|_| cli(args, &b)) {
            return Verdict::Fail(format!("{name} failed: {}", e.trim()));
        }
        identical.push((name, dir_bytes(&a) == dir_bytes(&b)));
    }

    let mut rng = Rng::new(1011);
    let mut worst = 0.0f64;
    let mut meta = true;
    for i in 0..20 {
        let (per, c, d) = (1 + rng.index(5), 2 + rng.index(4), 3 + rng.index(30));
        let views = rng.index(3) as u32;
        let set = random_set(&mut rng, per, c, d, views);
        let path = tmp.path().join(format!("rt{i}.bin"));
        save_container(&path, &set, "train").unwrap();
        let back = load_container(&path).unwrap();
        meta &= back.labels == set.labels
            && back.views == set.views
            && back.class_names == set.class_names;
        worst = worst.max(back.features.max_abs_diff(&set.features).unwrap());
    }
    let all_identical = identical.iter().all(|(_, same)| *same);
    verdict(
        all_identical && meta && worst <= 6e-8,
        format!(
            "byte-identical re-runs: {}; container metadata {meta}, max feature error {worst:.1e}",
            identical
                .iter()
                .map(|(n, s)| format!("{n}={s}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

/// 16-shot reference accuracies (ZS-LP, CLAP) in percent.
const REAL_REFERENCE: [(&str, f64, f64); 11] = [
    ("imagenet", 61.00, 65.02),
    ("caltech101", 92.98, 91.93),
    ("oxfordpets", 86.27, 88.51),
    ("stanfordcars", 75.49, 75.12),
    ("flowers102", 95.82, 94.21),
    ("food101", 75.86, 78.55),
    ("fgvcaircraft", 34.82, 33.59),
    ("sun397", 69.72, 70.78),
    ("dtd", 66.43, 66.41),
    ("eurosat", 83.16, 80.07),
    ("ucf101", 76.54, 76.29),
];

pub const REAL_FEATURES_ENV: &str = "ANCHORPROBE_REAL_FEATURES";

fn c12_real_features() -> Verdict {
    let Ok(dir) = std::env::var(REAL_FEATURES_ENV) else {
        return Verdict::Skip(format!("{REAL_FEATURES_ENV} not set"));
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, zslp_ref, clap_ref) in REAL_REFERENCE {
        let prefix = Path::new(&dir).join(name);
        let mut train = prefix.as_os_str().to_owned();
        train.push("_train.bin");
        if !Path::new(&train).exists() {
            continue;
        }
        let task = match TaskSource::Features(prefix).load() {
            Ok(t) => t,
            Err(e) => return Verdict::Fail(format!("{name}: {e}")),
        };
        let tasks = [task];
        let z = 100.0 * mean_accuracy(&tasks, Method::Zslp, 16, &[1, 2, 3]);
        let c = 100.0 * mean_accuracy(&tasks, Method::Clap, 16, &[1, 2, 3]);
        ok &= (z - zslp_ref).abs() <= 1.5 && (c - clap_ref).abs() <= 1.5;
        parts.push(format!(
            "{name} zslp {z:.2}/{zslp_ref} clap {c:.2}/{clap_ref}"
        ));
    }
    if parts.is_empty() {
        return Verdict::Skip(format!("no <dataset>_train.bin under {dir}"));
    }
    verdict(ok, parts.join("; "))
}

const CRITERIA: [Criterion; 12] = [
    Criterion { id: 1, name: "gradients match finite differences", known_failure: None, budget: Some(Duration::from_secs(10)), check: c1_gradients },
    Criterion { id: 2, name: "PHR axioms", known_failure: None, budget: Some(Duration::from_secs(1)), check: c2_phr_axioms },
    Criterion { id: 3, name: "lambda* brute-force oracle", known_failure: None, budget: Some(Duration::from_secs(1)), check: c3_lambda_star },
    Criterion { id: 4, name: "CLAP with zero multipliers is ZS-LP", known_failure: None, budget: None, check: c4_reduction },
    Criterion { id: 5, name: "anchor pinning and monotone drift", known_failure: None, budget: None, check: c5_pinning },
    Criterion {
        id: 6,
        name: "TaskRes equals ZS-LP at lr eta*alpha",
        known_failure: Some("the residual parameterization scales the step by alpha^2; exact at lr=eta*alpha^2 and at alpha=1 (README, Known failures)"),
        budget: None,
        check: c6_taskres,
    },
    Criterion { id: 7, name: "TIP-Adapter fusion identities", known_failure: None, budget: None, check: c7_tip },
    Criterion { id: 8, name: "CLAP vs ZS-LP on the noisy benchmark", known_failure: None, budget: Some(Duration::from_secs(120)), check: c8_few_shot },
    Criterion { id: 9, name: "CLAP degrades less under rotation shift", known_failure: None, budget: Some(Duration::from_secs(120)), check: c9_domain_shift },
    Criterion { id: 10, name: "single outer step beats full ALM", known_failure: None, budget: None, check: c10_alm_ablation },
    Criterion { id: 11, name: "CLI determinism and container round trip", known_failure: None, budget: None, check: c11_determinism },
    Criterion { id: 12, name: "real-feature reference accuracies", known_failure: None, budget: None, check: c12_real_features },
];

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes arguments; accept an optional id filter
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut unexpected = 0;
    for c in CRITERIA
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
    {
        let start = Instant::now();
        let v = (c.check)();
        let took = start.elapsed();
        let over = c.budget.is_some_and(|b| took > b);
        let (mut status, detail) = match v {
            Verdict::Pass(d) if over => (
                "FAIL",
                format!("{d}; over the {:?} budget", c.budget.unwrap()),
            ),
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        let mut note = String::new();
        if status == "FAIL" {
            match c.known_failure {
                Some(why) => {
                    status = "FAIL (known)";
                    note = format!(" [{why}]");
                }
                None => unexpected += 1,
            }
        }
        println!(
            "criterion {:>2} {status}: {} ({detail}) [{:.2}s]{note}",
            c.id,
            c.name,
            took.as_secs_f64()
        );
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criterion check(s) failed");
        ExitCode::FAILURE
    }
}
