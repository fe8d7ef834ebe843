//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use tdoa_core::filters::{nh_weights, solve_ct, FilterKind};
use tdoa_core::harness::{
    run_experiment, train_tree, ExperimentConfig, MetricsReport, Preset, TrackRecord, Variant,
    DEPTHS, METRICS, PEAKS, RESAMPLES, TRACKS,
};
use tdoa_core::manifold::{project, PdTree, ProjectionStrategy, TreeConfig};
use tdoa_core::pairs::canonical_pairs;
use tdoa_core::scene::{generate_training_set, pair_delay, tdoa_of, MicArray, Scene};
use tdoa_core::signal::{phat_correlate, tdoa_argmax, FrameConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn variant(name: &str) -> Variant {
    name.parse().expect("valid variant name")
}

fn random_point<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn physics_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (c, fs) = (343.0, 16000.0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..=8);
        let mics: Vec<[f64; 3]> = (0..n).map(|_| random_point(&mut rng, 0.0, 10.0)).collect();
        let source = random_point(&mut rng, -5.0, 15.0);
        let d = |i: usize, j: usize| pair_delay(&source, &mics[i], &mics[j], c, fs);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((d(i, j) + d(j, i)).abs());
                for k in 0..n {
                    worst = worst.max((d(i, j) + d(j, k) + d(k, i)).abs());
                }
            }
        }
        let array = MicArray::new(mics.clone(), c).expect("distinct microphones");
        let v = tdoa_of(&source, &array, fs);
        for (p, pair) in canonical_pairs(n).iter().enumerate() {
            worst = worst.max((v[p] - d(pair.i, pair.j)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 1.0,
        format!("max identity residual {worst:.3e} samples, {secs:.3} s"),
    )
}

fn phat_trials(snr_db: Option<f64>, seed: u64) -> usize {
    let cfg = FrameConfig {
        max_delay_samples: 600,
        ..FrameConfig::default()
    };
    let n = 4096;
    let max = cfg.max_delay_samples as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..200 {
        let lag = rng.random_range(-max..=max);
        let source: Vec<f64> = (0..n + 2 * max as usize)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let off = max as usize;
        let start = (off as i64 - lag) as usize;
        let mut a: Vec<f64> = source[off..off + n].to_vec();
        let mut b: Vec<f64> = source[start..start + n].to_vec();
        if let Some(snr) = snr_db {
            let noise = Normal::new(0.0, 10f64.powf(-snr / 20.0)).expect("finite sigma");
            for x in a.iter_mut().chain(b.iter_mut()) {
                *x += noise.sample(&mut rng);
            }
        }
        let corr = phat_correlate(&a, &b, &cfg).expect("valid frames");
        if tdoa_argmax(&corr).ok() == Some(lag) {
            hits += 1;
        }
    }
    hits
}

fn phat_correctness() -> Outcome {
    let clean = phat_trials(None, 202);
    let noisy = phat_trials(Some(20.0), 203);
    outcome(
        clean == 200 && noisy * 100 >= 99 * 200,
        format!("noiseless {clean}/200, 20 dB {noisy}/200"),
    )
}

fn nh_algebra() -> Outcome {
    let e = std::f64::consts::E;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_residual = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut support_ok = true;
    for _ in 0..10000 {
        let m = rng.random_range(2..=100);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let mut g: Vec<f64> = (0..m).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        if !g.iter().any(|&x| x > 0.0) {
            let k = rng.random_range(0..m);
            g[k] = scale * rng.random_range(0.01..1.0);
        }
        let c = solve_ct(&g).expect("positive regret present");
        let lhs = g
            .iter()
            .map(|&x| (x.max(0.0).powi(2) / (2.0 * c)).exp())
            .sum::<f64>()
            / m as f64;
        worst_residual = worst_residual.max((lhs - e).abs());
        let w = nh_weights(&g, c).expect("valid scale");
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        support_ok &= w.iter().zip(&g).all(|(&wi, &gi)| (wi == 0.0) == (gi <= 0.0));
    }
    let c1 = solve_ct(&[1.0]).expect("positive regret");
    let c2 = solve_ct(&[1.0, -1.0]).expect("positive regret");
    let closed = (c1 - 0.5).abs() <= 1e-9 && (c2 - 1.0 / (2.0 * (2.0 * e - 1.0).ln())).abs() <= 1e-9;
    outcome(
        worst_residual <= 1e-9 && worst_sum <= 1e-12 && support_ok && closed,
        format!(
            "residual {worst_residual:.2e}, weight sum error {worst_sum:.2e}, support {}, closed forms {}",
            if support_ok { "exact" } else { "WRONG" },
            if closed { "match" } else { "MISMATCH" }
        ),
    )
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn tree_structure(scene: &Scene, tree: &PdTree) -> Outcome {
    let nodes = tree.nodes();
    let balanced = nodes.iter().all(|n| match n.children {
        Some((l, r)) => nodes[l].count.abs_diff(nodes[r].count) <= 1,
        None => true,
    });

    let data = scene.training_set(scene.seed).expect("training set");
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut idem = 0.0f64;
    let mut expansion = f64::NEG_INFINITY;
    for q in 0..1000 {
        let base = &data[rng.random_range(0..data.len())];
        let spread = if q % 2 == 0 { 5.0 } else { 200.0 };
        let x: Vec<f64> = base.iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = base.iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect();
        for node in nodes {
            let px = project(node, &x);
            let ppx = project(node, &px);
            idem = idem.max(norm_diff(&px, &ppx));
            let py = project(node, &y);
            expansion = expansion.max(norm_diff(&px, &py) - norm_diff(&x, &y));
        }
    }

    let mat = DMatrix::from_fn(data.len(), tree.dim, |r, c| data[r][c]);
    let sv = mat.singular_values();
    let top = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-6 * top).count();
    let pass = balanced && idem <= 1e-9 && expansion <= 1e-9 && rank <= 6;
    outcome(
        pass,
        format!(
            "balanced {balanced}, idempotency {idem:.2e}, expansion {expansion:.2e}, rank {rank} of {}",
            tree.dim
        ),
    )
}

fn denoising_gain(scene: &Scene, tree: &PdTree) -> Outcome {
    let test = generate_training_set(&scene.array, &scene.training_region, 2000, scene.sample_rate_hz, 505)
        .expect("test set");
    let mut rng = ChaCha8Rng::seed_from_u64(506);
    let noise = Normal::new(0.0, 5.0).expect("finite sigma");
    let (mut before, mut after) = (0.0, 0.0);
    for x in &test {
        let noisy: Vec<f64> = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let (clean, _) = tree.denoise(&noisy, ProjectionStrategy::FixedDepth(2), &mut rng);
        before += norm_diff(&noisy, x).powi(2);
        after += norm_diff(&clean, x).powi(2);
    }
    let gain = 1.0 - after / before;
    outcome(
        gain >= 0.30,
        format!(
            "mse {:.2} -> {:.2} per vector, reduction {:.1}%",
            before / test.len() as f64,
            after / test.len() as f64,
            100.0 * gain
        ),
    )
}

fn experiment(preset: Preset, variants: &[&str], tree: &Path, out: &Path) -> (TrackRecord, MetricsReport, f64) {
    let cfg = ExperimentConfig {
        preset,
        out_dir: out.to_path_buf(),
        tree_file: Some(tree.to_path_buf()),
        variants: variants.iter().map(|v| variant(v)).collect(),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let (records, report) = run_experiment(&cfg).expect("experiment runs");
    let secs = start.elapsed().as_secs_f64();
    (records, report.expect("trajectory spans frames"), secs)
}

fn median_of(report: &MetricsReport, name: &str) -> f64 {
    report.get(&variant(name)).expect("variant was run").median_rmse
}

fn central_reproduction(report: &MetricsReport, secs: f64) -> Outcome {
    let m = |v| median_of(report, v);
    let projected_ok = m("PF-root") <= 5.0 && m("NH-root") <= 5.0;
    let pf_ratio = m("PF-none") / m("PF-root");
    let nh_ratio = m("NH-none") / m("NH-root");
    outcome(
        projected_ok && pf_ratio > 3.0 && nh_ratio > 3.0 && secs < 60.0,
        format!(
            "median rmse PF-none {:.2}, PF-root {:.2}, NH-none {:.2}, NH-root {:.2}; none/root PF {pf_ratio:.1}x, NH {nh_ratio:.1}x; {secs:.1} s",
            m("PF-none"),
            m("PF-root"),
            m("NH-none"),
            m("NH-root")
        ),
    )
}

fn resampling_economy(report: &MetricsReport, m: usize) -> Outcome {
    let nh: Vec<&_> = report.variants.iter().filter(|v| v.variant.kind == FilterKind::NormalHedge).collect();
    let sir: Vec<&_> = report.variants.iter().filter(|v| v.variant.kind == FilterKind::Sir).collect();
    let nh_ok = nh.iter().all(|v| v.mean_resamples < 0.5 * m as f64);
    let sir_ok = sir.iter().all(|v| v.mean_resamples == m as f64);
    let list = |vs: &[&tdoa_core::harness::VariantMetrics]| {
        vs.iter()
            .map(|v| format!("{} {:.2}", v.variant, v.mean_resamples))
            .collect::<Vec<_>>()
            .join(", ")
    };
    outcome(
        !nh.is_empty() && !sir.is_empty() && nh_ok && sir_ok,
        format!("mean resamples per step (m = {m}): {}; {}", list(&nh), list(&sir)),
    )
}

/// Share of NH-rand particles by birth depth over frames whose time lies in
/// `[t0, t1]`; index 0 is "never projected".
fn depth_shares(records: &TrackRecord, name: &str, t0: f64, t1: f64) -> Vec<f64> {
    let k = records.variants.iter().position(|v| *v == variant(name)).expect("variant was run");
    let mut totals = vec![0usize; records.max_depth + 2];
    for f in records.frames.iter().filter(|f| f.time >= t0 && f.time <= t1) {
        for (t, c) in totals.iter_mut().zip(&f.outputs[k].depth_hist) {
            *t += c;
        }
    }
    let sum = totals.iter().sum::<usize>().max(1) as f64;
    totals.iter().map(|&c| c as f64 / sum).collect()
}

fn fmt_shares(shares: &[f64]) -> String {
    shares
        .iter()
        .enumerate()
        .skip(1)
        .map(|(d, s)| format!("d{}={:.2}", d - 1, s))
        .collect::<Vec<_>>()
        .join(" ")
}

fn near_mic_reproduction(near: &MetricsReport, near_rec: &TrackRecord, central_rec: &TrackRecord) -> Outcome {
    let rand = median_of(near, "NH-rand");
    let (best_name, best) = ["NH-root", "NH-1", "NH-2"]
        .iter()
        .map(|v| (*v, median_of(near, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("fixed variants were run");
    let ratio = rand / best;
    let near_shares = depth_shares(near_rec, "NH-rand", 18.5125, 38.5125);
    let central_shares = depth_shares(central_rec, "NH-rand", f64::NEG_INFINITY, f64::INFINITY);
    outcome(
        ratio <= 1.25,
        format!(
            "NH-rand {rand:.2} vs best fixed {best_name} {best:.2}, ratio {ratio:.2}; NH-rand depth shares near wall [{}], central [{}]",
            fmt_shares(&near_shares),
            fmt_shares(&central_shares)
        ),
    )
}

fn determinism(tree_file: &Path, scene: &Scene, tree: &PdTree, first: &Path, second: &Path) -> Outcome {
    let retrained = train_tree(scene, &TreeConfig::default()).expect("tree trains");
    let tree_same = retrained.to_text() == tree.to_text();
    experiment(Preset::CentralWalk, CENTRAL_VARIANTS, tree_file, second);
    let mut differing = Vec::new();
    for name in [TRACKS, PEAKS, DEPTHS, RESAMPLES, METRICS, "observations.json"] {
        let a = std::fs::read(first.join(name)).expect("first run output");
        let b = std::fs::read(second.join(name)).expect("second run output");
        if a != b {
            differing.push(name);
        }
    }
    outcome(
        tree_same && differing.is_empty(),
        if differing.is_empty() {
            format!("6 outputs byte-identical, retrained tree identical: {tree_same}")
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    )
}

const CENTRAL_VARIANTS: &[&str] = &["PF-none", "PF-root", "NH-none", "NH-root", "NH-rand"];

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    results.push(("physics identities", physics_identities()));
    results.push(("PHAT lag recovery", phat_correctness()));
    results.push(("NormalHedge algebra", nh_algebra()));

    let tree_start = Instant::now();
    let scene = Preset::CentralWalk.scene();
    let tree = train_tree(&scene, &TreeConfig::default()).expect("tree trains");
    let tree_secs = tree_start.elapsed().as_secs_f64();
    let tree_file = tmp.path().join("tree.txt");
    tree.save(&tree_file).expect("tree saves");
    results.push(("tree structure", tree_structure(&scene, &tree)));
    results.push(("denoising gain", denoising_gain(&scene, &tree)));

    let central_dir = tmp.path().join("central");
    let (central_rec, central, secs) = experiment(Preset::CentralWalk, CENTRAL_VARIANTS, &tree_file, &central_dir);
    results.push(("central walk tracking", central_reproduction(&central, secs + tree_secs)));
    results.push(("resampling economy", resampling_economy(&central, central_rec.m)));

    let near_dir = tmp.path().join("near_mic");
    let (near_rec, near, _) = experiment(
        Preset::NearMicWalk,
        &["NH-root", "NH-1", "NH-2", "NH-rand"],
        &tree_file,
        &near_dir,
    );
    results.push(("near-mic randomized depth", near_mic_reproduction(&near, &near_rec, &central_rec)));

    let rerun_dir = tmp.path().join("central_rerun");
    results.push(("determinism", determinism(&tree_file, &scene, &tree, &central_dir, &rerun_dir)));

    let mut failed = 0;
    for (k, (name, o)) in results.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {name}: {}", k + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", results.len());
        ExitCode::FAILURE
    }
}
