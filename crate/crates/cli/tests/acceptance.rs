//! Acceptance suite: each criterion prints one PASS or FAIL line; any failure fails the target.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use misalign_core::features::entropy::{gaussian_entropy, local_diff_entropy, COVARIANCE_REG};
use misalign_core::features::sinkhorn::{sinkhorn_distance, sinkhorn_divergence, uniform_assignment_cost, Measure, SinkhornParams};
use misalign_core::features::FeatureConfig;
use misalign_core::geometry::{transformation_error, Point3, PointCloud, RigidTransform};
use misalign_core::harness::dataset::{build_dataset, generate_scene_specs, DatasetConfig, DatasetManifest, Split, MANIFEST_FILE};
use misalign_core::harness::pipeline::{
    binary_eval, coral_baseline, correct_map, eval_report, featurize, metric_study, predict_split, train, MetricStudyConfig,
    Prediction, STUDY_METRICS,
};
use misalign_core::harness::scene::{scan_scene, LidarSpec, Scene, SceneSpec};
use misalign_core::models::losses::{logit_loss_grad, softmax};
use misalign_core::models::nn::{relu, Linear};
use misalign_core::models::{
    combined_loss, cross_entropy, pt_layer_backward, pt_layer_forward, regression_head_loss, wasserstein1, ClassDistribution,
    LossKind, OneHotLabel, PTLayerParams, TrainConfig,
};
use misalign_core::preprocess::{hidden_point_removal_points, DEFAULT_FLIP_RADIUS_FACTOR};
use misalign_core::Scheme;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn dist(p: &[f64]) -> ClassDistribution {
    ClassDistribution::new(p.to_vec()).unwrap()
}

fn label(k: usize, m: usize) -> OneHotLabel {
    OneHotLabel::new(k, m).unwrap()
}

fn loss_suite() -> Outcome {
    let start = Instant::now();
    let ln2 = std::f64::consts::LN_2;
    let y0 = label(0, 2);
    let half = dist(&[0.5, 0.5]);
    let y5 = label(0, 5);
    let trivial = [
        ("CE one-hot", cross_entropy(&label(1, 3), &dist(&[0.0, 1.0, 0.0])), 0.0),
        ("CE uniform m=2", cross_entropy(&y0, &half), ln2),
        ("W1 one-hot", wasserstein1(&label(2, 4), &dist(&[0.0, 0.0, 1.0, 0.0])), 0.0),
        ("W1 far one-hot", wasserstein1(&y5, &dist(&[0.0, 0.0, 0.0, 0.0, 1.0])), 4.0),
        ("W1 half gap", wasserstein1(&y5, &dist(&[0.5, 0.5, 0.0, 0.0, 0.0])), 0.5),
        ("combined one-hot", combined_loss(&label(3, 5), &dist(&[0.0, 0.0, 0.0, 1.0, 0.0])), 0.0),
        ("combined uniform m=2", combined_loss(&y0, &half), 0.5 * ln2 + 0.5 * 0.5),
        ("regression exact", regression_head_loss(ln2, 0.0), 0.0),
    ];
    let mut bad: Vec<String> = trivial.iter().filter(|(_, got, want)| !close(*got, *want, 1e-12)).map(|(n, g, w)| format!("{n}: {g} != {w}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let m = [2, 5, 10][draw % 3];
        let y = label(rng.gen_range(0..m), m);
        let z: Vec<f64> = (0..m).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let (_, grad) = logit_loss_grad(LossKind::Rbc, &y, &z);
        let f = |z: &[f64]| combined_loss(&y, &dist(&softmax(z)));
        let h = 1e-6;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for k in 0..m {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[k] += h;
            zm[k] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            num += (fd - grad[k]).powi(2);
            den += grad[k].powi(2);
        }
        worst = worst.max((num / den.max(1e-300)).sqrt());
    }
    if worst >= 1e-4 {
        bad.push(format!("finite-difference rel. err {worst:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        bad.push(format!("runtime {secs:.1}s"));
    }
    check(bad.is_empty(), if bad.is_empty() { format!("8 exact values; worst FD rel. err {worst:.2e} over 100 draws; {secs:.2}s") } else { bad.join("; ") })
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<Point3> {
    (0..n).map(|_| Point3::new(rng.gen_range(-half_width..half_width), rng.gen_range(-half_width..half_width), rng.gen_range(-half_width..half_width))).collect()
}

fn sinkhorn_suite() -> Outcome {
    let start = Instant::now();
    let params = SinkhornParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();

    let mut worst_self = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let a = Measure::uniform(random_points(&mut rng, n, 1.0));
        worst_self = worst_self.max(sinkhorn_divergence(&a, &a, &params).unwrap().raw.abs());
    }
    if worst_self >= 1e-6 {
        bad.push(format!("S(a,a) up to {worst_self:.2e}"));
    }

    let mut min_raw = f64::INFINITY;
    for _ in 0..1000 {
        let a = Measure::uniform(random_points(&mut rng, 5, 1.0));
        let b = Measure::uniform(random_points(&mut rng, 5, 1.0));
        min_raw = min_raw.min(sinkhorn_divergence(&a, &b, &params).unwrap().raw);
    }
    if min_raw < -1e-9 {
        bad.push(format!("pre-clamp S as low as {min_raw:.2e}"));
    }

    // Atoms spread over a 4 m cube, the scale of a local neighborhood.
    let fine = SinkhornParams { epsilon_reg: 0.001, max_iters: 5000, tolerance: 1e-9 };
    let mut worst_rel = 0.0f64;
    for trial in 0..200 {
        let n = 3 + trial % 2;
        let a = random_points(&mut rng, n, 2.0);
        let b = random_points(&mut rng, n, 2.0);
        let lp = uniform_assignment_cost(&a, &b).unwrap();
        let w = sinkhorn_distance(&Measure::uniform(a), &Measure::uniform(b), &fine).unwrap().value;
        worst_rel = worst_rel.max((w - lp).abs() / lp);
    }
    if worst_rel >= 0.02 {
        bad.push(format!("W_eps vs LP rel. err {worst_rel:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        bad.push(format!("runtime {secs:.1}s"));
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("max |S(a,a)| {worst_self:.1e}; min pre-clamp S {min_raw:.1e}; worst W vs LP {:.3}%; {secs:.2}s", 100.0 * worst_rel)
        } else {
            bad.join("; ")
        },
    )
}

fn entropy_suite() -> Outcome {
    let target = 1.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    // Six axis points whose sample covariance plus the regularizer is exactly I.
    let a = ((1.0 - COVARIANCE_REG) * 2.5).sqrt();
    let cross: Vec<Point3> = (0..3)
        .flat_map(|k| {
            let mut v = Vector3::zeros();
            v[k] = a;
            [Point3::from(v), Point3::from(-v)]
        })
        .collect();
    let h = local_diff_entropy(&cross).unwrap();
    let h_direct = gaussian_entropy(&nalgebra::Matrix3::identity());
    let mut bad = Vec::new();
    if !close(h, target, 1e-9) || !close(h_direct, target, 1e-9) {
        bad.push(format!("identity entropy {h} / {h_direct} vs {target}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pts = random_points(&mut rng, 40, 0.5);
        let mean = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / pts.len() as f64;
        let base = local_diff_entropy(&pts).unwrap();
        for s in [2.0f64, 10.0] {
            let scaled: Vec<Point3> = pts.iter().map(|p| Point3::from(mean + (p.coords - mean) * s)).collect();
            worst = worst.max((local_diff_entropy(&scaled).unwrap() - base - 3.0 * s.ln()).abs());
        }
    }
    if worst >= 1e-4 {
        bad.push(format!("scaling law error {worst:.2e}"));
    }
    check(bad.is_empty(), if bad.is_empty() { format!("identity value exact to {:.1e}; worst scaling deviation {worst:.2e}", (h - target).abs()) } else { bad.join("; ") })
}

fn geometry_suite() -> Outcome {
    let mut bad = Vec::new();
    let cloud = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)], RigidTransform::identity(), 0.03).unwrap();
    let id = RigidTransform::identity();
    let t = RigidTransform::from_translation(Vector3::new(0.3, 0.4, 0.0));
    let r = RigidTransform::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
    let cases = [
        ("gt = est", transformation_error(&t, &t, &cloud).unwrap(), 0.0),
        ("translation", transformation_error(&id, &t, &cloud).unwrap(), 0.5),
        ("rotation chord", transformation_error(&id, &r, &cloud).unwrap(), std::f64::consts::SQRT_2),
    ];
    for (name, got, want) in cases {
        if !close(got, want, 1e-12) {
            bad.push(format!("{name}: {got} != {want}"));
        }
    }

    // Ground plus standing boxes, scanned from three poses and judged from the fourth.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut agree, mut total, mut worst_scene) = (0usize, 0usize, 1.0f64);
    for s in 0..20u64 {
        let spec = SceneSpec {
            rng_seed: 500 + s,
            plane_count: 1,
            box_count: 10,
            foliage_count: 0,
            clearing: 6.0,
            poses: 4,
            pose_spacing: 3.0,
            lidar: LidarSpec { range_noise: 0.0, ..LidarSpec::default() },
            ..SceneSpec::default()
        };
        let scene = Scene::from_spec(&spec).unwrap();
        let poses = spec.trajectory().unwrap();
        let mut points = Vec::new();
        for pose in &poses[1..] {
            points.extend(scan_scene(&scene, &spec, pose).unwrap().points.iter().map(|p| pose.apply(p)));
        }
        let viewpoint = Point3::from(*poses[0].translation());
        let hpr = hidden_point_removal_points(&points, &viewpoint, DEFAULT_FLIP_RADIUS_FACTOR).unwrap();
        let mut scene_agree = 0;
        for (p, &vis) in points.iter().zip(&hpr.visible) {
            let d = p - viewpoint;
            let range = d.norm();
            let hit = scene.cast(&viewpoint.coords, &(d / range), &mut rng).map(|(t, _)| t);
            let oracle = hit.map_or(true, |t| t >= range - 1e-6 * range.max(1.0));
            scene_agree += (oracle == vis) as usize;
        }
        agree += scene_agree;
        total += points.len();
        worst_scene = worst_scene.min(scene_agree as f64 / points.len() as f64);
    }
    let rate = agree as f64 / total as f64;
    if rate < 0.95 {
        bad.push(format!("HPR agreement {:.2}%", 100.0 * rate));
    }
    check(
        bad.is_empty(),
        if bad.is_empty() { format!("analytic cases exact; HPR agreement {:.2}% on {total} points over 20 scenes (worst scene {:.2}%)", 100.0 * rate, 100.0 * worst_scene) } else { bad.join("; ") },
    )
}

fn pt_layer_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let p = random_points(&mut rng, 6, 1.0);
    let mut bad = Vec::new();

    let zero = pt_layer_forward(&x, &p, &PTLayerParams::zeros(4, 4, 3)).unwrap();
    if !zero.iter().flatten().all(|&v| v == 0.0) {
        bad.push("zero parameters gave a non-zero output".to_string());
    }
    let single = PTLayerParams::random(4, 4, 1, 0.7, &mut rng);
    let out = pt_layer_forward(&x, &p, &single).unwrap();
    let theta0 = single.theta[1].forward(&relu(&single.theta[0].forward(&[0.0, 0.0, 0.0])));
    for i in 0..6 {
        let v = single.alpha.forward(&x[i]);
        if (0..4).any(|c| out[i][c] != v[c] + theta0[c]) {
            bad.push(format!("k_nn = 1 mismatch at row {i}"));
        }
    }

    let params = PTLayerParams::random(4, 4, 4, 0.8, &mut rng);
    let up: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let loss = |prm: &PTLayerParams| -> f64 {
        pt_layer_forward(&x, &p, prm).unwrap().iter().zip(&up).map(|(y, g)| y.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    let (_, grads) = pt_layer_backward(&x, &p, &params, &up).unwrap();
    let h = 1e-5;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let bump = |li: usize, idx: usize, delta: f64| {
        let mut q = params.clone();
        let l: &mut Linear = q.linears_mut()[li];
        if idx < l.w.len() {
            l.w[idx] += delta;
        } else {
            l.b[idx - l.w.len()] += delta;
        }
        loss(&q)
    };
    for (li, g) in grads.linears().iter().enumerate() {
        for idx in 0..g.w.len() + g.b.len() {
            let fd = (bump(li, idx, h) - bump(li, idx, -h)) / (2.0 * h);
            let an = if idx < g.w.len() { g.w[idx] } else { g.b[idx - g.w.len()] };
            num += (fd - an).powi(2);
            den += an * an;
        }
    }
    let rel = (num / den).sqrt();
    if rel >= 1e-4 {
        bad.push(format!("gradient rel. err {rel:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        bad.push(format!("runtime {secs:.1}s"));
    }
    check(bad.is_empty(), if bad.is_empty() { format!("exact special cases; FD rel. err {rel:.2e} on 6x4; {secs:.2}s") } else { bad.join("; ") })
}

/// Seeds of the generated evaluation datasets.
const SYNTHETIC_SEED: u64 = 101;
const EPSILON_SEED: u64 = 202;

fn desk_features() -> FeatureConfig {
    FeatureConfig { fps_count: 64, max_sinkhorn_atoms: 32, ..Default::default() }
}

fn desk_training(seed: u64, loss: LossKind) -> TrainConfig {
    TrainConfig { hidden: 32, seed, loss, ..Default::default() }
}

struct Prepared {
    dir: PathBuf,
    manifest: DatasetManifest,
    seconds: f64,
}

fn prepare(root: &Path, scheme: Scheme, scenes: usize, poses: usize, seed: u64, config: &DatasetConfig) -> Prepared {
    let start = Instant::now();
    let dir = root.join(scheme.name());
    let specs = generate_scene_specs(scenes, seed, poses);
    let manifest = build_dataset(&specs, scheme, &dir, &DatasetConfig { seed, ..*config }).unwrap();
    featurize(&manifest, &dir, &dir.join("features"), &desk_features()).unwrap();
    Prepared { dir, manifest, seconds: start.elapsed().as_secs_f64() }
}

fn trained_predictions(d: &Prepared, loss: LossKind) -> Vec<Prediction> {
    let outcome = train(&d.manifest, &d.dir.join("features"), &desk_training(1, loss)).unwrap();
    predict_split(&outcome.model, &d.manifest, &d.dir.join("features"), Split::Test).unwrap()
}

fn synthetic_criterion(d: &Prepared) -> Outcome {
    let start = Instant::now();
    let n = d.manifest.entries.len();
    let balanced = d.manifest.class_counts.iter().all(|&c| c == d.manifest.class_counts[0]);
    let preds = trained_predictions(d, LossKind::Rbc);
    let easy = binary_eval(&preds, (0, 3)).unwrap();
    let hard = binary_eval(&preds, (0, 1)).unwrap();
    let coral = coral_baseline(&d.manifest, &d.dir, (0, 1), &desk_features()).unwrap();
    let secs = d.seconds + start.elapsed().as_secs_f64();
    let ok = n >= 600 && balanced && easy.accuracy >= 0.95 && hard.accuracy > coral.accuracy && secs < 1800.0;
    check(
        ok,
        format!(
            "{n} pairs (balanced: {balanced}); RbC {{0,3}} {:.1}% on {} pairs; RbC {{0,1}} {:.1}% vs CorAl {:.1}% on {} pairs; {secs:.0}s",
            100.0 * easy.accuracy,
            easy.count,
            100.0 * hard.accuracy,
            100.0 * coral.accuracy,
            hard.count
        ),
    )
}

fn epsilon_criterion(d: &Prepared, rbc: &[Prediction]) -> Outcome {
    let reg = trained_predictions(d, LossKind::Regression);
    let r_rbc = eval_report(rbc, 5).unwrap();
    let r_reg = eval_report(&reg, 5).unwrap();
    let n = d.manifest.entries.len();
    let ok = n >= 400 && r_rbc.xi[1] <= r_reg.xi[1] && r_rbc.xi[2] <= 0.02;
    check(
        ok,
        format!(
            "{n} pairs, counts {:?}; xi_2 RbC {:.2}% vs regression {:.2}%; xi_3 RbC {:.2}%",
            d.manifest.class_counts,
            100.0 * r_rbc.xi[1],
            100.0 * r_reg.xi[1],
            100.0 * r_rbc.xi[2]
        ),
    )
}

fn metric_criterion(d: &Prepared, rbc: &[Prediction]) -> Outcome {
    let config = MetricStudyConfig { sinkhorn_points: 256, ..Default::default() };
    let study = metric_study(&d.manifest, &d.dir, Split::Test, &config, Some(rbc)).unwrap();
    let model = study.r("model").unwrap_or(f64::NAN);
    let others: Vec<(String, f64)> = STUDY_METRICS.iter().map(|m| (m.to_string(), study.r(m).map_or(0.0, f64::abs))).collect();
    let ok = others.iter().all(|(_, r)| model > *r);
    let listing: Vec<String> = others.iter().map(|(n, r)| format!("{n} {r:.3}")).collect();
    check(ok, format!("model r {model:.3} vs |r| {} on {} pairs", listing.join(", "), study.ids.len()))
}

fn correction_criterion(rbc: &[Prediction]) -> Outcome {
    let report = correct_map(rbc, 3).unwrap();
    let ok = report.high_error_fraction >= 0.05 && report.reduction >= 0.80;
    check(
        ok,
        format!(
            "{:.1}% of {} pairs have eps >= 0.25 m; {} selected; mean eps {:.4} -> {:.4} m ({:.1}% reduction)",
            100.0 * report.high_error_fraction,
            report.pair_count,
            report.selected.len(),
            report.mean_epsilon_before,
            report.mean_epsilon_after,
            100.0 * report.reduction
        ),
    )
}

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_misalign")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("misalign {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_pipeline(dir: &Path, seed: &str) -> std::result::Result<(), String> {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    std::fs::write(dir.join("run.cfg"), "fps_count = 32\nmax_sinkhorn_atoms = 16\nepochs = 20\ninits_per_pair = 3\n").map_err(|e| e.to_string())?;
    let cfg = p("run.cfg");
    let common = ["--seed", seed, "--config", cfg.as_str()];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(common.iter()).map(|s| s.to_string()).collect() };
    let steps: Vec<Vec<String>> = vec![
        with(&["gen-scenes", "--count", "4", "--poses", "3", "--out", &p("scenes.json")]),
        with(&["build-dataset", "--scenes", &p("scenes.json"), "--scheme", "synthetic10", "--out", &p("syn")]),
        with(&["featurize", "--manifest", &p("syn/manifest.json"), "--out", &p("syn/features")]),
        with(&["train", "--manifest", &p("syn/manifest.json"), "--features", &p("syn/features"), "--loss", "rbc", "--out", &p("syn/model.mmdl")]),
        with(&["build-dataset", "--scenes", &p("scenes.json"), "--scheme", "epsilon5", "--out", &p("eps")]),
    ];
    for s in &steps {
        run_cli(&s.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    Ok(())
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism_criterion() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cli_pipeline(a.path(), "3")?;
    cli_pipeline(b.path(), "3")?;
    let files = files_under(a.path());
    if files != files_under(b.path()) {
        return Err("the two runs wrote different file sets".into());
    }
    let interesting = |f: &Path| {
        let s = f.to_string_lossy();
        s.ends_with(MANIFEST_FILE) || s.ends_with(".fmap") || s.ends_with(".mmdl") || s.ends_with(".ply")
    };
    let compared: Vec<&PathBuf> = files.iter().filter(|f| interesting(f)).collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    let kinds = |ext: &str| compared.iter().filter(|f| f.to_string_lossy().ends_with(ext)).count();
    check(
        differing.is_empty() && kinds(".fmap") > 0 && kinds(".mmdl") == 1 && kinds(MANIFEST_FILE) == 2,
        if differing.is_empty() {
            format!("{} files identical ({} manifests, {} feature maps, {} model)", compared.len(), kinds(MANIFEST_FILE), kinds(".fmap"), kinds(".mmdl"))
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() {
    // Optional criterion numbers on the command line restrict the run.
    let chosen: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| chosen.is_empty() || chosen.contains(&n);
    let mut failures = 0;
    let mut ran = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        ran += 1;
        match outcome {
            Ok(detail) => println!("PASS [{n}] {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{n}] {name}: {detail}");
            }
        }
    };
    let quick: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "loss suite", loss_suite),
        (2, "sinkhorn suite", sinkhorn_suite),
        (3, "entropy suite", entropy_suite),
        (4, "geometry suite", geometry_suite),
        (5, "point-transformer layer", pt_layer_suite),
    ];
    for (n, name, f) in quick {
        if wanted(n) {
            report(n, name, f());
        }
    }

    let work = tempfile::tempdir().unwrap();
    if wanted(6) {
        let synthetic = prepare(work.path(), Scheme::Synthetic10, 30, 4, SYNTHETIC_SEED, &DatasetConfig::default());
        report(6, "synthetic10 binary accuracy", synthetic_criterion(&synthetic));
    }
    if wanted(7) || wanted(8) || wanted(9) {
        let epsilon = prepare(work.path(), Scheme::Epsilon5, 14, 5, EPSILON_SEED, &DatasetConfig { inits_per_pair: 8, ..Default::default() });
        let rbc = trained_predictions(&epsilon, LossKind::Rbc);
        if wanted(7) {
            report(7, "epsilon5 xi rates", epsilon_criterion(&epsilon, &rbc));
        }
        if wanted(8) {
            report(8, "model correlation vs alignment metrics", metric_criterion(&epsilon, &rbc));
        }
        if wanted(9) {
            report(9, "map correction", correction_criterion(&rbc));
        }
    }
    if wanted(10) {
        report(10, "determinism", determinism_criterion());
    }

    println!("{} of {ran} criteria passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
