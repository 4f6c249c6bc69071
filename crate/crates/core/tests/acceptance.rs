//! Acceptance report. Prints one PASS/FAIL line per criterion and exits
//! zero once every criterion has been evaluated; a FAIL line is a result,
//! not a harness error.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use adampnp::forward::{
    apply, select_ca_atoms, select_ca_pairs, simulate_measurement, DensityGridSpec,
    ForwardOperator, Measurement, MeasurementMeta,
};
use adampnp::geometry::{ca_rmsd, kabsch_points, synthetic, Backbone};
use adampnp::harness::{
    emit_tables, summarize_noise, summarize_sparsity, Experiment, ExperimentConfig, ResultRecord,
};
use adampnp::prior::{
    CovarianceFactor, CovarianceKind, NoiseSchedule,
};
use adampnp::sampler::modality_gradient;
use common::{
    brute_force_rmsd, cloud, denoiser_vs_affine, dot, naive_jvp, rotate, two_component_prior,
};
use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn emit(line: &Line, seconds: f64) {
    let status = if line.passed { "PASS" } else { "FAIL" };
    println!("{status} [{}] {}: {} ({seconds:.1} s)", line.id, line.name, line.detail);
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn log_likelihood(z: &[f64], m: &Measurement, sigma_sq: f64, r: &CovarianceFactor) -> f64 {
    let f = apply(&r.unwhiten(z).unwrap(), &m.meta).unwrap();
    -m.y.iter().zip(&f).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / (2.0 * sigma_sq)
}

fn gradients(start: Instant) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let coords: Vec<f64> = (0..16 * 12).map(|_| rng.random_range(-4.0..4.0)).collect();
    let b = Backbone::new(coords).unwrap();
    let metas = [
        MeasurementMeta::P {
            atoms: select_ca_atoms(&b, 8, 1).unwrap(),
        },
        MeasurementMeta::D {
            pairs: select_ca_pairs(&b, 60, 1).unwrap(),
        },
        MeasurementMeta::E {
            grid: DensityGridSpec {
                origin: [-9.0; 3],
                extent: [18.0; 3],
                spacing: 1.0,
                atom_width: 0.8,
                resolution_cutoff: 2.0,
            },
        },
    ];
    let (mut worst_fd, mut worst_adj) = (0.0f64, 0.0f64);
    for meta in &metas {
        let m = simulate_measurement(meta, &b, 0.1, 7).unwrap();
        for r in [
            CovarianceFactor::new(CovarianceKind::Identity, b.n_atoms(), 10.0).unwrap(),
            CovarianceFactor::new(CovarianceKind::Chain, b.n_atoms(), 2.0).unwrap(),
        ] {
            let mut z = r.whiten(b.coords()).unwrap();
            z.iter_mut().for_each(|v| *v += 0.005 * rng.sample::<f64, _>(StandardNormal));
            let g = modality_gradient(&z, &m, 0.01, &r).unwrap();
            let d = gaussian_vec(&mut rng, z.len());
            let h = 1e-5;
            let at = |s: f64| -> Vec<f64> { z.iter().zip(&d).map(|(a, b)| a + s * h * b).collect() };
            let fd = (log_likelihood(&at(1.0), &m, 0.01, &r) - log_likelihood(&at(-1.0), &m, 0.01, &r)) / (2.0 * h);
            let an = dot(&g, &d);
            worst_fd = worst_fd.max((fd - an).abs() / an.abs().max(fd.abs()));
        }
        let op = ForwardOperator::new(meta, b.n_atoms()).unwrap();
        let x = b.coords();
        let d = gaussian_vec(&mut rng, x.len());
        let u = gaussian_vec(&mut rng, op.output_len());
        let (lhs, rhs) = (dot(&naive_jvp(meta, x, &d), &u), dot(&d, &op.vjp(x, &u).unwrap().grad));
        worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    Line {
        id: 1,
        name: "gradient correctness",
        passed: worst_fd <= 1e-4 && worst_adj <= 1e-8 && secs < 10.0,
        detail: format!(
            "max finite-difference rel err {worst_fd:.2e} (tol 1e-4), max adjoint rel err {worst_adj:.2e} (tol 1e-8), limit 10 s"
        ),
    }
}

fn calibration(start: Instant, records: &mut Vec<ResultRecord>) -> Line {
    let cfg = ExperimentConfig::from_json(r#"{"combos": ["D"], "noise_levels": [0.05, 0.1, 0.2], "seeds": [1, 2, 3]}"#)
        .unwrap();
    let out = Experiment::new(cfg).unwrap().run_noise_estimation_report().unwrap();
    let rows = summarize_noise(&out.records);
    records.extend(out.records);
    let secs = start.elapsed().as_secs_f64();
    let means: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.sigma, r.mean_sigma_hat.unwrap_or(f64::NAN)))
        .collect();
    let close = means.iter().all(|(s, m)| (m - s).abs() <= 0.06);
    let monotone = means.windows(2).all(|w| w[1].1 > w[0].1);
    let levels: Vec<String> = means
        .iter()
        .map(|(s, m)| format!("sigma {s}: mean sigma_hat {m:.3} (err {:.3})", (m - s).abs()))
        .collect();
    Line {
        id: 2,
        name: "noise-estimation calibration",
        passed: close && monotone && secs < 300.0,
        detail: format!("{}; within 0.06: {close}; monotone: {monotone}; limit 300 s", levels.join(", ")),
    }
}

fn fusion_ordering(start: Instant, records: &mut Vec<ResultRecord>) -> Line {
    let exp = Experiment::new(ExperimentConfig::default()).unwrap();
    let out = exp.run_combo_sweep().unwrap();
    let secs = start.elapsed().as_secs_f64();
    // Per seed, mean RMSD over noise levels for each combination.
    let mut sums: BTreeMap<(u64, String), (f64, usize)> = BTreeMap::new();
    for r in &out.records {
        let e = sums.entry((r.seed, r.combo.clone())).or_insert((0.0, 0));
        e.0 += r.rmsd.unwrap_or(f64::NAN);
        e.1 += 1;
    }
    let mean = |seed: u64, c: &str| sums.get(&(seed, c.to_string())).map_or(f64::NAN, |(s, n)| s / *n as f64);
    let seeds = &exp.config().seeds;
    let mut good = 0;
    let mut parts = Vec::new();
    for &s in seeds {
        let (p, d, pd, e) = (mean(s, "P"), mean(s, "D"), mean(s, "P+D"), mean(s, "E"));
        let ok = pd <= p && p <= d && e > 5.0;
        good += usize::from(ok);
        parts.push(format!("seed {s}: P+D {pd:.3} P {p:.3} D {d:.3} E {e:.3} {}", if ok { "ok" } else { "no" }));
    }
    records.extend(out.records);
    Line {
        id: 3,
        name: "modality-fusion ordering",
        passed: good * 3 >= 2 * seeds.len() && secs < 600.0,
        detail: format!("{}; {good}/{} seeds hold; limit 600 s", parts.join(", "), seeds.len()),
    }
}

fn sparsity_trend(start: Instant, records: &mut Vec<ResultRecord>) -> Line {
    let cfg = ExperimentConfig::from_json(r#"{"noise_levels": [0.05]}"#).unwrap();
    let out = Experiment::new(cfg).unwrap().run_sparsity_sweep().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rows = summarize_sparsity(&out.records);
    records.extend(out.records);
    let means: Vec<f64> = rows.iter().map(|r| r.mean_rmsd.unwrap_or(f64::NAN)).collect();
    let strict = means.last().unwrap() < means.first().unwrap();
    let slack = means.windows(2).all(|w| w[1] <= w[0] + 0.3);
    let table: Vec<String> = rows
        .iter()
        .zip(&means)
        .map(|(r, m)| format!("{}/{}: {m:.3}", r.partial_count.unwrap_or(0), r.distance_count.unwrap_or(0)))
        .collect();
    Line {
        id: 4,
        name: "sparsity trend",
        passed: strict && slack && secs < 900.0,
        detail: format!(
            "partial/distances: {}; densest below sparsest: {strict}; non-increasing within 0.3: {slack}; limit 900 s",
            table.join(", ")
        ),
    }
}

fn weight_invariants(records: &[ResultRecord]) -> Line {
    let violations = records
        .iter()
        .filter(|r| r.error.as_deref().is_some_and(|e| e.starts_with("invariant")))
        .count();
    let other = records.iter().filter(|r| r.error.is_some()).count() - violations;
    Line {
        id: 5,
        name: "weight invariants",
        passed: violations == 0 && other == 0 && !records.is_empty(),
        detail: format!(
            "{} runs checked in-loop (sum of weights = M within 1e-9, sigma_hat^2 >= eps); {violations} invariant violations, {other} other errors",
            records.len()
        ),
    }
}

fn kabsch_oracle(start: Instant) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    let mut below = false;
    for _ in 0..20 {
        let reference = cloud(&mut rng, 10, 3.0);
        let axis = Unit::new_normalize(Vector3::new(rng.random(), rng.random(), rng.random::<f64>() - 0.5));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..3.0));
        let mut mobile = rotate(&reference, &rot, [2.0, 0.5, -1.0]);
        for p in &mut mobile {
            p.iter_mut().for_each(|c| *c += 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
        let kabsch = kabsch_points(&mobile, &reference).unwrap().rmsd;
        let brute = brute_force_rmsd(&mobile, &reference);
        worst = worst.max((kabsch - brute).abs());
        below |= kabsch > brute + 1e-9;
    }
    let b = synthetic::helical_bundle();
    let self_rmsd = ca_rmsd(&b, &b).unwrap();
    let secs = start.elapsed().as_secs_f64();
    Line {
        id: 6,
        name: "Kabsch oracle",
        passed: worst < 1e-6 && !below && self_rmsd == 0.0 && secs.is_finite(),
        detail: format!("max |kabsch - search| {worst:.2e} over 20 instances (tol 1e-6), RMSD(b, b) = {self_rmsd:e}"),
    }
}

fn denoiser_optimality() -> Line {
    let sched = NoiseSchedule::default();
    let prior = two_component_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut parts = Vec::new();
    let mut all = true;
    for t in [1, 10, 50, 100, 150, 200] {
        let (mix, aff, se) = denoiser_vs_affine(&prior, &sched, t, 10_000, &mut rng);
        all &= mix < aff;
        let mut part = format!("t={t}: {mix:.6e} vs {aff:.6e} (gap {:.1e} ± {se:.1e})", aff - mix);
        if (aff - mix).abs() < 2.0 * se {
            // Informational only: the 10k verdict above stands.
            let mut extra = ChaCha8Rng::seed_from_u64(9_000 + t as u64);
            let (m, a, s) = denoiser_vs_affine(&prior, &sched, t, 400_000, &mut extra);
            part.push_str(&format!(" [unresolved at 10k; 400k pairs: gap {:.1e} ± {s:.1e}]", a - m));
        }
        parts.push(part);
    }
    Line {
        id: 7,
        name: "denoiser optimality",
        passed: all,
        detail: format!("mixture vs best affine MSE, 10k pairs, 2 components: {}", parts.join(", ")),
    }
}

fn table_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("structures")] {
        let mut paths: Vec<_> = fs::read_dir(&sub).unwrap().map(|e| e.unwrap().path()).collect();
        paths.sort();
        for p in paths {
            // Wall-clock timings are the one intentionally non-deterministic table.
            if p.is_file() && p.file_name().unwrap() != "timings.csv" {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files
}

fn determinism(records: &mut Vec<ResultRecord>) -> Line {
    let mut cfg = ExperimentConfig::default();
    cfg.schedule.n_steps = 60;
    cfg.samples_per_run = 2;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let out = Experiment::new(cfg.clone()).unwrap().run_combo_sweep().unwrap();
        emit_tables(&out, dir.path()).unwrap();
        records.extend(out.records);
    }
    let (a, b) = (table_bytes(dirs[0].path()), table_bytes(dirs[1].path()));
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    Line {
        id: 8,
        name: "determinism",
        passed: differing == 0 && !a.is_empty(),
        detail: format!("two combo sweeps, {} output files compared byte for byte, {differing} differ", a.len()),
    }
}

fn identities() -> Line {
    let b = synthetic::helical_bundle();
    let mut round = 0.0f64;
    for (kind, scale) in [(CovarianceKind::Identity, 10.0), (CovarianceKind::Chain, 3.8)] {
        let r = CovarianceFactor::new(kind, b.n_atoms(), scale).unwrap();
        let back = r.unwhiten(&r.whiten(b.coords()).unwrap()).unwrap();
        for (x, y) in back.iter().zip(b.coords()) {
            round = round.max((x - y).abs());
        }
    }
    let s = NoiseSchedule::default();
    let mut comp = 0.0f64;
    for t in 1..=s.n_steps() {
        let a = s.forward_alpha(t);
        comp = comp.max((s.alpha_bar(t) - a * a * s.alpha_bar(t - 1)).abs());
        comp = comp.max((s.tau(t).powi(2) - (a * a * s.tau(t - 1).powi(2) + s.forward_tau(t).powi(2))).abs());
        comp = comp.max((s.alpha_bar(t) + s.tau(t).powi(2) - 1.0).abs());
    }
    Line {
        id: 9,
        name: "whitening and schedule identities",
        passed: round <= 1e-10 && comp <= 1e-10,
        detail: format!("round-trip max err {round:.2e} Å, composition max err {comp:.2e} over all t (tol 1e-10)"),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Criterion numbers on the command line restrict the run to those.
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: u32| only.is_empty() || only.contains(&id);
    let total = Instant::now();
    let mut records = Vec::new();
    let (mut passed, mut ran) = (0, 0);
    let mut run = |f: &mut dyn FnMut() -> Line| {
        let start = Instant::now();
        let line = f();
        emit(&line, start.elapsed().as_secs_f64());
        passed += usize::from(line.passed);
        ran += 1;
    };
    if want(1) {
        run(&mut || gradients(Instant::now()));
    }
    if want(2) {
        run(&mut || calibration(Instant::now(), &mut records));
    }
    if want(3) {
        run(&mut || fusion_ordering(Instant::now(), &mut records));
    }
    if want(4) {
        run(&mut || sparsity_trend(Instant::now(), &mut records));
    }
    if want(6) {
        run(&mut || kabsch_oracle(Instant::now()));
    }
    if want(7) {
        run(&mut denoiser_optimality);
    }
    if want(8) {
        run(&mut || determinism(&mut records));
    }
    if want(9) {
        run(&mut identities);
    }
    if want(5) {
        run(&mut || weight_invariants(&records));
    }
    println!(
        "acceptance: {passed}/{ran} criteria passed in {:.1} s",
        total.elapsed().as_secs_f64()
    );
}
