//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bendflow::augment::{apply_transform, Transform};
use bendflow::dataset::{generate_dataset, Dataset, GenerationConfig, Sample, Split, SplitCounts, CONTAINER_FILE};
use bendflow::geometry::{build_boundary, sample_params, BendParams, ChannelBoundary, DistortionBounds, Point2, RegionPolicy};
use bendflow::nn::gradcheck::{check_layers, check_model};
use bendflow::nn::layers::{conv2d, conv_out, deconv2d};
use bendflow::nn::train::write_loss_csv;
use bendflow::nn::{train, Model, ModelConfig, Tensor, TrainConfig};
use bendflow::raster::{compute_sdf, GridSpec, ScalarField};
use bendflow::solver::{solve_flow, Axis, CrossSection, SolverConfig};
use bendflow_cli::bench::run_benchmark;
use bendflow_cli::evaluate::evaluate_test;
use bendflow_cli::median;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Brute-force distances to a 10x denser resampling of every boundary edge.
fn sdf_oracle() -> Outcome {
    let bounds = DistortionBounds::default();
    let grid = GridSpec::covering(&bounds.envelope(), 64).unwrap();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut cells = 0;
    for seed in 0..50 {
        let params = sample_params(1000 + seed, RegionPolicy::Unrestricted, &bounds).map_err(|e| e.to_string())?;
        let boundary = build_boundary(&params).map_err(|e| e.to_string())?;
        let mut dense = Vec::new();
        let mut max_sub: f64 = 0.0;
        for (a, b) in boundary.edges() {
            for k in 0..10 {
                dense.push(a.lerp(b, k as f64 / 10.0));
            }
            max_sub = max_sub.max(a.distance(b) / 10.0);
        }
        let tol = (0.5 * max_sub).max(1e-9);
        let sdf = compute_sdf(&boundary, &grid);
        for row in 0..64 {
            for col in 0..64 {
                let v = sdf.get(col, row);
                if v == 0.0 {
                    continue;
                }
                let c = grid.cell_center(col, row);
                let brute = dense.iter().map(|p| p.distance(c)).fold(f64::INFINITY, f64::min);
                worst_excess = worst_excess.max((v - brute).abs() - tol);
                cells += 1;
            }
        }
    }
    check(worst_excess <= 0.0, format!("{cells} fluid cells, worst |sdf - oracle| - tol = {worst_excess:.3e} m"))
}

fn adjoint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let k = rng.gen_range(1..=5);
        let s = rng.gen_range(1..=4);
        let p = rng.gen_range(0..k);
        let ho: usize = rng.gen_range(1..=6);
        let Some(h) = ((ho - 1) * s + k).checked_sub(2 * p).filter(|&h| h > 0) else { continue };
        assert_eq!(conv_out(h, k, s, p).unwrap(), ho);
        let (ci, co, b) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=3));
        let rand_t = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
        let w = rand_t(&[co, ci, k, k], &mut rng);
        let x = rand_t(&[b, ci, h, h], &mut rng);
        let y = rand_t(&[b, co, ho, ho], &mut rng);
        let l = conv2d(&x, &w, None, s, p).unwrap().dot(&y);
        let r = x.dot(&deconv2d(&y, &w, None, s, p).unwrap());
        worst = worst.max((l - r).abs() / l.abs().max(r.abs()).max(1e-300));
        cases += 1;
    }
    check(worst <= 1e-10, format!("{cases} cases, worst relative mismatch {worst:.2e}"))
}

fn gradients() -> Outcome {
    let mut reports = check_layers(7).map_err(|e| e.to_string())?;
    for residual in [true, false] {
        let cfg = ModelConfig { use_residual: residual, ..ModelConfig::tiny() };
        reports.extend(check_model(&cfg, 21).map_err(|e| e.to_string())?);
    }
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    check(
        reports.iter().all(|r| r.passes(1e-4)),
        format!("{checked} derivatives, worst {:.2e} ({})", worst.max_rel_error, worst.label),
    )
}

fn solver_physics() -> Outcome {
    let w = 0.1;
    let straight = ChannelBoundary::straight(w, 20.0 * w).map_err(|e| e.to_string())?;
    let cfg = SolverConfig { channel_width: w, inlet_velocity: 1.0, max_iterations: 20_000, ..Default::default() }
        .with_effective_reynolds(100.0);
    let f = solve_flow(&straight, &cfg).map_err(|e| e.to_string())?;
    let profile = f.profile(&CrossSection { axis: Axis::X, coord: 19.0 * w, lo: 0.0, hi: w }).map_err(|e| e.to_string())?;
    let inner: Vec<f64> = profile.into_iter().filter(|v| *v != 0.0).collect();
    let m = inner.len();
    let centre = if m % 2 == 1 { inner[m / 2] } else { 0.5 * (inner[m / 2 - 1] + inner[m / 2]) };
    let ratio = centre / 1.0;
    let poiseuille_ok = (ratio - 1.5).abs() <= 0.05 * 1.5;

    let bounds = DistortionBounds::default();
    let mut params = vec![BendParams::conventional(bounds.width, bounds.leg_length)];
    for seed in 0..5 {
        params.push(sample_params(seed, RegionPolicy::Unrestricted, &bounds).map_err(|e| e.to_string())?);
    }
    let mut worst: f64 = 0.0;
    let mut converged = 0;
    for p in &params {
        let b = build_boundary(p).map_err(|e| e.to_string())?;
        let Ok(f) = solve_flow(&b, &SolverConfig::default()) else { continue };
        converged += 1;
        let q = f.inlet_flux;
        let sections = [
            (CrossSection { axis: Axis::Y, coord: -0.15, lo: -0.2, hi: 0.0 }, 1.0),
            (CrossSection { axis: Axis::X, coord: 0.0, lo: 0.0, hi: 0.2 }, 1.0),
            (CrossSection { axis: Axis::Y, coord: -0.15, lo: 0.0, hi: 0.2 }, -1.0),
        ];
        for (s, sign) in sections {
            let flux = sign * f.section_flux(&s).map_err(|e| e.to_string())?;
            worst = worst.max((flux - q).abs() / q);
        }
    }
    check(
        poiseuille_ok && worst <= 1e-3 && converged > 0,
        format!("centerline ratio {ratio:.4}; {converged}/{} bends converged, worst flux error {worst:.2e}", params.len()),
    )
}

fn random_sample(n: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GridSpec::new(n, Point2::ZERO, 1.0).unwrap();
    let mask = ScalarField::from_fn(g, |_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 });
    let mut field = || {
        let mut f = ScalarField::from_fn(g, |_| rng.gen_range(-10.0..10.0));
        for (v, m) in f.values.iter_mut().zip(&mask.values) {
            *v *= m;
        }
        f
    };
    let (vx, vy, sdf) = (field(), field(), field().map(f64::abs));
    Sample { id: seed as usize, params: BendParams::conventional(0.075, 0.3), binary: mask.clone(), sdf, mask, vx, vy, split: Split::Train }
}

fn divergence(vx: &ScalarField, vy: &ScalarField, col: usize, row: usize) -> f64 {
    0.5 * (vx.get(col + 1, row) - vx.get(col - 1, row)) + 0.5 * (vy.get(col, row + 1) - vy.get(col, row - 1))
}

fn augmentation() -> Outcome {
    let n = 24;
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for seed in 0..20 {
        let s = random_sample(n, seed);
        let mut r = s.clone();
        for _ in 0..4 {
            r = apply_transform(&r, Transform::Rotate);
        }
        let f = apply_transform(&apply_transform(&s, Transform::Flip), Transform::Flip);
        exact &= r == s && f == s;
        for t in Transform::ALL {
            let a = apply_transform(&s, t);
            let mut div = ScalarField::zeros(s.vx.grid);
            for row in 1..n - 1 {
                for col in 1..n - 1 {
                    div.set(col, row, divergence(&s.vx, &s.vy, col, row));
                }
            }
            let moved = t.apply_scalar(&div);
            let moved_mask = t.apply_scalar(&s.mask);
            for row in 1..n - 1 {
                for col in 1..n - 1 {
                    if moved_mask.get(col, row) == 0.0 {
                        continue;
                    }
                    worst = worst.max((divergence(&a.vx, &a.vy, col, row) - moved.get(col, row)).abs());
                }
            }
        }
    }
    check(exact && worst <= 1e-10, format!("group identities exact: {exact}; worst divergence mismatch {worst:.2e}"))
}

struct Desk {
    ds: Dataset,
    mean_speed: f64,
    /// Test RMSE per seed for SDF/RC/DA and SDF/noRC/noDA.
    full: Vec<(f64, Model)>,
    plain: Vec<f64>,
    _dir: tempfile::TempDir,
}

fn desk_run() -> Result<Desk, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = GenerationConfig { counts: SplitCounts::DESK, n: 64, seed: 2024, ..GenerationConfig::default() };
    generate_dataset(dir.path(), &cfg).map_err(|e| e.to_string())?;
    let ds = Dataset::open(dir.path()).map_err(|e| e.to_string())?;
    let tr = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
    let va = ds.load_split(Split::Val).map_err(|e| e.to_string())?;
    let te = ds.load_split(Split::Test).map_err(|e| e.to_string())?;
    let mean_speed = te.iter().map(Sample::mean_speed).sum::<f64>() / te.len() as f64;
    let refs: Vec<&Sample> = te.iter().collect();
    let mut full = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..3u64 {
        for (residual, augment) in [(true, true), (false, false)] {
            let mc = ModelConfig { use_residual: residual, init_seed: seed, ..ModelConfig::default_for(64) };
            let mut tc = TrainConfig { epochs: 100, seed, ..TrainConfig::default() };
            tc.augment.enabled = augment;
            let out = train(&mc, &tr, &va, &ds.manifest.stats, &tc).map_err(|e| e.to_string())?;
            let rmse = bendflow::nn::train::mean_rmse(&out.model, &refs, &ds.manifest.stats).map_err(|e| e.to_string())?;
            report_progress(&format!("  seed {seed} residual={residual} augment={augment}: test rmse {rmse:.4} m/s"));
            if residual {
                full.push((rmse, out.model));
            } else {
                plain.push(rmse);
            }
        }
    }
    Ok(Desk { ds, mean_speed, full, plain, _dir: dir })
}

fn desk_learning(desk: &Desk) -> Outcome {
    let full: Vec<f64> = desk.full.iter().map(|f| f.0).collect();
    let (mf, mp) = (median(&full), median(&desk.plain));
    let frac = mf / desk.mean_speed;
    check(
        frac <= 0.15 && mf <= mp,
        format!(
            "median SDF/RC/DA {mf:.4} m/s = {:.1}% of mean speed {:.3} m/s; median SDF/noRC/noDA {mp:.4} m/s; seeds {full:.4?} vs {:.4?}",
            100.0 * frac,
            desk.mean_speed,
            desk.plain
        ),
    )
}

fn median_model(desk: &Desk) -> &Model {
    let mut order: Vec<usize> = (0..desk.full.len()).collect();
    order.sort_by(|&a, &b| desk.full[a].0.total_cmp(&desk.full[b].0));
    &desk.full[order[order.len() / 2]].1
}

fn generalization(desk: &Desk) -> Outcome {
    let rep = evaluate_test(&desk.ds, median_model(desk)).map_err(|e| e.to_string())?;
    let (r, o) = (rep.restricted_rmse_mps, rep.other_rmse_mps);
    check(
        r.is_finite() && o.is_finite() && rep.restricted_count > 0 && r <= 2.0 * o,
        format!("restricted {r:.4} m/s over {} samples, elsewhere {o:.4} m/s over {}", rep.restricted_count, rep.other_count),
    )
}

fn speedup(desk: &Desk) -> Outcome {
    let rep = run_benchmark(&desk.ds, median_model(desk), 10).map_err(|e| e.to_string())?;
    let per = |label: &str| rep.rows.iter().find(|r| r.label == label).map_or(f64::NAN, |r| r.per_eval_s);
    check(
        rep.speedup_batched >= 10.0,
        format!(
            "solver {:.4} s/eval, surrogate {:.5} s/eval batched ({:.1}x), {:.5} s/eval unbatched ({:.1}x)",
            per("solver"),
            per("surrogate batched"),
            rep.speedup_batched,
            per("surrogate unbatched"),
            rep.speedup_unbatched
        ),
    )
}

fn determinism_run(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let cfg = GenerationConfig { counts: SplitCounts { train: 5, val: 2, test: 2 }, n: 64, seed: 9, ..GenerationConfig::default() };
    generate_dataset(dir, &cfg).map_err(|e| e.to_string())?;
    let ds = Dataset::open(dir).map_err(|e| e.to_string())?;
    let tr = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
    let va = ds.load_split(Split::Val).map_err(|e| e.to_string())?;
    let tc = TrainConfig { epochs: 2, batch_size: 2, seed: 3, ..TrainConfig::default() };
    let out = train(&ModelConfig::default_for(64), &tr, &va, &ds.manifest.stats, &tc).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &out.history).map_err(|e| e.to_string())?;
    Ok((fs::read(dir.join(CONTAINER_FILE)).map_err(|e| e.to_string())?, csv))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (da, la) = determinism_run(a.path())?;
    let (db, lb) = determinism_run(b.path())?;
    check(da == db && la == lb, format!("container {} bytes identical: {}; loss csv identical: {}", da.len(), da == db, la == lb))
}

fn report_progress(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    let mut record = |id: u32, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(d) => format!("PASS criterion {id} ({name}, {secs:.1} s): {d}"),
            Err(d) => {
                failed += 1;
                format!("FAIL criterion {id} ({name}, {secs:.1} s): {d}")
            }
        };
        report_progress(&line);
    };

    let t = Instant::now();
    record(1, "sdf oracle", t, sdf_oracle());
    let t = Instant::now();
    record(2, "conv/deconv adjoint", t, adjoint());
    let t = Instant::now();
    record(3, "gradient checks", t, gradients());
    let t = Instant::now();
    record(4, "solver physics", t, solver_physics());
    let t = Instant::now();
    record(5, "augmentation equivariance", t, augmentation());

    let t = Instant::now();
    report_progress("generating the desk dataset and training 3 seeds x 2 variants ...");
    match desk_run() {
        Ok(desk) => {
            record(6, "desk-scale learning", t, desk_learning(&desk));
            let t = Instant::now();
            record(7, "generalization probe", t, generalization(&desk));
            let t = Instant::now();
            record(8, "speed-up", t, speedup(&desk));
        }
        Err(e) => {
            record(6, "desk-scale learning", t, Err(e.clone()));
            record(7, "generalization probe", t, Err(format!("no trained model: {e}")));
            record(8, "speed-up", t, Err(format!("no trained model: {e}")));
        }
    }
    let t = Instant::now();
    record(9, "determinism", t, determinism());

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        report_progress(&format!("{failed} acceptance criteria failed"));
        ExitCode::FAILURE
    }
}
