//! Test-split scoring and the restricted-region generalization probe.

use std::io::{self, Write};

use bendflow::dataset::{Dataset, Sample, Split};
use bendflow::geometry::build_boundary;
use bendflow::nn::train::sample_rmse;
use bendflow::nn::Model;

use crate::CliResult;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: usize,
    pub rmse_mps: f64,
    pub mean_speed_mps: f64,
    /// Whether the geometry enters the region withheld from training.
    pub restricted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<SampleScore>,
    pub mean_rmse_mps: f64,
    pub mean_speed_mps: f64,
    pub restricted_rmse_mps: f64,
    pub restricted_count: usize,
    pub other_rmse_mps: f64,
    pub other_count: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

pub fn evaluate_samples(ds: &Dataset, model: &Model, samples: &[Sample]) -> CliResult<EvalReport> {
    let rect = ds.manifest.bounds.restricted_rect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let rmse = sample_rmse(model, &refs, &ds.manifest.stats)?;
    let mut scores = Vec::with_capacity(samples.len());
    for (s, r) in samples.iter().zip(rmse) {
        let restricted = build_boundary(&s.params)?.intersects_rect(&rect);
        scores.push(SampleScore { id: s.id, rmse_mps: r, mean_speed_mps: s.mean_speed(), restricted });
    }
    let pick = |flag: bool| scores.iter().filter(move |s| s.restricted == flag).map(|s| s.rmse_mps);
    Ok(EvalReport {
        mean_rmse_mps: mean(scores.iter().map(|s| s.rmse_mps)),
        mean_speed_mps: mean(scores.iter().map(|s| s.mean_speed_mps)),
        restricted_rmse_mps: mean(pick(true)),
        restricted_count: pick(true).count(),
        other_rmse_mps: mean(pick(false)),
        other_count: pick(false).count(),
        scores,
    })
}

pub fn evaluate_test(ds: &Dataset, model: &Model) -> CliResult<EvalReport> {
    let test = ds.load_split(Split::Test)?;
    evaluate_samples(ds, model, &test)
}

pub fn write_scores_csv<W: Write>(mut w: W, report: &EvalReport) -> io::Result<()> {
    writeln!(w, "id,rmse_mps,mean_speed_mps,restricted")?;
    for s in &report.scores {
        writeln!(w, "{},{:.6},{:.6},{}", s.id, s.rmse_mps, s.mean_speed_mps, s.restricted)?;
    }
    Ok(())
}
