//! Wall-clock comparison of surrogate inference against the flow solver.

use std::io::{self, Write};
use std::time::Instant;

use bendflow::dataset::{Dataset, Split};
use bendflow::geometry::build_boundary;
use bendflow::nn::{Model, Tensor};
use bendflow::raster::{compute_sdf, rasterize_binary, FieldKind};
use bendflow::solver::solve_flow;

use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub label: String,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub per_eval_s: f64,
    /// Published figure rather than a measurement.
    pub reference: bool,
}

impl TimingRow {
    pub fn measured(label: &str, evaluations: usize, wall_time_s: f64) -> Self {
        Self { label: label.into(), evaluations, wall_time_s, per_eval_s: wall_time_s / evaluations as f64, reference: false }
    }

    fn published(label: &str, evaluations: usize, wall_time_s: f64) -> Self {
        Self { reference: true, ..Self::measured(label, evaluations, wall_time_s) }
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<TimingRow>,
    /// Solver time per geometry over batched surrogate time per geometry.
    pub speedup_batched: f64,
    pub speedup_unbatched: f64,
}

pub fn published_rows() -> Vec<TimingRow> {
    vec![
        TimingRow::published("published 1x CNN on CPU", 1, 0.826),
        TimingRow::published("published 1x CFD on 4 CPU cores", 1, 12.6),
        TimingRow::published("published 900x CFD on 4 CPU cores", 900, 11340.0),
    ]
}

/// Times `k` test geometries through both paths. Surrogate time includes
/// rasterizing the geometry; solver time includes building the boundary.
pub fn run_benchmark(ds: &Dataset, model: &Model, k: usize) -> CliResult<BenchReport> {
    let m = &ds.manifest;
    let records: Vec<_> = m.records.iter().filter(|r| r.split == Split::Test).take(k).collect();
    if records.is_empty() {
        return Err(CliError::Config("bench needs at least one test geometry".into()));
    }
    let k = records.len();
    let params = records.iter().map(|r| m.params(r)).collect::<Result<Vec<_>, _>>()?;
    let kind = model.config().input_kind;
    let geo = m.stats.get(kind)?;
    let n = m.grid.n;

    let prepare = |p| -> CliResult<(Vec<f64>, Vec<f64>)> {
        let boundary = build_boundary(p)?;
        let binary = rasterize_binary(&boundary, &m.grid);
        let rep = if kind == FieldKind::Sdf { compute_sdf(&boundary, &m.grid) } else { binary.clone() };
        Ok((rep.values.iter().map(|v| (v - geo.mean) / geo.std).collect(), binary.values))
    };

    let t = Instant::now();
    for chunk in params.chunks(32) {
        let mut input = Vec::with_capacity(chunk.len() * n * n);
        let mut mask = Vec::with_capacity(input.capacity());
        for p in chunk {
            let (i, mk) = prepare(p)?;
            input.extend(i);
            mask.extend(mk);
        }
        let shape = [chunk.len(), 1, n, n];
        model.predict(&Tensor::from_vec(&shape, input)?, &Tensor::from_vec(&shape, mask)?)?;
    }
    let batched = TimingRow::measured("surrogate batched", k, t.elapsed().as_secs_f64());

    let t = Instant::now();
    for p in &params {
        let (i, mk) = prepare(p)?;
        let shape = [1, 1, n, n];
        model.predict(&Tensor::from_vec(&shape, i)?, &Tensor::from_vec(&shape, mk)?)?;
    }
    let unbatched = TimingRow::measured("surrogate unbatched", k, t.elapsed().as_secs_f64());

    let t = Instant::now();
    for p in &params {
        solve_flow(&build_boundary(p)?, &m.solver)?;
    }
    let solver = TimingRow::measured("solver", k, t.elapsed().as_secs_f64());

    let speedup_batched = solver.per_eval_s / batched.per_eval_s;
    let speedup_unbatched = solver.per_eval_s / unbatched.per_eval_s;
    let mut rows = vec![batched, unbatched, solver];
    rows.extend(published_rows());
    Ok(BenchReport { rows, speedup_batched, speedup_unbatched })
}

pub fn write_timing_csv<W: Write>(mut w: W, rows: &[TimingRow]) -> io::Result<()> {
    writeln!(w, "label,evaluations,wall_time_s,per_eval_s,source")?;
    for r in rows {
        let source = if r.reference { "published" } else { "measured" };
        writeln!(w, "{},{},{:.6},{:.6},{source}", r.label, r.evaluations, r.wall_time_s, r.per_eval_s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_evaluation_per_eval_is_wall_time() {
        let r = TimingRow::measured("x", 1, 0.25);
        assert_eq!(r.per_eval_s, r.wall_time_s);
        let p = published_rows();
        assert_eq!(p[2].per_eval_s, 12.6);
    }
}
