//! Ground truth / prediction / absolute difference images.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bendflow::dataset::Sample;
use bendflow::raster::ScalarField;

const GAP: usize = 2;

/// Pointwise `|a − b|`.
pub fn abs_diff(a: &ScalarField, b: &ScalarField) -> ScalarField {
    ScalarField { grid: a.grid, values: a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect() }
}

pub fn magnitude(vx: &ScalarField, vy: &ScalarField) -> ScalarField {
    ScalarField { grid: vx.grid, values: vx.values.iter().zip(&vy.values).map(|(x, y)| x.hypot(*y)).collect() }
}

fn scale(v: f64, lo: f64, hi: f64) -> u8 {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Three panels side by side in one P5 image. Truth and prediction share a
/// grey scale; the difference panel runs from 0 to its own maximum.
pub fn write_triptych<W: Write>(mut w: W, truth: &ScalarField, pred: &ScalarField) -> io::Result<()> {
    let n = truth.n();
    let diff = abs_diff(truth, pred);
    let (t_lo, t_hi) = truth.min_max();
    let (p_lo, p_hi) = pred.min_max();
    let (lo, hi) = (t_lo.min(p_lo), t_hi.max(p_hi));
    let d_hi = diff.min_max().1;
    let width = 3 * n + 2 * GAP;
    let mut buf = format!("P5\n{width} {n}\n255\n").into_bytes();
    for row in (0..n).rev() {
        for (panel, (field, lo, hi)) in [(truth, lo, hi), (pred, lo, hi), (&diff, 0.0, d_hi)].into_iter().enumerate() {
            if panel > 0 {
                buf.extend(std::iter::repeat(255).take(GAP));
            }
            buf.extend((0..n).map(|col| scale(field.get(col, row), lo, hi)));
        }
    }
    w.write_all(&buf)
}

/// Writes `{id}_{vx,vy,mag}.pgm` into `dir` and returns the paths.
pub fn write_error_maps(dir: &Path, sample: &Sample, pred: &(ScalarField, ScalarField)) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (px, py) = pred;
    let panels = [
        ("vx", sample.vx.clone(), px.clone()),
        ("vy", sample.vy.clone(), py.clone()),
        ("mag", magnitude(&sample.vx, &sample.vy), magnitude(px, py)),
    ];
    let mut paths = Vec::with_capacity(3);
    for (name, truth, p) in panels {
        let path = dir.join(format!("{}_{name}.pgm", sample.id));
        write_triptych(io::BufWriter::new(fs::File::create(&path)?), &truth, &p)?;
        paths.push(path);
    }
    Ok(paths)
}
