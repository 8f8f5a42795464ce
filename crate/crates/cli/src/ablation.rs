//! The five-variant input/residual/augmentation comparison.

use std::io::{self, Write};

use bendflow::dataset::{Dataset, Split};
use bendflow::nn::train::mean_rmse;
use bendflow::raster::FieldKind;

use crate::{train_on, CliResult, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub input: FieldKind,
    pub residual: bool,
    pub augment: bool,
    /// Published test RMSE for this variant, m/s.
    pub published_rmse: f64,
}

impl Variant {
    pub fn label(&self) -> String {
        let input = if self.input == FieldKind::Sdf { "SDF" } else { "BIG" };
        let rc = if self.residual { "RC" } else { "noRC" };
        let da = if self.augment { "DA" } else { "noDA" };
        format!("{input}/{rc}/{da}")
    }
}

pub const VARIANTS: [Variant; 5] = [
    Variant { input: FieldKind::Sdf, residual: false, augment: false, published_rmse: 0.1071 },
    Variant { input: FieldKind::Sdf, residual: true, augment: false, published_rmse: 0.0820 },
    Variant { input: FieldKind::Sdf, residual: false, augment: true, published_rmse: 0.0673 },
    Variant { input: FieldKind::Sdf, residual: true, augment: true, published_rmse: 0.0350 },
    Variant { input: FieldKind::Binary, residual: true, augment: true, published_rmse: 0.009 },
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean per-sample masked RMSE on the test split, m/s; `Err` holds the
    /// training failure message.
    pub test_rmse_mps: Result<f64, String>,
}

/// Trains and scores one variant; failures are reported in the row.
pub fn run_variant(ds: &Dataset, base: &RunConfig, variant: Variant) -> CliResult<AblationRow> {
    let cfg = base.with_variant(variant.input, variant.residual, variant.augment);
    let test = ds.load_split(Split::Test)?;
    let refs: Vec<_> = test.iter().collect();
    let test_rmse_mps = match train_on(ds, &cfg) {
        Ok(outcome) => Ok(mean_rmse(&outcome.model, &refs, &ds.manifest.stats)?),
        Err(e) => Err(e.to_string()),
    };
    log::info!("{}: {:?}", variant.label(), test_rmse_mps);
    Ok(AblationRow { variant, test_rmse_mps })
}

pub fn run_ablation(ds: &Dataset, base: &RunConfig) -> CliResult<Vec<AblationRow>> {
    VARIANTS.iter().map(|&v| run_variant(ds, base, v)).collect()
}

pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> io::Result<()> {
    writeln!(w, "input,residual,augmentation,test_rmse_mps,published_rmse_mps,status")?;
    for r in rows {
        let v = r.variant;
        let (rmse, status) = match &r.test_rmse_mps {
            Ok(x) => (format!("{x:.6}"), "ok".to_string()),
            Err(e) => (String::new(), e.replace(',', ";")),
        };
        writeln!(
            w,
            "{},{},{},{rmse},{},{status}",
            if v.input == FieldKind::Sdf { "SDF" } else { "BIG" },
            v.residual,
            v.augment,
            v.published_rmse
        )?;
    }
    Ok(())
}
