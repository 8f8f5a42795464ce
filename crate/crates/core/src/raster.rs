//! Equidistant square grids: binary membership images, interior distance
//! fields, resampled velocity components and standardization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{point_in_domain, point_segment_distance, ChannelBoundary, Point2, Rect};
use crate::solver::FlowField;

/// Frame of an `n`×`n` cell-centred grid. `origin` is the lower-left corner;
/// row `j` holds cells with centre `y = origin.y + (j + 1/2)·spacing`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub origin: Point2,
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(n: usize, origin: Point2, spacing: f64) -> Result<Self> {
        let g = Self { n, origin, spacing };
        g.validate()?;
        Ok(g)
    }

    /// Smallest square grid centred on `rect` that covers it with a one-cell
    /// margin on every side.
    pub fn covering(rect: &Rect, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidParams(format!("grid size {n} below 8")));
        }
        let side = rect.width().max(rect.height());
        let spacing = side / (n - 2) as f64;
        let half = 0.5 * spacing * n as f64;
        let c = rect.center();
        Self::new(n, Point2::new(c.x - half, c.y - half), spacing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::InvalidParams(format!("grid size {} below 8", self.n)));
        }
        if !(self.spacing > 0.0) || !self.origin.x.is_finite() || !self.origin.y.is_finite() {
            return Err(Error::InvalidParams("grid spacing must be positive and origin finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.spacing,
            self.origin.y + (row as f64 + 0.5) * self.spacing,
        )
    }

    pub fn extent(&self) -> Rect {
        let side = self.spacing * self.n as f64;
        Rect::new(self.origin, Point2::new(self.origin.x + side, self.origin.y + side))
    }
}

/// Values on an `n`×`n` grid, row-major with `y` increasing with the row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { values: vec![0.0; grid.len()], grid }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for a {}x{} grid", values.len(), grid.n, grid.n)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("field values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(Point2) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for row in 0..grid.n {
            for col in 0..grid.n {
                values.push(f(grid.cell_center(col, row)));
            }
        }
        Self { grid, values }
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.grid.n + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let n = self.grid.n;
        self.values[row * n + col] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// 1 where the cell centre lies in the fluid domain, else 0.
pub fn rasterize_binary(boundary: &ChannelBoundary, grid: &GridSpec) -> ScalarField {
    ScalarField::from_fn(*grid, |p| if point_in_domain(boundary, p) { 1.0 } else { 0.0 })
}

/// Distance to the nearest boundary edge at fluid cells, exactly 0 elsewhere.
pub fn compute_sdf(boundary: &ChannelBoundary, grid: &GridSpec) -> ScalarField {
    let edges: Vec<_> = boundary.edges().collect();
    ScalarField::from_fn(*grid, |p| {
        if !point_in_domain(boundary, p) {
            return 0.0;
        }
        let d = edges
            .iter()
            .map(|&(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        // centres lying on the wall still count as fluid
        d.max(f64::MIN_POSITIVE)
    })
}

/// Bilinearly interpolates the solver's cell-centred velocity onto `mask`'s
/// grid. Cells where `mask` is 0 get exactly 0.
pub fn resample_velocity(field: &FlowField, mask: &ScalarField) -> (ScalarField, ScalarField) {
    let mut vx = ScalarField::zeros(mask.grid);
    let mut vy = ScalarField::zeros(mask.grid);
    for row in 0..mask.n() {
        for col in 0..mask.n() {
            if mask.get(col, row) == 0.0 {
                continue;
            }
            let (u, v) = field.interpolate(mask.grid.cell_center(col, row));
            vx.set(col, row, u);
            vy.set(col, row, v);
        }
    }
    (vx, vy)
}

/// The four standardized field kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldKind {
    Binary,
    Sdf,
    Vx,
    Vy,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [FieldKind::Binary, FieldKind::Sdf, FieldKind::Vx, FieldKind::Vy];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Binary => "binary",
            FieldKind::Sdf => "sdf",
            FieldKind::Vx => "vx",
            FieldKind::Vy => "vy",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FieldKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format { what: "field kind", reason: s.to_string() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KindStats {
    pub mean: f64,
    pub std: f64,
}

impl KindStats {
    pub const IDENTITY: KindStats = KindStats { mean: 0.0, std: 1.0 };

    /// Population mean and standard deviation; std falls back to 1 for
    /// constant (or empty) data.
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let vals: Vec<f64> = values.into_iter().copied().collect();
        if vals.is_empty() {
            return Self::IDENTITY;
        }
        let count = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / count;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt();
        Self { mean, std: if std > 0.0 { std } else { 1.0 } }
    }
}

/// Global mean/std per field kind, computed from the training split only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StandardizationStats {
    pub kinds: BTreeMap<FieldKind, KindStats>,
}

impl StandardizationStats {
    pub fn insert(&mut self, kind: FieldKind, stats: KindStats) {
        self.kinds.insert(kind, stats);
    }

    pub fn get(&self, kind: FieldKind) -> Result<KindStats> {
        self.kinds.get(&kind).copied().ok_or_else(|| Error::MissingStats(kind.to_string()))
    }

    pub fn standardize(&self, field: &ScalarField, kind: FieldKind) -> Result<ScalarField> {
        let s = self.get(kind)?;
        Ok(field.map(|v| (v - s.mean) / s.std))
    }

    pub fn destandardize(&self, field: &ScalarField, kind: FieldKind) -> Result<ScalarField> {
        let s = self.get(kind)?;
        Ok(field.map(|v| v * s.std + s.mean))
    }
}
