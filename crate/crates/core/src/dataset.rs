//! Generation, persistence and batching of solved U-bend samples.
//!
//! A dataset directory holds `manifest.txt` (key/value header plus a record
//! table) and `dataset.fbs`, the concatenation of five FBS1 fields per
//! record in the order binary, sdf, mask, vx, vy. Train and validation
//! geometries are drawn with [`RegionPolicy::Restricted`], test geometries
//! with [`RegionPolicy::Unrestricted`].

use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{build_boundary, sample_params, BendParams, DistortionBounds, Point2, RegionPolicy};
use crate::io::{fbs1_len, read_fbs1, write_fbs1};
use crate::raster::{
    compute_sdf, rasterize_binary, resample_velocity, FieldKind, GridSpec, KindStats, ScalarField, StandardizationStats,
};
use crate::solver::{solve_flow, SolverConfig};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONTAINER_FILE: &str = "dataset.fbs";
const FORMAT_TAG: &str = "bendflow-dataset 1";

/// Failed solves may replace at most this fraction of all attempts.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Fresh draws tried for one record slot before the slot is given up.
const MAX_DRAWS_PER_RECORD: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn policy(self) -> RegionPolicy {
        match self {
            Split::Train | Split::Val => RegionPolicy::Restricted,
            Split::Test => RegionPolicy::Unrestricted,
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format { what: "split", reason: s.to_string() })
    }
}

/// One solved geometry on the common raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub params: BendParams,
    pub binary: ScalarField,
    pub sdf: ScalarField,
    pub mask: ScalarField,
    /// m/s, zero outside the fluid.
    pub vx: ScalarField,
    pub vy: ScalarField,
    pub split: Split,
}

impl Sample {
    /// The geometry representation fed to the network.
    pub fn geometry(&self, kind: FieldKind) -> Result<&ScalarField> {
        match kind {
            FieldKind::Binary => Ok(&self.binary),
            FieldKind::Sdf => Ok(&self.sdf),
            other => Err(Error::InvalidParams(format!("{other} is not a geometry representation"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Record { id: self.id, reason };
        let grid = self.binary.grid;
        for f in [&self.sdf, &self.mask, &self.vx, &self.vy] {
            if f.grid != grid {
                return Err(bad("fields do not share one grid".into()));
            }
        }
        for k in 0..grid.len() {
            let m = self.mask.values[k];
            if m != 0.0 && m != 1.0 {
                return Err(bad(format!("mask value {m} at {k}")));
            }
            if m != self.binary.values[k] {
                return Err(bad("mask differs from binary image".into()));
            }
            if m == 0.0 && (self.vx.values[k] != 0.0 || self.vy.values[k] != 0.0 || self.sdf.values[k] != 0.0) {
                return Err(bad(format!("non-zero value outside the fluid at {k}")));
            }
        }
        Ok(())
    }

    /// Mean speed over fluid pixels.
    pub fn mean_speed(&self) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for k in 0..self.mask.values.len() {
            if self.mask.values[k] != 0.0 {
                sum += self.vx.values[k].hypot(self.vy.values[k]);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const DESK: SplitCounts = SplitCounts { train: 300, val: 60, test: 60 };
    pub const FULL: SplitCounts = SplitCounts { train: 4500, val: 900, test: 900 };

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub counts: SplitCounts,
    pub seed: u64,
    pub n: usize,
    pub bounds: DistortionBounds,
    pub solver: SolverConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { counts: SplitCounts::DESK, seed: 0, n: 64, bounds: DistortionBounds::default(), solver: SolverConfig::default() }
    }
}

impl GenerationConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::covering(&self.bounds.envelope(), self.n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordEntry {
    pub id: usize,
    pub split: Split,
    /// Geometry seed; the parameters are `sample_params(seed, split.policy())`.
    pub seed: u64,
    /// Byte offset of the record in the container.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub grid: GridSpec,
    pub seed: u64,
    pub counts: SplitCounts,
    pub bounds: DistortionBounds,
    pub solver: SolverConfig,
    pub solver_hash: String,
    /// Solves replaced by fresh draws during generation.
    pub failures: usize,
    pub stats: StandardizationStats,
    pub records: Vec<RecordEntry>,
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Builds every field of one sample from its parameters.
pub fn build_sample(id: usize, split: Split, params: BendParams, grid: &GridSpec, solver: &SolverConfig) -> Result<Sample> {
    let boundary = build_boundary(&params)?;
    let flow = solve_flow(&boundary, solver)?;
    let binary = rasterize_binary(&boundary, grid);
    let sdf = compute_sdf(&boundary, grid);
    let (vx, vy) = resample_velocity(&flow, &binary);
    Ok(Sample { id, params, mask: binary.clone(), binary, sdf, vx, vy, split })
}

/// Per-kind statistics: geometry kinds over all pixels, velocity kinds over
/// fluid pixels.
pub fn compute_stats(train: &[Sample]) -> StandardizationStats {
    let mut stats = StandardizationStats::default();
    let all = |f: fn(&Sample) -> &ScalarField| KindStats::from_values(train.iter().flat_map(|s| f(s).values.iter()));
    stats.insert(FieldKind::Binary, all(|s| &s.binary));
    stats.insert(FieldKind::Sdf, all(|s| &s.sdf));
    // Rotation swaps the components, so both share one scale.
    let fluid = |f: fn(&Sample) -> &ScalarField| {
        train
            .iter()
            .flat_map(move |s| f(s).values.iter().zip(&s.mask.values).filter(|(_, &m)| m != 0.0).map(|(v, _)| v))
    };
    let velocity = KindStats::from_values(fluid(|s| &s.vx).chain(fluid(|s| &s.vy)));
    stats.insert(FieldKind::Vx, velocity);
    stats.insert(FieldKind::Vy, velocity);
    stats
}

struct Slot {
    sample: Sample,
    seed: u64,
    failures: usize,
}

fn fill_slot(config: &GenerationConfig, grid: &GridSpec, split: Split, k: usize, id: usize) -> Result<Slot> {
    let mut failures = 0;
    for draw in 0..MAX_DRAWS_PER_RECORD {
        let seed = derive_seed(&[config.seed, split.tag(), k as u64, draw]);
        let params = sample_params(seed, split.policy(), &config.bounds)?;
        match build_sample(id, split, params, grid, &config.solver) {
            Ok(sample) => return Ok(Slot { sample, seed, failures }),
            Err(e @ (Error::NotConverged { .. } | Error::InvalidGeometry(_))) => {
                log::warn!("{split} record {k} draw {draw} replaced: {e}");
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::FailureRate { failures, successes: 0 })
}

/// Generates, solves and stores a dataset in `dir`, returning its manifest.
pub fn generate_dataset(dir: &Path, config: &GenerationConfig) -> Result<DatasetManifest> {
    if Split::ALL.iter().any(|&s| config.counts.get(s) == 0) {
        return Err(Error::InvalidParams("every split needs at least one sample".into()));
    }
    config.bounds.validate()?;
    config.solver.validate()?;
    let grid = config.grid()?;
    fs::create_dir_all(dir)?;

    let mut jobs = Vec::with_capacity(config.counts.total());
    for split in Split::ALL {
        for k in 0..config.counts.get(split) {
            jobs.push((split, k, jobs.len()));
        }
    }
    let slots: Vec<Result<Slot>> = jobs.par_iter().map(|&(split, k, id)| fill_slot(config, &grid, split, k, id)).collect();

    let mut samples = Vec::with_capacity(slots.len());
    let mut failures = 0;
    let mut records = Vec::with_capacity(slots.len());
    for slot in slots {
        let slot = match slot {
            Ok(s) => s,
            Err(Error::FailureRate { failures: f, .. }) => {
                return Err(Error::FailureRate { failures: failures + f, successes: samples.len() })
            }
            Err(e) => return Err(e),
        };
        failures += slot.failures;
        records.push(RecordEntry { id: slot.sample.id, split: slot.sample.split, seed: slot.seed, offset: 0 });
        samples.push(slot.sample);
    }
    if failures as f64 > MAX_FAILURE_RATE * (failures + samples.len()) as f64 {
        return Err(Error::FailureRate { failures, successes: samples.len() });
    }

    let record_len = 5 * fbs1_len(grid.n) as u64;
    let mut out = BufWriter::new(File::create(dir.join(CONTAINER_FILE))?);
    for (i, (s, r)) in samples.iter().zip(&mut records).enumerate() {
        r.offset = i as u64 * record_len;
        for f in [&s.binary, &s.sdf, &s.mask, &s.vx, &s.vy] {
            write_fbs1(&mut out, f)?;
        }
    }
    out.flush()?;

    let train: Vec<Sample> = samples.into_iter().filter(|s| s.split == Split::Train).collect();
    let manifest = DatasetManifest {
        grid,
        seed: config.seed,
        counts: config.counts,
        bounds: config.bounds,
        solver: config.solver.clone(),
        solver_hash: config.solver.hash(),
        failures,
        stats: compute_stats(&train),
        records,
    };
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    log::info!("generated {} samples in {} ({} replaced solves)", manifest.records.len(), dir.display(), failures);
    Ok(manifest)
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = {FORMAT_TAG}");
        let _ = writeln!(s, "n = {}", self.grid.n);
        let _ = writeln!(s, "origin_x = {}", self.grid.origin.x);
        let _ = writeln!(s, "origin_y = {}", self.grid.origin.y);
        let _ = writeln!(s, "spacing = {}", self.grid.spacing);
        let _ = writeln!(s, "seed = {}", self.seed);
        for split in Split::ALL {
            let _ = writeln!(s, "count.{split} = {}", self.counts.get(split));
        }
        let _ = writeln!(s, "width = {}", self.bounds.width);
        let _ = writeln!(s, "leg_length = {}", self.bounds.leg_length);
        let _ = writeln!(s, "max_distortion = {}", self.bounds.max_distortion);
        for line in self.solver.to_text().lines() {
            let _ = writeln!(s, "solver.{line}");
        }
        let _ = writeln!(s, "solver_hash = {}", self.solver_hash);
        let _ = writeln!(s, "failures = {}", self.failures);
        for (kind, st) in &self.stats.kinds {
            let _ = writeln!(s, "stats.{kind} = {} {}", st.mean, st.std);
        }
        let _ = writeln!(s, "[records]");
        for r in &self.records {
            let _ = writeln!(s, "{} {} {} {}", r.id, r.split, r.seed, r.offset);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format { what: "dataset manifest", reason };
        let mut keys = std::collections::BTreeMap::new();
        let mut records = Vec::new();
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        for line in lines.by_ref() {
            if line == "[records]" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            keys.insert(k.trim().to_string(), v.trim().to_string());
        }
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [id, split, seed, offset] = parts[..] else {
                return Err(bad(format!("bad record line {line:?}")));
            };
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("bad number in {line:?}")));
            records.push(RecordEntry { id: num(id)? as usize, split: split.parse()?, seed: num(seed)?, offset: num(offset)? });
        }
        let get = |k: &str| keys.get(k).ok_or_else(|| bad(format!("missing key {k}")));
        let float = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad(format!("bad value for {k}")));
        let int = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad(format!("bad value for {k}")));
        if get("format")? != FORMAT_TAG {
            return Err(bad(format!("unsupported format {:?}", get("format")?)));
        }
        let grid = GridSpec::new(int("n")? as usize, Point2::new(float("origin_x")?, float("origin_y")?), float("spacing")?)?;
        let counts = SplitCounts {
            train: int("count.train")? as usize,
            val: int("count.val")? as usize,
            test: int("count.test")? as usize,
        };
        let mut solver = SolverConfig::default();
        for (k, v) in keys.iter().filter_map(|(k, v)| k.strip_prefix("solver.").map(|k| (k, v))) {
            solver.set(k, v)?;
        }
        let mut stats = StandardizationStats::default();
        for (k, v) in keys.iter().filter_map(|(k, v)| k.strip_prefix("stats.").map(|k| (k, v))) {
            let nums: Vec<f64> = v.split_whitespace().map(|x| x.parse().map_err(|_| bad(format!("bad stats {v:?}")))).collect::<Result<_>>()?;
            let [mean, std] = nums[..] else { return Err(bad(format!("bad stats {v:?}"))) };
            stats.insert(k.parse()?, KindStats { mean, std });
        }
        let manifest = DatasetManifest {
            grid,
            seed: int("seed")?,
            counts,
            bounds: DistortionBounds {
                width: float("width")?,
                leg_length: float("leg_length")?,
                max_distortion: float("max_distortion")?,
            },
            solver_hash: get("solver_hash")?.clone(),
            solver,
            failures: int("failures")? as usize,
            stats,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Format { what: "dataset manifest", reason };
        for split in Split::ALL {
            let stored = self.records.iter().filter(|r| r.split == split).count();
            if stored != self.counts.get(split) {
                return Err(bad(format!("{split} count {} but {stored} records", self.counts.get(split))));
            }
        }
        if self.solver.hash() != self.solver_hash {
            return Err(bad("solver hash does not match the stored solver settings".into()));
        }
        Ok(())
    }

    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.id).collect()
    }

    pub fn params(&self, record: &RecordEntry) -> Result<BendParams> {
        sample_params(record.seed, record.split.policy(), &self.bounds)
    }
}

/// An on-disk dataset opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(Self { dir: dir.to_path_buf(), manifest: DatasetManifest::from_text(&text)? })
    }

    fn record(&self, id: usize) -> Result<&RecordEntry> {
        self.manifest
            .records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Record { id, reason: "not in manifest".into() })
    }

    pub fn read_sample(&self, id: usize) -> Result<Sample> {
        let rec = self.record(id)?;
        let corrupt = |e: Error| Error::Record { id, reason: e.to_string() };
        let mut file = File::open(self.dir.join(CONTAINER_FILE)).map_err(|e| corrupt(e.into()))?;
        file.seek(SeekFrom::Start(rec.offset)).map_err(|e| corrupt(e.into()))?;
        let mut buf = vec![0u8; 5 * fbs1_len(self.manifest.grid.n)];
        file.read_exact(&mut buf).map_err(|e| corrupt(e.into()))?;
        let mut r = BufReader::new(&buf[..]);
        let mut fields = Vec::with_capacity(5);
        for _ in 0..5 {
            let f = read_fbs1(&mut r).map_err(corrupt)?;
            if f.grid != self.manifest.grid {
                return Err(Error::Record { id, reason: "grid differs from manifest".into() });
            }
            fields.push(f);
        }
        let vy = fields.pop().expect("five fields");
        let vx = fields.pop().expect("five fields");
        let mask = fields.pop().expect("five fields");
        let sdf = fields.pop().expect("five fields");
        let binary = fields.pop().expect("five fields");
        let params = self.manifest.params(rec).map_err(corrupt)?;
        let sample = Sample { id, params, binary, sdf, mask, vx, vy, split: rec.split };
        sample.validate()?;
        Ok(sample)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.manifest.split_ids(split).into_iter().map(|id| self.read_sample(id)).collect()
    }

    /// Batches of one split for `epoch`, read lazily from disk.
    pub fn load_batches(&self, split: Split, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Result<Batches<'_>> {
        let ids = self.manifest.split_ids(split);
        let order = epoch_batches(ids.len(), batch_size, shuffle_seed, epoch)?;
        let batches = order.into_iter().map(|b| b.into_iter().map(|i| ids[i]).collect()).collect::<Vec<_>>();
        Ok(Batches { dataset: self, batches: batches.into_iter() })
    }

    /// Count of samples per split whose fluid domain meets the restricted rectangle.
    pub fn restricted_region_report(&self) -> Result<RegionReport> {
        let rect = self.manifest.bounds.restricted_rect();
        let mut report = RegionReport::default();
        for r in &self.manifest.records {
            let boundary = build_boundary(&self.manifest.params(r)?)?;
            if boundary.intersects_rect(&rect) {
                match r.split {
                    Split::Train => report.train += 1,
                    Split::Val => report.val += 1,
                    Split::Test => report.test += 1,
                }
            }
        }
        Ok(report)
    }
}

pub struct Batches<'a> {
    dataset: &'a Dataset,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for Batches<'_> {
    type Item = Result<Vec<Sample>>;

    fn next(&mut self) -> Option<Self::Item> {
        let ids = self.batches.next()?;
        Some(ids.into_iter().map(|id| self.dataset.read_sample(id)).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegionReport {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Shuffled index batches of `0..len`, deterministic in `(seed, epoch)`.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidParams("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch])));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_split_once() {
        for (len, bs) in [(10, 3), (7, 7), (5, 32), (0, 4)] {
            let batches = epoch_batches(len, bs, 11, 2).unwrap();
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, (0..len).collect::<Vec<_>>());
            if bs >= len && len > 0 {
                assert_eq!(batches.len(), 1);
            }
        }
        assert_eq!(epoch_batches(20, 4, 1, 3).unwrap(), epoch_batches(20, 4, 1, 3).unwrap());
        assert_ne!(epoch_batches(20, 4, 1, 3).unwrap(), epoch_batches(20, 4, 1, 4).unwrap());
        assert!(epoch_batches(3, 0, 1, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(&[1, 2, 3]);
        assert_eq!(a, derive_seed(&[1, 2, 3]));
        assert_ne!(a, derive_seed(&[1, 3, 2]));
        assert_ne!(a, derive_seed(&[1, 2, 3, 0]));
    }

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("dev".parse::<Split>().is_err());
        assert_eq!(Split::Test.policy(), RegionPolicy::Unrestricted);
        assert_eq!(Split::Val.policy(), RegionPolicy::Restricted);
    }

    #[test]
    fn velocity_components_share_fluid_stats() {
        let g = GridSpec::new(8, Point2::ZERO, 1.0).unwrap();
        let mask = ScalarField::from_fn(g, |p| if p.x < 4.0 { 1.0 } else { 0.0 });
        let sample = Sample {
            id: 0,
            params: BendParams::conventional(1.0, 4.0),
            binary: mask.clone(),
            sdf: mask.clone(),
            vx: ScalarField::from_fn(g, |p| if p.x < 4.0 { 2.0 } else { 0.0 }),
            vy: ScalarField::from_fn(g, |p| if p.x < 4.0 { -2.0 } else { 0.0 }),
            mask,
            split: Split::Train,
        };
        let stats = compute_stats(&[sample]);
        // fluid values are half +2 and half -2
        let v = stats.get(FieldKind::Vx).unwrap();
        assert_eq!((v.mean, v.std), (0.0, 2.0));
        assert_eq!(stats.get(FieldKind::Vy).unwrap(), v);
        assert_eq!(stats.get(FieldKind::Binary).unwrap().mean, 0.5);
    }
}
