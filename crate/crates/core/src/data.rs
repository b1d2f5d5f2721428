//! Dataset files and class-controlled sampling.
//!
//! Three on-disk layouts are understood:
//!
//! * CSV: one point per row, comma separated, optional header; when labeled
//!   the last column holds the integer class.
//! * RawF64: little-endian `u64 d`, `u64 N`, `d·N` doubles column-major, one
//!   flag byte, then `N` `u32` labels if the flag is 1.
//! * IDX: the big-endian handwritten-digit format. Images are read from the
//!   `0x00000803` file and labels from the matching `0x00000801` file; pixel
//!   bytes are divided by 255 and each image becomes one column in row-major
//!   pixel order.
//!
//! Points are always stored as columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledCloud, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset<T: Scalar> {
    /// `d×N`, one point per column.
    pub features: DMatrix<T>,
    pub labels: Option<Vec<u32>>,
    pub class_count: usize,
    /// `(rows, cols)` for image data.
    pub image_shape: Option<(usize, usize)>,
}

impl<T: Scalar> RawDataset<T> {
    pub fn new(features: DMatrix<T>, labels: Option<Vec<u32>>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::Parse("dataset has no points".into()));
        }
        let class_count = match &labels {
            Some(l) => {
                if l.len() != features.ncols() {
                    return Err(Error::CountMismatch(format!(
                        "{} points but {} labels",
                        features.ncols(),
                        l.len()
                    )));
                }
                l.iter().max().map_or(0, |&m| m as usize + 1)
            }
            None => 0,
        };
        Ok(Self {
            features,
            labels,
            class_count,
            image_shape: None,
        })
    }

    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Self {
        self.image_shape = Some((rows, cols));
        self
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.ncols() == 0
    }

    pub fn labels(&self) -> Result<&[u32]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("dataset is unlabeled".into()))
    }

    /// Number of points in each class.
    pub fn class_histogram(&self) -> Result<Vec<usize>> {
        let mut h = vec![0; self.class_count];
        for &l in self.labels()? {
            h[l as usize] += 1;
        }
        Ok(h)
    }

    pub fn select(&self, indices: &[usize]) -> Result<LabeledCloud<T>> {
        let labels = self.labels()?;
        let points = PointCloud::new(self.features.select_columns(indices));
        LabeledCloud::new(points, indices.iter().map(|&i| labels[i]).collect())
    }

    pub fn to_labeled(&self) -> Result<LabeledCloud<T>> {
        LabeledCloud::new(PointCloud::new(self.features.clone()), self.labels()?.to_vec())
    }

    /// Per-channel `(x, y)` mean pooling by a factor of two; odd trailing
    /// rows or columns are dropped.
    pub fn downsample_2x(&self) -> Result<Self> {
        let (rows, cols) = self
            .image_shape
            .ok_or_else(|| Error::InvalidParameter("downsampling requires an image shape".into()))?;
        let (r2, c2) = (rows / 2, cols / 2);
        let quarter = T::lit(0.25);
        let mut out = DMatrix::zeros(r2 * c2, self.len());
        for (k, col) in self.features.column_iter().enumerate() {
            for r in 0..r2 {
                for c in 0..c2 {
                    let at = |rr: usize, cc: usize| col[rr * cols + cc];
                    let s = at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1);
                    out[(r * c2 + c, k)] = s * quarter;
                }
            }
        }
        Ok(Self {
            features: out,
            labels: self.labels.clone(),
            class_count: self.class_count,
            image_shape: Some((r2, c2)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv { labeled: bool },
    RawF64,
    /// Image file; labels are read from the companion file given to
    /// [`load_idx_pair`].
    Idx,
}

/// Loads a single file. For IDX only the images are read; use
/// [`load_idx_pair`] to attach labels.
pub fn load_matrix<T: Scalar>(path: &Path, format: Format) -> Result<RawDataset<T>> {
    match format {
        Format::Csv { labeled } => load_csv(path, labeled),
        Format::RawF64 => load_raw_f64(path),
        Format::Idx => {
            let (features, shape) = read_idx_images(path)?;
            Ok(RawDataset::new(features, None)?.with_image_shape(shape.0, shape.1))
        }
    }
}

pub fn load_idx_pair<T: Scalar>(images: &Path, labels: &Path) -> Result<RawDataset<T>> {
    let (features, shape) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    Ok(RawDataset::new(features, Some(labels))?.with_image_shape(shape.0, shape.1))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated(format!("missing {what}")))
}

fn read_idx_images<T: Scalar>(path: &Path) -> Result<(DMatrix<T>, (usize, usize))> {
    let buf = read_all(path)?;
    let magic = be_u32(&buf, 0, "magic number")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let n = be_u32(&buf, 4, "image count")? as usize;
    let rows = be_u32(&buf, 8, "row count")? as usize;
    let cols = be_u32(&buf, 12, "column count")? as usize;
    let d = rows * cols;
    let body = &buf[16..];
    if body.len() < n * d {
        return Err(Error::Truncated(format!(
            "{} pixel bytes for {n} images of {rows}x{cols}",
            body.len()
        )));
    }
    let scale = T::one() / T::lit(255.0);
    let features = DMatrix::from_iterator(d, n, body[..n * d].iter().map(|&b| T::from_count(b as usize) * scale));
    Ok((features, (rows, cols)))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u32>> {
    let buf = read_all(path)?;
    let magic = be_u32(&buf, 0, "magic number")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let n = be_u32(&buf, 4, "label count")? as usize;
    let body = &buf[8..];
    if body.len() < n {
        return Err(Error::Truncated(format!("{} label bytes for {n} labels", body.len())));
    }
    Ok(body[..n].iter().map(|&b| b as u32).collect())
}

fn load_csv<T: Scalar>(path: &Path, labeled: bool) -> Result<RawDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let fields: Vec<&str> = rec.iter().collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let parsed = match parsed {
            Ok(v) => v,
            // a non-numeric first line is a header
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", line + 1))),
        };
        let (feat, label) = if labeled {
            let (l, f) = parsed
                .split_last()
                .ok_or_else(|| Error::Parse(format!("line {}: empty record", line + 1)))?;
            if *l < 0.0 || l.fract() != 0.0 {
                return Err(Error::Parse(format!("line {}: label {l} is not a class index", line + 1)));
            }
            (f, Some(*l as u32))
        } else {
            (&parsed[..], None)
        };
        match width {
            None => width = Some(feat.len()),
            Some(w) if w != feat.len() => {
                return Err(Error::Parse(format!(
                    "line {}: {} features, expected {w}",
                    line + 1,
                    feat.len()
                )))
            }
            _ => {}
        }
        values.extend(feat.iter().map(|&v| T::lit(v)));
        labels.extend(label);
        rows += 1;
    }
    let d = width.ok_or_else(|| Error::Parse("no data rows".into()))?;
    // row-major records become columns
    let features = DMatrix::from_column_slice(d, rows, &values);
    RawDataset::new(features, labeled.then_some(labels))
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let s = buf
        .get(*at..*at + n)
        .ok_or_else(|| Error::Truncated(format!("missing {what}")))?;
    *at += n;
    Ok(s)
}

fn load_raw_f64<T: Scalar>(path: &Path) -> Result<RawDataset<T>> {
    let buf = read_all(path)?;
    let mut at = 0;
    let d = u64::from_le_bytes(take(&buf, &mut at, 8, "dimension")?.try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(take(&buf, &mut at, 8, "point count")?.try_into().unwrap()) as usize;
    let body = take(&buf, &mut at, d * n * 8, "matrix entries")?;
    let features = DMatrix::from_iterator(
        d,
        n,
        body.chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))),
    );
    let labels = match take(&buf, &mut at, 1, "label flag") {
        Ok([0]) => None,
        Ok([1]) => {
            let raw = take(&buf, &mut at, n * 4, "labels")?;
            Some(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        Ok(other) => return Err(Error::Parse(format!("bad label flag {}", other[0]))),
        // a bare matrix without the trailing flag byte
        Err(_) => None,
    };
    if at != buf.len() {
        return Err(Error::CountMismatch(format!("{} trailing bytes", buf.len() - at)));
    }
    if n == 0 {
        return Err(Error::Parse("dataset has no points".into()));
    }
    RawDataset::new(features, labels)
}

/// Writes `m` (and optional labels) in the RawF64 layout.
pub fn write_raw_f64<T: Scalar>(path: &Path, m: &DMatrix<T>, labels: Option<&[u32]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw_f64_to(&mut w, m, labels)?;
    w.flush()?;
    Ok(())
}

pub fn write_raw_f64_to<T: Scalar, W: Write>(w: &mut W, m: &DMatrix<T>, labels: Option<&[u32]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != m.ncols() {
            return Err(Error::CountMismatch(format!("{} columns but {} labels", m.ncols(), l.len())));
        }
    }
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    match labels {
        Some(l) => {
            w.write_all(&[1])?;
            for x in l {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

/// Class-skewed sample: `skew_percent`% of `sample_size` points come from
/// `skew_class`, the rest is spread as evenly as possible over the others.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewSpec {
    pub skew_class: u32,
    pub skew_percent: f64,
    pub sample_size: usize,
}

impl SkewSpec {
    pub fn new(skew_class: u32, skew_percent: f64, sample_size: usize) -> Self {
        Self {
            skew_class,
            skew_percent,
            sample_size,
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if class_count < 2 {
            return Err(Error::InvalidParameter("skewed sampling needs at least two classes".into()));
        }
        if self.skew_class as usize >= class_count {
            return Err(Error::InvalidParameter(format!(
                "skew class {} outside 0..{class_count}",
                self.skew_class
            )));
        }
        let floor = 100.0 / class_count as f64;
        if !(self.skew_percent.is_finite() && self.skew_percent < 100.0 && self.skew_percent >= floor - 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "skew percent {} outside [{floor}, 100)",
                self.skew_percent
            )));
        }
        Ok(())
    }

    /// Exact number of points drawn from each class.
    pub fn class_counts(&self, class_count: usize) -> Result<Vec<usize>> {
        self.validate(class_count)?;
        let n = self.sample_size;
        let skew = ((self.skew_percent * n as f64 / 100.0).round() as usize).min(n);
        let others: Vec<usize> = (0..class_count).filter(|&k| k != self.skew_class as usize).collect();
        let spread = apportion(n - skew, others.len());
        let mut counts = vec![0; class_count];
        counts[self.skew_class as usize] = skew;
        for (k, c) in others.into_iter().zip(spread) {
            counts[k] = c;
        }
        Ok(counts)
    }
}

/// Splits `n` over `k` equal shares by largest remainder; with equal
/// remainders the extra units go to the lowest positions.
fn apportion(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// Per-class draw order: indices of each class, shuffled by the seed.
fn shuffled_classes<T: Scalar>(ds: &RawDataset<T>, seed: u64) -> Result<Vec<Vec<usize>>> {
    let labels = ds.labels()?;
    let mut by_class = vec![Vec::new(); ds.class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    Ok(by_class)
}

fn draw(pools: &[Vec<usize>], offsets: &[usize], counts: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (k, (&c, &o)) in counts.iter().zip(offsets).enumerate() {
        let pool = &pools[k];
        if o + c > pool.len() {
            return Err(Error::InsufficientPopulation {
                class: k as u32,
                required: o + c,
                available: pool.len(),
            });
        }
        out.extend_from_slice(&pool[o..o + c]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Indices of a class-balanced sample; class sizes differ by at most one,
/// extra points going to the lowest classes.
pub fn uniform_sample_indices<T: Scalar>(ds: &RawDataset<T>, n: usize, seed: u64) -> Result<Vec<usize>> {
    let pools = shuffled_classes(ds, seed)?;
    if pools.is_empty() {
        return Err(Error::InvalidParameter("dataset has no classes".into()));
    }
    let counts = apportion(n, pools.len());
    draw(&pools, &vec![0; pools.len()], &counts)
}

pub fn uniform_sample<T: Scalar>(ds: &RawDataset<T>, n: usize, seed: u64) -> Result<LabeledCloud<T>> {
    ds.select(&uniform_sample_indices(ds, n, seed)?)
}

pub fn skewed_sample_indices<T: Scalar>(ds: &RawDataset<T>, spec: &SkewSpec, seed: u64) -> Result<Vec<usize>> {
    let counts = spec.class_counts(ds.class_count)?;
    let pools = shuffled_classes(ds, seed)?;
    draw(&pools, &vec![0; pools.len()], &counts)
}

pub fn skewed_sample<T: Scalar>(ds: &RawDataset<T>, spec: &SkewSpec, seed: u64) -> Result<LabeledCloud<T>> {
    ds.select(&skewed_sample_indices(ds, spec, seed)?)
}

/// Index sets of two samples drawn without replacement from one pool.
pub fn disjoint_split_indices<T: Scalar>(
    ds: &RawDataset<T>,
    spec_t: &SkewSpec,
    spec_e: &SkewSpec,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let ct = spec_t.class_counts(ds.class_count)?;
    let ce = spec_e.class_counts(ds.class_count)?;
    let pools = shuffled_classes(ds, seed)?;
    let zero = vec![0; pools.len()];
    // validate the combined demand first so the error names the true need
    let combined: Vec<usize> = ct.iter().zip(&ce).map(|(a, b)| a + b).collect();
    draw(&pools, &zero, &combined)?;
    Ok((draw(&pools, &zero, &ct)?, draw(&pools, &ct, &ce)?))
}

pub fn disjoint_split<T: Scalar>(
    ds: &RawDataset<T>,
    spec_t: &SkewSpec,
    spec_e: &SkewSpec,
    seed: u64,
) -> Result<(LabeledCloud<T>, LabeledCloud<T>)> {
    let (a, b) = disjoint_split_indices(ds, spec_t, spec_e, seed)?;
    Ok((ds.select(&a)?, ds.select(&b)?))
}

/// Indices of `per_class` points from every class.
pub fn per_class_sample_indices<T: Scalar>(ds: &RawDataset<T>, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let pools = shuffled_classes(ds, seed)?;
    draw(&pools, &vec![0; pools.len()], &vec![per_class; pools.len()])
}

/// Splits the dataset into two disjoint halves, class by class; an odd
/// class gives its extra point to the second half.
pub fn half_split_indices<T: Scalar>(ds: &RawDataset<T>, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let pools = shuffled_classes(ds, seed)?;
    let first: Vec<usize> = pools.iter().map(|p| p.len() / 2).collect();
    let second: Vec<usize> = pools.iter().zip(&first).map(|(p, f)| p.len() - f).collect();
    let zero = vec![0; pools.len()];
    Ok((draw(&pools, &zero, &first)?, draw(&pools, &first, &second)?))
}
