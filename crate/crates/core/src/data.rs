//! Synthetic covariate-shift benchmarks and a CSV loader.
//!
//! A benchmark yields three labeled splits: `source` (labels visible),
//! `target` (labels held back for evaluation) and `broad`, a mixture drawn
//! from both domains that is only used to pretrain the prior model.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// Radius of the circle the blob means sit on.
const BLOB_RADIUS: f64 = 4.0;
/// Per-coordinate noise of the source domain for blobs.
const BLOB_NOISE: f64 = 1.0;
const MOON_RADIUS: f64 = 4.0;
const MOON_NOISE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Source,
    Target,
    Broad,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Source => "source",
            Split::Target => "target",
            Split::Broad => "broad",
            Split::Eval => "eval",
        })
    }
}

/// Features with integer class labels.
///
/// Target-split labels are hidden from [`LabeledSet::labels`]; they can only
/// be read through [`LabeledSet::evaluation_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: DenseArray,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledSet {
    pub fn new(features: DenseArray, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyBatch("labeled set"));
        }
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "labeled set",
                left: features.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn features(&self) -> &DenseArray {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Training labels. Fails for the target split.
    pub fn labels(&self) -> Result<&[usize]> {
        if self.split == Split::Target {
            Err(Error::InvalidConfig(
                "target labels are only available for evaluation".into(),
            ))
        } else {
            Ok(&self.labels)
        }
    }

    /// Labels for scoring predictions, available for every split.
    pub fn evaluation_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Fraction of rows whose predicted class matches the label.
    pub fn accuracy(&self, predicted: &[usize]) -> f64 {
        let hits = predicted
            .iter()
            .zip(&self.labels)
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / self.labels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    GaussianBlobs,
    TwoMoons,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(Family::GaussianBlobs),
            "two-moons" => Ok(Family::TwoMoons),
            other => Err(Error::InvalidConfig(format!("unknown data family `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::GaussianBlobs => "gaussian-blobs",
            Family::TwoMoons => "two-moons",
        })
    }
}

/// Parameters of a source/target domain pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub family: Family,
    pub num_classes: usize,
    pub dim: usize,
    /// Rotation of the target domain in the first two coordinates, degrees.
    pub rotation_deg: f64,
    /// Target translation; shorter vectors are zero-padded to `dim`.
    pub translation: Vec<f64>,
    /// Target noise scale relative to the source.
    pub noise_ratio: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl ShiftSpec {
    /// The `rotated-gaussians-5` benchmark.
    pub fn rotated_gaussians(seed: u64) -> Self {
        let t = 1.5 / 2f64.sqrt();
        Self {
            family: Family::GaussianBlobs,
            num_classes: 5,
            dim: 8,
            rotation_deg: 50.0,
            translation: vec![t, t],
            noise_ratio: 1.3,
            per_class: 400,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return bad(format!("rotation {} outside [0, 180]", self.rotation_deg));
        }
        if !(self.noise_ratio > 0.0) {
            return bad(format!("noise ratio {} must be positive", self.noise_ratio));
        }
        if self.dim < 2 {
            return bad("dim must be at least 2".into());
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        if self.translation.len() > self.dim {
            return bad(format!(
                "translation has {} entries for dim {}",
                self.translation.len(),
                self.dim
            ));
        }
        match self.family {
            Family::GaussianBlobs if self.num_classes < 2 => bad("need at least 2 classes".into()),
            Family::TwoMoons if self.num_classes != 2 => bad("two-moons has exactly 2 classes".into()),
            _ => Ok(()),
        }
    }
}

/// Distribution parameters of one domain.
struct Domain {
    rotation_rad: f64,
    translation: Vec<f64>,
    noise_scale: f64,
}

impl Domain {
    fn source(dim: usize) -> Self {
        Self {
            rotation_rad: 0.0,
            translation: vec![0.0; dim],
            noise_scale: 1.0,
        }
    }

    fn target(spec: &ShiftSpec) -> Self {
        let mut translation = spec.translation.clone();
        translation.resize(spec.dim, 0.0);
        Self {
            rotation_rad: spec.rotation_deg.to_radians(),
            translation,
            noise_scale: spec.noise_ratio,
        }
    }

    /// Rotates the first two coordinates about `center`, then translates.
    fn place(&self, point: &mut [f64], center: (f64, f64)) {
        let (s, c) = self.rotation_rad.sin_cos();
        let (x, y) = (point[0] - center.0, point[1] - center.1);
        point[0] = c * x - s * y + center.0;
        point[1] = s * x + c * y + center.1;
        for (v, t) in point.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }
}

fn sample_point(spec: &ShiftSpec, domain: &Domain, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut point = vec![0.0; spec.dim];
    let center = match spec.family {
        Family::GaussianBlobs => {
            let angle = 2.0 * std::f64::consts::PI * class as f64 / spec.num_classes as f64;
            point[0] = BLOB_RADIUS * angle.cos();
            point[1] = BLOB_RADIUS * angle.sin();
            for v in point.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += BLOB_NOISE * domain.noise_scale * z;
            }
            (0.0, 0.0)
        }
        Family::TwoMoons => {
            let t = Uniform::new(0.0, std::f64::consts::PI)
                .expect("valid range")
                .sample(rng);
            if class == 0 {
                point[0] = MOON_RADIUS * t.cos();
                point[1] = MOON_RADIUS * t.sin();
            } else {
                point[0] = MOON_RADIUS * (1.0 - t.cos());
                point[1] = MOON_RADIUS * (0.5 - t.sin());
            }
            for v in point.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += MOON_NOISE * domain.noise_scale * z;
            }
            (0.5 * MOON_RADIUS, 0.25 * MOON_RADIUS)
        }
    };
    domain.place(&mut point, center);
    point
}

/// Draws `per_class` rows per class in shuffled order, cycling through
/// `domains` row by row.
fn draw_split(
    spec: &ShiftSpec,
    domains: &[&Domain],
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledSet> {
    let n = spec.per_class * spec.num_classes;
    let mut order: Vec<usize> = (0..n).map(|k| k % spec.num_classes).collect();
    order.shuffle(rng);
    let mut data = Vec::with_capacity(n * spec.dim);
    for (k, &class) in order.iter().enumerate() {
        let domain = domains[k % domains.len()];
        data.extend(sample_point(spec, domain, class, rng));
    }
    LabeledSet::new(DenseArray::new(n, spec.dim, data)?, order, spec.num_classes, split)
}

/// Generates `(source, target, broad)` splits for `spec`.
pub fn generate(spec: &ShiftSpec) -> Result<(LabeledSet, LabeledSet, LabeledSet)> {
    spec.validate()?;
    let source_domain = Domain::source(spec.dim);
    let target_domain = Domain::target(spec);
    // independent streams per split
    let mut rng_s = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_s.set_stream(1);
    let mut rng_t = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_t.set_stream(2);
    let mut rng_b = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_b.set_stream(3);
    let source = draw_split(spec, &[&source_domain], Split::Source, &mut rng_s)?;
    let target = draw_split(spec, &[&target_domain], Split::Target, &mut rng_t)?;
    let broad = draw_split(spec, &[&source_domain, &target_domain], Split::Broad, &mut rng_b)?;
    Ok((source, target, broad))
}

/// Writes `f0,...,f{d-1},label` rows.
pub fn write_csv(set: &LabeledSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..set.dim()).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for (r, label) in set.labels.iter().enumerate() {
        for v in set.features.row_slice(r) {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Parses a CSV written in the `write_csv` layout. Rows keep file order.
pub fn load_csv(path: &Path, num_classes: usize, split: Split) -> Result<LabeledSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    let expected: Vec<String> = (0..d)
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if d == 0 || cols != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must be f0,...,f{{d-1}},label; got `{header}`"),
        });
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite feature `{f}`"),
                });
            }
            data.push(v);
        }
        let label: usize = fields[d].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label `{}`", fields[d]),
        })?;
        if label >= num_classes {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("label {label} out of range for {num_classes} classes"),
            });
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    LabeledSet::new(DenseArray::new(labels.len(), d, data)?, labels, num_classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ShiftSpec {
        ShiftSpec {
            per_class: 100,
            ..ShiftSpec::rotated_gaussians(seed)
        }
    }

    #[test]
    fn split_sizes() {
        let (s, t, b) = generate(&small(1)).unwrap();
        for set in [&s, &t, &b] {
            assert_eq!(set.len(), 500);
            assert_eq!(set.dim(), 8);
        }
        assert_eq!(t.split(), Split::Target);
        assert!(t.labels().is_err());
        assert!(s.labels().is_ok());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&small(4)).unwrap(), generate(&small(4)).unwrap());
        assert_ne!(generate(&small(4)).unwrap().0, generate(&small(5)).unwrap().0);
    }

    #[test]
    fn null_shift_gives_matching_moments() {
        let spec = ShiftSpec {
            rotation_deg: 0.0,
            translation: vec![],
            noise_ratio: 1.0,
            per_class: 2000,
            num_classes: 3,
            dim: 3,
            ..ShiftSpec::rotated_gaussians(2)
        };
        let (s, t, _) = generate(&spec).unwrap();
        for class in 0..3 {
            let stats = |set: &LabeledSet| {
                let rows: Vec<usize> = (0..set.len())
                    .filter(|&r| set.evaluation_labels()[r] == class)
                    .collect();
                let m = set.features().select_rows(&rows);
                let mean = m.sum_cols().scale(1.0 / rows.len() as f64);
                let centered = m.sub(&mean.broadcast_rows(rows.len()).unwrap()).unwrap();
                let var = centered.mul(&centered).unwrap().sum_cols().scale(1.0 / rows.len() as f64);
                (mean, var)
            };
            let (ms, vs) = stats(&s);
            let (mt, vt) = stats(&t);
            for j in 0..3 {
                // sampling error of a 2000-sample mean is ~0.022
                assert!((ms.data()[j] - mt.data()[j]).abs() < 0.12);
                assert!((vs.data()[j] - vt.data()[j]).abs() < 0.15);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(0);
        s.rotation_deg = 200.0;
        assert!(generate(&s).is_err());
        let mut s = small(0);
        s.noise_ratio = 0.0;
        assert!(generate(&s).is_err());
        let mut s = small(0);
        s.family = Family::TwoMoons;
        assert!(generate(&s).is_err());
        s.num_classes = 2;
        assert!(generate(&s).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let (s, _, _) = generate(&small(3)).unwrap();
        write_csv(&s, &path).unwrap();
        let back = load_csv(&path, 5, Split::Source).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in back.features().data().iter().zip(s.features().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(back.evaluation_labels(), s.evaluation_labels());
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "f0,f1,label\n0.5,1.0,0\n-2,3e-1,1\n1,1,2\n").unwrap();
        assert_eq!(load_csv(&p, 3, Split::Eval).unwrap().len(), 3);

        fs::write(&p, "f0,f1,label\n").unwrap();
        let err = load_csv(&p, 3, Split::Eval).unwrap_err().to_string();
        assert!(err.contains("no data rows"), "{err}");

        fs::write(&p, "f0,f1,label\n0.5,1.0,0\n0.5,oops,1\n").unwrap();
        let err = load_csv(&p, 3, Split::Eval).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        fs::write(&p, "f0,f1,label\n0.5,1.0,7\n").unwrap();
        assert!(load_csv(&p, 3, Split::Eval).is_err());
    }
}
