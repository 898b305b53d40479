//! Toy datasets, covariate shifts and CSV persistence.
//!
//! Every generator is a pure function of its arguments and seed. Sets carry a
//! [`Domain`] tag so fitting code can refuse anything that is not training
//! data.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Ratio between the long and short axis of each oval class.
pub const OVAL_ASPECT: f64 = 4.0;

/// Default distance of the OOD cluster from the training centroid, in units
/// of the training data's pooled standard deviation.
pub const DEFAULT_OOD_DISTANCE_SD: f64 = 6.0;

/// Gaussian-noise standard deviations for shift intensities 1 through 5.
pub const DEFAULT_NOISE_SCALES: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Train,
    IidTest,
    Ood,
    Shifted(u8),
}

impl Domain {
    /// Stable short name, used in file names and report keys.
    pub fn tag(&self) -> String {
        match self {
            Domain::Train => "train".into(),
            Domain::IidTest => "iid_test".into(),
            Domain::Ood => "ood".into(),
            Domain::Shifted(i) => format!("shifted{i}"),
        }
    }

    fn csv_name(&self) -> &'static str {
        match self {
            Domain::Train => "train",
            Domain::IidTest => "iid_test",
            Domain::Ood => "ood",
            Domain::Shifted(_) => "shifted",
        }
    }

    fn intensity(&self) -> u8 {
        match self {
            Domain::Shifted(i) => *i,
            _ => 0,
        }
    }

    fn from_csv(name: &str, intensity: u8) -> Option<Domain> {
        match (name, intensity) {
            ("train", 0) => Some(Domain::Train),
            ("iid_test", 0) => Some(Domain::IidTest),
            ("ood", 0) => Some(Domain::Ood),
            ("shifted", 1..=5) => Some(Domain::Shifted(intensity)),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Domain::Train),
            "iid_test" => Ok(Domain::IidTest),
            "ood" => Ok(Domain::Ood),
            _ => s
                .strip_prefix("shifted")
                .and_then(|i| i.parse::<u8>().ok())
                .filter(|i| (1..=5).contains(i))
                .map(Domain::Shifted)
                .ok_or_else(|| Error::invalid(format!("unknown set tag `{s}`"))),
        }
    }
}

/// Features, labels and a domain tag.
///
/// `seed` records provenance only; equality compares content.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub domain: Domain,
    pub seed: u64,
}

impl PartialEq for LabeledSet {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.labels == other.labels
            && self.domain == other.domain
    }
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>, domain: Domain, seed: u64) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty("no rows".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "LabeledSet::new",
                format!("{} rows but {} labels", features.rows(), labels.len()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(LabeledSet {
            features,
            labels,
            domain,
            seed,
        })
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

    /// Number of distinct classes implied by the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Guard for every fitting entry point.
    pub fn ensure_train(&self, what: &str) -> Result<()> {
        if self.domain != Domain::Train {
            return Err(Error::invalid(format!(
                "{what} only accepts training data, got a `{}` set",
                self.domain
            )));
        }
        Ok(())
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn check_noise(noise_sd: f64) -> Result<()> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    Ok(())
}

/// Two interleaved unit half-circles; class 1 is the mirrored arc centred
/// at (1, 0.5). Angles are evenly spaced over [0, π].
pub fn make_two_moons(n_per_class: usize, noise_sd: f64, seed: u64) -> Result<LabeledSet> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    check_noise(noise_sd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    let step = if n_per_class > 1 {
        std::f64::consts::PI / (n_per_class - 1) as f64
    } else {
        0.0
    };
    for class in 0..2 {
        for i in 0..n_per_class {
            let theta = step * i as f64;
            let (x, y) = if class == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            data.push(x + noise_sd * normal(&mut rng));
            data.push(y + noise_sd * normal(&mut rng));
            labels.push(class);
        }
    }
    LabeledSet::new(Matrix::new(2 * n_per_class, 2, data)?, labels, Domain::Train, seed)
}

/// Two flat Gaussian blobs centred at (0, ∓separation/2) with standard
/// deviations `(OVAL_ASPECT·noise_sd, noise_sd)`.
pub fn make_two_ovals(
    n_per_class: usize,
    separation: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledSet> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    check_noise(noise_sd)?;
    if !separation.is_finite() {
        return Err(Error::invalid("separation must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        let cy = if class == 0 { -separation / 2.0 } else { separation / 2.0 };
        for _ in 0..n_per_class {
            data.push(OVAL_ASPECT * noise_sd * normal(&mut rng));
            data.push(cy + noise_sd * normal(&mut rng));
            labels.push(class);
        }
    }
    LabeledSet::new(Matrix::new(2 * n_per_class, 2, data)?, labels, Domain::Train, seed)
}

/// Isotropic Gaussian cluster tagged [`Domain::Ood`]. Labels are the
/// sentinel 0 and carry no meaning.
pub fn make_ood_cluster(n: usize, center: &[f64], spread: f64, seed: u64) -> Result<LabeledSet> {
    if n == 0 {
        return Err(Error::invalid("OOD cluster needs at least one point"));
    }
    if center.is_empty() {
        return Err(Error::invalid("OOD center must have at least one coordinate"));
    }
    check_noise(spread)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * center.len());
    for _ in 0..n {
        for &c in center {
            data.push(c + spread * normal(&mut rng));
        }
    }
    LabeledSet::new(Matrix::new(n, center.len(), data)?, vec![0; n], Domain::Ood, seed)
}

/// Training centroid plus `distance_sd` pooled standard deviations along
/// `direction` (normalised internally).
pub fn default_ood_center(train: &Matrix, distance_sd: f64, direction: &[f64]) -> Result<Vec<f64>> {
    if direction.len() != train.cols() {
        return Err(Error::invalid(format!(
            "direction has {} coordinates, data has {}",
            direction.len(),
            train.cols()
        )));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid("direction must be non-zero"));
    }
    let centroid = train.col_means();
    let pooled = (train.col_variances().iter().sum::<f64>() / train.cols() as f64).sqrt();
    Ok(centroid
        .iter()
        .zip(direction)
        .map(|(c, d)| c + distance_sd * pooled * d / norm)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Additive isotropic noise with standard deviation `scale`.
    GaussianNoise,
    /// Rotation by `scale` radians about the set centroid, in the plane of
    /// the first two coordinates.
    Rotation,
    /// Translation by `scale` along the all-ones diagonal.
    Translation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub intensity: u8,
    pub scales: [f64; 5],
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, intensity: u8, scales: [f64; 5]) -> Result<Self> {
        let spec = ShiftSpec {
            kind,
            intensity,
            scales,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian_noise(intensity: u8) -> Result<Self> {
        Self::new(ShiftKind::GaussianNoise, intensity, DEFAULT_NOISE_SCALES)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.intensity) {
            return Err(Error::invalid(format!(
                "shift intensity must be in 1..=5, got {}",
                self.intensity
            )));
        }
        if self.scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("shift scales must be finite and non-negative"));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("shift scales must be strictly increasing"));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.scales[self.intensity as usize - 1]
    }

    pub fn at_intensity(&self, intensity: u8) -> Result<Self> {
        Self::new(self.kind, intensity, self.scales)
    }
}

/// Covariate shift of an iid test set: features move, labels do not.
pub fn apply_shift(set: &LabeledSet, spec: &ShiftSpec, seed: u64) -> Result<LabeledSet> {
    spec.validate()?;
    if set.domain != Domain::IidTest {
        return Err(Error::invalid(format!(
            "shifts apply to iid_test sets only, got `{}`",
            set.domain
        )));
    }
    let scale = spec.scale();
    let mut x = set.features.clone();
    let d = x.cols();
    match spec.kind {
        ShiftKind::GaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in x.data_mut() {
                *v += scale * normal(&mut rng);
            }
        }
        ShiftKind::Rotation => {
            if d < 2 {
                return Err(Error::invalid("rotation needs at least two features"));
            }
            let c = set.features.col_means();
            let (sin, cos) = scale.sin_cos();
            for r in 0..x.rows() {
                let row = x.row_mut(r);
                let (a, b) = (row[0] - c[0], row[1] - c[1]);
                row[0] = c[0] + cos * a - sin * b;
                row[1] = c[1] + sin * a + cos * b;
            }
        }
        ShiftKind::Translation => {
            let step = scale / (d as f64).sqrt();
            x.data_mut().iter_mut().for_each(|v| *v += step);
        }
    }
    LabeledSet::new(x, set.labels.clone(), Domain::Shifted(spec.intensity), seed)
}

/// Splits off the first `n_iid` rows of a freshly generated set as
/// iid-test data; used when train and test come from one generator call.
pub fn as_iid_test(set: LabeledSet) -> LabeledSet {
    set.with_domain(Domain::IidTest)
}

/// Writes `x0,..,x{d-1},label,domain,intensity` with 17 significant digits.
pub fn save_csv(set: &LabeledSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..set.dim())
        .map(|i| format!("x{i}"))
        .chain(["label".into(), "domain".into(), "intensity".into()])
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let name = set.domain.csv_name();
    let intensity = set.domain.intensity();
    for (row, label) in set.features.row_iter().zip(&set.labels) {
        for v in row {
            write!(w, "{v:.16e},")?;
        }
        writeln!(w, "{label},{name},{intensity}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Empty("no rows".into()));
    }
    let n = headers.len();
    if n < 4
        || &headers[n - 3] != "label"
        || &headers[n - 2] != "domain"
        || &headers[n - 1] != "intensity"
        || (0..n - 3).any(|i| headers[i] != *format!("x{i}"))
    {
        return Err(Error::Parse {
            line: 1,
            message: "header must be x0,...,label,domain,intensity".into(),
        });
    }
    let d = n - 3;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut domain: Option<Domain> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Parse {
            line,
            message: format!("row {line}: {msg}"),
        };
        for i in 0..d {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| bad(format!("column x{i} is not a number: `{}`", &rec[i])))?;
            data.push(v);
        }
        let label: usize = rec[d]
            .trim()
            .parse()
            .map_err(|_| bad(format!("label is not a class index: `{}`", &rec[d])))?;
        let intensity: u8 = rec[d + 2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("intensity is not an integer: `{}`", &rec[d + 2])))?;
        let dom = Domain::from_csv(rec[d + 1].trim(), intensity)
            .ok_or_else(|| bad(format!("bad domain `{}` / intensity {intensity}", &rec[d + 1])))?;
        match domain {
            None => domain = Some(dom),
            Some(prev) if prev != dom => {
                return Err(bad(format!("domain `{dom}` differs from `{prev}`")));
            }
            _ => {}
        }
        labels.push(label);
    }
    let Some(domain) = domain else {
        return Err(Error::Empty("no rows".into()));
    };
    let features = Matrix::new(labels.len(), d, data)?;
    LabeledSet::new(features, labels, domain, 0)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_counts_and_balance() {
        let s = make_two_moons(500, 0.1, 1).unwrap();
        assert_eq!(s.len(), 1000);
        assert_eq!(s.labels.iter().filter(|&&y| y == 0).count(), 500);
        assert_eq!(s.labels.iter().filter(|&&y| y == 1).count(), 500);
    }

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let s = make_two_moons(200, 0.0, 9).unwrap();
        for (row, &y) in s.features.row_iter().zip(&s.labels) {
            let (cx, cy) = if y == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = ((row[0] - cx).powi(2) + (row[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            // upper arc for class 0, lower arc for class 1
            if y == 0 {
                assert!(row[1] >= -1e-12);
            } else {
                assert!(row[1] <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(make_two_moons(50, 0.2, 4).unwrap(), make_two_moons(50, 0.2, 4).unwrap());
        assert_ne!(
            make_two_moons(50, 0.2, 4).unwrap().features,
            make_two_moons(50, 0.2, 5).unwrap().features
        );
        assert_eq!(
            make_two_ovals(50, 3.0, 0.2, 4).unwrap(),
            make_two_ovals(50, 3.0, 0.2, 4).unwrap()
        );
    }

    #[test]
    fn negative_noise_is_rejected() {
        assert!(make_two_moons(10, -0.1, 0).is_err());
        assert!(make_two_ovals(10, 1.0, -0.1, 0).is_err());
        assert!(make_two_moons(0, 0.1, 0).is_err());
    }

    #[test]
    fn noiseless_ovals_are_point_masses() {
        let s = make_two_ovals(20, 3.0, 0.0, 1).unwrap();
        for (row, &y) in s.features.row_iter().zip(&s.labels) {
            assert_eq!(row, if y == 0 { &[0.0, -1.5] } else { &[0.0, 1.5] });
        }
    }

    #[test]
    fn oval_means_differ_along_one_axis() {
        let (sep, sd, n) = (3.0, 0.3, 500);
        let s = make_two_ovals(n, sep, sd, 11).unwrap();
        let mean = |c: usize, k: usize| {
            s.features
                .row_iter()
                .zip(&s.labels)
                .filter(|(_, &y)| y == c)
                .map(|(r, _)| r[k])
                .sum::<f64>()
                / n as f64
        };
        // standard error of a difference of two means
        let se_x = (2.0 * (OVAL_ASPECT * sd).powi(2) / n as f64).sqrt();
        let se_y = (2.0 * sd * sd / n as f64).sqrt();
        assert!((mean(1, 0) - mean(0, 0)).abs() < 3.0 * se_x);
        assert!(((mean(1, 1) - mean(0, 1)) - sep).abs() < 3.0 * se_y);
    }

    #[test]
    fn ood_cluster_spread_zero_is_center() {
        let s = make_ood_cluster(500, &[3.0, -1.0], 0.0, 2).unwrap();
        assert_eq!(s.len(), 500);
        assert_eq!(s.domain, Domain::Ood);
        assert!(s.features.row_iter().all(|r| r == [3.0, -1.0]));
    }

    #[test]
    fn default_ood_center_is_far_from_training_data() {
        let train = make_two_moons(500, 0.1, 1).unwrap();
        let c = default_ood_center(&train.features, DEFAULT_OOD_DISTANCE_SD, &[0.0, 1.0]).unwrap();
        let ood = make_ood_cluster(500, &c, 0.25, 3).unwrap();
        let mut diameter: f64 = 0.0;
        for a in train.features.row_iter() {
            for b in train.features.row_iter() {
                diameter = diameter.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        let mut min_dist = f64::INFINITY;
        for a in ood.features.row_iter() {
            for b in train.features.row_iter() {
                min_dist = min_dist.min(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        assert!(min_dist > 2.0 * diameter / 4.0, "{min_dist} vs {diameter}");
    }

    fn iid() -> LabeledSet {
        as_iid_test(make_two_moons(100, 0.1, 7).unwrap())
    }

    #[test]
    fn shift_with_zero_scale_is_identity() {
        let spec = ShiftSpec::new(ShiftKind::GaussianNoise, 1, [0.0, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = apply_shift(&iid(), &spec, 3).unwrap();
        assert_eq!(out.features, iid().features);
        assert_eq!(out.domain, Domain::Shifted(1));
    }

    #[test]
    fn shift_preserves_labels_and_grows_with_intensity() {
        let base = iid();
        let msd = |i: u8| {
            let out = apply_shift(&base, &ShiftSpec::gaussian_noise(i).unwrap(), 5).unwrap();
            assert_eq!(out.labels, base.labels);
            assert_eq!(out.domain, Domain::Shifted(i));
            out.features
                .data()
                .iter()
                .zip(base.features.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        assert!(msd(5) > msd(1));
        for kind in [ShiftKind::Rotation, ShiftKind::Translation] {
            let spec = ShiftSpec::new(kind, 3, [0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
            assert_eq!(apply_shift(&base, &spec, 0).unwrap().labels, base.labels);
        }
    }

    #[test]
    fn shift_rejects_training_data() {
        let train = make_two_moons(10, 0.1, 7).unwrap();
        assert!(apply_shift(&train, &ShiftSpec::gaussian_noise(1).unwrap(), 0).is_err());
    }

    #[test]
    fn shift_scales_must_increase() {
        assert!(ShiftSpec::new(ShiftKind::Rotation, 1, [0.1, 0.1, 0.2, 0.3, 0.4]).is_err());
        assert!(ShiftSpec::gaussian_noise(6).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = iid();
        let shifted = apply_shift(&base, &ShiftSpec::gaussian_noise(4).unwrap(), 1).unwrap();
        for set in [make_two_moons(30, 0.3, 2).unwrap(), shifted] {
            let p = dir.path().join("s.csv");
            save_csv(&set, &p).unwrap();
            assert_eq!(load_csv(&p).unwrap(), set);
        }
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "x0,x1,label,domain,intensity\n1.0,2.0,0,train,0\n1.0,abc,1,train,0\n")
            .unwrap();
        match load_csv(&p) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("row 3"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "").unwrap();
        assert_eq!(load_csv(&p).unwrap_err().to_string(), "no rows");
        std::fs::write(&p, "x0,x1,label,domain,intensity\n").unwrap();
        assert_eq!(load_csv(&p).unwrap_err().to_string(), "no rows");
    }

    #[test]
    fn domain_tags_parse() {
        for d in [Domain::Train, Domain::IidTest, Domain::Ood, Domain::Shifted(3)] {
            assert_eq!(d.tag().parse::<Domain>().unwrap(), d);
        }
        assert!("shifted9".parse::<Domain>().is_err());
        assert!("bogus".parse::<Domain>().is_err());
    }
}
