//! Labelled datasets, seeded synthetic generators and the CSV format
//! `y,x1,...,xd`.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, scale, Mat, Rng};

/// `n` points in `R^d` with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Mat,
    y: Vec<f64>,
    radius: f64,
}

impl Dataset {
    pub fn new(x: Mat, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: x.rows(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::invalid("y", format!("label {} at row {i} is not +-1", y[i])));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("features".into()));
        }
        let radius = x.iter_rows().map(norm).fold(0.0, f64::max);
        Ok(Dataset { x, y, radius })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// `max_i ||x_i||`
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn features(&self) -> &Mat {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn point(&self, i: usize) -> (&[f64], f64) {
        (self.x.row(i), self.y[i])
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.x.row(i).to_vec()).collect();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Dataset::new(Mat::from_rows(&rows)?, y)
    }

    /// Copy with every point multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Dataset> {
        let mut x = self.x.clone();
        scale(factor, x.as_mut_slice());
        Dataset::new(x, self.y.clone())
    }

    /// Hex SHA-256 of the CSV encoding.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_csv().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("y");
        for k in 1..=self.d() {
            let _ = write!(out, ",x{k}");
        }
        out.push('\n');
        for i in 0..self.n() {
            let (x, y) = self.point(i);
            out.push_str(if y > 0.0 { "1" } else { "-1" });
            for v in x {
                // Display for f64 is the shortest round-trip representation
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Dataset> {
        let perr = |line: usize, reason: String| Error::Parse {
            path: origin.to_string(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"y") || cols.len() < 2 {
            return Err(perr(1, "header must be `y,x1,...,xd`".into()));
        }
        for (k, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("x{k}") {
                return Err(perr(1, format!("expected column `x{k}`, found `{c}`")));
            }
        }
        let d = cols.len() - 1;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 1 {
                return Err(perr(lineno, format!("expected {} fields, found {}", d + 1, fields.len())));
            }
            let label = match fields[0] {
                "1" | "+1" | "1.0" => 1.0,
                "-1" | "-1.0" => -1.0,
                other => return Err(perr(lineno, format!("label `{other}` is not -1 or +1"))),
            };
            let mut row = Vec::with_capacity(d);
            for f in &fields[1..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| perr(lineno, format!("`{f}` is not a number")))?;
                if !v.is_finite() {
                    return Err(perr(lineno, format!("`{f}` is not finite")));
                }
                row.push(v);
            }
            rows.push(row);
            y.push(label);
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Dataset::new(Mat::from_rows(&rows)?, y)
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_csv(&text, &path.display().to_string())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenKind {
    /// Uniform on the unit sphere, labelled by a unit separator, with
    /// points inside the margin band resampled.
    PlantedMargin {
        gamma: f64,
        /// Unit separator; `None` means `e_1`.
        separator: Option<Vec<f64>>,
    },
    /// Two Gaussian classes, class 1 labelled `+1`.
    GaussianMixture {
        mean_pos: Vec<f64>,
        mean_neg: Vec<f64>,
        scale_pos: f64,
        scale_neg: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Points are rescaled so that `max ||x_i|| <= r_max`.
    pub r_max: f64,
}

impl GenSpec {
    pub fn planted(n: usize, d: usize, gamma: f64, seed: u64) -> Self {
        GenSpec {
            kind: GenKind::PlantedMargin {
                gamma,
                separator: None,
            },
            n,
            d,
            seed,
            r_max: 1.0,
        }
    }

    /// Zero-mean mixture with covariances `I` and `I/4`.
    pub fn mixture(n: usize, d: usize, seed: u64) -> Self {
        GenSpec {
            kind: GenKind::GaussianMixture {
                mean_pos: vec![0.0; d],
                mean_neg: vec![0.0; d],
                scale_pos: 1.0,
                scale_neg: 0.25,
            },
            n,
            d,
            seed,
            r_max: 1.0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GenSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        GenSpec { n, ..self.clone() }
    }

    /// The unit separator of a planted spec.
    pub fn separator(&self) -> Option<Vec<f64>> {
        match &self.kind {
            GenKind::PlantedMargin { separator, .. } => Some(match separator {
                Some(s) => {
                    let mut s = s.clone();
                    let n = norm(&s);
                    scale(1.0 / n, &mut s);
                    s
                }
                None => {
                    let mut e = vec![0.0; self.d];
                    e[0] = 1.0;
                    e
                }
            }),
            GenKind::GaussianMixture { .. } => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            GenKind::PlantedMargin { gamma, .. } => Some(gamma),
            GenKind::GaussianMixture { .. } => None,
        }
    }
}

/// Draws a dataset from `spec`; identical specs give identical datasets.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    if spec.n < 2 {
        return Err(Error::invalid("n", "need at least 2 points"));
    }
    if spec.d == 0 {
        return Err(Error::invalid("d", "need at least 1 dimension"));
    }
    if !(spec.r_max > 0.0) {
        return Err(Error::invalid("r_max", "must be positive"));
    }
    let mut rng = Rng::new(spec.seed, 0xda7a);
    let (rows, y) = match &spec.kind {
        GenKind::PlantedMargin { gamma, separator } => {
            if !(*gamma >= 0.0) || *gamma >= spec.r_max.min(1.0) {
                return Err(Error::invalid("gamma", "margin must lie in [0, r_max)"));
            }
            if let Some(s) = separator {
                if s.len() != spec.d || norm(s) == 0.0 {
                    return Err(Error::invalid("separator", "must be a nonzero d-vector"));
                }
            }
            if spec.d == 1 && *gamma >= 1.0 {
                return Err(Error::invalid("gamma", "infeasible in one dimension"));
            }
            let w = spec.separator().expect("planted spec");
            let r = spec.r_max.min(1.0);
            let mut rows = Vec::with_capacity(spec.n);
            let mut y = Vec::with_capacity(spec.n);
            while rows.len() < spec.n {
                let mut x = rng.unit_vector(spec.d);
                scale(r, &mut x);
                fit_in_ball(&mut x, r);
                let s = dot(&x, &w);
                if s.abs() < *gamma || s == 0.0 {
                    continue;
                }
                y.push(s.signum());
                rows.push(x);
            }
            (rows, y)
        }
        GenKind::GaussianMixture {
            mean_pos,
            mean_neg,
            scale_pos,
            scale_neg,
        } => {
            if mean_pos.len() != spec.d || mean_neg.len() != spec.d {
                return Err(Error::invalid("mean", "class means must have length d"));
            }
            if !(*scale_pos > 0.0 && *scale_neg > 0.0) {
                return Err(Error::invalid("scale", "covariance scales must be positive"));
            }
            let n_pos = spec.n.div_ceil(2);
            let mut rows = Vec::with_capacity(spec.n);
            let mut y = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let (mean, var, label) = if i < n_pos {
                    (mean_pos, *scale_pos, 1.0)
                } else {
                    (mean_neg, *scale_neg, -1.0)
                };
                let sd = var.sqrt();
                rows.push(mean.iter().map(|mu| mu + sd * rng.normal()).collect());
                y.push(label);
            }
            let radius = rows.iter().map(|r: &Vec<f64>| norm(r)).fold(0.0, f64::max);
            if radius > spec.r_max {
                for r in &mut rows {
                    scale(spec.r_max / radius, r);
                    fit_in_ball(r, spec.r_max);
                }
            }
            (rows, y)
        }
    };
    Dataset::new(Mat::from_rows(&rows)?, y)
}

/// Shrinks `x` by ulps until `||x|| <= r`; rescaling alone can overshoot by
/// rounding.
fn fit_in_ball(x: &mut [f64], r: f64) {
    while norm(x) > r {
        scale(1.0 - f64::EPSILON, x);
    }
}

/// Linear separator found by normalized gradient descent on the
/// exponential loss of a linear model, together with its margin.
///
/// The direction approaches the max-margin separator; any positive margin
/// it reports is a certified lower bound on the data's linear margin.
pub fn estimate_separator(data: &Dataset, iterations: usize) -> (Vec<f64>, f64) {
    let d = data.d();
    let mut w = vec![0.0; d];
    let mut best = (w.clone(), f64::NEG_INFINITY);
    let mut logs = vec![0.0; data.n()];
    for _ in 0..iterations {
        for (i, l) in logs.iter_mut().enumerate() {
            let (x, y) = data.point(i);
            *l = -y * dot(x, &w);
        }
        let lse = crate::numerics::log_sum_exp(&logs);
        let mut step = vec![0.0; d];
        for (i, l) in logs.iter().enumerate() {
            let (x, y) = data.point(i);
            crate::numerics::axpy((l - lse).exp() * y, x, &mut step);
        }
        crate::numerics::axpy(1.0, &step, &mut w);
        if norm(&w) > 0.0 {
            let margin = crate::objective::linear_margin(data, &w).unwrap_or(f64::NEG_INFINITY);
            if margin > best.1 {
                best = (w.clone(), margin);
            }
        }
    }
    let n = norm(&best.0);
    if n > 0.0 {
        scale(1.0 / n, &mut best.0);
    }
    best
}
