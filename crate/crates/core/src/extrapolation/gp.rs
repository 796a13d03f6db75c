//! Exact Gaussian-process regression with a squared-exponential kernel.

use serde::{Deserialize, Serialize};

use crate::grid::Meters;
use crate::linalg::{Cholesky, NotPositiveDefinite, SquareMatrix};
use crate::scalar::{dot, Scalar};

use super::augment::AugmentedSet;
use super::ExtrapolationError;

/// Number of times the diagonal jitter is multiplied by ten before giving up.
pub const JITTER_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale_m: f64,
    pub signal_std_db: f64,
    pub noise_std_db: f64,
    pub jitter: f64,
}

impl GpHyper {
    /// Defaults scaled to the grid resolution.
    pub fn for_cell_size(cell_size_m: f64) -> Self {
        Self {
            lengthscale_m: 3.0 * cell_size_m,
            signal_std_db: 12.0,
            noise_std_db: 2.0,
            jitter: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), ExtrapolationError> {
        let all = [self.lengthscale_m, self.signal_std_db, self.noise_std_db, self.jitter];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(ExtrapolationError::InvalidHyper(*self))
        }
    }
}

/// Factorization diagnostics attached to a numerical failure.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationFailure {
    pub jitters_tried: Vec<f64>,
    pub last_pivot: NotPositiveDefinite,
    pub n: usize,
    pub max_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel<T: Scalar> {
    pub hyper: GpHyper,
    pub train_points: Vec<Meters>,
    pub train_values: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean_offset_db: f64,
    /// Jitter that made the factorization succeed.
    pub jitter_used: f64,
    coords: Vec<[T; 2]>,
    factor: Cholesky<T>,
    alpha: Vec<T>,
}

struct Kernel<T> {
    variance: T,
    inv_two_l2: T,
}

impl<T: Scalar> Kernel<T> {
    fn new(h: &GpHyper) -> Self {
        Self {
            variance: T::of(h.signal_std_db * h.signal_std_db),
            inv_two_l2: T::of(1.0 / (2.0 * h.lengthscale_m * h.lengthscale_m)),
        }
    }

    #[inline]
    fn eval(&self, a: [T; 2], b: [T; 2]) -> T {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        self.variance * (-(dx * dx + dy * dy) * self.inv_two_l2).exp()
    }
}

fn to_coords<T: Scalar>(points: &[Meters]) -> Vec<[T; 2]> {
    points.iter().map(|m| [T::of(m.east), T::of(m.north)]).collect()
}

/// Gram matrix `K + diag(noise² / w)`, without jitter.
fn gram<T: Scalar>(coords: &[[T; 2]], weights: &[f64], h: &GpHyper) -> SquareMatrix<T> {
    let k = Kernel::<T>::new(h);
    let n = coords.len();
    let noise = h.noise_std_db * h.noise_std_db;
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = k.eval(coords[i], coords[j]);
            m.data[i * n + j] = v;
            m.data[j * n + i] = v;
        }
        m.data[i * n + i] += T::of(noise / weights[i]);
    }
    m
}

fn factorize_with_escalation<T: Scalar>(
    gram: &SquareMatrix<T>,
    jitter: f64,
) -> Result<(Cholesky<T>, f64), FactorizationFailure> {
    let mut tried = Vec::new();
    let mut j = jitter;
    loop {
        tried.push(j);
        match Cholesky::factorize(gram, T::of(j)) {
            Ok(f) => return Ok((f, j)),
            Err(e) if tried.len() > JITTER_ESCALATIONS => {
                let max_diagonal = (0..gram.n).map(|i| gram.get(i, i).f64()).fold(0.0, f64::max);
                return Err(FactorizationFailure {
                    jitters_tried: tried,
                    last_pivot: e,
                    n: gram.n,
                    max_diagonal,
                });
            }
            Err(_) => j *= 10.0,
        }
    }
}

pub(crate) fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let (num, den) = values
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(n, d), (v, w)| (n + v * w, d + w));
    num / den
}

impl<T: Scalar> GpModel<T> {
    pub fn fit(aug: &AugmentedSet, hyper: GpHyper) -> Result<Self, ExtrapolationError> {
        let points: Vec<Meters> = aug.samples.iter().map(|s| s.position()).collect();
        let values: Vec<f64> = aug.samples.iter().map(|s| s.value_dbm).collect();
        let weights: Vec<f64> = aug.samples.iter().map(|s| s.weight).collect();
        Self::fit_points(points, values, weights, hyper)
    }

    pub fn fit_points(
        train_points: Vec<Meters>,
        train_values: Vec<f64>,
        weights: Vec<f64>,
        hyper: GpHyper,
    ) -> Result<Self, ExtrapolationError> {
        let n = train_points.len();
        if n < 2 {
            return Err(ExtrapolationError::TooFewSamples(n));
        }
        assert!(train_values.len() == n && weights.len() == n, "ragged training data");
        let mean_offset_db = weighted_mean(&train_values, &weights);
        Self::fit_points_with_mean(train_points, train_values, weights, hyper, mean_offset_db)
    }

    /// Like [`GpModel::fit_points`] but with a given constant prior mean; a
    /// single training point is enough.
    pub fn fit_points_with_mean(
        train_points: Vec<Meters>,
        train_values: Vec<f64>,
        weights: Vec<f64>,
        hyper: GpHyper,
        mean_offset_db: f64,
    ) -> Result<Self, ExtrapolationError> {
        hyper.validate()?;
        let n = train_points.len();
        if n == 0 {
            return Err(ExtrapolationError::TooFewSamples(0));
        }
        assert!(train_values.len() == n && weights.len() == n, "ragged training data");
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(ExtrapolationError::InvalidWeight(*w));
        }
        let coords = to_coords::<T>(&train_points);
        let k = gram(&coords, &weights, &hyper);
        let (factor, jitter_used) =
            factorize_with_escalation(&k, hyper.jitter).map_err(ExtrapolationError::Numerical)?;
        let centered: Vec<T> = train_values.iter().map(|v| T::of(v - mean_offset_db)).collect();
        let alpha = factor.solve(&centered);
        Ok(Self {
            hyper,
            train_points,
            train_values,
            weights,
            mean_offset_db,
            jitter_used,
            coords,
            factor,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn cross(&self, at: Meters) -> Vec<T> {
        let k = Kernel::<T>::new(&self.hyper);
        let x = [T::of(at.east), T::of(at.north)];
        self.coords.iter().map(|&c| k.eval(x, c)).collect()
    }

    /// Posterior mean only; O(n) per point.
    pub fn predict_mean(&self, points: &[Meters]) -> Vec<f64> {
        points
            .iter()
            .map(|&p| self.mean_offset_db + dot(&self.cross(p), &self.alpha).f64())
            .collect()
    }

    /// Posterior mean (dBm) and latent-function variance (dB²) per point.
    pub fn predict(&self, points: &[Meters]) -> Vec<(f64, f64)> {
        let prior = self.hyper.signal_std_db * self.hyper.signal_std_db;
        points
            .iter()
            .map(|&p| {
                let ks = self.cross(p);
                let mean = self.mean_offset_db + dot(&ks, &self.alpha).f64();
                let v = self.factor.solve_lower(&ks);
                let var = (prior - dot(&v, &v).f64()).max(0.0);
                (mean, var)
            })
            .collect()
    }

    /// Log marginal likelihood of the centered training values.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let centered: Vec<T> = self
            .train_values
            .iter()
            .map(|v| T::of(v - self.mean_offset_db))
            .collect();
        let n = self.len() as f64;
        -0.5 * dot(&centered, &self.alpha).f64()
            - 0.5 * self.factor.log_det().f64()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn condition_estimate(&self) -> f64 {
        self.factor.condition_estimate()
    }
}

pub fn fit_gp(aug: &AugmentedSet, hyper: GpHyper) -> Result<GpModel<f64>, ExtrapolationError> {
    GpModel::fit(aug, hyper)
}

pub fn gp_predict<T: Scalar>(model: &GpModel<T>, points: &[Meters]) -> Vec<(f64, f64)> {
    model.predict(points)
}

pub fn log_marginal_likelihood(aug: &AugmentedSet, hyper: GpHyper) -> Result<f64, ExtrapolationError> {
    Ok(fit_gp(aug, hyper)?.log_marginal_likelihood())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: GpHyper,
    pub best_lml: f64,
    /// Candidates whose fit failed, with the reason.
    pub skipped: Vec<(GpHyper, String)>,
}

/// Pick the candidate with the largest log marginal likelihood. Ties go to the
/// smaller lengthscale.
pub fn tune_hyper(aug: &AugmentedSet, candidates: &[GpHyper]) -> Result<TuneOutcome, ExtrapolationError> {
    if candidates.is_empty() {
        return Err(ExtrapolationError::NoCandidates);
    }
    let mut best: Option<(GpHyper, f64)> = None;
    let mut skipped = Vec::new();
    let mut last_err = None;
    for &h in candidates {
        match log_marginal_likelihood(aug, h) {
            Ok(lml) => {
                let better = match best {
                    None => true,
                    Some((b, b_lml)) => lml > b_lml || (lml == b_lml && h.lengthscale_m < b.lengthscale_m),
                };
                if better {
                    best = Some((h, lml));
                }
            }
            Err(e) => {
                log::warn!("skipping GP candidate {h:?}: {e}");
                skipped.push((h, e.to_string()));
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((best, best_lml)) => Ok(TuneOutcome {
            best,
            best_lml,
            skipped,
        }),
        None => Err(last_err.expect("at least one candidate failed")),
    }
}

/// Candidate grid: every combination of the given lengthscales and signal/noise stds.
pub fn candidate_grid(lengthscales: &[f64], signal_stds: &[f64], noise_stds: &[f64], jitter: f64) -> Vec<GpHyper> {
    let mut out = Vec::new();
    for &l in lengthscales {
        for &s in signal_stds {
            for &n in noise_stds {
                out.push(GpHyper {
                    lengthscale_m: l,
                    signal_std_db: s,
                    noise_std_db: n,
                    jitter,
                });
            }
        }
    }
    out
}
