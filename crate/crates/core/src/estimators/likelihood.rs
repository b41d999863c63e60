//! Log-likelihoods with analytic derivatives, and the damped Newton solver
//! shared by every regression estimator and parametric generator.

use nalgebra::{DMatrix, DVector};

use super::design::Design;
use crate::error::{Error, Result};

/// Relative change in log-likelihood below which Newton iterations stop.
pub const LOGLIK_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 40;

pub trait LogLikelihood {
    fn dim(&self) -> usize;
    /// Log-likelihood, `NEG_INFINITY` outside the parameter domain.
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> DVector<f64>;
    /// Observed information, i.e. the negated Hessian.
    fn information(&self, theta: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct NewtonFit {
    pub theta: Vec<f64>,
    /// Inverse observed information at `theta`.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

/// Maximise `f` from `init` by Newton steps with step-halving.
///
/// A step is halved until the log-likelihood does not decrease and the new
/// point lies in the domain. Iteration stops once the relative log-likelihood
/// change falls below [`LOGLIK_TOLERANCE`].
pub fn maximise<L: LogLikelihood>(f: &L, init: Vec<f64>) -> Result<NewtonFit> {
    let mut theta = init;
    let mut ll = f.value(&theta);
    if !ll.is_finite() {
        return Err(Error::DegenerateFit("starting point outside the domain".into()));
    }
    for iteration in 1..=MAX_ITERATIONS {
        let grad = f.gradient(&theta);
        let info = f.information(&theta);
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::DegenerateFit("information matrix is singular".into()))?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut candidate = Vec::with_capacity(theta.len());
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            candidate.clear();
            candidate.extend(theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s));
            let value = f.value(&candidate);
            if value.is_finite() && value >= ll - 1e-12 * ll.abs() {
                accepted = Some(value);
                break;
            }
            scale *= 0.5;
        }
        let Some(new_ll) = accepted else {
            // No ascent direction left: we are at the optimum up to rounding.
            return finish(f, theta, ll, iteration);
        };
        let change = (new_ll - ll).abs();
        theta.clone_from(&candidate);
        let previous = ll;
        ll = new_ll;
        if change <= LOGLIK_TOLERANCE * previous.abs().max(LOGLIK_TOLERANCE) {
            return finish(f, theta, ll, iteration);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

fn finish<L: LogLikelihood>(
    f: &L,
    theta: Vec<f64>,
    loglik: f64,
    iterations: usize,
) -> Result<NewtonFit> {
    let info = f.information(&theta);
    let covariance = info
        .cholesky()
        .ok_or_else(|| Error::DegenerateFit("information not positive definite at optimum".into()))?
        .inverse();
    Ok(NewtonFit {
        theta,
        covariance,
        loglik,
        iterations,
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn accumulate_outer(info: &mut DMatrix<f64>, row: &[f64], weight: f64) {
    let p = row.len();
    for a in 0..p {
        let wa = weight * row[a];
        if wa == 0.0 {
            continue;
        }
        for b in 0..=a {
            info[(a, b)] += wa * row[b];
        }
    }
}

fn symmetrise(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Binary logistic regression, `P(y = 1) = sigmoid(x'beta)`.
pub struct Logistic<'a> {
    pub design: &'a Design,
    pub y: &'a [f64],
}

impl LogLikelihood for Logistic<'_> {
    fn dim(&self) -> usize {
        self.design.cols
    }

    fn value(&self, beta: &[f64]) -> f64 {
        (0..self.design.rows)
            .map(|i| {
                let eta = self.design.dot(i, beta);
                self.y[i] * eta - softplus(eta)
            })
            .sum()
    }

    fn gradient(&self, beta: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.design.rows {
            let r = self.y[i] - sigmoid(self.design.dot(i, beta));
            for (gj, x) in g.iter_mut().zip(self.design.row(i)) {
                *gj += r * x;
            }
        }
        g
    }

    fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let mut info = DMatrix::zeros(p, p);
        for i in 0..self.design.rows {
            let mu = sigmoid(self.design.dot(i, beta));
            accumulate_outer(&mut info, self.design.row(i), mu * (1.0 - mu));
        }
        symmetrise(&mut info);
        info
    }
}

/// Gamma regression with inverse link `1/mu = x'beta`, at unit dispersion.
///
/// Up to the dispersion factor and constants the log-likelihood is
/// `sum(ln eta - y * eta)`; the observed and expected information coincide
/// because the inverse link is canonical.
pub struct GammaInverse<'a> {
    pub design: &'a Design,
    pub y: &'a [f64],
}

impl GammaInverse<'_> {
    /// Pearson dispersion estimate `sum(((y - mu)/mu)^2) / (m - p)`.
    pub fn pearson_dispersion(&self, beta: &[f64]) -> f64 {
        let chi2: f64 = (0..self.design.rows)
            .map(|i| {
                let mu = 1.0 / self.design.dot(i, beta);
                ((self.y[i] - mu) / mu).powi(2)
            })
            .sum();
        chi2 / (self.design.rows as f64 - self.design.cols as f64)
    }
}

impl LogLikelihood for GammaInverse<'_> {
    fn dim(&self) -> usize {
        self.design.cols
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.design.rows {
            let eta = self.design.dot(i, beta);
            if eta <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += eta.ln() - self.y[i] * eta;
        }
        total
    }

    fn gradient(&self, beta: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.design.rows {
            let eta = self.design.dot(i, beta);
            let r = 1.0 / eta - self.y[i];
            for (gj, x) in g.iter_mut().zip(self.design.row(i)) {
                *gj += r * x;
            }
        }
        g
    }

    fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let mut info = DMatrix::zeros(p, p);
        for i in 0..self.design.rows {
            let eta = self.design.dot(i, beta);
            accumulate_outer(&mut info, self.design.row(i), 1.0 / (eta * eta));
        }
        symmetrise(&mut info);
        info
    }
}

/// Proportional-odds cumulative logit, `logit P(y <= k) = alpha_k + x'beta`.
///
/// Parameters are ordered `(alpha_1, ..., alpha_{K-1}, beta)`. The design
/// carries no intercept column; `y` holds category indices in `0..K`.
pub struct CumulativeLogit<'a> {
    pub design: &'a Design,
    pub y: &'a [usize],
    pub categories: usize,
}

impl CumulativeLogit<'_> {
    fn thresholds(&self) -> usize {
        self.categories - 1
    }

    /// Cut-points `(lower, upper)` linear predictors for category `k`.
    #[inline]
    fn bounds(&self, theta: &[f64], k: usize, xb: f64) -> (Option<f64>, Option<f64>) {
        let lower = (k > 0).then(|| theta[k - 1] + xb);
        let upper = (k < self.thresholds()).then(|| theta[k] + xb);
        (lower, upper)
    }

    fn xb(&self, i: usize, theta: &[f64]) -> f64 {
        self.design.dot(i, &theta[self.thresholds()..])
    }
}

#[inline]
fn logistic_density(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

#[inline]
fn logistic_density_slope(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s) * (1.0 - 2.0 * s)
}

impl LogLikelihood for CumulativeLogit<'_> {
    fn dim(&self) -> usize {
        self.thresholds() + self.design.cols
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let alphas = &theta[..self.thresholds()];
        if alphas.windows(2).any(|w| w[1] <= w[0]) {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for i in 0..self.design.rows {
            let (lo, hi) = self.bounds(theta, self.y[i], self.xb(i, theta));
            let p = cell_probability(lo, hi);
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += p.ln();
        }
        total
    }

    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let t = self.thresholds();
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.design.rows {
            let k = self.y[i];
            let (lo, hi) = self.bounds(theta, k, self.xb(i, theta));
            let p = cell_probability(lo, hi);
            let fh = hi.map_or(0.0, logistic_density);
            let fl = lo.map_or(0.0, logistic_density);
            if hi.is_some() {
                g[k] += fh / p;
            }
            if lo.is_some() {
                g[k - 1] -= fl / p;
            }
            let db = (fh - fl) / p;
            for (j, x) in self.design.row(i).iter().enumerate() {
                g[t + j] += db * x;
            }
        }
        g
    }

    fn information(&self, theta: &[f64]) -> DMatrix<f64> {
        let t = self.thresholds();
        let dim = self.dim();
        let mut hess = DMatrix::zeros(dim, dim);
        let mut dp = vec![0.0; dim];
        let mut touched: Vec<usize> = Vec::with_capacity(dim);
        for i in 0..self.design.rows {
            let k = self.y[i];
            let row = self.design.row(i);
            let (lo, hi) = self.bounds(theta, k, self.xb(i, theta));
            let p = cell_probability(lo, hi);
            let fh = hi.map_or(0.0, logistic_density);
            let fl = lo.map_or(0.0, logistic_density);
            let sh = hi.map_or(0.0, logistic_density_slope);
            let sl = lo.map_or(0.0, logistic_density_slope);

            // First derivatives of p.
            touched.clear();
            if hi.is_some() {
                dp[k] = fh;
                touched.push(k);
            }
            if lo.is_some() {
                dp[k - 1] = -fl;
                touched.push(k - 1);
            }
            for (j, x) in row.iter().enumerate() {
                dp[t + j] = (fh - fl) * x;
                touched.push(t + j);
            }

            // Hessian of ln p = d2p/p - dp dp'/p^2.
            let inv_p = 1.0 / p;
            for &a in &touched {
                for &b in &touched {
                    hess[(a, b)] -= dp[a] * dp[b] * inv_p * inv_p;
                }
            }
            if hi.is_some() {
                hess[(k, k)] += sh * inv_p;
                for (j, x) in row.iter().enumerate() {
                    hess[(k, t + j)] += sh * x * inv_p;
                    hess[(t + j, k)] += sh * x * inv_p;
                }
            }
            if lo.is_some() {
                hess[(k - 1, k - 1)] -= sl * inv_p;
                for (j, x) in row.iter().enumerate() {
                    hess[(k - 1, t + j)] -= sl * x * inv_p;
                    hess[(t + j, k - 1)] -= sl * x * inv_p;
                }
            }
            for (a, xa) in row.iter().enumerate() {
                for (b, xb) in row.iter().enumerate() {
                    hess[(t + a, t + b)] += (sh - sl) * xa * xb * inv_p;
                }
            }
            for &a in &touched {
                dp[a] = 0.0;
            }
        }
        -hess
    }
}

/// `P(lo < latent <= hi)`, computed on the side that avoids cancellation.
#[inline]
fn cell_probability(lo: Option<f64>, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (None, Some(h)) => sigmoid(h),
        (Some(l), None) => sigmoid(-l),
        (Some(l), Some(h)) => {
            if l > 0.0 {
                sigmoid(-l) - sigmoid(-h)
            } else {
                sigmoid(h) - sigmoid(l)
            }
        }
        (None, None) => 1.0,
    }
}

/// Multinomial logit with the first category as reference.
///
/// Parameters are `K-1` stacked coefficient blocks of length `p`.
pub struct Multinomial<'a> {
    pub design: &'a Design,
    pub y: &'a [usize],
    pub categories: usize,
}

impl Multinomial<'_> {
    /// Category probabilities for design row `i`.
    pub fn probabilities(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        probabilities_for_row(self.design.row(i), theta, self.categories)
    }
}

pub(crate) fn probabilities_for_row(row: &[f64], theta: &[f64], categories: usize) -> Vec<f64> {
    let p = row.len();
    let mut eta = Vec::with_capacity(categories);
    eta.push(0.0);
    for c in 1..categories {
        let block = &theta[(c - 1) * p..c * p];
        eta.push(row.iter().zip(block).map(|(x, b)| x * b).sum());
    }
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for q in &mut probs {
        *q /= total;
    }
    probs
}

impl LogLikelihood for Multinomial<'_> {
    fn dim(&self) -> usize {
        (self.categories - 1) * self.design.cols
    }

    fn value(&self, theta: &[f64]) -> f64 {
        (0..self.design.rows)
            .map(|i| self.probabilities(i, theta)[self.y[i]].ln())
            .sum()
    }

    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let p = self.design.cols;
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.design.rows {
            let probs = self.probabilities(i, theta);
            let row = self.design.row(i);
            for c in 1..self.categories {
                let r = f64::from(u8::from(self.y[i] == c)) - probs[c];
                for (j, x) in row.iter().enumerate() {
                    g[(c - 1) * p + j] += r * x;
                }
            }
        }
        g
    }

    fn information(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.design.cols;
        let dim = self.dim();
        let mut info = DMatrix::zeros(dim, dim);
        for i in 0..self.design.rows {
            let probs = self.probabilities(i, theta);
            let row = self.design.row(i);
            for c in 1..self.categories {
                for d in 1..self.categories {
                    let w = if c == d {
                        probs[c] * (1.0 - probs[c])
                    } else {
                        -probs[c] * probs[d]
                    };
                    for (a, xa) in row.iter().enumerate() {
                        for (b, xb) in row.iter().enumerate() {
                            info[((c - 1) * p + a, (d - 1) * p + b)] += w * xa * xb;
                        }
                    }
                }
            }
        }
        info
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference<L: LogLikelihood>(f: &L, theta: &[f64]) -> Vec<f64> {
        (0..theta.len())
            .map(|j| {
                let h = 1e-5 * theta[j].abs().max(1.0);
                let mut up = theta.to_vec();
                let mut down = theta.to_vec();
                up[j] += h;
                down[j] -= h;
                (f.value(&up) - f.value(&down)) / (2.0 * h)
            })
            .collect()
    }

    fn hessian_by_differences<L: LogLikelihood>(f: &L, theta: &[f64]) -> DMatrix<f64> {
        let d = theta.len();
        let mut h = DMatrix::zeros(d, d);
        for j in 0..d {
            let step = 1e-6 * theta[j].abs().max(1.0);
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[j] += step;
            down[j] -= step;
            let gu = f.gradient(&up);
            let gd = f.gradient(&down);
            for i in 0..d {
                h[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
            }
        }
        h
    }

    fn small_design() -> Design {
        Design::from_columns(
            &[
                vec![1.0; 6],
                vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.1],
                vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
            ],
            vec!["(intercept)".into(), "x".into(), "d".into()],
        )
        .unwrap()
    }

    #[test]
    fn multinomial_derivatives() {
        let design = small_design();
        let y = [0, 1, 2, 2, 1, 0];
        let f = Multinomial {
            design: &design,
            y: &y,
            categories: 3,
        };
        let theta = [0.1, -0.3, 0.2, 0.4, 0.05, -0.6];
        let fd = central_difference(&f, &theta);
        let g = f.gradient(&theta);
        for (a, b) in fd.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
        let h = hessian_by_differences(&f, &theta);
        let info = f.information(&theta);
        for (a, b) in h.iter().zip(info.iter()) {
            assert!((a + b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn cumulative_logit_information_matches_differences() {
        let design = Design::from_columns(
            &[vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0]],
            vec!["x".into()],
        )
        .unwrap();
        let y = [0, 1, 2, 2, 1, 0, 1];
        let f = CumulativeLogit {
            design: &design,
            y: &y,
            categories: 3,
        };
        let theta = [-0.4, 0.9, 0.35];
        let h = hessian_by_differences(&f, &theta);
        let info = f.information(&theta);
        for (a, b) in h.iter().zip(info.iter()) {
            assert!((a + b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn newton_rejects_bad_start() {
        let design = small_design();
        let y = [1.0, 2.0, 0.5, 1.5, 0.7, 1.1];
        let f = GammaInverse {
            design: &design,
            y: &y,
        };
        assert!(maximise(&f, vec![-1.0, 0.0, 0.0]).is_err());
    }
}
