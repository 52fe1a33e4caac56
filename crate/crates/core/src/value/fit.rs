//! Maximum-likelihood fits of the candidate families and BIC model selection.

use log::warn;
use serde::{Deserialize, Serialize};

use super::dist::{Distribution, Family};
use crate::error::{Error, Result};

/// Smallest sample accepted for fitting.
pub const MIN_SAMPLES: usize = 50;
/// Convergence tolerance on the mean log-likelihood.
const LL_TOL: f64 = 1e-8;
const NM_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRangeModel {
    pub dist: Distribution,
    pub log_likelihood: f64,
    pub bic: f64,
    pub n: usize,
}

impl FittedRangeModel {
    pub fn family(&self) -> Family {
        self.dist.family
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.dist.cdf(x)
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.dist.sf(x)
    }
}

/// Outcome for one candidate family.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateFit {
    Fitted(FittedRangeModel),
    Excluded { family: Family, reason: String },
}

pub fn bic(k: usize, n: usize, log_likelihood: f64) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * log_likelihood
}

/// Fit every candidate family to `samples` (inverse ranges, all positive).
pub fn fit_candidates(samples: &[f64]) -> Result<Vec<CandidateFit>> {
    check_samples(samples)?;
    Ok(Family::ALL
        .into_iter()
        .map(|family| match fit_family(family, samples) {
            Ok(m) => CandidateFit::Fitted(m),
            Err(e) => {
                warn!("{family} fit excluded: {e}");
                CandidateFit::Excluded {
                    family,
                    reason: e.to_string(),
                }
            }
        })
        .collect())
}

/// Fit all families and keep the lowest BIC; ties go to fewer parameters.
pub fn fit_range_model(samples: &[f64]) -> Result<FittedRangeModel> {
    select(fit_candidates(samples)?)
}

pub fn select(candidates: Vec<CandidateFit>) -> Result<FittedRangeModel> {
    candidates
        .into_iter()
        .filter_map(|c| match c {
            CandidateFit::Fitted(m) => Some(m),
            CandidateFit::Excluded { .. } => None,
        })
        .min_by(|a, b| {
            a.bic
                .total_cmp(&b.bic)
                .then(a.family().n_params().cmp(&b.family().n_params()))
        })
        .ok_or_else(|| Error::Fit("no candidate family could be fitted".into()))
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Input(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Input(format!("sample {bad} is not a positive number")));
    }
    let mut distinct: Vec<f64> = samples.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Input(format!(
            "degenerate sample: only {} distinct values",
            distinct.len()
        )));
    }
    Ok(())
}

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn fit_family(family: Family, samples: &[f64]) -> Result<FittedRangeModel> {
    let n = samples.len();
    let params = match family {
        Family::Exponential => {
            let (mean, _) = moments(samples);
            vec![1.0 / mean]
        }
        Family::Pareto => {
            let xm = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = samples.iter().map(|x| (x / xm).ln()).sum();
            if !(s > 0.0) {
                return Err(Error::Fit("pareto: zero log spread".into()));
            }
            vec![n as f64 / s, xm]
        }
        Family::Gamma => {
            let (mean, var) = moments(samples);
            let shape = mean * mean / var;
            numeric_fit(family, samples, &[vec![shape, var / mean]])?
        }
        Family::Beta => {
            if samples.iter().any(|x| *x >= 1.0) {
                return Err(Error::Fit("beta: samples outside (0, 1)".into()));
            }
            let (mean, var) = moments(samples);
            let common = mean * (1.0 - mean) / var - 1.0;
            let start = if common > 0.0 {
                vec![mean * common, (1.0 - mean) * common]
            } else {
                vec![1.0, 1.0]
            };
            numeric_fit(family, samples, &[start])?
        }
        Family::F => {
            let (mean, _) = moments(samples);
            let starts: Vec<Vec<f64>> = [(2.0, 6.0), (5.0, 10.0), (10.0, 20.0), (30.0, 30.0)]
                .into_iter()
                .map(|(d1, d2): (f64, f64)| vec![d1, d2, mean * (d2 - 2.0) / d2])
                .collect();
            numeric_fit(family, samples, &starts)?
        }
    };
    let dist = Distribution::new(family, params)?;
    let ll = dist.log_likelihood(samples);
    if !ll.is_finite() {
        return Err(Error::Fit(format!("{family}: non-finite likelihood")));
    }
    Ok(FittedRangeModel {
        bic: bic(family.n_params(), n, ll),
        log_likelihood: ll,
        n,
        dist,
    })
}

/// Maximize the likelihood over log-parameters from each start; keep the best.
fn numeric_fit(family: Family, samples: &[f64], starts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = samples.len() as f64;
    let neg_mean_ll = |theta: &[f64]| {
        let params: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        if params.iter().any(|p| !p.is_finite() || *p <= 0.0 || *p > 1e8) {
            return f64::INFINITY;
        }
        let d = Distribution { family, params };
        let ll = d.log_likelihood(samples) / n;
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut any_converged = false;
    for start in starts {
        if start.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            continue;
        }
        let theta0: Vec<f64> = start.iter().map(|p| p.ln()).collect();
        // Restart once from the first optimum to escape a collapsed simplex.
        let first = nelder_mead(&neg_mean_ll, &theta0, 0.5, LL_TOL, NM_MAX_ITER);
        let second = nelder_mead(&neg_mean_ll, &first.x, 0.05, LL_TOL, NM_MAX_ITER);
        any_converged |= second.converged;
        if second.fx.is_finite() && best.as_ref().is_none_or(|(_, f)| second.fx < *f) {
            best = Some((second.x, second.fx));
        }
    }
    if !any_converged {
        return Err(Error::Fit(format!("{family}: optimizer did not converge")));
    }
    let (theta, _) = best.ok_or_else(|| Error::Fit(format!("{family}: no feasible start")))?;
    Ok(theta.iter().map(|t| t.exp()).collect())
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub converged: bool,
}

/// Nelder-Mead simplex search. Converged once the spread of objective values
/// across the simplex falls below `tol`.
pub(crate) fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Minimum {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[dim].1 - simplex[0].1;
        if simplex[0].1.is_finite() && spread.abs() <= tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].0.clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&item.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let fx = f(&x);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum { x, fx, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution as _, Exp, FisherF, Gamma};

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let m = nelder_mead(&f, &[0.0, 0.0], 1.0, 1e-14, 10_000);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn bic_formula() {
        assert_eq!(bic(2, 100, -10.0), 2.0 * 100f64.ln() + 20.0);
    }

    #[test]
    fn exponential_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exp = Exp::new(2.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let m = fit_range_model(&xs).unwrap();
        assert_eq!(m.family(), Family::Exponential);
        assert!((1.9..=2.1).contains(&m.dist.params[0]), "{:?}", m.dist);
    }

    #[test]
    fn gamma_mle_beats_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Gamma::new(3.0, 0.5).unwrap();
        let xs: Vec<f64> = (0..2000).map(|_| g.sample(&mut rng)).collect();
        let fitted = fit_family(Family::Gamma, &xs).unwrap();
        let (mean, var) = moments(&xs);
        let mom = Distribution::new(Family::Gamma, vec![mean * mean / var, var / mean]).unwrap();
        assert!(fitted.log_likelihood >= mom.log_likelihood(&xs) - 1e-9);
        assert!((fitted.dist.params[0] - 3.0).abs() < 0.3);
    }

    #[test]
    fn f_selected_on_f_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FisherF::new(5.0, 8.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| f.sample(&mut rng)).collect();
        let m = fit_range_model(&xs).unwrap();
        assert_eq!(m.family(), Family::F);
    }

    #[test]
    fn beta_excluded_outside_unit_interval() {
        let xs: Vec<f64> = (1..=60).map(|i| i as f64 * 0.05).collect();
        let cands = fit_candidates(&xs).unwrap();
        assert!(cands.iter().any(|c| matches!(
            c,
            CandidateFit::Excluded {
                family: Family::Beta,
                ..
            }
        )));
        assert_ne!(fit_range_model(&xs).unwrap().family(), Family::Beta);
    }

    #[test]
    fn sample_guards() {
        assert!(matches!(fit_range_model(&[0.1; 10]), Err(Error::Input(_))));
        let mut xs = vec![0.1; 60];
        xs[3] = -1.0;
        assert!(matches!(fit_range_model(&xs), Err(Error::Input(_))));
        // Two-point sets are refused rather than fitted.
        let two: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.01 } else { 0.02 }).collect();
        assert!(fit_range_model(&two).is_err());
    }

    #[test]
    fn ties_prefer_fewer_parameters() {
        let a = FittedRangeModel {
            dist: Distribution::new(Family::Gamma, vec![1.0, 1.0]).unwrap(),
            log_likelihood: 0.0,
            bic: 5.0,
            n: 10,
        };
        let b = FittedRangeModel {
            dist: Distribution::new(Family::Exponential, vec![1.0]).unwrap(),
            log_likelihood: 0.0,
            bic: 5.0,
            n: 10,
        };
        let chosen = select(vec![CandidateFit::Fitted(a), CandidateFit::Fitted(b)]).unwrap();
        assert_eq!(chosen.family(), Family::Exponential);
    }
}
