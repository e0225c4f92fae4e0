//! Covariance matrix adaptation evolution strategy (derandomized, with
//! rank-one and rank-μ covariance updates and cumulative step-size control).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaesConfig {
    pub population: usize,
    pub sigma0: f64,
    pub generations: usize,
    pub seed: u64,
    /// Stop once the best value is at or below this.
    pub target: f64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        CmaesConfig {
            population: 16,
            sigma0: 0.05,
            generations: 200,
            seed: 0,
            target: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Objective at the initial mean.
    pub initial_value: f64,
    pub generations: usize,
    pub evaluations: usize,
    /// The step size collapsed before the generation budget ran out.
    pub stagnated: bool,
}

/// Minimizes `f` starting from `mean`. `f` receives a whole population at
/// once and returns one value per candidate. The initial mean is evaluated
/// too, so the result is never worse than the starting point.
pub fn cmaes_minimize(
    mut f: impl FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
    mean: &[f64],
    cfg: &CmaesConfig,
) -> Result<CmaesResult> {
    let d = mean.len();
    let lambda = cfg.population;
    if d == 0 || lambda < 2 || !(cfg.sigma0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "CMA-ES needs a nonempty start, population >= 2 and sigma0 > 0 (got d={d}, population={lambda}, sigma0={})",
            cfg.sigma0
        )));
    }
    let mut eval = |xs: &[Vec<f64>]| -> Result<Vec<f64>> {
        let v = f(xs)?;
        if v.len() != xs.len() {
            return Err(Error::Shape(format!(
                "objective returned {} values for {} candidates",
                v.len(),
                xs.len()
            )));
        }
        Ok(v.into_iter()
            .map(|x| if x.is_nan() { f64::INFINITY } else { x })
            .collect())
    };

    let df = d as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / wsum).collect();
    let mueff = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let cc = (4.0 + mueff / df) / (df + 4.0 + 2.0 * mueff / df);
    let cs = (mueff + 2.0) / (df + mueff + 5.0);
    let c1 = 2.0 / ((df + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((df + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (df + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = df.sqrt() * (1.0 - 1.0 / (4.0 * df) + 1.0 / (21.0 * df * df));
    let eigen_every = ((lambda as f64 / ((c1 + cmu) * df * 10.0)).floor() as usize).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = DVector::from_column_slice(mean);
    let mut sigma = cfg.sigma0;
    let mut c = DMatrix::<f64>::identity(d, d);
    let mut b = DMatrix::<f64>::identity(d, d);
    let mut diag = DVector::<f64>::from_element(d, 1.0);
    let mut pc = DVector::<f64>::zeros(d);
    let mut ps = DVector::<f64>::zeros(d);

    let initial_value = eval(&[mean.to_vec()])?[0];
    let mut best = mean.to_vec();
    let mut best_value = initial_value;
    let mut evaluations = 1;
    let mut generations = 0;
    let mut stagnated = false;

    for g in 0..cfg.generations {
        if best_value <= cfg.target {
            break;
        }
        let ys: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                &b * z.component_mul(&diag)
            })
            .collect();
        // the current mean rides along: on smooth objectives it is usually
        // better than any single sample
        let mut xs: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| (&m + sigma * y).as_slice().to_vec())
            .collect();
        if g > 0 {
            xs.push(m.as_slice().to_vec());
        }
        let mut values = eval(&xs)?;
        evaluations += xs.len();
        if xs.len() > lambda {
            let vm = values.pop().expect("mean value");
            let xm = xs.pop().expect("mean");
            if vm < best_value {
                best_value = vm;
                best = xm;
            }
        }
        generations = g + 1;
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        if values[order[0]] < best_value {
            best_value = values[order[0]];
            best.clone_from(&xs[order[0]]);
        }

        let yw = order[..mu]
            .iter()
            .zip(&w)
            .fold(DVector::zeros(d), |acc, (&i, &wi)| acc + wi * &ys[i]);
        m += sigma * &yw;

        let whitened = &b * (b.tr_mul(&yw)).component_div(&diag);
        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mueff).sqrt() * whitened;
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * (g as i32 + 1))).sqrt() / chi_n
            < 1.4 + 2.0 / (df + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + h * (cc * (2.0 - cc) * mueff).sqrt() * &yw;

        let mut next =
            (1.0 - c1 - cmu) * &c + c1 * (&pc * pc.transpose() + (1.0 - h) * cc * (2.0 - cc) * &c);
        for (&i, &wi) in order[..mu].iter().zip(&w) {
            next.ger(cmu * wi, &ys[i], &ys[i], 1.0);
        }
        c = next;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();

        if (g + 1) % eigen_every == 0 {
            let sym = 0.5 * (&c + c.transpose());
            let eig = sym.clone().symmetric_eigen();
            b = eig.eigenvectors;
            diag = eig.eigenvalues.map(|x| x.max(1e-300).sqrt());
            c = sym;
        }
        if !sigma.is_finite() || sigma * diag.max() < 1e-14 * (1.0 + m.amax()) {
            stagnated = true;
            break;
        }
    }
    Ok(CmaesResult {
        best,
        best_value,
        initial_value,
        generations,
        evaluations,
        stagnated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_small_ellipsoid() {
        let target = [0.3, -0.2, 0.1, 0.05];
        let f = |xs: &[Vec<f64>]| {
            Ok(xs
                .iter()
                .map(|x| {
                    x.iter()
                        .zip(&target)
                        .enumerate()
                        .map(|(i, (a, b))| 10f64.powi(i as i32) * (a - b).powi(2))
                        .sum()
                })
                .collect())
        };
        let r = cmaes_minimize(
            f,
            &[0.0; 4],
            &CmaesConfig {
                sigma0: 0.1,
                ..CmaesConfig::default()
            },
        )
        .unwrap();
        assert!(r.best_value < 1e-12, "{}", r.best_value);
        assert!(r.best_value <= r.initial_value);
    }

    #[test]
    fn rejects_bad_settings() {
        let f = |xs: &[Vec<f64>]| Ok(vec![0.0; xs.len()]);
        assert!(cmaes_minimize(f, &[], &CmaesConfig::default()).is_err());
        assert!(cmaes_minimize(
            f,
            &[0.0],
            &CmaesConfig {
                population: 1,
                ..CmaesConfig::default()
            }
        )
        .is_err());
    }
}
