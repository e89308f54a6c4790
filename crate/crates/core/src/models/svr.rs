//! ε-insensitive support vector regression with a radial kernel, trained by
//! sequential minimal optimization over the `2n`-variable dual.

use serde::{Deserialize, Serialize};

use super::{check_xy, ModelError};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrOptions {
    pub c: f64,
    pub epsilon: f64,
    /// Kernel width on standardized features; `None` means `1 / d`.
    pub gamma: Option<f64>,
    /// KKT violation at which SMO stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            gamma: None,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Standardized training inputs with nonzero dual coefficient.
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = standardize(x, &self.feature_mean, &self.feature_scale);
        self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.dual_coefficients)
                .map(|(sv, a)| a * rbf(self.gamma, sv, &z))
                .sum::<f64>()
    }
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).exp()
}

/// Per-feature mean and population standard deviation; constant features get
/// scale 1.
pub fn scaling(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let d = x.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale = (0..d)
        .map(|j| {
            let sd = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

pub fn fit_svr(x: &[Vec<f64>], y: &[f64], opts: &SvrOptions) -> Result<SvrModel, ModelError> {
    let problem = Problem::new(x, y, opts)?;
    Ok(problem.solve(opts.c, opts.epsilon, opts, None, None)?.0)
}

/// Like [`fit_svr`], also returning the dual objective after every SMO step.
pub fn fit_svr_traced(x: &[Vec<f64>], y: &[f64], opts: &SvrOptions) -> Result<(SvrModel, Vec<f64>), ModelError> {
    let problem = Problem::new(x, y, opts)?;
    let mut trace = Vec::new();
    let (m, _) = problem.solve(opts.c, opts.epsilon, opts, None, Some(&mut trace))?;
    Ok((m, trace))
}

/// Fits one model per `(C, epsilon)` pair, sharing the kernel matrix.
///
/// Pairs are solved by increasing C, then decreasing epsilon, each starting
/// from the previous dual solution: a solution stays feasible when C grows or
/// epsilon changes. Results are returned in input order and agree with
/// independent fits up to the KKT tolerance.
pub fn fit_svr_path(
    x: &[Vec<f64>],
    y: &[f64],
    settings: &[(f64, f64)],
    opts: &SvrOptions,
) -> Result<Vec<SvrModel>, ModelError> {
    let problem = Problem::new(x, y, opts)?;
    let mut order: Vec<usize> = (0..settings.len()).collect();
    order.sort_by(|&a, &b| {
        settings[a]
            .0
            .total_cmp(&settings[b].0)
            .then(settings[b].1.total_cmp(&settings[a].1))
    });
    let mut out: Vec<Option<SvrModel>> = vec![None; settings.len()];
    let mut warm: Option<Vec<f64>> = None;
    for i in order {
        let (c, epsilon) = settings[i];
        let (model, alpha) = problem.solve(c, epsilon, opts, warm.as_deref(), None)?;
        warm = Some(alpha);
        out[i] = Some(model);
    }
    Ok(out.into_iter().map(|m| m.expect("every setting solved")).collect())
}

struct Problem<'a> {
    y: &'a [f64],
    gamma: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    z: Vec<Vec<f64>>,
    k: Vec<f64>,
    diag: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(x: &[Vec<f64>], y: &'a [f64], opts: &SvrOptions) -> Result<Self, ModelError> {
        let d = check_xy(x, y, 1)?;
        if opts.gamma.is_some_and(|g| !(g > 0.0)) {
            return Err(ModelError::InvalidHyperparameter(format!("gamma {:?}", opts.gamma)));
        }
        let gamma = opts.gamma.unwrap_or(1.0 / d.max(1) as f64);
        let (mean, scale) = scaling(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| standardize(r, &mean, &scale)).collect();
        let l = z.len();
        let mut k = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..=i {
                let v = rbf(gamma, &z[i], &z[j]);
                k[i * l + j] = v;
                k[j * l + i] = v;
            }
        }
        let diag = (0..l).map(|t| k[t * l + t]).collect();
        Ok(Self {
            y,
            gamma,
            mean,
            scale,
            z,
            k,
            diag,
        })
    }

    fn solve(
        &self,
        c: f64,
        epsilon: f64,
        opts: &SvrOptions,
        warm: Option<&[f64]>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<(SvrModel, Vec<f64>), ModelError> {
        if !(c > 0.0) || !(epsilon >= 0.0) {
            return Err(ModelError::InvalidHyperparameter(format!("C {c} epsilon {epsilon}")));
        }
        let (tolerance, max_iterations) = (opts.tolerance, opts.max_iterations);
        let (y, k, diag, z) = (self.y, &self.k[..], &self.diag[..], &self.z);
        let l = z.len();
        // variables t < l carry +1 signs, t >= l carry -1
        let m = 2 * l;
        let sign = |t: usize| if t < l { 1.0 } else { -1.0 };
        let p: Vec<f64> = (0..m)
            .map(|t| if t < l { epsilon - y[t] } else { epsilon + y[t - l] })
            .collect();
        let mut alpha = warm.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
        let mut grad = p.clone();
        for i in (0..m).filter(|&i| alpha[i] != 0.0) {
            let (si, ki) = (sign(i) * alpha[i], &k[(i % l) * l..(i % l + 1) * l]);
            for t in 0..l {
                grad[t] += si * ki[t];
                grad[t + l] -= si * ki[t];
            }
        }
        let objective = |alpha: &[f64], grad: &[f64]| 0.5 * alpha.iter().zip(grad).zip(&p).map(|((a, g), pp)| a * (g + pp)).sum::<f64>();

        let row = |t: usize| &k[(t % l) * l..(t % l + 1) * l];

        let mut iterations = 0;
        let violation = loop {
            // working set selection using second order information
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = usize::MAX;
            for t in 0..l {
                if alpha[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = t;
                }
            }
            for t in l..m {
                if alpha[t] > 0.0 && grad[t] >= gmax {
                    gmax = grad[t];
                    i_sel = t;
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = usize::MAX;
            let mut obj_min = f64::INFINITY;
            if i_sel != usize::MAX {
                let ki = row(i_sel);
                let qdi = diag[i_sel % l];
                let mut consider = |t: usize, g: f64, grad_diff: f64, kt: usize| {
                    if g >= gmax2 {
                        gmax2 = g;
                    }
                    if grad_diff > 0.0 {
                        let quad = qdi + diag[kt] - 2.0 * ki[kt];
                        let quad = if quad > 0.0 { quad } else { TAU };
                        let obj = -(grad_diff * grad_diff) / quad;
                        if obj <= obj_min {
                            obj_min = obj;
                            j_sel = t;
                        }
                    }
                };
                for t in 0..l {
                    if alpha[t] > 0.0 {
                        consider(t, grad[t], gmax + grad[t], t);
                    }
                }
                for t in l..m {
                    if alpha[t] < c {
                        consider(t, -grad[t], gmax - grad[t], t - l);
                    }
                }
            }
            let violation = gmax + gmax2;
            if i_sel == usize::MAX || j_sel == usize::MAX || violation < tolerance {
                break violation.max(0.0);
            }
            if iterations >= max_iterations {
                let gap = duality_gap(&alpha, &grad, k, y, l, c, epsilon, &p);
                return Err(ModelError::NotConverged {
                    iterations,
                    duality_gap: gap,
                });
            }
            iterations += 1;

            let (i, j) = (i_sel, j_sel);
            let (ki, kj) = (row(i), row(j));
            let qij = sign(i) * sign(j) * ki[j % l];
            let (qii, qjj) = (diag[i % l], diag[j % l]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if sign(i) != sign(j) {
                let quad = (qii + qjj + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = old_i - old_j;
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (qii + qjj - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = old_i + old_j;
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            let (si, sj) = (sign(i) * di, sign(j) * dj);
            let (up, down) = grad.split_at_mut(l);
            for (((gu, gd), a), b) in up.iter_mut().zip(down.iter_mut()).zip(ki).zip(kj) {
                let v = si * a + sj * b;
                *gu += v;
                *gd -= v;
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(objective(&alpha, &grad));
            }
        };


        let rho = compute_rho(&alpha, &grad, l, c);
        let mut support_vectors = Vec::new();
        let mut dual_coefficients = Vec::new();
        for i in 0..l {
            let coef = alpha[i] - alpha[i + l];
            if coef != 0.0 {
                support_vectors.push(z[i].clone());
                dual_coefficients.push(coef);
            }
        }
        let model = SvrModel {
            gamma: self.gamma,
            c,
            epsilon,
            feature_mean: self.mean.clone(),
            feature_scale: self.scale.clone(),
            support_vectors,
            dual_coefficients,
            bias: -rho,
            iterations,
            kkt_violation: violation,
        };
        Ok((model, alpha))
    }
}

fn compute_rho(alpha: &[f64], grad: &[f64], l: usize, c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..2 * l {
        let s = if t < l { 1.0 } else { -1.0 };
        let yg = s * grad[t];
        if alpha[t] >= c {
            if s < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if s > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// Primal objective minus dual objective at the current iterate.
#[allow(clippy::too_many_arguments)]
fn duality_gap(alpha: &[f64], grad: &[f64], k: &[f64], y: &[f64], l: usize, c: f64, eps: f64, p: &[f64]) -> f64 {
    let beta: Vec<f64> = (0..l).map(|i| alpha[i] - alpha[i + l]).collect();
    let rho = compute_rho(alpha, grad, l, c);
    let mut w2 = 0.0;
    let mut loss = 0.0;
    for i in 0..l {
        let mut f = -rho;
        for j in 0..l {
            let kij = k[i * l + j];
            f += beta[j] * kij;
            w2 += beta[i] * beta[j] * kij;
        }
        loss += ((y[i] - f).abs() - eps).max(0.0);
    }
    let primal = 0.5 * w2 + c * loss;
    let dual_min = 0.5 * alpha.iter().zip(grad).zip(p).map(|((a, g), pp)| a * (g + pp)).sum::<f64>();
    primal + dual_min
}
