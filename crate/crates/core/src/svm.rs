//! Soft-margin support vector classifier with a Gaussian kernel, trained by
//! sequential minimal optimization using second-order working-set selection
//! (Fan, Chen and Lin, 2005). Labels are `+1` / `-1`.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub type Features = [f64; 4];

#[inline]
pub fn rbf(a: &Features, b: &Features, gamma: f64) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    let d3 = a[3] - b[3];
    (-gamma * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoConfig {
    pub c: f64,
    pub gamma: f64,
    /// Stop when the maximal KKT violation drops below this.
    pub tolerance: f64,
    /// Iteration cap; `None` picks `max(100_000, 100 n)`.
    pub max_iter: Option<usize>,
    pub cache_bytes: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: 1.0,
            tolerance: 1e-3,
            max_iter: None,
            cache_bytes: 256 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub support: Vec<Features>,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    /// Decision function is `sum coef_i K(sv_i, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
}

impl SvmSolution {
    pub fn decision(&self, x: &Features, gamma: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * rbf(sv, x, gamma))
            .sum::<f64>()
            - self.rho
    }
}

/// FIFO cache of kernel matrix rows.
struct RowCache<'a> {
    x: &'a [Features],
    gamma: f64,
    rows: Vec<Option<Box<[f64]>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> RowCache<'a> {
    fn new(x: &'a [Features], gamma: f64, bytes: usize) -> Self {
        let row_bytes = x.len().max(1) * std::mem::size_of::<f64>();
        Self {
            x,
            gamma,
            rows: vec![None; x.len()],
            order: VecDeque::new(),
            capacity: (bytes / row_bytes).max(2),
        }
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            return;
        }
        if self.order.len() >= self.capacity {
            let old = self.order.pop_front().unwrap();
            self.rows[old] = None;
        }
        let xi = self.x[i];
        let row: Box<[f64]> = self.x.iter().map(|xj| rbf(&xi, xj, self.gamma)).collect();
        self.rows[i] = Some(row);
        self.order.push_back(i);
    }

    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        // capacity >= 2, so ensuring j never evicts i
        (
            self.rows[i].as_deref().unwrap(),
            self.rows[j].as_deref().unwrap(),
        )
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.ensure(i);
        self.rows[i].as_deref().unwrap()
    }
}

pub fn train(x: &[Features], y: &[f64], cfg: &SmoConfig) -> Result<SvmSolution> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("{n} samples but {} labels", y.len())));
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::SingleClass);
    }
    if !(cfg.c > 0.0 && cfg.gamma > 0.0) {
        return Err(Error::Config(format!(
            "C and gamma must be positive, got {} and {}",
            cfg.c, cfg.gamma
        )));
    }
    let c = cfg.c;
    let max_iter = cfg.max_iter.unwrap_or_else(|| (100 * n).max(100_000));
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = RowCache::new(x, cfg.gamma, cfg.cache_bytes);
    const TAU: f64 = 1e-12;

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iter = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            let ki = cache.row(i);
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    // K_tt = K_ii = 1 for the Gaussian kernel
                    let a = (2.0 - 2.0 * ki[t]).max(TAU);
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tolerance {
            break;
        }
        if iter >= max_iter {
            return Err(Error::Nonconvergence { iterations: iter });
        }
        iter += 1;

        let (ki, kj) = cache.pair(i, j);
        let kij = ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (2.0 - 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
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
            let quad = (2.0 - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
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
        // Q_tk = y_t y_k K_tk
        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (ki[t] * di + kj[t] * dj);
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_count += 1;
            free_sum += yg;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        0.5 * (ub + lb)
    };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(x[t]);
            coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmSolution {
        support,
        coef,
        rho,
        iterations: iter,
    })
}
