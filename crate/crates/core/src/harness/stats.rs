//! Agreement statistics between predicted and subjective scores.
//!
//! SRCC assigns average ranks to ties and KRCC is Kendall's tau-b, computed
//! with Knight's O(n log n) pair counting.

use std::cmp::Ordering;

use crate::{Error, Result};

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank-order correlation (Pearson on average ranks).
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: i64| t * (t - 1) / 2;
    let mut tied_x = 0i64;
    let mut tied_xy = 0i64;
    let mut run_x = 1i64;
    let mut run_xy = 1i64;
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut scratch = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut scratch);

    let mut tied_y = 0i64;
    let mut run_y = 1i64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tied_y += pairs(run_y);
            run_y = 1;
        }
    }
    tied_y += pairs(run_y);

    let total = pairs(n as i64);
    let numerator = total - tied_x - tied_y + tied_xy - 2 * swaps;
    let (dx, dy) = (total - tied_x, total - tied_y);
    if dx == 0 || dy == 0 {
        return Err(Error::Degenerate("all pairs tied".into()));
    }
    Ok(tau_b_from_counts(numerator, dx, dy))
}

/// Shared final step so every tau-b path rounds identically.
pub(crate) fn tau_b_from_counts(
    concordant_minus_discordant: i64,
    untied_x: i64,
    untied_y: i64,
) -> f64 {
    concordant_minus_discordant as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt()
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let (sl, sr) = scratch.split_at_mut(mid);
    let mut swaps = merge_count(left, sl) + merge_count(right, sr);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j].total_cmp(&left[i]) == Ordering::Less {
            scratch[k] = right[j];
            swaps += (left.len() - i) as i64;
            j += 1;
        } else {
            scratch[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    while i < left.len() {
        scratch[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        scratch[k] = right[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&scratch[..n]);
    swaps
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 1)?;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / x.len() as f64).sqrt())
}

/// Parameters of the monotone 4-parameter logistic
/// `f(x) = b2 + (b1 - b2) / (1 + exp(-(x - b3) / |b4|))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic {
    pub b: [f64; 4],
}

impl Logistic {
    pub fn eval(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4] = self.b;
        b2 + (b1 - b2) / (1.0 + (-(x - b3) / b4.abs().max(1e-12)).exp())
    }
}

/// Least-squares logistic mapping from `x` onto `y` (Levenberg-Marquardt
/// with a forward-difference Jacobian).
pub fn fit_logistic(x: &[f64], y: &[f64]) -> Result<Logistic> {
    check_pair(x, y, 4)?;
    let (xmin, xmax) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let spread = (xmax - xmin).max(1e-9);
    let mut model = Logistic {
        b: [ymax, ymin, mean(x), spread / 4.0],
    };
    let sse = |m: &Logistic| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&a, &b)| (m.eval(a) - b).powi(2))
            .sum()
    };
    let mut cost = sse(&model);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&xi, &yi) in x.iter().zip(y) {
            let f0 = model.eval(xi);
            let mut grad = [0.0; 4];
            for (p, g) in grad.iter_mut().enumerate() {
                let h = 1e-7 * model.b[p].abs().max(1e-3);
                let mut m = model;
                m.b[p] += h;
                *g = (m.eval(xi) - f0) / h;
            }
            let r = yi - f0;
            for a in 0..4 {
                jtr[a] += grad[a] * r;
                for b in 0..4 {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (d, row) in a.iter_mut().enumerate() {
                row[d] += lambda * (jtj[d][d].abs() + 1e-12);
            }
            if let Some(step) = solve4(a, jtr) {
                let mut trial = model;
                for p in 0..4 {
                    trial.b[p] += step[p];
                }
                let c = sse(&trial);
                if c.is_finite() && c < cost {
                    let gain = cost - c;
                    model = trial;
                    cost = c;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = gain > 1e-15 * (1.0 + cost);
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(model)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut out = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * out[k]).sum();
        out[row] = (b[row] - s) / a[row][row];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plcc_affine_and_reversed() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            plcc(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            plcc(&[1.0], &[1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            plcc(&[1.0, 2.0], &[1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn srcc_cases() {
        let x: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3).ln()).collect();
        assert!((srcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 3.0]),
            vec![3.0, 1.0, 3.0, 3.0]
        );
    }

    #[test]
    fn krcc_cases() {
        assert!((krcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            krcc(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        assert!(matches!(
            krcc(&[1.0, 1.0], &[2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn logistic_recovers_a_monotone_curve() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let truth = Logistic {
            b: [5.0, 1.0, 4.0, 1.5],
        };
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        let mapped: Vec<f64> = x.iter().map(|&v| fit.eval(v)).collect();
        assert!(rmse(&mapped, &y).unwrap() < 1e-4);
    }
}
