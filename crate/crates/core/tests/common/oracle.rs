//! Independent scalar reference implementations.

use deari::metric::{MsParams, PositiveSign};

pub fn rows(data: &[f64], width: usize) -> Vec<Vec<f64>> {
    data.chunks(width).map(|c| c.to_vec()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]).powi(2);
    }
    s.sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Exhaustive enumeration over `(sample, anchor direction, other sample,
/// negative direction)`; rows are `2 * sample + direction`.
pub fn brute_force_triplets(reps: &[Vec<f64>], margin: f64) -> Vec<(usize, usize, usize)> {
    let n = reps.len() / 2;
    let mut out = Vec::new();
    for s in 0..n {
        for dir in 0..2 {
            let a = 2 * s + dir;
            let p = 2 * s + (1 - dir);
            for other in 0..n {
                if other == s {
                    continue;
                }
                for ndir in 0..2 {
                    let q = 2 * other + ndir;
                    if dist(&reps[a], &reps[p]) + margin >= dist(&reps[a], &reps[q]) {
                        out.push((a, p, q));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Direct evaluation of the multi-similarity loss without any shift.
pub fn ms_loss_reference(
    reps: &[Vec<f64>],
    triplets: &[(usize, usize, usize)],
    params: &MsParams,
) -> f64 {
    let rows = reps.len();
    let sign = match params.sign {
        PositiveSign::Printed => 1.0,
        PositiveSign::Corrected => -1.0,
    };
    let mut total = 0.0;
    for i in 0..rows {
        let mut negs: Vec<usize> = triplets.iter().filter(|t| t.0 == i).map(|t| t.2).collect();
        let mut poss: Vec<usize> = triplets.iter().filter(|t| t.0 == i).map(|t| t.1).collect();
        negs.sort();
        negs.dedup();
        poss.sort();
        poss.dedup();
        let sn: f64 = negs
            .iter()
            .map(|&j| (params.alpha * (dot(&reps[i], &reps[j]) - params.epsilon)).exp())
            .sum();
        let sp: f64 = poss
            .iter()
            .map(|&j| (sign * params.beta * (dot(&reps[i], &reps[j]) - params.epsilon)).exp())
            .sum();
        total += (1.0 + sn).ln() / params.alpha + (1.0 + sp).ln() / params.beta;
    }
    total / rows as f64
}

pub fn normalize_rows(reps: &mut [Vec<f64>]) {
    for r in reps.iter_mut() {
        let n = dot(r, r).sqrt();
        for v in r.iter_mut() {
            *v /= n;
        }
    }
}
