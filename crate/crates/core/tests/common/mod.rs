#![allow(dead_code)]

//! Reference implementations used as independent oracles.

/// Euclidean projection onto the simplex by enumerating every candidate
/// support: for a support `S` the projection onto the affine hull of that
/// face is `z − τ` with `τ = (Σ_S z − 1)/|S|`. Among the feasible candidates
/// the closest one is the projection.
pub fn brute_force_projection(z: &[f64]) -> Vec<f64> {
    let k = z.len();
    assert!(k <= 16);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (members.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / members.len() as f64;
        let mut p = vec![0.0; k];
        let mut feasible = true;
        for &i in &members {
            p[i] = z[i] - tau;
            if p[i] < -1e-12 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        for x in &mut p {
            *x = x.max(0.0);
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.expect("the vertex at argmax is always feasible").1
}

/// Support condition for `γ-entmax(β·z)` in terms of sorted gaps,
/// `Σ_{k<j} ((γ−1)·β·(z_(k) − z_(j)))^(1/(γ−1)) < 1`, evaluated label by
/// label without any thresholds or scores.
pub fn support_by_gap_condition(z: &[f64], beta: f64, gamma: f64) -> Vec<usize> {
    let delta = 1.0 / (gamma - 1.0);
    let mut out = Vec::new();
    for j in 0..z.len() {
        let above = (0..z.len()).filter(|&k| z[k] > z[j] || (z[k] == z[j] && k < j));
        let total: f64 = above
            .map(|k| ((gamma - 1.0) * beta * (z[k] - z[j])).powf(delta))
            .sum();
        if total < 1.0 {
            out.push(j);
        }
    }
    out
}

/// Gap vector of `y` against every label ranked above it, in no particular
/// order.
pub fn gaps_above(z: &[f64], y: usize) -> Vec<f64> {
    (0..z.len())
        .filter(|&k| z[k] > z[y] || (z[k] == z[y] && k < y))
        .map(|k| z[k] - z[y])
        .collect()
}
