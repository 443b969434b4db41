//! Parabolic Poincare-type inequalities on cylinders, an oscillation-in-time
//! estimate, and the norm-conjugate (dual characterization) sandwich for the
//! L1 deviation of a time series. All quantities are measured ratios, not
//! asserted theorems: the tests pin the measured constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grid::SpaceTimeField;
use crate::maximal::{cylinder_average, MaximalError, ParabolicCylinder};
use crate::orlicz::{NFunction, OrliczError};

#[derive(Debug, Error)]
pub enum PoincareError {
    #[error(transparent)]
    Maximal(#[from] MaximalError),
    #[error(transparent)]
    Orlicz(#[from] OrliczError),
    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),
    #[error("{0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoincareMode {
    /// LHS and RHS in L1 means; the time derivative enters through the
    /// certified flux bound alpha * mean|G|.
    Weak,
    /// Both sides run through the N-function.
    Modular,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub lhs: f64,
    pub rhs: f64,
    /// LHS / RHS; zero when both sides vanish.
    pub ratio: f64,
    /// Concentration constant of the weight: sup rho * |Q| / int rho.
    pub c0: f64,
}

fn weighted_mean_on(
    a: &SpaceTimeField,
    rho: Option<&SpaceTimeField>,
    nodes: &[(usize, usize, usize)],
) -> Result<(f64, f64), PoincareError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut sup = 0.0f64;
    for &(it, iy, ix) in nodes {
        let r = match rho {
            Some(f) => {
                let v = f.get(0, it, iy, ix);
                if v < 0.0 {
                    return Err(PoincareError::DegenerateWeight(
                        "weight must be nonnegative".into(),
                    ));
                }
                v
            }
            None => 1.0,
        };
        sup = sup.max(r);
        num += r * a.get(0, it, iy, ix);
        den += r;
    }
    if den <= 0.0 {
        return Err(PoincareError::DegenerateWeight(
            "weight vanishes on the cylinder".into(),
        ));
    }
    // c0 with counting measure: sup * node count / mass.
    let c0 = sup * nodes.len() as f64 / den;
    Ok((num / den, c0))
}

/// Ratio of the two sides of the parabolic Poincare inequality on a cylinder.
///
/// Weak mode: mean of |a - <a>_rho| / r against mean|grad a| + alpha mean|G|.
/// Modular mode: phi-modular means on both sides, the flux term as
/// phi(alpha mean|G|). Requires dt a = div G for the flux bound to certify
/// the time-derivative term.
pub fn poincare_gap(
    a: &SpaceTimeField,
    g: &SpaceTimeField,
    q: &ParabolicCylinder,
    rho: Option<&SpaceTimeField>,
    mode: PoincareMode,
    phi: Option<&NFunction>,
) -> Result<GapReport, PoincareError> {
    if a.rank != 1 {
        return Err(PoincareError::BadInput("a must be scalar".into()));
    }
    let nodes = q.grid_nodes(&a.spec);
    if nodes.is_empty() {
        return Err(MaximalError::OutsideGrid.into());
    }
    let (mean, c0) = weighted_mean_on(a, rho, &nodes)?;
    let grad = a.gradient();
    let flux_mean = cylinder_average(g, q)?;
    let n = nodes.len() as f64;
    let (lhs, rhs) = match mode {
        PoincareMode::Weak => {
            let mut l = 0.0;
            let mut dg = 0.0;
            for &(it, iy, ix) in &nodes {
                l += (a.get(0, it, iy, ix) - mean).abs() / q.r;
                dg += grad.norm_at(it, iy, ix);
            }
            (l / n, dg / n + q.alpha * flux_mean)
        }
        PoincareMode::Modular => {
            let phi = phi.ok_or_else(|| {
                PoincareError::BadInput("modular mode needs an N-function".into())
            })?;
            let mut l = 0.0;
            let mut dg = 0.0;
            for &(it, iy, ix) in &nodes {
                l += phi.value((a.get(0, it, iy, ix) - mean).abs() / q.r);
                dg += phi.value(grad.norm_at(it, iy, ix));
            }
            (l / n, dg / n + phi.value(q.alpha * flux_mean))
        }
    };
    let ratio = if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    };
    Ok(GapReport {
        lhs,
        rhs,
        ratio,
        c0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeOscillation {
    /// Mean over the time layers of |<a(t)>_eta - <a>_{eta x I}|.
    pub oscillation: f64,
    /// r * alpha * mean|G| over the cylinder (certified flux bound).
    pub bound: f64,
    /// Measured concentration constant of eta, including its gradient term.
    pub c0: f64,
}

/// Oscillation in time of spatial eta-averages on a cylinder against the
/// flux bound. eta is a nonnegative spatial weight sampled as a field
/// (evaluated per node; normally time-independent).
pub fn time_oscillation(
    a: &SpaceTimeField,
    g: &SpaceTimeField,
    q: &ParabolicCylinder,
    eta: &SpaceTimeField,
) -> Result<TimeOscillation, PoincareError> {
    if a.rank != 1 || eta.rank != 1 {
        return Err(PoincareError::BadInput("a and eta must be scalar".into()));
    }
    let nodes = q.grid_nodes(&a.spec);
    if nodes.is_empty() {
        return Err(MaximalError::OutsideGrid.into());
    }
    // Group the cylinder nodes by time layer.
    let mut layers: std::collections::BTreeMap<usize, Vec<(usize, usize)>> =
        std::collections::BTreeMap::new();
    for &(it, iy, ix) in &nodes {
        layers.entry(it).or_default().push((iy, ix));
    }
    // Concentration constant of eta over the spatial section.
    let geta = eta.gradient();
    let mut sup = 0.0f64;
    let mut gsup = 0.0f64;
    let mut mass = 0.0;
    let mut count = 0usize;
    for (&it, cols) in &layers {
        for &(iy, ix) in cols {
            let v = eta.get(0, it, iy, ix);
            if v < 0.0 {
                return Err(PoincareError::DegenerateWeight(
                    "eta must be nonnegative".into(),
                ));
            }
            sup = sup.max(v);
            gsup = gsup.max(geta.norm_at(it, iy, ix));
            mass += v;
            count += 1;
        }
    }
    if mass <= 0.0 {
        return Err(PoincareError::DegenerateWeight(
            "eta vanishes on the cylinder".into(),
        ));
    }
    let c0 = (sup + q.r * gsup) * count as f64 / mass;
    // Per-layer eta-means and the global eta x I mean.
    let mut layer_means = Vec::with_capacity(layers.len());
    let mut gnum = 0.0;
    let mut gden = 0.0;
    for (&it, cols) in &layers {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(iy, ix) in cols {
            let e = eta.get(0, it, iy, ix);
            num += e * a.get(0, it, iy, ix);
            den += e;
        }
        gnum += num;
        gden += den;
        layer_means.push(if den > 0.0 { num / den } else { 0.0 });
    }
    let global = gnum / gden;
    let oscillation =
        layer_means.iter().map(|m| (m - global).abs()).sum::<f64>() / layer_means.len() as f64;
    let bound = q.r * q.alpha * cylinder_average(g, q)?;
    Ok(TimeOscillation {
        oscillation,
        bound,
        c0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateCheck {
    /// Sum of |f - mean| over the series (counting measure).
    pub l1_dev: f64,
    /// Sup over the finite mean-zero bump family of sum f * beta.
    pub bump_sup: f64,
    /// Sup over derivative-bounded primitives gamma of |sum f * gamma'|.
    pub primitive_sup: f64,
}

/// Dual characterization of the L1 deviation of a time series by finite
/// families of admissible test sequences. The family always contains the
/// near-optimal candidate (sign(f - mean) recentered), so
/// l1_dev <= 2 * bump_sup holds unconditionally, while bump_sup <= l1_dev is
/// exact for every admissible bump.
pub fn norm_conjugate_check(f: &[f64], seed: u64) -> ConjugateCheck {
    let n = f.len();
    if n == 0 {
        return ConjugateCheck {
            l1_dev: 0.0,
            bump_sup: 0.0,
            primitive_sup: 0.0,
        };
    }
    let mean = f.iter().sum::<f64>() / n as f64;
    let l1_dev = f.iter().map(|v| (v - mean).abs()).sum::<f64>();

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    // Near-optimal candidate: recentered sign pattern, sup norm <= 1.
    let s: Vec<f64> = f.iter().map(|v| (v - mean).signum()).collect();
    let sbar = s.iter().sum::<f64>() / n as f64;
    candidates.push(s.iter().map(|v| (v - sbar) / (1.0 + sbar.abs())).collect());
    // Random smooth bumps, recentered and sup-normalized; 20 bumps x 3 scales.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &scale in &[1.0f64, 0.5, 0.25] {
        for _ in 0..20 {
            let k = rng.gen_range(1..=4) as f64;
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut b: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / n.max(2) as f64;
                    (std::f64::consts::TAU * k * t * scale + phase).sin()
                })
                .collect();
            let m = b.iter().sum::<f64>() / n as f64;
            let mut sup = 0.0f64;
            for v in &mut b {
                *v -= m;
                sup = sup.max(v.abs());
            }
            if sup > 0.0 {
                for v in &mut b {
                    *v /= sup;
                }
                candidates.push(b);
            }
        }
    }
    let pair = |b: &[f64]| -> f64 { f.iter().zip(b).map(|(x, y)| x * y).sum() };
    let bump_sup = candidates.iter().map(|b| pair(b)).fold(0.0f64, f64::max);

    // Primitives: gamma' piecewise constant +1 / -k/(n-k), vanishing-sum so
    // the primitive is compactly supported; both orientations, all splits
    // with sup norm <= 1, plus every mean-zero bump (each is some gamma').
    let mut primitive_sup = bump_sup;
    for k in 1..n {
        let lo = k as f64;
        let hi = (n - k) as f64;
        let (a_val, b_val) = if lo <= hi {
            (1.0, -lo / hi)
        } else {
            (hi / lo, -1.0)
        };
        let mut acc = 0.0;
        for (i, v) in f.iter().enumerate() {
            acc += v * if i < k { a_val } else { b_val };
        }
        primitive_sup = primitive_sup.max(acc.abs());
    }
    ConjugateCheck {
        l1_dev,
        bump_sup,
        primitive_sup,
    }
}
