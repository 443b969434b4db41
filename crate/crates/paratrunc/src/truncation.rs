//! The parabolic Lipschitz truncation: bad set from the maximal operators,
//! Whitney cover of it, local averages with the boundary cases, the truncated
//! field w_lambda = w - sum_j rho_j (w - w_j), and measurement of its
//! properties (identity off the bad set, gradient bound, modular stability,
//! time-derivative bound, parabolic Hoelder quotient, integration by parts).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{self, Extension, GridError, SpaceTimeField};
use crate::maximal::{
    self, MaximalError, NqMode, ParabolicCylinder, TestFunctionFamily,
};
use crate::orlicz::NFunction;
use crate::whitney::{self, NodeMask, WhitneyCover, WhitneyError};

#[derive(Debug, Error)]
pub enum TruncationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Whitney(#[from] WhitneyError),
    #[error(transparent)]
    Maximal(#[from] MaximalError),
    #[error("invalid truncation parameters: {0}")]
    BadParams(String),
    #[error("weight field does not vanish at the top time layers")]
    BadWeight,
}

#[derive(Debug, Clone)]
pub struct TruncationParams {
    pub lambda: f64,
    pub alpha: f64,
    /// Radii for the maximal operators; empty selects the dyadic ladder.
    pub radii: Vec<f64>,
    pub phi: NFunction,
}

impl TruncationParams {
    fn validate(&self) -> Result<(), TruncationError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(TruncationError::BadParams("lambda must be positive".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(TruncationError::BadParams("alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Which case of the local-average definition applied to a cover cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AvgCase {
    /// 3/4 Q_j inside the original space-time domain: weighted average.
    Interior,
    /// 3/4 Q_j leaves the spatial box: average forced to 0.
    StraddlesSpace,
    /// 3/4 Q_j leaves the time interval: average forced to 0.
    StraddlesTime,
}

#[derive(Debug)]
pub struct TruncationResult {
    pub params: TruncationParams,
    pub bad_set: NodeMask,
    pub truncated: SpaceTimeField,
    pub cover: WhitneyCover,
    pub local_averages: Vec<f64>,
    pub case_tags: Vec<AvgCase>,
    /// True when the bad set swallowed the whole original domain.
    pub degenerate: bool,
}

/// Bad set on the extended grid: nodes where the maximal function of the
/// (domain-restricted) gradient exceeds lambda, or alpha times that of the
/// flux does. Strict inequality: ties stay in the good set.
pub fn bad_set(ext: &Extension, params: &TruncationParams) -> Result<NodeMask, TruncationError> {
    params.validate()?;
    let spec = &ext.w.spec;
    let radii = if params.radii.is_empty() {
        maximal::dyadic_radii(spec, params.alpha)
    } else {
        params.radii.clone()
    };
    let grad = restricted_gradient(ext);
    let flux = restricted_flux(ext);
    let mg = maximal::m_alpha(&grad, params.alpha, &radii)?;
    let mf = maximal::m_alpha(&flux, params.alpha, &radii)?;
    let mut mask = NodeMask::empty(spec.clone());
    for i in 0..mask.data.len() {
        mask.data[i] = mg.data[i] > params.lambda || params.alpha * mf.data[i] > params.lambda;
    }
    Ok(mask)
}

/// Gradient of the extended function, zeroed outside the original domain.
fn restricted_gradient(ext: &Extension) -> SpaceTimeField {
    let mut grad = ext.w.gradient();
    zero_outside_original(ext, &mut grad);
    grad
}

fn restricted_flux(ext: &Extension) -> SpaceTimeField {
    let mut g = ext.g.clone();
    zero_outside_original(ext, &mut g);
    g
}

fn zero_outside_original(ext: &Extension, f: &mut SpaceTimeField) {
    let spec = f.spec.clone();
    for c in 0..f.rank {
        for it in 0..spec.nt {
            for iy in 0..spec.ny() {
                for ix in 0..spec.nx() {
                    if !ext.in_original(it, iy, ix) {
                        let i = f.index(c, it, iy, ix);
                        f.data[i] = 0.0;
                    }
                }
            }
        }
    }
}

/// Continuum check that a cylinder lies inside the original J x Omega box,
/// distinguishing which face it violates.
fn classify_cylinder(ext: &Extension, q: &ParabolicCylinder) -> AvgCase {
    let o = &ext.original;
    let te = q.time_extent();
    let fuzz = 1e-12;
    let mut space_ok = q.x[0] - q.r >= o.x_min[0] - fuzz
        && q.x[0] + q.r <= o.x_min[0] + (o.n[0] - 1) as f64 * o.h + fuzz;
    if o.m == 2 {
        space_ok = space_ok
            && q.x[1] - q.r >= o.x_min[1] - fuzz
            && q.x[1] + q.r <= o.x_min[1] + (o.n[1] - 1) as f64 * o.h + fuzz;
    }
    if !space_ok {
        return AvgCase::StraddlesSpace;
    }
    let time_ok = q.t - te >= o.t_min - fuzz && q.t + te <= o.t_max() + fuzz;
    if !time_ok {
        return AvgCase::StraddlesTime;
    }
    AvgCase::Interior
}

/// Local averages w_j: the rho_j-weighted mean of w when 3/4 Q_j sits inside
/// the original domain, zero otherwise.
pub fn local_averages(
    w_ext: &SpaceTimeField,
    cover: &WhitneyCover,
    ext: &Extension,
) -> (Vec<f64>, Vec<AvgCase>) {
    let mut avgs = Vec::with_capacity(cover.cylinders.len());
    let mut tags = Vec::with_capacity(cover.cylinders.len());
    for (j, q) in cover.cylinders.iter().enumerate() {
        let tag = classify_cylinder(ext, &q.scaled(0.75));
        let v = if tag == AvgCase::Interior {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(idx, rho) in &cover.weights[j] {
                num += rho * w_ext.data[idx];
                den += rho;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        } else {
            0.0
        };
        avgs.push(v);
        tags.push(tag);
    }
    (avgs, tags)
}

/// Full truncation pipeline on an extended pair.
pub fn truncate(
    ext: &Extension,
    params: &TruncationParams,
) -> Result<TruncationResult, TruncationError> {
    params.validate()?;
    let mask = bad_set(ext, params)?;
    let mut cover = whitney::cover(&mask, params.alpha)?;
    whitney::partition_of_unity(&mut cover)?;
    let (avgs, tags) = local_averages(&ext.w, &cover, ext);
    // w_lambda = w - sum_j rho_j (w - w_j), accumulated in fixed j order;
    // nodes off the bad set are never touched, so (a) is bit-exact.
    let mut truncated = ext.w.clone();
    for (j, entries) in cover.weights.iter().enumerate() {
        let wj = avgs[j];
        for &(idx, rho) in entries {
            truncated.data[idx] -= rho * (ext.w.data[idx] - wj);
        }
    }
    let spec = &ext.w.spec;
    let mut degenerate = true;
    'outer: for it in 0..spec.nt {
        for iy in 0..spec.ny() {
            for ix in 0..spec.nx() {
                if ext.in_original(it, iy, ix) && !mask.get(it, iy, ix) {
                    degenerate = false;
                    break 'outer;
                }
            }
        }
    }
    Ok(TruncationResult {
        params: params.clone(),
        bad_set: mask,
        truncated,
        cover,
        local_averages: avgs,
        case_tags: tags,
        degenerate,
    })
}

/// Measured constants for the truncation properties.
#[derive(Debug, Serialize)]
pub struct PropertyReport {
    /// Max |w_lambda - w| over good-set nodes (identity: expected 0).
    pub a_max_dev: f64,
    pub prop_a_exact: bool,
    /// sup M_alpha(grad w_lambda) / lambda.
    pub c_b: f64,
    /// Modular stability ratio; None when the bad set is empty (vacuous).
    pub c_c: Option<f64>,
    /// Max over sampled good cylinders of alpha * mean|G| / lambda.
    pub c_d_flux: Option<f64>,
    /// Max over the same cylinders of alpha * test-family value / lambda.
    pub c_d_family: Option<f64>,
    /// (flux, family) pairs per sampled good cylinder.
    pub d_pairs: Vec<(f64, f64)>,
    /// Parabolic Hoelder quotient over random node pairs.
    pub c_e: f64,
    /// Max_j of (mean over 3/4 Q_j of |w - w_j|) / (r_j lambda).
    pub osc_c: f64,
    /// Max_k of sum_{j in A_k} |w_j - w_k| / (r_j lambda).
    pub neighbor_c: f64,
    /// w_lambda vanishes outside the doubled support region.
    pub support_ok: bool,
    pub degenerate: bool,
}

pub fn verify_properties(
    res: &TruncationResult,
    ext: &Extension,
    seed: u64,
) -> Result<PropertyReport, TruncationError> {
    let spec = &ext.w.spec;
    let lambda = res.params.lambda;
    let alpha = res.params.alpha;
    let radii = if res.params.radii.is_empty() {
        maximal::dyadic_radii(spec, alpha)
    } else {
        res.params.radii.clone()
    };

    // (a) identity off the bad set.
    let mut a_max_dev = 0.0f64;
    for i in 0..spec.node_count() {
        if !res.bad_set.data[i] {
            a_max_dev = a_max_dev.max((res.truncated.data[i] - ext.w.data[i]).abs());
        }
    }

    // (b) maximal function of the truncated gradient.
    let grad_trunc = res.truncated.gradient();
    let mb = maximal::m_alpha(&grad_trunc, alpha, &radii)?;
    let c_b = mb.data.iter().fold(0.0f64, |a, v| a.max(*v)) / lambda;

    // (c) modular stability.
    let phi = &res.params.phi;
    let cell = spec.cell_measure();
    let bad_count = res.bad_set.count();
    let c_c = if bad_count == 0 {
        None
    } else {
        let mut diff = res.truncated.clone();
        for (d, w) in diff.data.iter_mut().zip(&ext.w.data) {
            *d -= *w;
        }
        let gdiff = diff.gradient();
        let mut num = 0.0;
        for it in 0..spec.nt {
            for iy in 0..spec.ny() {
                for ix in 0..spec.nx() {
                    num += phi.value(gdiff.norm_at(it, iy, ix));
                }
            }
        }
        num *= cell;
        let grad_w = ext.w.gradient();
        let mut den = 0.0;
        for it in 0..spec.nt {
            for iy in 0..spec.ny() {
                for ix in 0..spec.nx() {
                    if res.bad_set.get(it, iy, ix) {
                        den += phi.value(grad_w.norm_at(it, iy, ix));
                    }
                }
            }
        }
        den = den * cell + phi.value(lambda) * bad_count as f64 * cell;
        Some(num / den)
    };

    // (d) time-derivative bound on sampled cylinders inside the original
    // domain; flux tier only where the cylinder avoids the bad set.
    let cylinders = sample_cylinders(ext, alpha, &radii);
    let mut d_pairs = Vec::new();
    let mut family_max: Option<f64> = None;
    for q in &cylinders {
        let family = match TestFunctionFamily::new(spec, q, seed) {
            Ok(f) => f,
            Err(MaximalError::EmptyFamily) => continue,
            Err(e) => return Err(e.into()),
        };
        let fam = alpha * maximal::n_q_family(&res.truncated, q, &family)? / lambda;
        family_max = Some(family_max.map_or(fam, |m: f64| m.max(fam)));
        let good = q
            .grid_nodes(spec)
            .iter()
            .all(|&(it, iy, ix)| !res.bad_set.get(it, iy, ix));
        if good {
            let flux =
                alpha * maximal::n_q(&ext.w, Some(&ext.g), q, NqMode::FluxBound, seed)? / lambda;
            d_pairs.push((flux, fam));
        }
    }
    let c_d_flux = d_pairs
        .iter()
        .map(|p| p.0)
        .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |m| m.max(v))));

    // (e) parabolic Hoelder quotient over random node pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut c_e = 0.0f64;
    for _ in 0..10_000 {
        let i = rng.gen_range(0..spec.node_count());
        let j = rng.gen_range(0..spec.node_count());
        if i == j {
            continue;
        }
        let (it1, iy1, ix1) = spec.node_coords(i);
        let (it2, iy2, ix2) = spec.node_coords(j);
        let dt = ((spec.time(it1) - spec.time(it2)).abs() / alpha).sqrt();
        let dx = ((spec.coord(0, ix1) - spec.coord(0, ix2)).powi(2)
            + if spec.m == 2 {
                (spec.coord(1, iy1) - spec.coord(1, iy2)).powi(2)
            } else {
                0.0
            })
        .sqrt();
        let dist = dt.max(dx);
        if dist <= 0.0 {
            continue;
        }
        let dv = (res.truncated.data[i] - res.truncated.data[j]).abs();
        c_e = c_e.max(dv / (lambda * dist));
    }

    // Per-cylinder oscillation and neighbor-difference constants.
    let mut osc_c = 0.0f64;
    for (j, q) in res.cover.cylinders.iter().enumerate() {
        let nodes = q.scaled(0.75).grid_nodes(spec);
        if nodes.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &(it, iy, ix) in &nodes {
            acc += (ext.w.get(0, it, iy, ix) - res.local_averages[j]).abs();
        }
        osc_c = osc_c.max(acc / nodes.len() as f64 / (q.r * lambda));
    }
    let mut neighbor_c = 0.0f64;
    for (k, list) in res.cover.neighbors.iter().enumerate() {
        let wk = res.local_averages[k];
        let mut acc = 0.0;
        for &j in list {
            acc += (res.local_averages[j] - wk).abs() / res.cover.cylinders[j].r;
        }
        neighbor_c = neighbor_c.max(acc / lambda);
    }

    // Support containment.
    let mut support_ok = true;
    for it in 0..spec.nt {
        for iy in 0..spec.ny() {
            for ix in 0..spec.nx() {
                if !ext.in_support_region(it, iy, ix)
                    && res.truncated.get(0, it, iy, ix) != 0.0
                {
                    support_ok = false;
                }
            }
        }
    }

    Ok(PropertyReport {
        a_max_dev,
        prop_a_exact: a_max_dev <= 1e-12,
        c_b,
        c_c,
        c_d_flux,
        c_d_family: family_max,
        d_pairs,
        c_e,
        osc_c,
        neighbor_c,
        support_ok,
        degenerate: res.degenerate,
    })
}

/// Deterministic cylinder sample: strided centers inside the original domain,
/// ladder radii, each cylinder kept two stencil layers inside J x Omega.
fn sample_cylinders(ext: &Extension, alpha: f64, radii: &[f64]) -> Vec<ParabolicCylinder> {
    let spec = &ext.w.spec;
    let o = &ext.original;
    let mut out = Vec::new();
    let stride_t = (o.nt / 5).max(1);
    let stride_x = (o.n[0] / 5).max(1);
    let stride_y = if o.m == 2 { (o.n[1] / 5).max(1) } else { 1 };
    for &r in radii {
        let te = alpha * r * r;
        for it in (0..o.nt).step_by(stride_t) {
            for iy in (0..o.n[1]).step_by(stride_y) {
                for ix in (0..o.n[0]).step_by(stride_x) {
                    let t = o.t_min + it as f64 * o.tau;
                    let x = o.x_min[0] + ix as f64 * o.h;
                    let y = if o.m == 2 {
                        o.x_min[1] + iy as f64 * o.h
                    } else {
                        0.0
                    };
                    let q = ParabolicCylinder {
                        t,
                        x: [x, y],
                        r,
                        alpha,
                    };
                    // Two-layer margin inside the original box.
                    let margin_t = 2.0 * spec.tau;
                    let margin_x = 2.0 * spec.h;
                    let mut ok = q.t - te >= o.t_min + margin_t
                        && q.t + te <= o.t_max() - margin_t
                        && q.x[0] - r >= o.x_min[0] + margin_x
                        && q.x[0] + r <= o.x_min[0] + (o.n[0] - 1) as f64 * o.h - margin_x;
                    if o.m == 2 {
                        ok = ok
                            && q.x[1] - r >= o.x_min[1] + margin_x
                            && q.x[1] + r
                                <= o.x_min[1] + (o.n[1] - 1) as f64 * o.h - margin_x;
                    }
                    // Family construction needs room for one stencil layer.
                    if ok && te > 2.0 * spec.tau && r > 2.0 * spec.h {
                        out.push(q);
                    }
                }
            }
        }
    }
    out
}

/// Residual of the discrete integration-by-parts identity tested against a
/// weight eta vanishing at the top time layers:
/// LHS = -<G, grad(w_lambda eta)>,
/// RHS = 1/2 int (|w_lambda|^2 - 2 w w_lambda) dt(eta)
///     + int_O dt(w_lambda) (w_lambda - w) eta.
pub fn ibp_residual(
    ext: &Extension,
    res: &TruncationResult,
    eta: &SpaceTimeField,
) -> Result<f64, TruncationError> {
    let spec = &ext.w.spec;
    if eta.spec != *spec || eta.rank != 1 {
        return Err(TruncationError::BadParams(
            "weight must be a scalar field on the extended grid".into(),
        ));
    }
    for iy in 0..spec.ny() {
        for ix in 0..spec.nx() {
            if eta.get(0, spec.nt - 1, iy, ix) != 0.0 || eta.get(0, spec.nt - 2, iy, ix) != 0.0 {
                return Err(TruncationError::BadWeight);
            }
        }
    }
    // LHS.
    let mut wl_eta = res.truncated.clone();
    for (v, e) in wl_eta.data.iter_mut().zip(&eta.data) {
        *v *= *e;
    }
    let lhs = -grid::inner(&ext.g, &wl_eta.gradient())?;
    // RHS, trapezoid weights matching the inner product.
    let deta = eta.dt();
    let dwl = res.truncated.dt();
    let cell = spec.cell_measure();
    let mut rhs = 0.0;
    for it in 0..spec.nt {
        for iy in 0..spec.ny() {
            for ix in 0..spec.nx() {
                let wgt = spec.trapezoid_weight(it, iy, ix) * cell;
                let wl = res.truncated.get(0, it, iy, ix);
                let w = ext.w.get(0, it, iy, ix);
                rhs += 0.5 * (wl * wl - 2.0 * w * wl) * deta.get(0, it, iy, ix) * wgt;
                if res.bad_set.get(it, iy, ix) {
                    rhs += dwl.get(0, it, iy, ix) * (wl - w) * eta.get(0, it, iy, ix) * wgt;
                }
            }
        }
    }
    Ok((lhs - rhs).abs())
}
