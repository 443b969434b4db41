//! Alpha-parabolic geometry and the three cylinder operators: the maximal
//! function over backwards cylinders, the sharp (oscillation) operator and the
//! negative-norm functional for distributional time derivatives.
//!
//! Cylinders are quantized: centers on grid nodes, radii dyadic multiples of
//! h. Averages over a cylinder use the counting measure on the clipped node
//! set, so a constant field has maximal function equal to that constant.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{GridSpec, SpaceTimeField};

#[derive(Debug, Error)]
pub enum MaximalError {
    #[error("empty radii set")]
    EmptyRadii,
    #[error("cylinder contains no grid nodes")]
    OutsideGrid,
    #[error("flux-bound mode requires the flux field G")]
    MissingFlux,
    #[error("no admissible test functions for this cylinder")]
    EmptyFamily,
    #[error("rank mismatch: {0}")]
    Rank(String),
}

/// Metric ball of the alpha-parabolic distance: the symmetric cylinder
/// I_{alpha r^2}(t) x B_r(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicCylinder {
    pub t: f64,
    pub x: [f64; 2],
    pub r: f64,
    pub alpha: f64,
}

impl ParabolicCylinder {
    /// sigma Q: same center, radius sigma r (time extent scales by sigma^2).
    pub fn scaled(&self, sigma: f64) -> ParabolicCylinder {
        ParabolicCylinder {
            r: sigma * self.r,
            ..*self
        }
    }

    /// Half-length of the time interval.
    pub fn time_extent(&self) -> f64 {
        self.alpha * self.r * self.r
    }

    /// Alpha-parabolic distance from the center to a point.
    pub fn center_distance(&self, t: f64, x: f64, y: f64) -> f64 {
        let dt = ((t - self.t).abs() / self.alpha).sqrt();
        let dx = ((x - self.x[0]).powi(2) + (y - self.x[1]).powi(2)).sqrt();
        dt.max(dx)
    }

    pub fn contains(&self, t: f64, x: f64, y: f64) -> bool {
        let fuzz = 1.0 + 1e-12;
        (t - self.t).abs() <= self.time_extent() * fuzz
            && (x - self.x[0]).powi(2) + (y - self.x[1]).powi(2) <= (self.r * self.r) * fuzz
    }

    /// Grid nodes inside the cylinder (clipped to the grid).
    pub fn grid_nodes(&self, spec: &GridSpec) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let te = self.time_extent();
        let it_lo = ((self.t - te - spec.t_min) / spec.tau - 1.0).floor().max(0.0) as usize;
        for it in it_lo..spec.nt {
            let t = spec.time(it);
            if t > self.t + te * (1.0 + 1e-12) {
                break;
            }
            for iy in 0..spec.ny() {
                let y = if spec.m == 2 { spec.coord(1, iy) } else { self.x[1] };
                for ix in 0..spec.nx() {
                    let x = spec.coord(0, ix);
                    if self.contains(t, x, y) {
                        out.push((it, iy, ix));
                    }
                }
            }
        }
        out
    }
}

/// Dyadic radius ladder h * 2^k, from h up to (past) the grid diameter for the
/// given alpha scaling.
pub fn dyadic_radii(spec: &GridSpec, alpha: f64) -> Vec<f64> {
    let t_span = (spec.nt - 1) as f64 * spec.tau;
    let mut x_span2 = ((spec.n[0] - 1) as f64 * spec.h).powi(2);
    if spec.m == 2 {
        x_span2 += ((spec.n[1] - 1) as f64 * spec.h).powi(2);
    }
    let x_span = x_span2.sqrt();
    let mut radii = Vec::new();
    let mut r = spec.h;
    for _ in 0..48 {
        radii.push(r);
        if r >= x_span && alpha * r * r >= t_span {
            break;
        }
        r *= 2.0;
    }
    radii
}

/// Backwards time window length in steps: centers with t_c - t_z in
/// [0, alpha r^2]. Shared by the fast path and the brute-force oracle so the
/// quantization is identical.
pub(crate) fn t_window(alpha: f64, r: f64, tau: f64) -> usize {
    (alpha * r * r / tau * (1.0 + 1e-12) + 1e-12).floor() as usize
}

/// Squared spatial halfwidth in index units, with the same fuzz convention.
pub(crate) fn x_halfwidth_sq(r: f64, h: f64) -> f64 {
    let q = r / h;
    q * q * (1.0 + 1e-12) + 1e-12
}

/// Maximal function over backwards cylinders at a single node: sup over
/// quantized (center, radius) pairs whose cylinder contains the node of the
/// average of |f| over the clipped cylinder.
pub fn m_alpha_at(
    f: &SpaceTimeField,
    alpha: f64,
    radii: &[f64],
    node: (usize, usize, usize),
) -> Result<f64, MaximalError> {
    if radii.is_empty() {
        return Err(MaximalError::EmptyRadii);
    }
    let spec = &f.spec;
    let (itz, iyz, ixz) = node;
    let mut best: f64 = 0.0;
    for &r in radii {
        let kt = t_window(alpha, r, spec.tau);
        let rh2 = x_halfwidth_sq(r, spec.h);
        let ky = if spec.m == 2 { (rh2.sqrt()) as usize } else { 0 };
        let kx = (rh2.sqrt()) as usize;
        for itc in itz..spec.nt.min(itz + kt + 1) {
            for iyc in iyz.saturating_sub(ky)..spec.ny().min(iyz + ky + 1) {
                let dy = iyc as isize - iyz as isize;
                for ixc in ixz.saturating_sub(kx)..spec.nx().min(ixz + kx + 1) {
                    let dx = ixc as isize - ixz as isize;
                    if (dx * dx + dy * dy) as f64 > rh2 {
                        continue;
                    }
                    best = best.max(backwards_average(f, alpha, r, (itc, iyc, ixc)));
                }
            }
        }
    }
    Ok(best)
}

/// Average of |f| over the clipped backwards cylinder centered at a node.
fn backwards_average(f: &SpaceTimeField, alpha: f64, r: f64, center: (usize, usize, usize)) -> f64 {
    let spec = &f.spec;
    let (itc, iyc, ixc) = center;
    let kt = t_window(alpha, r, spec.tau);
    let rh2 = x_halfwidth_sq(r, spec.h);
    let ky = if spec.m == 2 { (rh2.sqrt()) as usize } else { 0 };
    let kx = (rh2.sqrt()) as usize;
    let mut sum = 0.0;
    let mut count = 0usize;
    for it in itc.saturating_sub(kt)..=itc {
        for iy in iyc.saturating_sub(ky)..spec.ny().min(iyc + ky + 1) {
            let dy = iy as isize - iyc as isize;
            for ix in ixc.saturating_sub(kx)..spec.nx().min(ixc + kx + 1) {
                let dx = ix as isize - ixc as isize;
                if (dx * dx + dy * dy) as f64 > rh2 {
                    continue;
                }
                sum += f.norm_at(it, iy, ix);
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Maximal function over backwards cylinders at every node. Exact sup over the
/// quantized family (centers on nodes, the given radii), computed separably:
/// per radius, cylinder averages via prefix sums, then sliding-window maxima
/// over admissible centers.
pub fn m_alpha(
    f: &SpaceTimeField,
    alpha: f64,
    radii: &[f64],
) -> Result<SpaceTimeField, MaximalError> {
    if radii.is_empty() {
        return Err(MaximalError::EmptyRadii);
    }
    let spec = f.spec.clone();
    let (nt, ny, nx) = (spec.nt, spec.ny(), spec.nx());
    let n = nt * ny * nx;
    let mag = f.magnitude();

    // Per-y prefix sums over (t, x): p[y][(it)(nx+1) + ix] with exclusive ends.
    let pitch = (nx + 1) * (nt + 1);
    let mut prefix = vec![0.0f64; ny * pitch];
    for iy in 0..ny {
        let p = &mut prefix[iy * pitch..(iy + 1) * pitch];
        for it in 0..nt {
            let mut row = 0.0;
            for ix in 0..nx {
                row += mag.data[spec.node_index(it, iy, ix)];
                p[(it + 1) * (nx + 1) + ix + 1] = p[it * (nx + 1) + ix + 1] + row;
            }
        }
    }
    let rect = |iy: usize, t_lo: usize, t_hi: usize, x_lo: usize, x_hi: usize| -> f64 {
        // Inclusive index ranges, assumed already clipped.
        let p = &prefix[iy * pitch..(iy + 1) * pitch];
        let w = nx + 1;
        p[(t_hi + 1) * w + x_hi + 1] - p[t_lo * w + x_hi + 1] - p[(t_hi + 1) * w + x_lo]
            + p[t_lo * w + x_lo]
    };

    let mut out = SpaceTimeField::zeros(spec.clone(), 1);
    let mut avg = vec![0.0f64; n];
    let mut tmax = vec![0.0f64; n];
    let mut rowmax: Vec<Vec<f64>> = Vec::new();

    for &r in radii {
        let kt = t_window(alpha, r, spec.tau);
        let rh2 = x_halfwidth_sq(r, spec.h);
        let ky = if spec.m == 2 { rh2.sqrt() as usize } else { 0 };
        // Halfwidth of the disc row at vertical offset dy.
        let wx = |dy: usize| -> usize { (rh2 - (dy * dy) as f64).max(0.0).sqrt() as usize };

        // Cylinder averages per center.
        for itc in 0..nt {
            let t_lo = itc.saturating_sub(kt);
            for iyc in 0..ny {
                for ixc in 0..nx {
                    let mut sum = 0.0;
                    let mut cnt = 0usize;
                    let dy_lo = iyc.saturating_sub(ky);
                    let dy_hi = ny.min(iyc + ky + 1);
                    for iy in dy_lo..dy_hi {
                        let dy = iy.abs_diff(iyc);
                        let w = wx(dy);
                        let x_lo = ixc.saturating_sub(w);
                        let x_hi = (ixc + w).min(nx - 1);
                        sum += rect(iy, t_lo, itc, x_lo, x_hi);
                        cnt += (itc - t_lo + 1) * (x_hi - x_lo + 1);
                    }
                    avg[spec.node_index(itc, iyc, ixc)] = sum / cnt as f64;
                }
            }
        }

        // Forward sliding max along t: centers with itc in [itz, itz + kt].
        let slice = ny * nx;
        for lane in 0..slice {
            sliding_max_lane(&avg, &mut tmax, lane, slice, nt, 0, kt);
        }

        // Per distinct row halfwidth: centered sliding max along x.
        let mut widths: Vec<usize> = (0..=ky).map(wx).collect();
        widths.sort_unstable();
        widths.dedup();
        rowmax.clear();
        for &w in &widths {
            let mut rm = vec![0.0f64; n];
            for it in 0..nt {
                for iy in 0..ny {
                    let base = spec.node_index(it, iy, 0);
                    sliding_max_lane(&tmax, &mut rm, base, 1, nx, w, w);
                }
            }
            rowmax.push(rm);
        }
        let width_slot = |dy: usize| -> usize {
            let w = wx(dy);
            widths.binary_search(&w).unwrap()
        };

        // Combine over disc rows.
        for it in 0..nt {
            for iy in 0..ny {
                for ix in 0..nx {
                    let mut best = f64::NEG_INFINITY;
                    let lo = iy.saturating_sub(ky);
                    let hi = ny.min(iy + ky + 1);
                    for iyc in lo..hi {
                        let dy = iyc.abs_diff(iy);
                        let rm = &rowmax[width_slot(dy)];
                        best = best.max(rm[spec.node_index(it, iyc, ix)]);
                    }
                    let o = spec.node_index(it, iy, ix);
                    if best > out.data[o] {
                        out.data[o] = best;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// dst[base + i*stride] = max of src over lane indices [i-before, i+after],
/// clipped to [0, len). Monotone-deque, O(len).
fn sliding_max_lane(
    src: &[f64],
    dst: &mut [f64],
    base: usize,
    stride: usize,
    len: usize,
    before: usize,
    after: usize,
) {
    let mut deque: VecDeque<usize> = VecDeque::new();
    // Pre-fill the look-ahead for i = 0.
    for j in 0..len.min(after + 1) {
        push_back_monotone(&mut deque, src, base, stride, j);
    }
    for i in 0..len {
        while let Some(&front) = deque.front() {
            if front + before < i {
                deque.pop_front();
            } else {
                break;
            }
        }
        dst[base + i * stride] = src[base + deque.front().unwrap() * stride];
        let incoming = i + after + 1;
        if incoming < len {
            push_back_monotone(&mut deque, src, base, stride, incoming);
        }
    }
}

fn push_back_monotone(deque: &mut VecDeque<usize>, src: &[f64], base: usize, stride: usize, j: usize) {
    let v = src[base + j * stride];
    while let Some(&back) = deque.back() {
        if src[base + back * stride] <= v {
            deque.pop_back();
        } else {
            break;
        }
    }
    deque.push_back(j);
}

/// Componentwise mean of a field over a symmetric cylinder (counting measure
/// on the clipped node set).
pub fn cylinder_mean(
    f: &SpaceTimeField,
    q: &ParabolicCylinder,
) -> Result<Vec<f64>, MaximalError> {
    let nodes = q.grid_nodes(&f.spec);
    if nodes.is_empty() {
        return Err(MaximalError::OutsideGrid);
    }
    let mut mean = vec![0.0; f.rank];
    for &(it, iy, ix) in &nodes {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += f.get(c, it, iy, ix);
        }
    }
    for m in &mut mean {
        *m /= nodes.len() as f64;
    }
    Ok(mean)
}

/// Mean of |f| over a symmetric cylinder.
pub fn cylinder_average(f: &SpaceTimeField, q: &ParabolicCylinder) -> Result<f64, MaximalError> {
    let nodes = q.grid_nodes(&f.spec);
    if nodes.is_empty() {
        return Err(MaximalError::OutsideGrid);
    }
    let sum: f64 = nodes.iter().map(|&(it, iy, ix)| f.norm_at(it, iy, ix)).sum();
    Ok(sum / nodes.len() as f64)
}

/// Sharp operator on one cylinder: mean oscillation divided by the radius.
pub fn sharp_mq(a: &SpaceTimeField, q: &ParabolicCylinder) -> Result<f64, MaximalError> {
    let nodes = q.grid_nodes(&a.spec);
    if nodes.is_empty() {
        return Err(MaximalError::OutsideGrid);
    }
    let mean = cylinder_mean(a, q)?;
    let mut osc = 0.0;
    for &(it, iy, ix) in &nodes {
        let mut d2 = 0.0;
        for c in 0..a.rank {
            let d = a.get(c, it, iy, ix) - mean[c];
            d2 += d * d;
        }
        osc += d2.sqrt();
    }
    Ok(osc / nodes.len() as f64 / q.r)
}

/// Smooth bumps on a cylinder normalized in the scaled norm
/// ||xi|| + r ||grad xi|| + alpha r^2 ||dt xi|| <= 1 (discrete sup norms),
/// each vanishing outside the open cylinder.
pub struct TestFunctionFamily {
    pub cylinder: ParabolicCylinder,
    pub members: Vec<SpaceTimeField>,
}

const FAMILY_SCALES: [f64; 3] = [1.0, 0.6, 0.35];
const FAMILY_OFFSETS: usize = 5;

impl TestFunctionFamily {
    pub fn new(
        spec: &GridSpec,
        q: &ParabolicCylinder,
        seed: u64,
    ) -> Result<Self, MaximalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut members = Vec::new();
        // Keep one full stencil layer inside Q so every difference quotient
        // of a member vanishes outside the cylinder.
        let te = q.time_extent() - 2.0 * spec.tau;
        let re = q.r - 2.0 * spec.h;
        if te <= 0.0 || re <= 0.0 {
            return Err(MaximalError::EmptyFamily);
        }
        for &scale in &FAMILY_SCALES {
            for k in 0..FAMILY_OFFSETS {
                // First offset is the center; the rest are random within the
                // slack left by the scale so the support stays inside Q.
                let slack = (1.0 - scale) * 0.9;
                let (ot, ox, oy) = if k == 0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let ot = rng.gen_range(-1.0..1.0) * slack * te;
                    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                    let rad = rng.gen_range(0.0..1.0f64).sqrt() * slack * re;
                    if spec.m == 2 {
                        (ot, rad * ang.cos(), rad * ang.sin())
                    } else {
                        (ot, rng.gen_range(-1.0..1.0) * slack * re, 0.0)
                    }
                };
                let (ct, cx, cy) = (q.t + ot, q.x[0] + ox, q.x[1] + oy);
                let (st, sx) = (scale * te, scale * re);
                let mut xi = SpaceTimeField::from_fn(spec.clone(), |t, x, y| {
                    let ut = (t - ct) / st;
                    let dx2 = (x - cx).powi(2) + if spec.m == 2 { (y - cy).powi(2) } else { 0.0 };
                    let ux = dx2.sqrt() / sx;
                    bump(ut.abs()) * bump(ux)
                });
                // Discrete scaled norm; skip bumps the grid cannot resolve.
                let sup = xi.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if sup == 0.0 {
                    continue;
                }
                let grad = xi.gradient();
                let gsup = (0..spec.nt)
                    .flat_map(|it| (0..spec.ny()).map(move |iy| (it, iy)))
                    .flat_map(|(it, iy)| (0..spec.nx()).map(move |ix| (it, iy, ix)))
                    .fold(0.0f64, |a, (it, iy, ix)| a.max(grad.norm_at(it, iy, ix)));
                let dt = xi.dt();
                let tsup = dt.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let norm = sup + q.r * gsup + q.alpha * q.r * q.r * tsup;
                for v in &mut xi.data {
                    *v /= norm;
                }
                members.push(xi);
            }
        }
        if members.is_empty() {
            return Err(MaximalError::EmptyFamily);
        }
        Ok(TestFunctionFamily {
            cylinder: *q,
            members,
        })
    }
}

fn bump(s: f64) -> f64 {
    if s < 1.0 {
        let u = 1.0 - s * s;
        u * u * u
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NqMode {
    /// Certified upper bound: mean of |G| over the cylinder, valid when
    /// dt w = div G there.
    FluxBound,
    /// Sampled lower bound: max over the test family of
    /// r |Q|^{-1} |<w, dt xi>|.
    TestFamily,
}

/// Negative-norm functional of dt w on a cylinder in one of the two modes.
pub fn n_q(
    w: &SpaceTimeField,
    g: Option<&SpaceTimeField>,
    q: &ParabolicCylinder,
    mode: NqMode,
    seed: u64,
) -> Result<f64, MaximalError> {
    match mode {
        NqMode::FluxBound => {
            let g = g.ok_or(MaximalError::MissingFlux)?;
            cylinder_average(g, q)
        }
        NqMode::TestFamily => {
            let family = TestFunctionFamily::new(&w.spec, q, seed)?;
            n_q_family(w, q, &family)
        }
    }
}

/// Test-family mode with a caller-provided family.
pub fn n_q_family(
    w: &SpaceTimeField,
    q: &ParabolicCylinder,
    family: &TestFunctionFamily,
) -> Result<f64, MaximalError> {
    if w.rank != 1 {
        return Err(MaximalError::Rank("n_q expects a scalar field".into()));
    }
    let nodes = q.grid_nodes(&w.spec);
    if nodes.is_empty() {
        return Err(MaximalError::OutsideGrid);
    }
    let mut best: f64 = 0.0;
    for xi in &family.members {
        let dt = xi.dt();
        let mut pair = 0.0;
        for &(it, iy, ix) in &nodes {
            pair += w.get(0, it, iy, ix) * dt.get(0, it, iy, ix);
        }
        best = best.max(q.r * pair.abs() / nodes.len() as f64);
    }
    Ok(best)
}
