//! Whitney covering of an open node set in the alpha-parabolic metric:
//! cylinders with radii comparable to the distance to the complement, a
//! greedy Vitali-type selection making the quarter cylinders disjoint, the
//! neighbor structure, and a subordinate partition of unity.
//!
//! The covering properties are grid-exact by construction:
//! - every node of O lies in some half cylinder, and half cylinders stay in O;
//! - 8Q_j is inside O while 16Q_j meets the complement;
//! - quarter-cylinder node sets are pairwise disjoint;
//! - neighbor radii differ by at most a factor 2.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridSpec, SpaceTimeField};
use crate::maximal::ParabolicCylinder;

#[derive(Debug, Error)]
pub enum WhitneyError {
    #[error("open set touches the grid boundary; extend the grid first")]
    BoundaryTouch,
    #[error("mask/grid mismatch: {0}")]
    Mismatch(String),
    #[error("partition denominator vanished at a covered node (index {0})")]
    DegeneratePartition(usize),
}

/// Boolean node set on a grid.
#[derive(Debug, Clone)]
pub struct NodeMask {
    pub spec: GridSpec,
    pub data: Vec<bool>,
}

impl NodeMask {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.node_count();
        NodeMask {
            spec,
            data: vec![false; n],
        }
    }

    /// Nodes where the scalar field exceeds the threshold (strictly).
    pub fn from_threshold(f: &SpaceTimeField, threshold: f64) -> Self {
        NodeMask {
            spec: f.spec.clone(),
            data: f.data.iter().map(|v| *v > threshold).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn get(&self, it: usize, iy: usize, ix: usize) -> bool {
        self.data[self.spec.node_index(it, iy, ix)]
    }

    /// True if any masked node lies on the boundary of the grid (first/last
    /// index of any axis).
    pub fn touches_boundary(&self) -> bool {
        let s = &self.spec;
        for it in 0..s.nt {
            for iy in 0..s.ny() {
                for ix in 0..s.nx() {
                    if !self.get(it, iy, ix) {
                        continue;
                    }
                    if it == 0
                        || it == s.nt - 1
                        || ix == 0
                        || ix == s.nx() - 1
                        || (s.m == 2 && (iy == 0 || iy == s.ny() - 1))
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    pub fn union(&mut self, other: &NodeMask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a || *b;
        }
    }
}

/// A Whitney cover: selected cylinders, neighbor sets, diagnostics, and
/// (after `partition_of_unity`) sparse partition weights.
#[derive(Debug)]
pub struct WhitneyCover {
    pub spec: GridSpec,
    pub alpha: f64,
    pub mask: NodeMask,
    pub cylinders: Vec<ParabolicCylinder>,
    /// Center node of each cylinder.
    pub centers: Vec<(usize, usize, usize)>,
    /// A_k = indices j (including k) with 3/4 Q_j intersecting 3/4 Q_k.
    pub neighbors: Vec<Vec<usize>>,
    /// Sparse weights rho_j as (node index, value) lists; empty until
    /// `partition_of_unity` runs.
    pub weights: Vec<Vec<(usize, f64)>>,
    /// Measured scaled seminorms of each rho_j (see `partition_of_unity`).
    pub p3: Vec<f64>,
    /// Max over nodes of O of the number of covering sets 4Q_j.
    pub overlap_max: usize,
}

const RADIUS_FRACTION: f64 = 1.0 / 9.0;
const LADDER_RATIO: f64 = 1.5;

/// Build the cover of the open node set O for the given time scaling.
pub fn cover(o: &NodeMask, alpha: f64) -> Result<WhitneyCover, WhitneyError> {
    let spec = o.spec.clone();
    if o.count() > 0 && o.touches_boundary() {
        return Err(WhitneyError::BoundaryTouch);
    }
    let (nt, ny, nx) = (spec.nt, spec.ny(), spec.nx());
    let n = spec.node_count();

    // Prefix sums of the complement indicator per y-plane, over (t, x).
    let pitch = (nx + 1) * (nt + 1);
    let mut prefix = vec![0u32; ny * pitch];
    for iy in 0..ny {
        let p = &mut prefix[iy * pitch..(iy + 1) * pitch];
        for it in 0..nt {
            let mut row = 0u32;
            for ix in 0..nx {
                if !o.get(it, iy, ix) {
                    row += 1;
                }
                p[(it + 1) * (nx + 1) + ix + 1] = p[it * (nx + 1) + ix + 1] + row;
            }
        }
    }
    let complement_in = |iy: usize, t_lo: usize, t_hi: usize, x_lo: usize, x_hi: usize| -> i64 {
        let p = &prefix[iy * pitch..(iy + 1) * pitch];
        let w = nx + 1;
        p[(t_hi + 1) * w + x_hi + 1] as i64 - p[t_lo * w + x_hi + 1] as i64
            - p[(t_hi + 1) * w + x_lo] as i64
            + p[t_lo * w + x_lo] as i64
    };

    // Distance ladder: level i passes at z iff the symmetric cylinder of
    // radius lev[i] stays on-grid and inside O. Level 0 is small enough to
    // contain only the node itself, so every O node passes it.
    let r_start = 0.5 * spec.h.min((spec.tau / alpha).sqrt());
    let mut ladder = vec![r_start];
    let diam = spec.parabolic_diameter(alpha);
    while *ladder.last().unwrap() < diam {
        ladder.push(ladder.last().unwrap() * LADDER_RATIO);
    }

    // Highest passing level per node (-1 outside O).
    let mut level: Vec<i32> = o.data.iter().map(|b| if *b { 0 } else { -1 }).collect();
    let mut alive: Vec<usize> = (0..n).filter(|i| o.data[*i]).collect();
    for (li, &radius) in ladder.iter().enumerate().skip(1) {
        let kt = crate::maximal::t_window(alpha, radius, spec.tau);
        let rh2 = crate::maximal::x_halfwidth_sq(radius, spec.h);
        let ky = if spec.m == 2 { rh2.sqrt() as usize } else { 0 };
        let mut next = Vec::with_capacity(alive.len());
        for &idx in &alive {
            let (it, iy, ix) = spec.node_coords(idx);
            let pass = (|| {
                if it < kt || it + kt >= nt {
                    return false;
                }
                for dy in 0..=ky {
                    let w = (rh2 - (dy * dy) as f64).max(0.0).sqrt() as usize;
                    if ix < w || ix + w >= nx {
                        return false;
                    }
                    let rows: &[usize] = &[iy.wrapping_sub(dy), iy + dy];
                    for (ri, &row) in rows.iter().enumerate() {
                        if ri == 1 && dy == 0 {
                            continue;
                        }
                        if row >= ny {
                            return false;
                        }
                        if complement_in(row, it - kt, it + kt, ix - w, ix + w) > 0 {
                            return false;
                        }
                    }
                }
                true
            })();
            if pass {
                level[idx] = li as i32;
                next.push(idx);
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }

    // Radii: one ninth of the passing level, so the 8/16 sandwich of (W2)
    // holds exactly: 8r < R <= distance and 16r > 1.5 R >= a complement hit.
    let radius_of = |idx: usize| -> f64 { ladder[level[idx] as usize] * RADIUS_FRACTION };

    // Greedy selection in descending radius (ties by node index): take a node
    // unless its quarter cylinder already contains a claimed node.
    let mut order: Vec<usize> = (0..n).filter(|i| level[*i] >= 0).collect();
    order.sort_by(|a, b| level[*b].cmp(&level[*a]).then(a.cmp(b)));
    let mut claimed = vec![false; n];
    let mut cylinders = Vec::new();
    let mut centers = Vec::new();
    for idx in order {
        let (it, iy, ix) = spec.node_coords(idx);
        let r = radius_of(idx);
        let q = ParabolicCylinder {
            t: spec.time(it),
            x: [
                spec.coord(0, ix),
                if spec.m == 2 { spec.coord(1, iy) } else { 0.0 },
            ],
            r,
            alpha,
        };
        let quarter = q.scaled(0.25).grid_nodes(&spec);
        if quarter
            .iter()
            .any(|&(a, b, c)| claimed[spec.node_index(a, b, c)])
        {
            continue;
        }
        for &(a, b, c) in &quarter {
            claimed[spec.node_index(a, b, c)] = true;
        }
        cylinders.push(q);
        centers.push((it, iy, ix));
    }

    // Neighbor sets via continuum intersection of the 3/4 cylinders.
    let j_count = cylinders.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); j_count];
    for j in 0..j_count {
        for k in j..j_count {
            let (a, b) = (&cylinders[j], &cylinders[k]);
            let fuzz = 1.0 + 1e-12;
            let t_ok = (a.t - b.t).abs()
                <= 0.5625 * alpha * (a.r * a.r + b.r * b.r) * fuzz;
            let dx2 = (a.x[0] - b.x[0]).powi(2) + (a.x[1] - b.x[1]).powi(2);
            let x_ok = dx2 <= (0.75 * (a.r + b.r)).powi(2) * fuzz;
            if t_ok && x_ok {
                neighbors[j].push(k);
                if j != k {
                    neighbors[k].push(j);
                }
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    // Overlap of the 4Q_j.
    let mut overlap = vec![0u32; n];
    for q in &cylinders {
        for (a, b, c) in q.scaled(4.0).grid_nodes(&spec) {
            overlap[spec.node_index(a, b, c)] += 1;
        }
    }
    let overlap_max = (0..n)
        .filter(|i| o.data[*i])
        .map(|i| overlap[i])
        .max()
        .unwrap_or(0) as usize;

    Ok(WhitneyCover {
        spec,
        alpha,
        mask: o.clone(),
        cylinders,
        centers,
        neighbors,
        weights: Vec::new(),
        p3: Vec::new(),
        overlap_max,
    })
}

/// C^2 ramp: 1 for s <= 1/2, 0 for s >= 3/4, quintic smoothstep between.
fn theta_profile(s: f64) -> f64 {
    let u = ((0.75 - s) / 0.25).clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// Fill the partition of unity: bumps theta_j equal to 1 on the half cylinder
/// and supported in the open 3/4 cylinder, normalized to rho_j = theta_j /
/// sum_k theta_k on O. Also measures the scaled seminorm
/// sup|rho| + r sup|grad rho| + r^2 sup|grad^2 rho| + alpha r^2 sup|dt rho|
/// per member (discrete difference quotients).
pub fn partition_of_unity(cover: &mut WhitneyCover) -> Result<(), WhitneyError> {
    let spec = cover.spec.clone();
    let n = spec.node_count();
    let mut theta: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cover.cylinders.len());
    let mut denom = vec![0.0f64; n];
    for q in &cover.cylinders {
        let mut entries = Vec::new();
        for (it, iy, ix) in q.scaled(0.75).grid_nodes(&spec) {
            let y = if spec.m == 2 { spec.coord(1, iy) } else { q.x[1] };
            let s = q.center_distance(spec.time(it), spec.coord(0, ix), y) / q.r;
            let v = theta_profile(s);
            if v > 0.0 {
                let idx = spec.node_index(it, iy, ix);
                entries.push((idx, v));
                denom[idx] += v;
            }
        }
        theta.push(entries);
    }
    for i in 0..n {
        if cover.mask.data[i] && denom[i] <= 0.0 {
            return Err(WhitneyError::DegeneratePartition(i));
        }
    }
    cover.weights = theta
        .into_iter()
        .map(|entries| {
            entries
                .into_iter()
                .map(|(i, v)| (i, v / denom[i]))
                .collect()
        })
        .collect();

    cover.p3 = (0..cover.cylinders.len())
        .map(|j| measure_p3(cover, j))
        .collect();
    Ok(())
}

/// Scaled seminorm of rho_j over a local dense box around its support.
fn measure_p3(cover: &WhitneyCover, j: usize) -> f64 {
    let spec = &cover.spec;
    let q = &cover.cylinders[j];
    if cover.weights[j].is_empty() {
        return 0.0;
    }
    // Bounding box of the support, expanded by 2 stencil layers.
    let (mut t0, mut t1, mut y0, mut y1, mut x0, mut x1) =
        (usize::MAX, 0usize, usize::MAX, 0usize, usize::MAX, 0usize);
    for &(idx, _) in &cover.weights[j] {
        let (it, iy, ix) = spec.node_coords(idx);
        t0 = t0.min(it);
        t1 = t1.max(it);
        y0 = y0.min(iy);
        y1 = y1.max(iy);
        x0 = x0.min(ix);
        x1 = x1.max(ix);
    }
    let t0 = t0.saturating_sub(2);
    let t1 = (t1 + 2).min(spec.nt - 1);
    let y0 = y0.saturating_sub(2);
    let y1 = (y1 + 2).min(spec.ny() - 1);
    let x0 = x0.saturating_sub(2);
    let x1 = (x1 + 2).min(spec.nx() - 1);
    let sub = GridSpec {
        m: spec.m,
        nt: t1 - t0 + 1,
        n: [x1 - x0 + 1, y1 - y0 + 1],
        h: spec.h,
        tau: spec.tau,
        t_min: spec.time(t0),
        x_min: [spec.coord(0, x0), spec.coord(1, y0)],
    };
    let mut local = SpaceTimeField::zeros(sub, 1);
    for &(idx, v) in &cover.weights[j] {
        let (it, iy, ix) = spec.node_coords(idx);
        local.set(0, it - t0, iy - y0, ix - x0, v);
    }
    let sup = |f: &SpaceTimeField| -> f64 {
        let mut m = 0.0f64;
        for it in 0..f.spec.nt {
            for iy in 0..f.spec.ny() {
                for ix in 0..f.spec.nx() {
                    m = m.max(f.norm_at(it, iy, ix));
                }
            }
        }
        m
    };
    let grad = local.gradient();
    let hess = grad.gradient();
    let r = q.r;
    sup(&local) + r * sup(&grad) + r * r * sup(&hess)
        + cover.alpha * r * r * sup(&local.dt())
}

/// Union of the half cylinders equals O node-exactly.
pub fn verify_w1(cover: &WhitneyCover) -> bool {
    let spec = &cover.spec;
    let mut covered = vec![false; spec.node_count()];
    for q in &cover.cylinders {
        for (it, iy, ix) in q.scaled(0.5).grid_nodes(spec) {
            covered[spec.node_index(it, iy, ix)] = true;
        }
    }
    covered == cover.mask.data
}

/// 8Q_j inside O and 16Q_j meeting the complement (a node outside O, or the
/// cylinder exiting the grid, which implies a complement boundary node).
pub fn verify_w2(cover: &WhitneyCover) -> bool {
    let spec = &cover.spec;
    for q in &cover.cylinders {
        for (it, iy, ix) in q.scaled(8.0).grid_nodes(spec) {
            if !cover.mask.get(it, iy, ix) {
                return false;
            }
        }
        let sixteen = q.scaled(16.0);
        let exits = {
            let te = sixteen.time_extent();
            sixteen.t - te < spec.t_min - 1e-12
                || sixteen.t + te > spec.t_max() + 1e-12
                || sixteen.x[0] - sixteen.r < spec.x_min[0] - 1e-12
                || sixteen.x[0] + sixteen.r
                    > spec.coord(0, spec.nx() - 1) + 1e-12
                || (spec.m == 2
                    && (sixteen.x[1] - sixteen.r < spec.x_min[1] - 1e-12
                        || sixteen.x[1] + sixteen.r
                            > spec.coord(1, spec.ny() - 1) + 1e-12))
        };
        let hits_complement = sixteen
            .grid_nodes(spec)
            .iter()
            .any(|&(it, iy, ix)| !cover.mask.get(it, iy, ix));
        if !exits && !hits_complement {
            return false;
        }
    }
    true
}

/// Neighbor radii within a factor 2.
pub fn verify_w3(cover: &WhitneyCover) -> bool {
    for (k, list) in cover.neighbors.iter().enumerate() {
        let rk = cover.cylinders[k].r;
        for &j in list {
            let rj = cover.cylinders[j].r;
            if rj < 0.5 * rk - 1e-15 || rj > 2.0 * rk + 1e-15 {
                return false;
            }
        }
    }
    true
}

/// Quarter-cylinder node sets pairwise disjoint.
pub fn verify_w4(cover: &WhitneyCover) -> bool {
    let spec = &cover.spec;
    let mut seen = vec![false; spec.node_count()];
    for q in &cover.cylinders {
        for (it, iy, ix) in q.scaled(0.25).grid_nodes(spec) {
            let i = spec.node_index(it, iy, ix);
            if seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    true
}

/// Max deviation of sum_j rho_j from 1 over the nodes of O.
pub fn partition_defect(cover: &WhitneyCover) -> f64 {
    let n = cover.spec.node_count();
    let mut sum = vec![0.0f64; n];
    for entries in &cover.weights {
        for &(i, v) in entries {
            sum[i] += v;
        }
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        if cover.mask.data[i] {
            worst = worst.max((sum[i] - 1.0).abs());
        } else {
            worst = worst.max(sum[i].abs());
        }
    }
    worst
}

/// Max deviation of sum_{j in A_k} rho_j from 1 over nodes of 3/4 Q_k,
/// maximized over k.
pub fn verify_p4(cover: &WhitneyCover) -> f64 {
    let spec = &cover.spec;
    let n = spec.node_count();
    let mut worst = 0.0f64;
    for (k, list) in cover.neighbors.iter().enumerate() {
        let mut sum = vec![0.0f64; n];
        for &j in list {
            for &(i, v) in &cover.weights[j] {
                sum[i] += v;
            }
        }
        for (it, iy, ix) in cover.cylinders[k].scaled(0.75).grid_nodes(spec) {
            let i = spec.node_index(it, iy, ix);
            worst = worst.max((sum[i] - 1.0).abs());
        }
    }
    worst
}

/// Min over neighbor pairs (with nonempty node intersection) of
/// |Q_j ∩ Q_k| / max(|Q_j|, |Q_k|), node-counted. None if no such pair.
pub fn w6_min_ratio(cover: &WhitneyCover) -> Option<f64> {
    let spec = &cover.spec;
    let mut min_ratio: Option<f64> = None;
    for (k, list) in cover.neighbors.iter().enumerate() {
        let qk: std::collections::HashSet<(usize, usize, usize)> =
            cover.cylinders[k].grid_nodes(spec).into_iter().collect();
        for &j in list {
            if j <= k {
                continue;
            }
            let qj = cover.cylinders[j].grid_nodes(spec);
            let inter = qj.iter().filter(|z| qk.contains(z)).count();
            if inter == 0 {
                continue;
            }
            let ratio = inter as f64 / qj.len().max(qk.len()) as f64;
            min_ratio = Some(min_ratio.map_or(ratio, |m: f64| m.min(ratio)));
        }
    }
    min_ratio
}

/// Serializable summary of a cover for reports.
#[derive(Debug, Serialize)]
pub struct CoverSummary {
    pub alpha: f64,
    pub mask_nodes: usize,
    pub cylinder_count: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub overlap_max: usize,
    pub neighbor_max: usize,
    pub p3_max: f64,
    pub w1_exact: bool,
    pub w2_exact: bool,
    pub w3_exact: bool,
    pub w4_exact: bool,
    pub partition_defect: f64,
    pub cylinders: Vec<(f64, f64, f64, f64)>,
}

impl WhitneyCover {
    pub fn summary(&self) -> CoverSummary {
        CoverSummary {
            alpha: self.alpha,
            mask_nodes: self.mask.count(),
            cylinder_count: self.cylinders.len(),
            r_min: self
                .cylinders
                .iter()
                .map(|q| q.r)
                .fold(f64::INFINITY, f64::min),
            r_max: self.cylinders.iter().map(|q| q.r).fold(0.0, f64::max),
            overlap_max: self.overlap_max,
            neighbor_max: self.neighbors.iter().map(|l| l.len()).max().unwrap_or(0),
            p3_max: self.p3.iter().copied().fold(0.0, f64::max),
            w1_exact: verify_w1(self),
            w2_exact: verify_w2(self),
            w3_exact: verify_w3(self),
            w4_exact: verify_w4(self),
            partition_defect: if self.weights.is_empty() {
                f64::NAN
            } else {
                partition_defect(self)
            },
            cylinders: self
                .cylinders
                .iter()
                .map(|q| (q.t, q.x[0], q.x[1], q.r))
                .collect(),
        }
    }
}
