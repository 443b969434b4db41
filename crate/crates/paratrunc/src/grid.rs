//! Discrete space-time fields on uniform grids over J x Omega, difference
//! operators, weighted means, modular integrals and the zero/reflection
//! extension to an enlarged grid.
//!
//! Layout: values are stored component-major, then time-major row-major, i.e.
//! `data[((c * nt + it) * ny + iy) * nx + ix]`. For `m = 1` the y axis has a
//! single node.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::orlicz::NFunction;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("grid mismatch between fields: {0}")]
    Mismatch(String),
    #[error("degenerate weight (||rho||_1 = 0)")]
    DegenerateWeight,
    #[error("rank mismatch: {0}")]
    Rank(String),
    #[error("field file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform grid over a time interval and a spatial box.
///
/// Time nodes are `t_min + k tau` for `k = 0..nt`. Spatial nodes of axis `i`
/// are `x_min[i] + j h`. An original (unextended) problem grid has
/// `t_min = -t0` and last time node at 0, with the box `[0, L_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub m: usize,
    pub nt: usize,
    /// Node counts per spatial axis; `n[1] == 1` when `m == 1`.
    pub n: [usize; 2],
    pub h: f64,
    pub tau: f64,
    pub t_min: f64,
    pub x_min: [f64; 2],
}

impl GridSpec {
    /// Grid for J x Omega with J = (-t0, 0), t0 = (nt-1) tau, Omega = prod [0, L_i].
    pub fn new(m: usize, nt: usize, n: [usize; 2], h: f64, tau: f64) -> Result<Self, GridError> {
        if m != 1 && m != 2 {
            return Err(GridError::Invalid(format!("m must be 1 or 2, got {m}")));
        }
        if h <= 0.0 || tau <= 0.0 {
            return Err(GridError::Invalid("h and tau must be positive".into()));
        }
        let ny = if m == 2 { n[1] } else { 1 };
        if nt < 4 || n[0] < 4 || (m == 2 && ny < 4) {
            return Err(GridError::Invalid("need at least 4 nodes per axis".into()));
        }
        let t0 = (nt - 1) as f64 * tau;
        Ok(GridSpec {
            m,
            nt,
            n: [n[0], ny],
            h,
            tau,
            t_min: -t0,
            x_min: [0.0, 0.0],
        })
    }

    pub fn nx(&self) -> usize {
        self.n[0]
    }

    pub fn ny(&self) -> usize {
        self.n[1]
    }

    /// Nodes per time slice.
    pub fn slice_len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn node_count(&self) -> usize {
        self.nt * self.slice_len()
    }

    /// Measure of one node cell, tau * h^m.
    pub fn cell_measure(&self) -> f64 {
        self.tau * self.h.powi(self.m as i32)
    }

    pub fn time(&self, it: usize) -> f64 {
        self.t_min + it as f64 * self.tau
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.x_min[axis] + i as f64 * self.h
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.nt - 1)
    }

    /// Depth of the represented time interval below its top node.
    pub fn t0(&self) -> f64 {
        -self.t_min
    }

    pub fn node_index(&self, it: usize, iy: usize, ix: usize) -> usize {
        (it * self.n[1] + iy) * self.n[0] + ix
    }

    /// Inverse of `node_index`.
    pub fn node_coords(&self, idx: usize) -> (usize, usize, usize) {
        let ix = idx % self.n[0];
        let rest = idx / self.n[0];
        (rest / self.n[1], rest % self.n[1], ix)
    }

    /// Trapezoidal weight of a node (product of per-axis endpoint halving).
    pub fn trapezoid_weight(&self, it: usize, iy: usize, ix: usize) -> f64 {
        let mut w = axis_weight(it, self.nt) * axis_weight(ix, self.n[0]);
        if self.m == 2 {
            w *= axis_weight(iy, self.n[1]);
        }
        w
    }

    /// True if the spatial index lies on the boundary of the box.
    pub fn on_spatial_boundary(&self, iy: usize, ix: usize) -> bool {
        ix == 0
            || ix == self.n[0] - 1
            || (self.m == 2 && (iy == 0 || iy == self.n[1] - 1))
    }

    /// Grid diameter in the alpha-parabolic metric.
    pub fn parabolic_diameter(&self, alpha: f64) -> f64 {
        let lt = (self.nt - 1) as f64 * self.tau;
        let mut lx2 = ((self.n[0] - 1) as f64 * self.h).powi(2);
        if self.m == 2 {
            lx2 += ((self.n[1] - 1) as f64 * self.h).powi(2);
        }
        (lt / alpha).sqrt().max(lx2.sqrt())
    }
}

fn axis_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// How a field is understood outside its own grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensionMode {
    None,
    /// Extended by zero in space / below the time interval and by reflection
    /// across the top time node (even for the function, odd for the flux).
    ZeroThenReflect,
}

/// Sampled scalar or vector function on a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    pub spec: GridSpec,
    pub rank: usize,
    pub data: Vec<f64>,
    pub ext: ExtensionMode,
}

impl SpaceTimeField {
    pub fn zeros(spec: GridSpec, rank: usize) -> Self {
        let len = rank * spec.node_count();
        SpaceTimeField {
            spec,
            rank,
            data: vec![0.0; len],
            ext: ExtensionMode::None,
        }
    }

    /// Build a scalar field from `f(t, x, y)`.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(spec, 1);
        let spec = out.spec.clone();
        for it in 0..spec.nt {
            let t = spec.time(it);
            for iy in 0..spec.ny() {
                let y = spec.coord(1, iy);
                for ix in 0..spec.nx() {
                    let x = spec.coord(0, ix);
                    let i = spec.node_index(it, iy, ix);
                    out.data[i] = f(t, x, y);
                }
            }
        }
        out
    }

    /// Build a vector field from per-component closures evaluated like `from_fn`.
    pub fn vector_from_fn(
        spec: GridSpec,
        rank: usize,
        f: impl Fn(usize, f64, f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(spec, rank);
        let spec = out.spec.clone();
        for c in 0..rank {
            for it in 0..spec.nt {
                let t = spec.time(it);
                for iy in 0..spec.ny() {
                    let y = spec.coord(1, iy);
                    for ix in 0..spec.nx() {
                        let x = spec.coord(0, ix);
                        let i = out.index(c, it, iy, ix);
                        out.data[i] = f(c, t, x, y);
                    }
                }
            }
        }
        out
    }

    pub fn index(&self, c: usize, it: usize, iy: usize, ix: usize) -> usize {
        (c * self.spec.nt + it) * self.spec.slice_len() + self.spec.node_index(0, iy, ix)
    }

    pub fn get(&self, c: usize, it: usize, iy: usize, ix: usize) -> f64 {
        self.data[self.index(c, it, iy, ix)]
    }

    pub fn set(&mut self, c: usize, it: usize, iy: usize, ix: usize, v: f64) {
        let i = self.index(c, it, iy, ix);
        self.data[i] = v;
    }

    /// Euclidean norm over components at a node.
    pub fn norm_at(&self, it: usize, iy: usize, ix: usize) -> f64 {
        if self.rank == 1 {
            self.get(0, it, iy, ix).abs()
        } else {
            let mut s = 0.0;
            for c in 0..self.rank {
                let v = self.get(c, it, iy, ix);
                s += v * v;
            }
            s.sqrt()
        }
    }

    /// Pointwise magnitude as a scalar field.
    pub fn magnitude(&self) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(self.spec.clone(), 1);
        for it in 0..self.spec.nt {
            for iy in 0..self.spec.ny() {
                for ix in 0..self.spec.nx() {
                    let i = self.spec.node_index(it, iy, ix);
                    out.data[i] = self.norm_at(it, iy, ix);
                }
            }
        }
        out
    }

    pub fn assert_finite(&self) -> Result<(), GridError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(GridError::Invalid("field contains non-finite values".into()))
        }
    }

    /// Validate zero values on the spatial boundary (W^{1,1}_0 semantics).
    pub fn assert_zero_boundary(&self) -> Result<(), GridError> {
        for it in 0..self.spec.nt {
            for iy in 0..self.spec.ny() {
                for ix in 0..self.spec.nx() {
                    if self.spec.on_spatial_boundary(iy, ix) {
                        for c in 0..self.rank {
                            if self.get(c, it, iy, ix) != 0.0 {
                                return Err(GridError::Invalid(format!(
                                    "nonzero boundary value at (it={it}, iy={iy}, ix={ix})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Spatial gradient: centered differences inside, one-sided at the box
    /// faces. A scalar input of rank 1 yields a rank-m field; rank-n inputs
    /// yield rank n*m with gradient components grouped per input component.
    pub fn gradient(&self) -> SpaceTimeField {
        let m = self.spec.m;
        let mut out = SpaceTimeField::zeros(self.spec.clone(), self.rank * m);
        for c in 0..self.rank {
            for it in 0..self.spec.nt {
                for iy in 0..self.spec.ny() {
                    for ix in 0..self.spec.nx() {
                        let gx = self.diff_x(c, it, iy, ix);
                        let i = out.index(c * m, it, iy, ix);
                        out.data[i] = gx;
                        if m == 2 {
                            let gy = self.diff_y(c, it, iy, ix);
                            let j = out.index(c * m + 1, it, iy, ix);
                            out.data[j] = gy;
                        }
                    }
                }
            }
        }
        out
    }

    /// Divergence of an m-vector field, built from the same one-dimensional
    /// stencils as `gradient` so that the pair is adjoint (up to sign) on
    /// interior-supported fields.
    pub fn divergence(&self) -> Result<SpaceTimeField, GridError> {
        let m = self.spec.m;
        if self.rank != m {
            return Err(GridError::Rank(format!(
                "divergence needs an {m}-vector field, got rank {}",
                self.rank
            )));
        }
        let mut out = SpaceTimeField::zeros(self.spec.clone(), 1);
        for it in 0..self.spec.nt {
            for iy in 0..self.spec.ny() {
                for ix in 0..self.spec.nx() {
                    let mut d = self.diff_x(0, it, iy, ix);
                    if m == 2 {
                        d += self.diff_y(1, it, iy, ix);
                    }
                    let i = out.spec.node_index(it, iy, ix);
                    out.data[i] = d;
                }
            }
        }
        Ok(out)
    }

    fn diff_x(&self, c: usize, it: usize, iy: usize, ix: usize) -> f64 {
        let n = self.spec.nx();
        let h = self.spec.h;
        if ix == 0 {
            (self.get(c, it, iy, 1) - self.get(c, it, iy, 0)) / h
        } else if ix == n - 1 {
            (self.get(c, it, iy, n - 1) - self.get(c, it, iy, n - 2)) / h
        } else {
            (self.get(c, it, iy, ix + 1) - self.get(c, it, iy, ix - 1)) / (2.0 * h)
        }
    }

    fn diff_y(&self, c: usize, it: usize, iy: usize, ix: usize) -> f64 {
        let n = self.spec.ny();
        let h = self.spec.h;
        if iy == 0 {
            (self.get(c, it, 1, ix) - self.get(c, it, 0, ix)) / h
        } else if iy == n - 1 {
            (self.get(c, it, n - 1, ix) - self.get(c, it, n - 2, ix)) / h
        } else {
            (self.get(c, it, iy + 1, ix) - self.get(c, it, iy - 1, ix)) / (2.0 * h)
        }
    }

    /// Time derivative by the same centered/one-sided stencil along t.
    pub fn dt(&self) -> SpaceTimeField {
        let nt = self.spec.nt;
        let tau = self.spec.tau;
        let mut out = SpaceTimeField::zeros(self.spec.clone(), self.rank);
        for c in 0..self.rank {
            for it in 0..nt {
                for iy in 0..self.spec.ny() {
                    for ix in 0..self.spec.nx() {
                        let d = if it == 0 {
                            (self.get(c, 1, iy, ix) - self.get(c, 0, iy, ix)) / tau
                        } else if it == nt - 1 {
                            (self.get(c, nt - 1, iy, ix) - self.get(c, nt - 2, iy, ix)) / tau
                        } else {
                            (self.get(c, it + 1, iy, ix) - self.get(c, it - 1, iy, ix))
                                / (2.0 * tau)
                        };
                        let i = out.index(c, it, iy, ix);
                        out.data[i] = d;
                    }
                }
            }
        }
        out
    }
}

/// Trapezoidal inner product of two fields of equal rank.
pub fn inner(f: &SpaceTimeField, g: &SpaceTimeField) -> Result<f64, GridError> {
    if f.spec != g.spec || f.rank != g.rank {
        return Err(GridError::Mismatch("inner product operands differ".into()));
    }
    let mut acc = 0.0;
    for it in 0..f.spec.nt {
        for iy in 0..f.spec.ny() {
            for ix in 0..f.spec.nx() {
                let w = f.spec.trapezoid_weight(it, iy, ix);
                let mut dot = 0.0;
                for c in 0..f.rank {
                    dot += f.get(c, it, iy, ix) * g.get(c, it, iy, ix);
                }
                acc += w * dot;
            }
        }
    }
    Ok(acc * f.spec.cell_measure())
}

/// Trapezoidal weighted mean <f>_rho componentwise; errors on ||rho||_1 = 0.
pub fn weighted_mean(f: &SpaceTimeField, rho: &SpaceTimeField) -> Result<Vec<f64>, GridError> {
    if f.spec != rho.spec {
        return Err(GridError::Mismatch("field and weight grids differ".into()));
    }
    if rho.rank != 1 {
        return Err(GridError::Rank("weight must be scalar".into()));
    }
    let mut num = vec![0.0; f.rank];
    let mut den = 0.0;
    for it in 0..f.spec.nt {
        for iy in 0..f.spec.ny() {
            for ix in 0..f.spec.nx() {
                let w = f.spec.trapezoid_weight(it, iy, ix) * rho.get(0, it, iy, ix);
                den += w;
                for c in 0..f.rank {
                    num[c] += w * f.get(c, it, iy, ix);
                }
            }
        }
    }
    if den <= 0.0 {
        return Err(GridError::DegenerateWeight);
    }
    for v in &mut num {
        *v /= den;
    }
    Ok(num)
}

/// Trapezoidal quadrature of phi(|f|) over the whole grid.
pub fn modular_integral(f: &SpaceTimeField, phi: &NFunction) -> f64 {
    let mut acc = 0.0;
    for it in 0..f.spec.nt {
        for iy in 0..f.spec.ny() {
            for ix in 0..f.spec.nx() {
                let w = f.spec.trapezoid_weight(it, iy, ix);
                acc += w * phi.value(f.norm_at(it, iy, ix));
            }
        }
    }
    acc * f.spec.cell_measure()
}

/// Placement of an original grid inside an extended one (index offsets).
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub t_off: usize,
    pub x_off: [usize; 2],
    /// Index (in the extended grid) of the original top time node t = t_max,
    /// the reflection axis.
    pub t_top: usize,
}

/// An extended pair (w, G) on the enlarged grid together with the embedding
/// of the original domain.
#[derive(Debug, Clone)]
pub struct Extension {
    pub w: SpaceTimeField,
    pub g: SpaceTimeField,
    pub original: GridSpec,
    pub emb: Embedding,
}

impl Extension {
    /// True if the extended node lies in the original J x Omega.
    pub fn in_original(&self, it: usize, iy: usize, ix: usize) -> bool {
        let e = &self.emb;
        let o = &self.original;
        it >= e.t_off
            && it < e.t_off + o.nt
            && ix >= e.x_off[0]
            && ix < e.x_off[0] + o.n[0]
            && (o.m == 1 || (iy >= e.x_off[1] && iy < e.x_off[1] + o.n[1]))
    }

    /// True if the extended node lies in the doubled support region
    /// (-t0, t0) x Omega where the truncation may be nonzero.
    pub fn in_support_region(&self, it: usize, iy: usize, ix: usize) -> bool {
        let e = &self.emb;
        let o = &self.original;
        it >= e.t_off
            && it <= 2 * e.t_top - e.t_off
            && ix >= e.x_off[0]
            && ix < e.x_off[0] + o.n[0]
            && (o.m == 1 || (iy >= e.x_off[1] && iy < e.x_off[1] + o.n[1]))
    }
}

/// Extend `w` (even) and `G` (odd) across the top time node, by zero in space
/// and below the time interval, with `pad_t` and `pad_x` extra node layers.
pub fn extend(
    w: &SpaceTimeField,
    g: &SpaceTimeField,
    pad_t: usize,
    pad_x: usize,
) -> Result<Extension, GridError> {
    if w.spec != g.spec {
        return Err(GridError::Mismatch("w and G grids differ".into()));
    }
    let o = &w.spec;
    let nt_ext = 2 * (o.nt - 1) + 1 + 2 * pad_t;
    let n_ext = [
        o.n[0] + 2 * pad_x,
        if o.m == 2 { o.n[1] + 2 * pad_x } else { 1 },
    ];
    let spec_ext = GridSpec {
        m: o.m,
        nt: nt_ext,
        n: n_ext,
        h: o.h,
        tau: o.tau,
        t_min: o.t_min - pad_t as f64 * o.tau,
        x_min: [
            o.x_min[0] - pad_x as f64 * o.h,
            if o.m == 2 {
                o.x_min[1] - pad_x as f64 * o.h
            } else {
                0.0
            },
        ],
    };
    let emb = Embedding {
        t_off: pad_t,
        x_off: [pad_x, if o.m == 2 { pad_x } else { 0 }],
        t_top: pad_t + o.nt - 1,
    };

    let mut w_ext = SpaceTimeField::zeros(spec_ext.clone(), w.rank);
    w_ext.ext = ExtensionMode::ZeroThenReflect;
    let mut g_ext = SpaceTimeField::zeros(spec_ext, g.rank);
    g_ext.ext = ExtensionMode::ZeroThenReflect;

    for it in 0..nt_ext {
        // Source time index under even reflection across t_top; None = zero.
        let src = if it < emb.t_off {
            None
        } else if it <= emb.t_top {
            Some((it - emb.t_off, 1.0))
        } else if it <= 2 * emb.t_top - emb.t_off {
            Some((2 * emb.t_top - it - emb.t_off, -1.0))
        } else {
            None
        };
        let Some((src_it, sign)) = src else { continue };
        for iy in 0..o.n[1] {
            for ix in 0..o.n[0] {
                for c in 0..w.rank {
                    let i = w_ext.index(c, it, iy + emb.x_off[1], ix + emb.x_off[0]);
                    w_ext.data[i] = w.get(c, src_it, iy, ix);
                }
                for c in 0..g.rank {
                    let i = g_ext.index(c, it, iy + emb.x_off[1], ix + emb.x_off[0]);
                    // Even for w, odd for G; at the axis itself the original
                    // values are kept.
                    let s = if sign < 0.0 { -1.0 } else { 1.0 };
                    g_ext.data[i] = s * g.get(c, src_it, iy, ix);
                }
            }
        }
    }
    Ok(Extension {
        w: w_ext,
        g: g_ext,
        original: w.spec.clone(),
        emb,
    })
}

/// Discrete-distributional residual of dt w = div G against a test function:
/// `<w, dt xi> + <G, grad xi>` (both trapezoidal pairings).
pub fn weak_residual(
    w: &SpaceTimeField,
    g: &SpaceTimeField,
    xi: &SpaceTimeField,
) -> Result<f64, GridError> {
    let r1 = inner(w, &xi.dt())?;
    let r2 = inner(g, &xi.gradient())?;
    Ok(r1 + r2)
}

const PTF1_MAGIC: &[u8; 4] = b"PTF1";

/// Write a field in the PTF1 format: magic, u32 rank, u32 m, u32 N_t,
/// u32 N_1..N_m, f64 h, f64 tau, f64 t0, then f64 payload little-endian,
/// time-major row-major with the component index innermost.
pub fn write_ptf1(field: &SpaceTimeField, path: &Path) -> Result<(), GridError> {
    let mut buf: Vec<u8> = Vec::with_capacity(64 + field.data.len() * 8);
    buf.extend_from_slice(PTF1_MAGIC);
    let s = &field.spec;
    for v in [field.rank as u32, s.m as u32, s.nt as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..s.m {
        buf.extend_from_slice(&(s.n[i] as u32).to_le_bytes());
    }
    for v in [s.h, s.tau, s.t0()] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for it in 0..s.nt {
        for iy in 0..s.ny() {
            for ix in 0..s.nx() {
                for c in 0..field.rank {
                    buf.extend_from_slice(&field.get(c, it, iy, ix).to_le_bytes());
                }
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_ptf1(path: &Path) -> Result<SpaceTimeField, GridError> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], GridError> {
        if *pos + n > bytes.len() {
            return Err(GridError::Format("truncated PTF1 file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != PTF1_MAGIC {
        return Err(GridError::Format("bad magic (expected PTF1)".into()));
    }
    let read_u32 = |pos: &mut usize| -> Result<u32, GridError> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let rank = read_u32(&mut pos)? as usize;
    let m = read_u32(&mut pos)? as usize;
    let nt = read_u32(&mut pos)? as usize;
    if m != 1 && m != 2 {
        return Err(GridError::Format(format!("unsupported dimension m={m}")));
    }
    let mut n = [1usize; 2];
    for item in n.iter_mut().take(m) {
        *item = read_u32(&mut pos)? as usize;
    }
    let read_f64 = |pos: &mut usize| -> Result<f64, GridError> {
        let b = take(pos, 8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    };
    let h = read_f64(&mut pos)?;
    let tau = read_f64(&mut pos)?;
    let t0 = read_f64(&mut pos)?;
    if h <= 0.0 || tau <= 0.0 || nt < 2 || n[0] < 2 {
        return Err(GridError::Format("invalid header values".into()));
    }
    let spec = GridSpec {
        m,
        nt,
        n,
        h,
        tau,
        t_min: -t0,
        x_min: [0.0, 0.0],
    };
    let count = rank * spec.node_count();
    if bytes.len() - pos != count * 8 {
        return Err(GridError::Format(format!(
            "payload size mismatch: expected {} values",
            count
        )));
    }
    let mut field = SpaceTimeField::zeros(spec, rank);
    for it in 0..field.spec.nt {
        for iy in 0..field.spec.ny() {
            for ix in 0..field.spec.nx() {
                for c in 0..rank {
                    let v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                    pos += 8;
                    field.set(c, it, iy, ix, v);
                }
            }
        }
    }
    field.assert_finite()?;
    Ok(field)
}

/// CSV import for m = 1 scalar fields: lines `t,x,value`, nodes in time-major
/// order on a uniform grid.
pub fn read_csv_1d(path: &Path) -> Result<SpaceTimeField, GridError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GridError::Format(format!("bad CSV number: {e}")))?;
        if vals.len() != 3 {
            return Err(GridError::Format("CSV rows must be t,x,value".into()));
        }
        rows.push((vals[0], vals[1], vals[2]));
    }
    if rows.len() < 16 {
        return Err(GridError::Format("too few CSV rows".into()));
    }
    let mut ts: Vec<f64> = rows.iter().map(|r| r.0).collect();
    ts.dedup();
    let nx = rows.len() / ts.len();
    if nx * ts.len() != rows.len() || nx < 4 || ts.len() < 4 {
        return Err(GridError::Format("CSV rows do not form a uniform grid".into()));
    }
    let tau = ts[1] - ts[0];
    let h = rows[1].1 - rows[0].1;
    let spec = GridSpec::new(1, ts.len(), [nx, 1], h, tau)?;
    let mut field = SpaceTimeField::zeros(spec, 1);
    for (i, row) in rows.iter().enumerate() {
        field.data[i] = row.2;
    }
    field.assert_finite()?;
    Ok(field)
}

pub fn write_csv_1d(field: &SpaceTimeField, path: &Path) -> Result<(), GridError> {
    if field.spec.m != 1 || field.rank != 1 {
        return Err(GridError::Rank("CSV export is for m=1 scalar fields".into()));
    }
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "t,x,value")?;
    for it in 0..field.spec.nt {
        for ix in 0..field.spec.nx() {
            writeln!(
                out,
                "{},{},{}",
                field.spec.time(it),
                field.spec.coord(0, ix),
                field.get(0, it, 0, ix)
            )?;
        }
    }
    Ok(())
}
