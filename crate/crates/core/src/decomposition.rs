//! Solenoidal decomposition `f = f^s + dv`, `v = 0` on `∂M_½`, on a
//! Cartesian grid over the intermediate domain.
//!
//! With `D` the staggered centered discretization of `d` and `W` the pointwise
//! metric inner product on 2-tensors, `v` minimizes `‖f − Dv‖_W`, i.e.
//! `DᵀWD v = DᵀW f`. The assembled `L = DᵀWD` is the negative of `δd`, so it
//! is symmetric positive semidefinite and definite once the Dirichlet nodes
//! are removed.

use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{DomainSpec, Surface};
use crate::error::{Error, Result};
use crate::field::{component_count, eval, TensorField};
use crate::metric::{christoffel, metric_at, Metric};
use crate::simplicity::sphere_direction;

/// Uniform grid over a bounding box of `M_½` with an inside mask.
#[derive(Debug, Clone)]
pub struct Grid {
    pub n: usize,
    pub lo: Vec<f64>,
    pub h: f64,
    pub dims: Vec<usize>,
    pub mask: Vec<bool>,
    pub domain: DomainSpec,
}

impl Grid {
    /// `nodes` points along the longest side of the bounding box.
    pub fn over_half(domain: &DomainSpec, nodes: usize) -> Self {
        let n = domain.dim();
        let c = domain.defining.center();
        let mut lo = c.clone();
        let mut hi = c.clone();
        let count = if n == 2 { 256 } else { 2048 };
        for i in 0..count {
            let dir = sphere_direction(n, i, count);
            if let Some(p) = domain.boundary_point(Surface::Half, &dir) {
                for k in 0..n {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        let side = (0..n).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        // two spare cells on every side
        let h = side / (nodes as f64 - 5.0);
        let dims: Vec<usize> = (0..n)
            .map(|k| ((hi[k] - lo[k]) / h).ceil() as usize + 5)
            .collect();
        for k in 0..n {
            lo[k] -= 2.0 * h;
        }
        let total: usize = dims.iter().product();
        let mut grid = Grid {
            n,
            lo,
            h,
            dims,
            mask: Vec::new(),
            domain: domain.clone(),
        };
        grid.mask = (0..total)
            .into_par_iter()
            .map(|i| domain.inside(&grid.point(i), Surface::Half))
            .collect();
        grid
    }

    pub fn node_count(&self) -> usize {
        self.mask.len()
    }

    pub fn multi(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        self.dims
            .iter()
            .map(|&d| {
                let v = rem % d;
                rem /= d;
                v
            })
            .collect()
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lo[k] + i as f64 * self.h)
            .collect()
    }

    fn stride(&self, axis: usize) -> usize {
        self.dims[..axis].iter().product()
    }

    pub fn neighbor(&self, idx: usize, axis: usize, offset: i64) -> Option<usize> {
        let pos = self.multi(idx)[axis] as i64 + offset;
        if pos < 0 || pos >= self.dims[axis] as i64 {
            return None;
        }
        Some((idx as i64 + offset * self.stride(axis) as i64) as usize)
    }

    /// Whether every node within `cells` steps along each axis is inside.
    pub fn deep_inside(&self, idx: usize, cells: usize) -> bool {
        if !self.mask[idx] {
            return false;
        }
        (0..self.n).all(|k| {
            (1..=cells as i64).all(|o| {
                [o, -o]
                    .iter()
                    .all(|&s| self.neighbor(idx, k, s).is_some_and(|j| self.mask[j]))
            })
        })
    }

    /// Grid of cell centers; a cell is inside when its center is in `M_½`.
    pub fn cells(&self) -> Grid {
        let lo: Vec<f64> = self.lo.iter().map(|v| v + 0.5 * self.h).collect();
        let dims: Vec<usize> = self.dims.iter().map(|d| d - 1).collect();
        let mut grid = Grid {
            n: self.n,
            lo,
            h: self.h,
            dims,
            mask: Vec::new(),
            domain: self.domain.clone(),
        };
        let total: usize = grid.dims.iter().product();
        grid.mask = (0..total)
            .into_par_iter()
            .map(|i| self.domain.inside(&grid.point(i), Surface::Half))
            .collect();
        grid
    }

    /// Width of the margin `M_½ ∖ M` in grid cells.
    pub fn margin_cells(&self) -> f64 {
        0.5 * self.domain.extension_margin / self.h
    }
}

/// Node values of a tensor field on a [`Grid`]; zero outside the mask.
#[derive(Debug, Clone)]
pub struct GridField {
    pub grid: Arc<Grid>,
    pub rank: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Arc<Grid>, rank: usize) -> Self {
        let nc = component_count(rank, grid.n);
        let len = nc * grid.node_count();
        GridField {
            grid,
            rank,
            values: vec![0.0; len],
        }
    }

    /// Samples `f` at the mask nodes.
    pub fn sample(grid: Arc<Grid>, f: &dyn TensorField) -> Result<Self> {
        let nc = f.components();
        let rank = f.rank();
        let values: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .map(|i| -> Result<Vec<f64>> {
                if grid.mask[i] {
                    eval(f, &grid.point(i))
                } else {
                    Ok(vec![0.0; nc])
                }
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        Ok(GridField { grid, rank, values })
    }

    pub fn nc(&self) -> usize {
        component_count(self.rank, self.grid.n)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let nc = self.nc();
        &self.values[node * nc..(node + 1) * nc]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&self, a: f64, other: &GridField) -> GridField {
        GridField {
            grid: self.grid.clone(),
            rank: self.rank,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    /// Tensor-product cubic interpolation weights (and derivative weights)
    /// for the four nodes around `x` along one axis.
    fn axis_weights(&self, k: usize, x: f64) -> Result<(usize, [f64; 4], [f64; 4])> {
        let g = &self.grid;
        let s = (x - g.lo[k]) / g.h;
        if s < 0.0 || s > (g.dims[k] - 1) as f64 {
            return Err(Error::GridBoundary { point: vec![x] });
        }
        let i0 = (s.floor() as i64 - 1).clamp(0, g.dims[k] as i64 - 4) as usize;
        let t = s - i0 as f64;
        let nodes = [0.0, 1.0, 2.0, 3.0];
        let mut w = [0.0; 4];
        let mut dw = [0.0; 4];
        for j in 0..4 {
            let mut p = 1.0;
            let mut dp = 0.0;
            for q in 0..4 {
                if q == j {
                    continue;
                }
                let den = nodes[j] - nodes[q];
                dp = dp * (t - nodes[q]) / den + p / den;
                p *= (t - nodes[q]) / den;
            }
            w[j] = p;
            dw[j] = dp / g.h;
        }
        Ok((i0, w, dw))
    }

    fn interpolate(&self, x: &[f64], out: &mut [f64], grad: Option<&mut [f64]>) -> Result<()> {
        let g = &self.grid;
        let n = g.n;
        let nc = self.nc();
        let mut axes = Vec::with_capacity(n);
        for k in 0..n {
            axes.push(
                self.axis_weights(k, x[k])
                    .map_err(|_| Error::GridBoundary { point: x.to_vec() })?,
            );
        }
        out.fill(0.0);
        let mut grad = grad;
        if let Some(gr) = grad.as_deref_mut() {
            gr.fill(0.0);
        }
        for t in 0..4usize.pow(n as u32) {
            let mut rem = t;
            let mut idx = 0;
            let mut w = 1.0;
            let mut offs = [0usize; 8];
            for k in 0..n {
                let o = rem % 4;
                rem /= 4;
                offs[k] = o;
                idx += (axes[k].0 + o) * g.stride(k);
                w *= axes[k].1[o];
            }
            let v = self.at(idx);
            for c in 0..nc {
                out[c] += w * v[c];
            }
            if let Some(gr) = grad.as_deref_mut() {
                for d in 0..n {
                    let mut wd = 1.0;
                    for k in 0..n {
                        wd *= if k == d {
                            axes[k].2[offs[k]]
                        } else {
                            axes[k].1[offs[k]]
                        };
                    }
                    for c in 0..nc {
                        gr[d * nc + c] += wd * v[c];
                    }
                }
            }
        }
        Ok(())
    }
}

impl TensorField for GridField {
    fn rank(&self) -> usize {
        self.rank
    }

    fn dim(&self) -> usize {
        self.grid.n
    }

    fn eval_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.interpolate(x, out, None)
    }

    fn gradient_raw(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut tmp = vec![0.0; self.nc()];
        self.interpolate(x, &mut tmp, Some(out))
    }
}

/// Sublattice of the node grid shifted by half a cell along the axes set in
/// `half`.
#[derive(Debug, Clone)]
struct Lattice {
    half: usize,
    dims: Vec<usize>,
}

impl Lattice {
    fn new(nodes: &Grid, half: usize) -> Self {
        let dims = (0..nodes.n)
            .map(|k| nodes.dims[k] - (half >> k & 1))
            .collect();
        Lattice { half, dims }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn multi(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        self.dims
            .iter()
            .map(|&d| {
                let v = rem % d;
                rem /= d;
                v
            })
            .collect()
    }

    fn index(&self, m: &[i64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for (k, &v) in m.iter().enumerate() {
            if v < 0 || v >= self.dims[k] as i64 {
                return None;
            }
            idx += v as usize * stride;
            stride *= self.dims[k];
        }
        Some(idx)
    }

    fn point(&self, nodes: &Grid, m: &[usize]) -> Vec<f64> {
        (0..nodes.n)
            .map(|k| nodes.lo[k] + nodes.h * (m[k] as f64 + 0.5 * (self.half >> k & 1) as f64))
            .collect()
    }

    /// Weights of the points of `self` that average to the point `m` of
    /// `to`, or take the centered difference along `deriv`.
    fn gather(&self, to: &Lattice, m: &[usize], h: f64, deriv: Option<usize>) -> Vec<(usize, f64)> {
        let n = m.len();
        let diff = self.half ^ to.half;
        let axes: Vec<usize> = (0..n).filter(|&k| diff >> k & 1 == 1).collect();
        let avg_axes = axes.iter().filter(|&&k| Some(k) != deriv).count();
        let scale = 0.5f64.powi(avg_axes as i32);
        let mut out = Vec::with_capacity(1 << axes.len());
        for bits in 0..1usize << axes.len() {
            let mut pos: Vec<i64> = m.iter().map(|&v| v as i64).collect();
            let mut w = scale;
            for (j, &k) in axes.iter().enumerate() {
                let upper = bits >> j & 1;
                // lower neighbor sits half a cell below `m` along `k`
                pos[k] += (to.half >> k & 1) as i64 - 1 + upper as i64;
                if Some(k) == deriv {
                    w *= if upper == 1 { 1.0 / h } else { -1.0 / h };
                }
            }
            if let Some(i) = self.index(&pos) {
                out.push((i, w));
            }
        }
        out
    }
}

/// Index pairs `k ≤ l` of the stored tensor components.
fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|k| (k..n).map(move |l| (k, l))).collect()
}

/// Rank-2 samples at the staggered locations of a [`DeltaD`]: `f_kk` at
/// cell centers, `f_kl` on the lattice that is whole along `k` and `l` and
/// half along the other axes.
#[derive(Debug, Clone)]
pub struct Staggered {
    pub values: Vec<f64>,
}

impl Staggered {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&self, a: f64, other: &Staggered) -> Staggered {
        Staggered {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }
}

/// Assembled discretization of `−δd` on a staggered grid.
///
/// `v_k` lives on the faces normal to axis `k`, the diagonal of a tensor on
/// cells and `f_kl` on the edges spanned by `k` and `l`. Every first
/// difference is then a two-point difference onto the location it feeds,
/// and no oscillating `v` has a small `Dv`. Unknowns and rows are the
/// locations inside `M_½`; `v = 0` everywhere else.
#[derive(Debug, Clone)]
pub struct DeltaD {
    pub nodes: Arc<Grid>,
    pub cells: Arc<Grid>,
    pub metric: Arc<dyn Metric>,
    v_lattices: Vec<Lattice>,
    f_lattices: Vec<Lattice>,
    /// `(component, lattice index)` of every unknown.
    unknowns: Vec<(usize, usize)>,
    v_slot: Vec<Vec<Option<usize>>>,
    /// `(pair, lattice index)` of every row.
    rows: Vec<(usize, usize)>,
    f_slot: Vec<Vec<Option<usize>>>,
    d: CsrMatrix<f64>,
    w: CsrMatrix<f64>,
    l: CsrMatrix<f64>,
    diag: Vec<f64>,
}

fn spmv(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    (0..a.nrows())
        .into_par_iter()
        .map(|r| {
            let mut s = 0.0;
            for p in offs[r]..offs[r + 1] {
                s += vals[p] * x[cols[p]];
            }
            s
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inside_points(nodes: &Grid, lat: &Lattice) -> Vec<bool> {
    (0..lat.len())
        .into_par_iter()
        .map(|i| {
            nodes
                .domain
                .inside(&lat.point(nodes, &lat.multi(i)), Surface::Half)
        })
        .collect()
}

fn slots(inside: &[bool], tag: usize, list: &mut Vec<(usize, usize)>) -> Vec<Option<usize>> {
    inside
        .iter()
        .enumerate()
        .map(|(i, &ok)| {
            ok.then(|| {
                list.push((tag, i));
                list.len() - 1
            })
        })
        .collect()
}

/// `Σ g^{ia} g^{jb}` over the orderings of the index pairs `p` and `q`.
fn pair_weight(gi: &DMatrix<f64>, p: (usize, usize), q: (usize, usize)) -> f64 {
    let orders = |(a, b): (usize, usize)| {
        if a == b {
            vec![(a, b)]
        } else {
            vec![(a, b), (b, a)]
        }
    };
    let mut s = 0.0;
    for (i, j) in orders(p) {
        for (a, b) in orders(q) {
            s += gi[(i, a)] * gi[(j, b)];
        }
    }
    s
}

pub fn assemble_operator(metric: Arc<dyn Metric>, nodes: Arc<Grid>) -> Result<DeltaD> {
    let n = nodes.n;
    let full = (1usize << n) - 1;
    let h = nodes.h;
    let vol = h.powi(n as i32);
    let cells = Arc::new(nodes.cells());
    let v_lattices: Vec<Lattice> = (0..n)
        .map(|k| Lattice::new(&nodes, full ^ (1 << k)))
        .collect();
    let prs = pairs(n);
    let f_lattices: Vec<Lattice> = prs
        .iter()
        .map(|&(k, l)| {
            let half = if k == l {
                full
            } else {
                full ^ (1 << k) ^ (1 << l)
            };
            Lattice::new(&nodes, half)
        })
        .collect();
    let mut unknowns = Vec::new();
    let v_slot: Vec<_> = v_lattices
        .iter()
        .enumerate()
        .map(|(k, lat)| slots(&inside_points(&nodes, lat), k, &mut unknowns))
        .collect();
    let mut rows = Vec::new();
    let f_slot: Vec<_> = f_lattices
        .iter()
        .enumerate()
        .map(|(p, lat)| slots(&inside_points(&nodes, lat), p, &mut rows))
        .collect();
    type Entries = Vec<(usize, usize, f64)>;
    let parts: Vec<(Entries, Entries)> = rows
        .par_iter()
        .enumerate()
        .map(|(r, &(p, i))| -> Result<(Entries, Entries)> {
            let (k, l) = prs[p];
            let lat = &f_lattices[p];
            let m = lat.multi(i);
            let x = lat.point(&nodes, &m);
            let c = christoffel(metric.as_ref(), &x)?;
            let sq = metric_at(metric.as_ref(), &x)?.determinant().sqrt();
            let mut de = Vec::new();
            let mut push = |comp: usize, list: Vec<(usize, f64)>, scale: f64| {
                for (j, w) in list {
                    if let Some(col) = v_slot[comp][j] {
                        de.push((r, col, scale * w));
                    }
                }
            };
            if k == l {
                push(k, v_lattices[k].gather(lat, &m, h, Some(k)), 1.0);
            } else {
                push(k, v_lattices[k].gather(lat, &m, h, Some(l)), 0.5);
                push(l, v_lattices[l].gather(lat, &m, h, Some(k)), 0.5);
            }
            for q in 0..n {
                let gam = c.get(q, k, l);
                if gam != 0.0 {
                    push(q, v_lattices[q].gather(lat, &m, h, None), -gam);
                }
            }
            let mut we = vec![(r, r, sq * pair_weight(&c.inverse, prs[p], prs[p]) * vol)];
            for (q, other) in f_lattices.iter().enumerate() {
                if q == p {
                    continue;
                }
                let cw = sq * pair_weight(&c.inverse, prs[p], prs[q]) * vol;
                if cw == 0.0 {
                    continue;
                }
                for (j, w) in other.gather(lat, &m, h, None) {
                    if let Some(col) = f_slot[q][j] {
                        // symmetrized below
                        we.push((r, col, 0.5 * cw * w));
                        we.push((col, r, 0.5 * cw * w));
                    }
                }
            }
            Ok((de, we))
        })
        .collect::<Result<_>>()?;
    let mut dc = CooMatrix::new(rows.len(), unknowns.len());
    let mut wc = CooMatrix::new(rows.len(), rows.len());
    for (de, we) in parts {
        for (r, c, v) in de {
            dc.push(r, c, v);
        }
        for (r, c, v) in we {
            wc.push(r, c, v);
        }
    }
    let d = CsrMatrix::from(&dc);
    let w = CsrMatrix::from(&wc);
    let wd = &w * &d;
    let l = &d.transpose() * &wd;
    let mut diag = vec![0.0; unknowns.len()];
    for (r, row) in l.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if c == r {
                diag[r] = v;
            }
        }
    }
    if diag.iter().any(|&v| v <= 0.0) {
        return Err(Error::SingularSystem(
            "non-positive diagonal in the assembled operator".into(),
        ));
    }
    Ok(DeltaD {
        nodes,
        cells,
        metric,
        v_lattices,
        f_lattices,
        unknowns,
        v_slot,
        rows,
        f_slot,
        d,
        w,
        l,
        diag,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// `|⟨f^s, dv⟩_W| / (‖f^s‖_W ‖dv‖_W)`.
    pub orthogonality: f64,
    /// See [`solenoidal_residual`].
    pub solenoidal_residual: f64,
    /// `max |L v − DᵀW f|` over unknowns in the band `M_½ ∖ M`, relative to
    /// `max |DᵀW f|`.
    pub band_residual: f64,
    pub grid_spacing: f64,
    pub margin_cells: f64,
    pub unknowns: usize,
}

impl DeltaD {
    pub fn unknown_count(&self) -> usize {
        self.unknowns.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// `L u` for a vector of unknowns.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        spmv(&self.l, u)
    }

    /// Samples a covector field at the unknown locations.
    pub fn sample_potential(&self, v: &dyn TensorField) -> Result<Vec<f64>> {
        self.unknowns
            .par_iter()
            .map(|&(k, i)| {
                let lat = &self.v_lattices[k];
                Ok(eval(v, &lat.point(&self.nodes, &lat.multi(i)))?[k])
            })
            .collect()
    }

    /// Samples a rank-2 field at the row locations.
    pub fn sample(&self, f: &dyn TensorField) -> Result<Staggered> {
        let n = self.nodes.n;
        let prs = pairs(n);
        let values = self
            .rows
            .par_iter()
            .map(|&(p, i)| {
                let lat = &self.f_lattices[p];
                let (k, l) = prs[p];
                Ok(eval(f, &lat.point(&self.nodes, &lat.multi(i)))?[k * n + l])
            })
            .collect::<Result<_>>()?;
        Ok(Staggered { values })
    }

    /// Node field of an unknown vector, averaging each component from its
    /// faces.
    pub fn potential_on_nodes(&self, u: &[f64]) -> GridField {
        let n = self.nodes.n;
        let node_lat = &Lattice::new(&self.nodes, 0);
        let mut out = GridField::zeros(self.nodes.clone(), 1);
        let vals: Vec<f64> = (0..self.nodes.node_count())
            .into_par_iter()
            .flat_map_iter(|i| {
                let m = node_lat.multi(i);
                let mask = self.nodes.mask[i];
                (0..n).map(move |k| {
                    if !mask {
                        return 0.0;
                    }
                    self.v_lattices[k]
                        .gather(node_lat, &m, self.nodes.h, None)
                        .into_iter()
                        .filter_map(|(j, w)| self.v_slot[k][j].map(|s| w * u[s]))
                        .sum()
                })
            })
            .collect();
        out.values = vals;
        out
    }

    /// Cell-centered field of staggered samples, averaging the off-diagonal
    /// components from their edges.
    pub fn tensor_on_cells(&self, f: &Staggered) -> GridField {
        let n = self.nodes.n;
        let prs = pairs(n);
        let cell_lat = Lattice::new(&self.nodes, (1 << n) - 1);
        let mut out = GridField::zeros(self.cells.clone(), 2);
        let vals: Vec<f64> = (0..self.cells.node_count())
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut t = vec![0.0; n * n];
                if self.cells.mask[i] {
                    let m = cell_lat.multi(i);
                    for (p, &(k, l)) in prs.iter().enumerate() {
                        let s: f64 = self.f_lattices[p]
                            .gather(&cell_lat, &m, self.nodes.h, None)
                            .into_iter()
                            .filter_map(|(j, w)| self.f_slot[p][j].map(|r| w * f.values[r]))
                            .sum();
                        t[k * n + l] = s;
                        t[l * n + k] = s;
                    }
                }
                t
            })
            .collect();
        out.values = vals;
        out
    }

    /// Discrete `dv` of an unknown vector.
    pub fn sym_derivative(&self, u: &[f64]) -> Staggered {
        Staggered {
            values: spmv(&self.d, u),
        }
    }

    /// `⟨a, b⟩_W`.
    pub fn inner(&self, a: &Staggered, b: &Staggered) -> f64 {
        dot(&a.values, &spmv(&self.w, &b.values))
    }

    /// `DᵀW f`.
    pub fn rhs(&self, f: &Staggered) -> Vec<f64> {
        let wf = spmv(&self.w, &f.values);
        spmv(&self.d.transpose(), &wf)
    }

    /// Jacobi-preconditioned conjugate gradients for `L u = b`.
    pub fn solve(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
        let m = b.len();
        let bn = dot(b, b).sqrt();
        let mut x = vec![0.0; m];
        if bn == 0.0 {
            return Ok((x, 0, 0.0));
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for it in 1..=max_iter {
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::SingularSystem(format!(
                    "p·Lp = {pap:e} at iteration {it}"
                )));
            }
            let alpha = rz / pap;
            x.par_iter_mut().zip(&p).for_each(|(a, b)| *a += alpha * b);
            r.par_iter_mut().zip(&ap).for_each(|(a, b)| *a -= alpha * b);
            let rn = dot(&r, &r).sqrt();
            if rn <= tol * bn {
                return Ok((x, it, rn / bn));
            }
            z = r.iter().zip(&self.diag).map(|(a, d)| a / d).collect();
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut()
                .zip(&z)
                .for_each(|(a, b)| *a = b + beta * *a);
        }
        let rn = dot(&r, &r).sqrt();
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: rn / bn,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub fs: Staggered,
    pub dv: Staggered,
    /// Unknown vector of `v`.
    pub v: Vec<f64>,
    pub report: DecompositionReport,
}

impl Decomposition {
    pub fn v_max(&self) -> f64 {
        self.v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn decompose(op: &DeltaD, f: &Staggered, opts: &DecomposeOptions) -> Result<Decomposition> {
    if f.values.len() != op.row_count() {
        return Err(Error::Dimension {
            expected: op.row_count(),
            got: f.values.len(),
        });
    }
    let b = op.rhs(f);
    let (u, iterations, relative_residual) = op.solve(&b, opts.tol, opts.max_iter)?;
    let dv = op.sym_derivative(&u);
    let fs = f.axpy(-1.0, &dv);
    let num = op.inner(&fs, &dv).abs();
    let den = (op.inner(&fs, &fs) * op.inner(&dv, &dv)).sqrt();
    let orthogonality = if den > 0.0 { num / den } else { 0.0 };
    let lu = op.apply(&u);
    let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut band: f64 = 0.0;
    for (s, &(k, i)) in op.unknowns.iter().enumerate() {
        let lat = &op.v_lattices[k];
        if op.nodes.domain.rho(&lat.point(&op.nodes, &lat.multi(i))) <= 0.0 {
            band = band.max((lu[s] - b[s]).abs());
        }
    }
    let report = DecompositionReport {
        iterations,
        relative_residual,
        orthogonality,
        solenoidal_residual: solenoidal_residual(op.metric.as_ref(), &op.tensor_on_cells(&fs))?,
        band_residual: if bmax > 0.0 { band / bmax } else { band },
        grid_spacing: op.nodes.h,
        margin_cells: op.nodes.margin_cells(),
        unknowns: op.unknown_count(),
    };
    Ok(Decomposition {
        fs,
        dv,
        v: u,
        report,
    })
}

/// `max |δf|` with `(δf)_i = g^{jk} ∇_k f_ij` from centered differences
/// between neighboring grid points, over points of `M` at least two cells
/// inside the mask. The staircase boundary of `M_½` leaves an `O(1)` layer
/// in `δf` a few cells wide, which this keeps out.
pub fn solenoidal_residual(metric: &dyn Metric, f: &GridField) -> Result<f64> {
    let grid = &f.grid;
    let n = grid.n;
    let nn = n * n;
    let h = grid.h;
    (0..grid.node_count())
        .into_par_iter()
        .filter(|&i| grid.deep_inside(i, 2) && grid.domain.rho(&grid.point(i)) >= 0.0)
        .map(|i| -> Result<f64> {
            let x = grid.point(i);
            let c = christoffel(metric, &x)?;
            let fv = f.at(i);
            let mut df = DMatrix::<f64>::zeros(n, nn);
            for k in 0..n {
                let p = f.at(grid.neighbor(i, k, 1).unwrap());
                let m = f.at(grid.neighbor(i, k, -1).unwrap());
                for q in 0..nn {
                    df[(k, q)] = (p[q] - m[q]) / (2.0 * h);
                }
            }
            let mut worst: f64 = 0.0;
            for a in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        let mut cov = df[(k, a * n + j)];
                        for l in 0..n {
                            cov -= c.get(l, k, a) * fv[l * n + j] + c.get(l, k, j) * fv[a * n + l];
                        }
                        s += c.inverse[(j, k)] * cov;
                    }
                }
                worst = worst.max(s.abs());
            }
            Ok(worst)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}
