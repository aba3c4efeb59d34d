//! Uniform node-centered grid on `T^d x [0, T]`, periodic in space, with
//! second-order finite-difference stencils and quadrature.
//!
//! Unknowns are ordered time-major: node `(i, j)` with spatial index `i`
//! and time level `j` sits at position `j * Nx^d + i`. In two dimensions the
//! spatial index is lexicographic, `i = i1 * Nx + i2`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_NX: usize = 8;
pub const MIN_NT: usize = 4;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("field file does not match the grid: {0}")]
    Mismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Cylinder,
    Slice(usize),
}

/// Linear stencil `scale * sum_k w_k (u_k - u_center)`. Written relative to
/// the center so constants give exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub center: usize,
    pub terms: Vec<(usize, f64)>,
    pub scale: f64,
}

impl Stencil {
    pub fn apply(&self, u: &[f64]) -> f64 {
        let c = u[self.center];
        self.scale * self.terms.iter().map(|&(k, w)| w * (u[k] - c)).sum::<f64>()
    }

    /// `(index, d value / d u_index)` pairs; indices may repeat.
    pub fn coefficients(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let total: f64 = self.terms.iter().map(|t| t.1).sum();
        self.terms
            .iter()
            .map(move |&(k, w)| (k, self.scale * w))
            .chain(std::iter::once((self.center, -self.scale * total)))
    }
}

impl GridSpec {
    pub fn new(dim: usize, nx: usize, nt: usize, horizon: f64) -> Result<Self, GridError> {
        if !(1..=2).contains(&dim) {
            return Err(GridError::Invalid {
                field: "dimension",
                reason: format!("must be 1 or 2, got {dim}"),
            });
        }
        if nx < MIN_NX {
            return Err(GridError::Invalid {
                field: "nx",
                reason: format!("need at least {MIN_NX} nodes per dimension, got {nx}"),
            });
        }
        if nt < MIN_NT {
            return Err(GridError::Invalid {
                field: "nt",
                reason: format!("need at least {MIN_NT} time intervals, got {nt}"),
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(GridError::Invalid {
                field: "horizon",
                reason: format!("must be positive, got {horizon}"),
            });
        }
        Ok(Self { dim, nx, nt, horizon })
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// `Nx^d`.
    pub fn spatial_count(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn time_levels(&self) -> usize {
        self.nt + 1
    }

    pub fn node_count(&self) -> usize {
        self.spatial_count() * self.time_levels()
    }

    pub fn index(&self, spatial: usize, time: usize) -> usize {
        time * self.spatial_count() + spatial
    }

    /// Inverse of [`GridSpec::index`].
    pub fn split(&self, node: usize) -> (usize, usize) {
        let n = self.spatial_count();
        (node % n, node / n)
    }

    /// Spatial multi-index of a spatial position.
    pub fn spatial_multi(&self, spatial: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![spatial],
            _ => vec![spatial / self.nx, spatial % self.nx],
        }
    }

    pub fn spatial_from_multi(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.nx + (i % self.nx))
    }

    pub fn x(&self, spatial: usize) -> Vec<f64> {
        self.spatial_multi(spatial)
            .into_iter()
            .map(|i| i as f64 * self.dx())
            .collect()
    }

    pub fn t(&self, time: usize) -> f64 {
        if time == self.nt {
            self.horizon
        } else {
            time as f64 * self.dt()
        }
    }

    /// Periodic neighbour `delta` steps along spatial `axis`.
    pub fn shift(&self, spatial: usize, axis: usize, delta: isize) -> usize {
        let mut multi = self.spatial_multi(spatial);
        let n = self.nx as isize;
        multi[axis] = ((multi[axis] as isize + delta).rem_euclid(n)) as usize;
        self.spatial_from_multi(&multi)
    }

    /// Stencils for `(D_x u, u_t)` at a node: centered periodic differences in
    /// space, centered in time at interior levels and second-order one-sided
    /// at `t = 0` and `t = T`.
    pub fn gradient_stencils(&self, spatial: usize, time: usize) -> Vec<Stencil> {
        let center = self.index(spatial, time);
        let mut out = Vec::with_capacity(self.dim + 1);
        let hx = 1.0 / (2.0 * self.dx());
        for axis in 0..self.dim {
            out.push(Stencil {
                center,
                terms: vec![
                    (self.index(self.shift(spatial, axis, 1), time), 1.0),
                    (self.index(self.shift(spatial, axis, -1), time), -1.0),
                ],
                scale: hx,
            });
        }
        let ht = 1.0 / (2.0 * self.dt());
        let terms = if time == 0 {
            vec![(self.index(spatial, 1), 4.0), (self.index(spatial, 2), -1.0)]
        } else if time == self.nt {
            vec![
                (self.index(spatial, self.nt - 1), -4.0),
                (self.index(spatial, self.nt - 2), 1.0),
            ]
        } else {
            vec![(self.index(spatial, time + 1), 1.0), (self.index(spatial, time - 1), -1.0)]
        };
        out.push(Stencil { center, terms, scale: ht });
        out
    }

    /// Stencils for the entries `(a, b)`, `a <= b`, of the space-time Hessian,
    /// in row-major upper-triangular order. Only defined at interior times.
    pub fn hessian_stencils(&self, spatial: usize, time: usize) -> Vec<((usize, usize), Stencil)> {
        assert!(
            time >= 1 && time < self.nt,
            "Hessian stencil requested at boundary time level {time}"
        );
        let n = self.dim + 1;
        let center = self.index(spatial, time);
        let h = |axis: usize| if axis == self.dim { self.dt() } else { self.dx() };
        // node displaced by (da, db) along axes a, b
        let moved = |a: usize, da: isize, b: usize, db: isize| {
            let mut s = spatial;
            let mut t = time as isize;
            for (axis, delta) in [(a, da), (b, db)] {
                if delta == 0 {
                    continue;
                }
                if axis == self.dim {
                    t += delta;
                } else {
                    s = self.shift(s, axis, delta);
                }
            }
            self.index(s, t as usize)
        };
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for a in 0..n {
            for b in a..n {
                let st = if a == b {
                    Stencil {
                        center,
                        terms: vec![(moved(a, 1, a, 0), 1.0), (moved(a, -1, a, 0), 1.0)],
                        scale: 1.0 / (h(a) * h(a)),
                    }
                } else {
                    Stencil {
                        center,
                        terms: vec![
                            (moved(a, 1, b, 1), 1.0),
                            (moved(a, 1, b, -1), -1.0),
                            (moved(a, -1, b, 1), -1.0),
                            (moved(a, -1, b, -1), 1.0),
                        ],
                        scale: 1.0 / (4.0 * h(a) * h(b)),
                    }
                };
                out.push(((a, b), st));
            }
        }
        out
    }

    /// Quadrature weight of a node: uniform in space, trapezoidal in time.
    pub fn weight(&self, time: usize, region: Region) -> f64 {
        let spatial = 1.0 / self.spatial_count() as f64;
        match region {
            Region::Slice(_) => spatial,
            Region::Cylinder => {
                let end = if time == 0 || time == self.nt { 0.5 } else { 1.0 };
                spatial * end * self.dt()
            }
        }
    }

    /// Integral of nodewise values over the cylinder or one time slice.
    pub fn integrate(&self, values: &[f64], region: Region) -> f64 {
        let n = self.spatial_count();
        match region {
            Region::Slice(j) => values[j * n..(j + 1) * n].iter().sum::<f64>() / n as f64,
            Region::Cylinder => {
                let mut total = 0.0;
                for j in 0..=self.nt {
                    let w = if j == 0 || j == self.nt { 0.5 } else { 1.0 };
                    total += w * values[j * n..(j + 1) * n].iter().sum::<f64>();
                }
                total * self.dt() / n as f64
            }
        }
    }
}

/// Scalar field on the grid nodes, ordered as [`GridSpec::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.node_count(), "field length does not match grid");
        Self { grid, values }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self::new(grid, vec![c; grid.node_count()])
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for j in 0..=grid.nt {
            let t = grid.t(j);
            for i in 0..grid.spatial_count() {
                values.push(f(&grid.x(i), t));
            }
        }
        Self { grid, values }
    }

    pub fn at(&self, spatial: usize, time: usize) -> f64 {
        self.values[self.grid.index(spatial, time)]
    }

    pub fn slice(&self, time: usize) -> &[f64] {
        let n = self.grid.spatial_count();
        &self.values[time * n..(time + 1) * n]
    }

    /// `(D_x u, u_t)` at a node.
    pub fn gradient(&self, spatial: usize, time: usize) -> (Vec<f64>, f64) {
        let st = self.grid.gradient_stencils(spatial, time);
        let d = self.grid.dim;
        let p = st[..d].iter().map(|s| s.apply(&self.values)).collect();
        (p, st[d].apply(&self.values))
    }

    /// Space-time Hessian at an interior node; exactly symmetric.
    pub fn hessian(&self, spatial: usize, time: usize) -> DMatrix<f64> {
        let n = self.grid.dim + 1;
        let mut h = DMatrix::zeros(n, n);
        for ((a, b), st) in self.grid.hessian_stencils(spatial, time) {
            let v = st.apply(&self.values);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
        h
    }

    pub fn integrate(&self, region: Region) -> f64 {
        self.grid.integrate(&self.values, region)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Values on every other node in space and time, i.e. the restriction to
    /// the grid with `Nx / 2` and `Nt / 2`.
    pub fn restrict(&self) -> Option<Self> {
        let g = self.grid;
        if g.nx % 2 != 0 || g.nt % 2 != 0 {
            return None;
        }
        let coarse = GridSpec {
            nx: g.nx / 2,
            nt: g.nt / 2,
            ..g
        };
        let mut values = Vec::with_capacity(coarse.node_count());
        for j in 0..=coarse.nt {
            for i in 0..coarse.spatial_count() {
                let multi: Vec<usize> = coarse.spatial_multi(i).into_iter().map(|k| 2 * k).collect();
                values.push(self.at(g.spatial_from_multi(&multi), 2 * j));
            }
        }
        Some(Self::new(coarse, values))
    }
}

fn coordinate_headers(dim: usize) -> Vec<String> {
    match dim {
        1 => vec!["x".to_string()],
        _ => (1..=dim).map(|k| format!("x{k}")).collect(),
    }
}

/// Writes `x..., t, u[, m]` with one row per node in index order. Floats use
/// the shortest representation that round-trips exactly.
pub fn write_fields_csv(path: &Path, u: &SpaceTimeField, m: Option<&SpaceTimeField>) -> Result<(), GridError> {
    let g = u.grid;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = coordinate_headers(g.dim);
    header.push("t".into());
    header.push("u".into());
    if m.is_some() {
        header.push("m".into());
    }
    w.write_record(&header)?;
    for node in 0..g.node_count() {
        let (i, j) = g.split(node);
        let mut row: Vec<String> = g.x(i).iter().map(|v| v.to_string()).collect();
        row.push(g.t(j).to_string());
        row.push(u.values[node].to_string());
        if let Some(m) = m {
            row.push(m.values[node].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_fields_csv`], checking that the node
/// coordinates match `grid`.
pub fn read_fields_csv(path: &Path, grid: &GridSpec) -> Result<(SpaceTimeField, Option<SpaceTimeField>), GridError> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = r.headers()?.clone();
    let mut expected = coordinate_headers(grid.dim);
    expected.push("t".into());
    expected.push("u".into());
    let has_m = headers.len() == expected.len() + 1;
    if has_m {
        expected.push("m".into());
    }
    if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(GridError::Mismatch(format!(
            "expected columns {expected:?}, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let d = grid.dim;
    let mut u = Vec::with_capacity(grid.node_count());
    let mut m = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if row >= grid.node_count() {
            return Err(GridError::Mismatch(format!(
                "more rows than the {} grid nodes",
                grid.node_count()
            )));
        }
        let parse = |k: usize| -> Result<f64, GridError> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| GridError::Mismatch(format!("row {}: column {k}: {e}", row + 2)))
        };
        let (i, j) = grid.split(row);
        let x = grid.x(i);
        let tol = 1e-9;
        for (k, xk) in x.iter().enumerate() {
            if (parse(k)? - xk).abs() > tol {
                return Err(GridError::Mismatch(format!("row {}: x coordinate differs", row + 2)));
            }
        }
        if (parse(d)? - grid.t(j)).abs() > tol * (1.0 + grid.horizon) {
            return Err(GridError::Mismatch(format!("row {}: t coordinate differs", row + 2)));
        }
        u.push(parse(d + 1)?);
        if has_m {
            m.push(parse(d + 2)?);
        }
    }
    if u.len() != grid.node_count() {
        return Err(GridError::Mismatch(format!(
            "found {} rows, grid has {} nodes",
            u.len(),
            grid.node_count()
        )));
    }
    let m = has_m.then(|| SpaceTimeField::new(*grid, m));
    Ok((SpaceTimeField::new(*grid, u), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(nx: usize, nt: usize) -> GridSpec {
        GridSpec::new(1, nx, nt, 1.0).unwrap()
    }

    #[test]
    fn index_map_round_trip() {
        let g = grid(16, 8);
        assert_eq!(g.index(0, 0), 0);
        assert_eq!(g.index(15, 8), 16 * 9 - 1);
        for n in 0..g.node_count() {
            let (i, j) = g.split(n);
            assert_eq!(g.index(i, j), n);
        }
        let g2 = GridSpec::new(2, 8, 4, 1.0).unwrap();
        for s in 0..g2.spatial_count() {
            assert_eq!(g2.spatial_from_multi(&g2.spatial_multi(s)), s);
        }
    }

    #[test]
    fn rejects_small_grids() {
        assert!(GridSpec::new(1, 4, 8, 1.0).is_err());
        assert!(GridSpec::new(1, 8, 2, 1.0).is_err());
        assert!(GridSpec::new(3, 8, 8, 1.0).is_err());
    }

    #[test]
    fn gradient_of_sine() {
        let g = grid(64, 8);
        let u = SpaceTimeField::from_fn(g, |x, _| (2.0 * PI * x[0]).sin());
        let err = (0..64)
            .map(|i| (u.gradient(i, 3).0[0] - 2.0 * PI * (2.0 * PI * g.x(i)[0]).cos()).abs())
            .fold(0.0, f64::max);
        // exact symbol of the centered difference on this mode
        let dx = g.dx();
        let expected = 2.0 * PI - (2.0 * PI * dx).sin() / dx;
        assert!((err - expected).abs() < 1e-12, "{err} vs {expected}");
        assert!(err < 1.01e-2);
    }

    #[test]
    fn time_derivative_exact_on_quadratics() {
        let g = grid(8, 6);
        let u = SpaceTimeField::from_fn(g, |_, t| 2.0 - 3.0 * t + 0.5 * t * t);
        for j in 0..=6 {
            let s = u.gradient(2, j).1;
            assert!((s - (-3.0 + g.t(j))).abs() < 1e-12);
        }
        let c = SpaceTimeField::constant(g, 1.7);
        for j in 0..=6 {
            assert_eq!(c.gradient(1, j), (vec![0.0], 0.0));
        }
    }

    #[test]
    fn cross_stencil_on_bilinear_data() {
        let g = grid(16, 8);
        // x t on the lifted cover, away from the periodic seam
        let u = SpaceTimeField::from_fn(g, |x, t| x[0] * t);
        let h = u.hessian(5, 3);
        assert!((h[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
    }

    #[test]
    fn hessian_converges_at_second_order() {
        let exact = |x: f64, t: f64| {
            let (a, b) = (2.0 * PI * x, PI * t);
            [
                -4.0 * PI * PI * a.sin() * b.cos(),
                -2.0 * PI * PI * a.cos() * b.sin(),
                -PI * PI * a.sin() * b.cos(),
            ]
        };
        let err = |nx: usize, nt: usize| {
            let g = grid(nx, nt);
            let u = SpaceTimeField::from_fn(g, |x, t| (2.0 * PI * x[0]).sin() * (PI * t).cos());
            let mut e: f64 = 0.0;
            for j in 1..nt {
                for i in 0..nx {
                    let h = u.hessian(i, j);
                    let ex = exact(g.x(i)[0], g.t(j));
                    e = e.max((h[(0, 0)] - ex[0]).abs()).max((h[(0, 1)] - ex[1]).abs()).max((h[(1, 1)] - ex[2]).abs());
                }
            }
            e
        };
        let ratio = err(32, 16) / err(64, 32);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn quadrature() {
        let g = grid(32, 8);
        let one = SpaceTimeField::constant(g, 1.0);
        assert_eq!(one.integrate(Region::Slice(3)), 1.0);
        assert!((one.integrate(Region::Cylinder) - 1.0).abs() < 1e-15);
        let s = SpaceTimeField::from_fn(g, |x, _| (2.0 * PI * x[0]).sin());
        assert!(s.integrate(Region::Slice(0)).abs() < 1e-15);
        let m0 = SpaceTimeField::from_fn(g, |x, _| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
        assert!((m0.integrate(Region::Slice(0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let g = GridSpec::new(2, 8, 4, 0.7).unwrap();
        let u = SpaceTimeField::from_fn(g, |x, t| (x[0] * 3.1).exp() * t.sin() + 1.0 / 3.0);
        let m = SpaceTimeField::from_fn(g, |x, t| x[1] + t);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_fields_csv(&path, &u, Some(&m)).unwrap();
        let (u2, m2) = read_fields_csv(&path, &g).unwrap();
        assert_eq!(u2, u);
        assert_eq!(m2.unwrap(), m);
        let other = GridSpec::new(2, 8, 8, 0.7).unwrap();
        assert!(matches!(read_fields_csv(&path, &other), Err(GridError::Mismatch(_))));
    }

    #[test]
    fn restriction_picks_even_nodes() {
        let g = grid(16, 8);
        let u = SpaceTimeField::from_fn(g, |x, t| x[0] + 10.0 * t);
        let c = u.restrict().unwrap();
        assert_eq!(c.grid.nx, 8);
        let expect = SpaceTimeField::from_fn(c.grid, |x, t| x[0] + 10.0 * t);
        assert!(c.max_abs_diff(&expect) < 1e-14);
    }
}
