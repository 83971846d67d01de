//! Regular cell-centered grids on axis-aligned boxes.
//!
//! Nodes sit at cell centers `origin + (i_k + 1/2) h` so that the cells
//! `Q_h(z) = z + (-h/2, h/2)^d` tile the box exactly. Flat indices are
//! row-major with axis 1 fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// A neighbor of a node: target index, axis and direction (+1 / -1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub axis: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    dim: usize,
    spacing: f64,
    extents: Vec<usize>,
    origin: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    /// Reserved for masked (non-box) domains; always `None` for now.
    mask: Option<Vec<bool>>,
}

impl LatticeSpec {
    /// Builds a lattice with `extents[k]` cells along axis `k`.
    pub fn new(spacing: f64, extents: &[usize], origin: &[f64]) -> Result<Self> {
        let dim = extents.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidLattice(format!(
                "dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        if extents.iter().any(|&n| n == 0) {
            return Err(Error::InvalidLattice("extents must be >= 1".into()));
        }
        if origin.len() != dim {
            return Err(Error::InvalidLattice(format!(
                "origin has {} coordinates, expected {dim}",
                origin.len()
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidLattice("origin must be finite".into()));
        }
        let mut strides = Vec::with_capacity(dim);
        let mut len = 1usize;
        for &n in extents {
            strides.push(len);
            len = len
                .checked_mul(n)
                .ok_or_else(|| Error::InvalidLattice("node count overflows".into()))?;
        }
        Ok(Self {
            dim,
            spacing,
            extents: extents.to_vec(),
            origin: origin.to_vec(),
            strides,
            len,
            mask: None,
        })
    }

    /// Box `[0, n h]^d` anchored at the origin.
    pub fn unit_origin(spacing: f64, extents: &[usize]) -> Result<Self> {
        Self::new(spacing, extents, &vec![0.0; extents.len()])
    }

    /// Masked lattices are not supported yet; always returns an error.
    pub fn with_mask(self, _mask: Vec<bool>) -> Result<Self> {
        Err(Error::InvalidLattice(
            "node masks (non-box domains) are not supported".into(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Number of nodes `M`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Volume `h^d` of a single cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Total volume `h^d M` of the box.
    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.len as f64
    }

    /// Lower and upper corners of the box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let upper = self
            .origin
            .iter()
            .zip(&self.extents)
            .map(|(o, &n)| o + n as f64 * self.spacing)
            .collect();
        (self.origin.clone(), upper)
    }

    fn check(&self, z: usize) -> Result<()> {
        if z < self.len {
            Ok(())
        } else {
            Err(Error::InvalidNode {
                index: z,
                len: self.len,
            })
        }
    }

    pub fn multi_index(&self, z: usize) -> Result<Vec<usize>> {
        self.check(z)?;
        Ok(self.multi_index_unchecked(z))
    }

    pub(crate) fn multi_index_unchecked(&self, mut z: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim);
        for &n in &self.extents {
            idx.push(z % n);
            z /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "multi-index has {} entries, expected {}",
                idx.len(),
                self.dim
            )));
        }
        let mut z = 0;
        for ((&i, &n), &s) in idx.iter().zip(&self.extents).zip(&self.strides) {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "multi-index {idx:?} outside extents {:?}",
                    self.extents
                )));
            }
            z += i * s;
        }
        Ok(z)
    }

    /// Coordinate of node `z` along `axis`.
    pub fn coordinate(&self, z: usize, axis: usize) -> f64 {
        let i = (z / self.strides[axis]) % self.extents[axis];
        self.origin[axis] + (i as f64 + 0.5) * self.spacing
    }

    pub fn position(&self, z: usize) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok((0..self.dim).map(|a| self.coordinate(z, a)).collect())
    }

    /// All node positions in flat order.
    pub fn positions(&self) -> Vec<Vec<f64>> {
        (0..self.len)
            .map(|z| (0..self.dim).map(|a| self.coordinate(z, a)).collect())
            .collect()
    }

    /// Squared distance between nodes measured in lattice steps (an integer).
    pub fn squared_steps(&self, a: usize, b: usize) -> u64 {
        let mut s = 0u64;
        for axis in 0..self.dim {
            let ia = ((a / self.strides[axis]) % self.extents[axis]) as i64;
            let ib = ((b / self.strides[axis]) % self.extents[axis]) as i64;
            s += ((ia - ib) * (ia - ib)) as u64;
        }
        s
    }

    /// Squared Euclidean distance `|x - y|^2` between two nodes.
    pub fn squared_distance(&self, a: usize, b: usize) -> f64 {
        self.squared_steps(a, b) as f64 * self.spacing * self.spacing
    }

    /// In-box neighbors of `z` in the order `+e_1, -e_1, +e_2, ...`.
    pub fn neighbors(&self, z: usize) -> Result<Vec<Neighbor>> {
        self.check(z)?;
        let mut out = Vec::with_capacity(2 * self.dim);
        self.for_each_neighbor(z, |nb| out.push(nb));
        Ok(out)
    }

    pub(crate) fn for_each_neighbor(&self, z: usize, mut f: impl FnMut(Neighbor)) {
        for axis in 0..self.dim {
            let s = self.strides[axis];
            let i = (z / s) % self.extents[axis];
            if i + 1 < self.extents[axis] {
                f(Neighbor {
                    node: z + s,
                    axis,
                    sign: 1,
                });
            }
            if i > 0 {
                f(Neighbor {
                    node: z - s,
                    axis,
                    sign: -1,
                });
            }
        }
    }

    /// The ordered neighbor pairs `Σ^h`, each directed pair exactly once.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.neighbor_pair_count());
        for z in 0..self.len {
            self.for_each_neighbor(z, |nb| pairs.push((z, nb.node)));
        }
        pairs
    }

    /// Undirected edges `(z, z + h e_axis)` with their axis.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut edges = Vec::new();
        for z in 0..self.len {
            for axis in 0..self.dim {
                let s = self.strides[axis];
                if (z / s) % self.extents[axis] + 1 < self.extents[axis] {
                    edges.push((z, z + s, axis));
                }
            }
        }
        edges
    }

    /// `|Σ^h| = Σ_i 2 (n_i - 1) Π_{j≠i} n_j`.
    pub fn neighbor_pair_count(&self) -> usize {
        (0..self.dim)
            .map(|i| 2 * (self.extents[i] - 1) * self.len / self.extents[i])
            .sum()
    }

    /// Nearest node to `x`; ties go to the smaller flat index.
    pub fn project(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.dim
            )));
        }
        let mut z = 0;
        for axis in 0..self.dim {
            let n = self.extents[axis];
            let lo = self.origin[axis];
            let hi = lo + n as f64 * self.spacing;
            let slack = 1e-12 * (hi - lo).abs().max(1.0);
            if !(x[axis] >= lo - slack && x[axis] <= hi + slack) {
                return Err(Error::OutsideBox(x.to_vec()));
            }
            // Node i sits at t = i in these coordinates; ceil(t - 1/2) rounds
            // to the nearest integer and sends exact midpoints downward.
            let t = (x[axis] - lo) / self.spacing - 0.5;
            let i = (t - 0.5).ceil().clamp(0.0, (n - 1) as f64) as usize;
            z += i * self.strides[axis];
        }
        Ok(z)
    }
}

/// Convenience constructor mirroring the `(d, h, extents, origin)` signature.
pub fn build_lattice(dim: usize, spacing: f64, extents: &[usize], origin: &[f64]) -> Result<LatticeSpec> {
    if dim != extents.len() {
        return Err(Error::InvalidLattice(format!(
            "dimension {dim} does not match {} extents",
            extents.len()
        )));
    }
    LatticeSpec::new(spacing, extents, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cell_centers_1d() {
        let l = build_lattice(1, 0.25, &[4], &[0.0]).unwrap();
        let xs: Vec<f64> = (0..4).map(|z| l.coordinate(z, 0)).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!((l.volume() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pair_count_2d() {
        let l = build_lattice(2, 1.0, &[2, 2], &[0.0, 0.0]).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l.neighbor_pairs().len(), 8);
        assert_eq!(l.neighbor_pair_count(), 8);
    }

    #[test]
    fn pairs_1d_two_nodes() {
        let l = build_lattice(1, 0.5, &[2], &[0.0]).unwrap();
        assert_eq!(l.neighbor_pairs(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LatticeSpec::new(1.0, &[], &[]).is_err());
        assert!(LatticeSpec::new(0.0, &[3], &[0.0]).is_err());
        assert!(LatticeSpec::new(-1.0, &[3], &[0.0]).is_err());
        assert!(LatticeSpec::new(1.0, &[3, 0], &[0.0, 0.0]).is_err());
        assert!(LatticeSpec::new(1.0, &[1, 1, 1, 1], &[0.0; 4]).is_err());
        let l = LatticeSpec::unit_origin(1.0, &[2]).unwrap();
        assert!(l.with_mask(vec![true, false]).is_err());
    }

    #[test]
    fn neighbor_counts() {
        let l = LatticeSpec::unit_origin(1.0, &[3]).unwrap();
        assert_eq!(l.neighbors(1).unwrap().len(), 2);
        assert_eq!(l.neighbors(0).unwrap().len(), 1);
        let sq = LatticeSpec::unit_origin(1.0, &[3, 3]).unwrap();
        let nb = sq.neighbors(4).unwrap();
        assert_eq!(nb.len(), 4);
        assert_eq!(
            nb.iter().map(|n| (n.axis, n.sign)).collect::<Vec<_>>(),
            vec![(0, 1), (0, -1), (1, 1), (1, -1)]
        );
        assert!(l.neighbors(3).is_err());
    }

    #[test]
    fn projection_rules() {
        let l = LatticeSpec::unit_origin(1.0, &[2]).unwrap();
        assert_eq!(l.project(&[0.7]).unwrap(), 0);
        assert_eq!(l.project(&[1.0]).unwrap(), 0);
        assert_eq!(l.project(&[1.0000001]).unwrap(), 1);
        assert_eq!(l.project(&[0.0]).unwrap(), 0);
        assert_eq!(l.project(&[2.0]).unwrap(), 1);
        assert!(l.project(&[2.5]).is_err());
        let sq = LatticeSpec::unit_origin(0.5, &[4, 3]).unwrap();
        let p = sq.position(7).unwrap();
        assert_eq!(sq.project(&p).unwrap(), 7);
    }

    fn lattice_strategy() -> impl Strategy<Value = LatticeSpec> {
        (1usize..=3, 0.1f64..2.0, prop::collection::vec(1usize..6, 3), -3.0f64..3.0).prop_map(
            |(d, h, ext, o)| LatticeSpec::new(h, &ext[..d], &vec![o; d]).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn flat_multi_roundtrip(l in lattice_strategy()) {
            for z in 0..l.len() {
                let idx = l.multi_index(z).unwrap();
                prop_assert_eq!(l.flat_index(&idx).unwrap(), z);
                prop_assert_eq!(l.project(&l.position(z).unwrap()).unwrap(), z);
            }
        }

        #[test]
        fn pairs_symmetric_and_counted(l in lattice_strategy()) {
            let pairs = l.neighbor_pairs();
            prop_assert_eq!(pairs.len(), l.neighbor_pair_count());
            let set: std::collections::HashSet<_> = pairs.iter().copied().collect();
            prop_assert_eq!(set.len(), pairs.len());
            for &(a, b) in &pairs {
                prop_assert!(set.contains(&(b, a)));
                prop_assert_eq!(l.squared_steps(a, b), 1);
            }
        }

        #[test]
        fn projection_distance_bound(l in lattice_strategy(), fr in prop::collection::vec(0.0f64..=1.0, 3)) {
            let (lo, hi) = l.bounds();
            let x: Vec<f64> = (0..l.dim()).map(|a| lo[a] + fr[a] * (hi[a] - lo[a])).collect();
            let z = l.project(&x).unwrap();
            let p = l.position(z).unwrap();
            let dist = x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist <= (l.dim() as f64).sqrt() * l.spacing() / 2.0 + 1e-12);
            // brute-force nearest check
            let best = (0..l.len()).map(|w| {
                let q = l.position(w).unwrap();
                x.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            }).fold(f64::INFINITY, f64::min);
            prop_assert!(dist * dist <= best + 1e-12);
        }
    }
}
