//! Coordinate bookkeeping between output-pixel queries and latent sites:
//! normalized center grids, nearest-latent matching, relative coordinates,
//! cell decoding, and feature unfolding.
//!
//! Both query and latent pixel centers live in `[-1, 1]` per axis with
//! uniform spacing `2 / extent`; only relative offsets enter the decoder.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

/// Center coordinate of pixel `i` on an axis of `extent` pixels.
pub fn coord_center(i: usize, extent: usize) -> f64 {
    -1.0 + (2.0 * i as f64 + 1.0) / extent as f64
}

/// Normalized `(y, x)` centers for every pixel of an `h x w` output grid,
/// row-major.
#[derive(Clone, Debug)]
pub struct CoordGrid {
    pub h_out: usize,
    pub w_out: usize,
    pub coords: Vec<(f64, f64)>,
}

pub fn make_coord_grid(h_out: usize, w_out: usize) -> CoordGrid {
    assert!(h_out >= 1 && w_out >= 1, "grid extents must be >= 1");
    let mut coords = Vec::with_capacity(h_out * w_out);
    for y in 0..h_out {
        let cy = coord_center(y, h_out);
        for x in 0..w_out {
            coords.push((cy, coord_center(x, w_out)));
        }
    }
    CoordGrid {
        h_out,
        w_out,
        coords,
    }
}

/// One query's link to the latent grid: the matched site, the offset from
/// its center, and the query pixel's cell size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryBinding {
    pub row: usize,
    pub col: usize,
    /// `query - latent_center`, per axis.
    pub rel: (f64, f64),
    /// `(2 / h_out, 2 / w_out)` of the target grid.
    pub cell: (f64, f64),
}

impl QueryBinding {
    pub fn site(&self, latent_w: usize) -> usize {
        self.row * latent_w + self.col
    }
}

/// Nearest index on one axis; the regular grid makes rounding equivalent to
/// a Euclidean argmin. Exact midpoints resolve toward the smaller index.
fn nearest_axis(q: f64, extent: usize) -> usize {
    let pos = (q + 1.0) * extent as f64 / 2.0 - 0.5;
    let idx = (pos - 0.5).ceil();
    (idx.max(0.0) as usize).min(extent - 1)
}

/// Matches a query to its closest latent site by Euclidean distance.
pub fn nearest_latent(query: (f64, f64), latent_hw: (usize, usize), cell: (f64, f64)) -> QueryBinding {
    let (h, w) = latent_hw;
    let row = nearest_axis(query.0, h);
    let col = nearest_axis(query.1, w);
    QueryBinding {
        row,
        col,
        rel: (
            query.0 - coord_center(row, h),
            query.1 - coord_center(col, w),
        ),
        cell,
    }
}

/// `[d, h, w]` -> `[9d, h, w]`: concatenates each site's 3x3 neighborhood
/// (zero padded at borders, row-major neighbor order).
pub fn feature_unfold<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    let s = z.shape();
    if s.len() != 3 {
        return Err(Error::dimension(format!(
            "feature_unfold: want [d,h,w], got {s:?}"
        )));
    }
    let (d, h, w) = (s[0], s[1], s[2]);
    let data = kernels::unfold3x3(z.data(), d, h, w);
    Tensor::new(vec![9 * d, h, w], data)
}

/// Decoder input width for a `feat_dim`-channel latent after unfolding,
/// plus relative coordinate (2) and cell (2).
pub fn decoder_in_dim(feat_dim: usize) -> usize {
    9 * feat_dim + 4
}

/// Row-major latent site index for each binding.
pub fn binding_sites(bindings: &[QueryBinding], latent_w: usize) -> Vec<usize> {
    bindings.iter().map(|b| b.site(latent_w)).collect()
}

/// `[K, 4]` matrix of scaled `(rel_y, rel_x, cell_h, cell_w)` rows. Both the
/// offset and the cell are expressed in latent-pixel units (multiplied by
/// the latent extent) so their magnitude stays O(1) at any resolution.
pub fn relcell_matrix<T: Scalar>(
    bindings: &[QueryBinding],
    latent_hw: (usize, usize),
) -> Tensor<T> {
    let (h, w) = (latent_hw.0 as f64, latent_hw.1 as f64);
    let mut data = Vec::with_capacity(bindings.len() * 4);
    for b in bindings {
        data.push(T::from_f64(b.rel.0 * h));
        data.push(T::from_f64(b.rel.1 * w));
        data.push(T::from_f64(b.cell.0 * h));
        data.push(T::from_f64(b.cell.1 * w));
    }
    Tensor::new(vec![bindings.len(), 4], data).expect("sized above")
}

/// Full decoder input rows: `[unfolded latent at the bound site ; scaled
/// rel coord ; scaled cell]` for each query.
pub fn assemble_query_features<T: Scalar>(
    bindings: &[QueryBinding],
    unfolded_rows: &Tensor<T>,
    latent_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let s = unfolded_rows.shape();
    if s.len() != 2 || s[0] != latent_hw.0 * latent_hw.1 {
        return Err(Error::dimension(format!(
            "assemble_query_features: rows {s:?} vs latent {latent_hw:?}"
        )));
    }
    let c = s[1];
    let relcell: Tensor<T> = relcell_matrix(bindings, latent_hw);
    let mut data = Vec::with_capacity(bindings.len() * (c + 4));
    for (q, b) in bindings.iter().enumerate() {
        let site = b.site(latent_hw.1);
        data.extend_from_slice(&unfolded_rows.data()[site * c..(site + 1) * c]);
        data.extend_from_slice(&relcell.data()[q * 4..(q + 1) * 4]);
    }
    Tensor::new(vec![bindings.len(), c + 4], data)
}

/// Bind every pixel of an `h_out x w_out` target grid to the latent grid.
pub fn bind_grid(grid: &CoordGrid, latent_hw: (usize, usize)) -> Vec<QueryBinding> {
    let cell = (2.0 / grid.h_out as f64, 2.0 / grid.w_out as f64);
    grid.coords
        .iter()
        .map(|&q| nearest_latent(q, latent_hw, cell))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_centers_match_formula() {
        assert_eq!(coord_center(0, 2), -0.5);
        assert_eq!(coord_center(1, 2), 0.5);
        assert_eq!(coord_center(0, 1), 0.0);
        let four: Vec<f64> = (0..4).map(|i| coord_center(i, 4)).collect();
        assert_eq!(four, vec![-0.75, -0.25, 0.25, 0.75]);
    }

    #[test]
    fn query_at_center_has_zero_rel() {
        let cell = (0.5, 0.5);
        let b = nearest_latent((coord_center(2, 8), coord_center(5, 8)), (8, 8), cell);
        assert_eq!((b.row, b.col), (2, 5));
        assert_eq!(b.rel, (0.0, 0.0));
    }

    #[test]
    fn midpoint_tie_goes_to_smaller_index() {
        // Grid of 4: centers -0.75,-0.25,0.25,0.75; -0.5 is exactly between
        // index 0 and 1.
        let b = nearest_latent((-0.5, -0.5), (4, 4), (0.5, 0.5));
        assert_eq!((b.row, b.col), (0, 0));
    }

    #[test]
    fn matches_exhaustive_euclidean_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let h = rng.gen_range(1..20);
            let w = rng.gen_range(1..20);
            let q = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let got = nearest_latent(q, (h, w), (0.1, 0.1));

            let mut best = (0usize, 0usize);
            let mut best_d = f64::INFINITY;
            for r in 0..h {
                for c in 0..w {
                    let dy = q.0 - coord_center(r, h);
                    let dx = q.1 - coord_center(c, w);
                    let d = dy * dy + dx * dx;
                    if d < best_d {
                        best_d = d;
                        best = (r, c);
                    }
                }
            }
            assert_eq!((got.row, got.col), best, "query {q:?} on {h}x{w}");
        }
    }

    #[test]
    fn identity_scale_binds_own_site() {
        let grid = make_coord_grid(6, 6);
        let bindings = bind_grid(&grid, (6, 6));
        for (i, b) in bindings.iter().enumerate() {
            assert_eq!(b.site(6), i);
            assert_eq!(b.rel, (0.0, 0.0));
        }
    }

    #[test]
    fn scaled_rel_coord_bounded() {
        let grid = make_coord_grid(29, 13);
        let bindings = bind_grid(&grid, (7, 5));
        for b in &bindings {
            assert!((b.rel.0 * 7.0).abs() <= 1.0 + 1e-9);
            assert!((b.rel.1 * 5.0).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn unfold_center_recovers_and_in_dim() {
        let z = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f32).collect()).unwrap();
        let u = feature_unfold(&z).unwrap();
        assert_eq!(u.shape(), &[18, 3, 3]);
        assert_eq!(decoder_in_dim(64), 580);
        // Center slot (index 4) holds the original field.
        let sites = 9;
        for ci in 0..2 {
            for s in 0..sites {
                assert_eq!(
                    u.data()[(4 * 2 + ci) * sites + s],
                    z.data()[ci * sites + s]
                );
            }
        }
    }

    #[test]
    fn cell_entries_track_output_scale() {
        let z = Tensor::new(vec![1, 4, 4], vec![1.0f32; 16]).unwrap();
        let u = feature_unfold(&z).unwrap();
        let rows = Tensor::new(
            vec![16, 9],
            crate::kernels::chw_to_rows(u.data(), 9, 4, 4),
        )
        .unwrap();

        // Odd scales (3x, 5x) place some query centers exactly on latent
        // centers, giving identical relative geometry at both scales.
        let g2 = make_coord_grid(12, 12);
        let g3 = make_coord_grid(20, 20);
        let b2 = bind_grid(&g2, (4, 4));
        let b3 = bind_grid(&g3, (4, 4));
        let q2 = b2.iter().position(|b| b.rel == (0.0, 0.0)).unwrap();
        let q3 = b3.iter().position(|b| b.rel == (0.0, 0.0)).unwrap();
        let f2 = assemble_query_features(&b2[q2..q2 + 1], &rows, (4, 4)).unwrap();
        let f3 = assemble_query_features(&b3[q3..q3 + 1], &rows, (4, 4)).unwrap();
        let n = f2.shape()[1];
        // Everything but the last two (cell) entries agrees.
        assert_eq!(f2.data()[..n - 2], f3.data()[..n - 2]);
        assert_ne!(f2.data()[n - 2..], f3.data()[n - 2..]);
    }
}
