//! Non-overlapping crop and position-driven recomposition.
//!
//! Rasters are `(rows, cols, channels)` arrays: axis 0 is the vertical
//! coordinate (height), axis 1 the horizontal one (width). A patch at grid
//! position `(row, col)` covers pixel rows `row·patch_h .. (row+1)·patch_h`
//! and pixel columns `col·patch_w .. (col+1)·patch_w`; `(0, 0)` is the
//! top-left patch.
//!
//! The model applies the same partition to batched feature maps through
//! [`magnifier_nn::ops::crop_tensor`]; this module is the list-of-patches
//! form with explicit positions.

use ndarray::{s, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image and patch geometry. Fields are private so every value satisfies
/// `n_cols · patch_w == image_w` and `n_rows · patch_h == image_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    image_w: usize,
    image_h: usize,
    patch_w: usize,
    patch_h: usize,
    n_cols: usize,
    n_rows: usize,
}

impl GridSpec {
    pub fn image_w(&self) -> usize {
        self.image_w
    }
    pub fn image_h(&self) -> usize {
        self.image_h
    }
    pub fn patch_w(&self) -> usize {
        self.patch_w
    }
    pub fn patch_h(&self) -> usize {
        self.patch_h
    }
    /// Patches per row (`N = W / w`).
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
    /// Patches per column (`M = H / h`).
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn num_patches(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Positions in canonical row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |r| (0..self.n_cols).map(move |c| (r, c)))
    }
}

/// Checks that `patch_w × patch_h` tiles `image_w × image_h` exactly.
pub fn validate_grid(
    image_w: usize,
    image_h: usize,
    patch_w: usize,
    patch_h: usize,
) -> Result<GridSpec> {
    let dims = [image_w, image_h, patch_w, patch_h];
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "grid dimensions must be positive, got image {image_w}x{image_h}, patch {patch_w}x{patch_h}"
        )));
    }
    if !image_w.is_multiple_of(patch_w) || !image_h.is_multiple_of(patch_h) {
        return Err(Error::NonDivisibleGrid {
            image_w,
            image_h,
            patch_w,
            patch_h,
        });
    }
    Ok(GridSpec {
        image_w,
        image_h,
        patch_w,
        patch_h,
        n_cols: image_w / patch_w,
        n_rows: image_h / patch_h,
    })
}

/// A crop (or its embedding) tagged with its grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionedPatch<T = f32> {
    pub data: Array3<T>,
    pub row: usize,
    pub col: usize,
}

/// Feature map assembled from per-patch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid<T = f32> {
    pub data: Array3<T>,
}

impl<T> EmbeddingGrid<T> {
    /// `(H0, W0, C0)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// Splits `image` into `n_rows · n_cols` patches in row-major order.
pub fn crop_into_patches<T: Clone>(
    image: ArrayView3<'_, T>,
    spec: &GridSpec,
) -> Result<Vec<PositionedPatch<T>>> {
    let (h, w, c) = image.dim();
    if h != spec.image_h || w != spec.image_w {
        return Err(Error::shape(
            "crop_into_patches",
            &[spec.image_h, spec.image_w, c],
            &[h, w, c],
        ));
    }
    let (ph, pw) = (spec.patch_h, spec.patch_w);
    Ok(spec
        .positions()
        .map(|(row, col)| PositionedPatch {
            data: image
                .slice(s![row * ph..(row + 1) * ph, col * pw..(col + 1) * pw, ..])
                .to_owned(),
            row,
            col,
        })
        .collect())
}

/// Places each embedding at its grid cell. Input order is irrelevant; only
/// positions decide placement.
pub fn recompose_grid<T: Clone>(
    patches: &[PositionedPatch<T>],
    spec: &GridSpec,
) -> Result<EmbeddingGrid<T>> {
    let (n_rows, n_cols) = (spec.n_rows, spec.n_cols);
    let first = patches
        .first()
        .ok_or(Error::MissingPatch { row: 0, col: 0 })?;
    let (h0, w0, c0) = first.data.dim();

    let mut slot: Vec<Option<&PositionedPatch<T>>> = vec![None; n_rows * n_cols];
    for p in patches {
        if p.row >= n_rows || p.col >= n_cols {
            return Err(Error::PositionOutOfRange {
                row: p.row,
                col: p.col,
                n_rows,
                n_cols,
            });
        }
        if p.data.dim() != (h0, w0, c0) {
            let (a, b, c) = p.data.dim();
            return Err(Error::shape("recompose_grid", &[h0, w0, c0], &[a, b, c]));
        }
        let cell = &mut slot[p.row * n_cols + p.col];
        if cell.is_some() {
            return Err(Error::DuplicatePosition {
                row: p.row,
                col: p.col,
            });
        }
        *cell = Some(p);
    }

    let mut cells = Vec::with_capacity(slot.len());
    for (i, cell) in slot.into_iter().enumerate() {
        let p = cell.ok_or(Error::MissingPatch {
            row: i / n_cols,
            col: i % n_cols,
        })?;
        cells.push(p);
    }

    let mut data = Array3::from_elem(
        (n_rows * h0, n_cols * w0, c0),
        first.data[[0, 0, 0]].clone(),
    );
    for p in cells {
        data.slice_mut(s![
            p.row * h0..(p.row + 1) * h0,
            p.col * w0..(p.col + 1) * w0,
            ..
        ])
        .assign(&p.data);
    }
    Ok(EmbeddingGrid { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn grid_arithmetic() {
        let g = validate_grid(512, 512, 64, 64).unwrap();
        assert_eq!((g.n_cols(), g.n_rows()), (8, 8));
        let g = validate_grid(4, 4, 2, 2).unwrap();
        assert_eq!((g.n_cols(), g.n_rows()), (2, 2));
        let g = validate_grid(6, 4, 3, 1).unwrap();
        assert_eq!((g.n_cols(), g.n_rows()), (2, 4));
    }

    #[test]
    fn rejects_non_divisible_and_zero() {
        assert!(matches!(
            validate_grid(512, 512, 100, 100),
            Err(Error::NonDivisibleGrid { .. })
        ));
        assert!(matches!(
            validate_grid(512, 500, 64, 64),
            Err(Error::NonDivisibleGrid { .. })
        ));
        assert!(matches!(
            validate_grid(4, 4, 0, 2),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn full_size_sixty_four_patches() {
        let img = Array3::<f32>::zeros((512, 512, 12));
        let spec = validate_grid(512, 512, 64, 64).unwrap();
        let patches = crop_into_patches(img.view(), &spec).unwrap();
        assert_eq!(patches.len(), 64);
        assert_eq!((patches[0].row, patches[0].col), (0, 0));
        assert_eq!((patches[63].row, patches[63].col), (7, 7));
        assert_eq!(patches[9].data.dim(), (64, 64, 12));
        assert_eq!((patches[9].row, patches[9].col), (1, 1));
    }

    #[test]
    fn two_by_two_enumeration() {
        // [[a, b], [c, d]]
        let img = Array3::from_shape_vec((2, 2, 1), vec!['a', 'b', 'c', 'd']).unwrap();
        let spec = validate_grid(2, 2, 1, 1).unwrap();
        let got: Vec<_> = crop_into_patches(img.view(), &spec)
            .unwrap()
            .into_iter()
            .map(|p| (p.data[[0, 0, 0]], p.row, p.col))
            .collect();
        assert_eq!(
            got,
            vec![('a', 0, 0), ('b', 0, 1), ('c', 1, 0), ('d', 1, 1)]
        );
    }

    #[test]
    fn patch_equal_to_image_is_identity() {
        let img = Array3::from_shape_fn((3, 5, 2), |(r, c, k)| (r * 10 + c * 100 + k) as f32);
        let spec = validate_grid(5, 3, 5, 3).unwrap();
        let patches = crop_into_patches(img.view(), &spec).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].data, img);
    }

    #[test]
    fn crop_rejects_wrong_image_size() {
        let spec = validate_grid(4, 4, 2, 2).unwrap();
        let img = Array3::<f32>::zeros((4, 6, 1));
        assert!(matches!(
            crop_into_patches(img.view(), &spec),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn recompose_places_vectors_in_cells() {
        let spec = validate_grid(2, 2, 1, 1).unwrap();
        let patches: Vec<_> = spec
            .positions()
            .map(|(row, col)| PositionedPatch {
                data: Array3::from_shape_fn((1, 1, 3), |(_, _, k)| {
                    (row * 2 + col) as f32 * 10.0 + k as f32
                }),
                row,
                col,
            })
            .collect();
        let grid = recompose_grid(&patches, &spec).unwrap();
        assert_eq!(grid.dims(), (2, 2, 3));
        assert_eq!(grid.data[[1, 0, 2]], 22.0);
        assert_eq!(grid.data[[0, 1, 0]], 10.0);
    }

    #[test]
    fn recompose_uses_embedding_shape_not_patch_shape() {
        // 4x4 image, 2x2 patches, each embedded to 1x1x5
        let spec = validate_grid(4, 4, 2, 2).unwrap();
        let patches: Vec<_> = spec
            .positions()
            .map(|(row, col)| PositionedPatch {
                data: Array3::from_elem((1, 1, 5), (row, col)),
                row,
                col,
            })
            .collect();
        let grid = recompose_grid(&patches, &spec).unwrap();
        assert_eq!(grid.dims(), (2, 2, 5));
        assert_eq!(grid.data[[1, 0, 4]], (1, 0));
    }

    #[test]
    fn recompose_errors() {
        let spec = validate_grid(2, 2, 1, 1).unwrap();
        let mk = |row, col, c| PositionedPatch {
            data: Array3::<f32>::zeros((1, 1, c)),
            row,
            col,
        };
        let missing = [mk(0, 0, 1), mk(0, 1, 1), mk(1, 1, 1)];
        assert!(matches!(
            recompose_grid(&missing, &spec),
            Err(Error::MissingPatch { row: 1, col: 0 })
        ));
        let dup = [mk(0, 0, 1), mk(0, 1, 1), mk(1, 1, 1), mk(0, 1, 1)];
        assert!(matches!(
            recompose_grid(&dup, &spec),
            Err(Error::DuplicatePosition { row: 0, col: 1 })
        ));
        let shape = [mk(0, 0, 1), mk(0, 1, 2), mk(1, 0, 1), mk(1, 1, 1)];
        assert!(matches!(
            recompose_grid(&shape, &spec),
            Err(Error::ShapeMismatch { .. })
        ));
        let outside = [mk(0, 0, 1), mk(0, 1, 1), mk(1, 0, 1), mk(2, 0, 1)];
        assert!(matches!(
            recompose_grid(&outside, &spec),
            Err(Error::PositionOutOfRange { .. })
        ));
        assert!(matches!(
            recompose_grid::<f32>(&[], &spec),
            Err(Error::MissingPatch { .. })
        ));
    }

    #[test]
    fn every_order_of_a_two_by_two_grid_recomposes_identically() {
        let img = Array3::from_shape_fn((4, 4, 2), |(r, c, k)| (r * 16 + c * 2 + k) as f32);
        let spec = validate_grid(4, 4, 2, 2).unwrap();
        let patches = crop_into_patches(img.view(), &spec).unwrap();
        let mut count = 0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let order = [a, b, c, d];
                        let mut seen = [false; 4];
                        order.iter().for_each(|&i| seen[i] = true);
                        if !seen.iter().all(|&s| s) {
                            continue;
                        }
                        let shuffled: Vec<_> = order.iter().map(|&i| patches[i].clone()).collect();
                        assert_eq!(recompose_grid(&shuffled, &spec).unwrap().data, img);
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 24);
    }
}
