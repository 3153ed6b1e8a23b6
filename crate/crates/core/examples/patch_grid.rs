//! Splits a tile into a grid of patches, shuffles them and puts them back.

use magnifier::patch_grid::{crop_into_patches, recompose_grid, validate_grid};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn main() -> magnifier::Result<()> {
    let grid = validate_grid(128, 96, 32, 32)?;
    println!(
        "128x96 tile, 32x32 patches: {} columns x {} rows = {} patches",
        grid.n_cols(),
        grid.n_rows(),
        grid.num_patches()
    );

    let tile = Array3::from_shape_fn((96, 128, 3), |(y, x, c)| {
        (y * 128 + x) as f32 + c as f32 * 0.1
    });
    let mut patches = crop_into_patches(tile.view(), &grid)?;
    for p in patches.iter().take(5) {
        println!(
            "  patch ({}, {}) starts at pixel value {}",
            p.row,
            p.col,
            p.data[[0, 0, 0]]
        );
    }

    patches.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    let back = recompose_grid(&patches, &grid)?;
    println!(
        "recomposed after shuffling: identical = {}",
        back.data == tile
    );

    match validate_grid(100, 100, 64, 64) {
        Err(e) => println!("100x100 with 64x64 patches: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
