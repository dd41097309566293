//! Value-map images: one tile per (speed, orientation) slice.

use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::error::{Error, Result};

use super::grid::ValueGrid;

/// Tiled grayscale image of a value grid. Rows of tiles are speed bins
/// (slowest on top), columns are orientation bins (most clockwise on the
/// left). Within a tile forward is up and left is left. Values are min-max
/// normalized over the whole grid; a constant grid renders black.
pub fn value_map_image(grid: &ValueGrid) -> (GrayImage, f64, f64) {
    let s = &grid.spec;
    let lo = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut img = GrayImage::new((s.n_w * s.n_theta) as u32, (s.n_h * s.n_v) as u32);
    for l in 0..s.n_v {
        for k in 0..s.n_theta {
            for i in 0..s.n_h {
                for j in 0..s.n_w {
                    let v = grid.get(i, j, k, l);
                    let g = if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
                    let px = k * s.n_w + (s.n_w - 1 - j);
                    let py = l * s.n_h + (s.n_h - 1 - i);
                    img.put_pixel(px as u32, py as u32, image::Luma([g]));
                }
            }
        }
    }
    (img, lo, hi)
}

pub fn scale_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("scale.txt")
}

/// Writes the PNG and a sidecar text file with the normalization range.
pub fn render_value_map(grid: &ValueGrid, path: &Path) -> Result<()> {
    let (img, lo, hi) = value_map_image(grid);
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other.to_string()),
    })?;
    let side = scale_path(path);
    let text = format!(
        "min {lo}\nmax {hi}\nrows speed bins {}\ncolumns orientation bins {}\ntile {}x{}\n",
        grid.spec.n_v, grid.spec.n_theta, grid.spec.n_w, grid.spec.n_h
    );
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::grid::GridSpec;
    use crate::world::EgoState;

    fn small() -> ValueGrid {
        let spec = GridSpec {
            n_h: 6,
            n_w: 5,
            ..Default::default()
        };
        ValueGrid::zeros(spec, EgoState::default(), 0)
    }

    #[test]
    fn zero_grid_is_uniform() {
        let (img, _, _) = value_map_image(&small());
        assert_eq!(img.dimensions(), (25, 24));
        assert!(img.pixels().all(|p| p.0[0] == 0));
    }

    #[test]
    fn single_cell_is_one_bright_pixel() {
        let mut g = small();
        g.set(5, 0, 3, 2, 1.5);
        let (img, lo, hi) = value_map_image(&g);
        assert_eq!((lo, hi), (0.0, 1.5));
        let bright: Vec<(u32, u32)> = img.enumerate_pixels().filter(|(_, _, p)| p.0[0] > 0).map(|(x, y, _)| (x, y)).collect();
        // forward-most row of the tile, right-most column, tile (l=2, k=3)
        assert_eq!(bright, vec![(3 * 5 + 4, 2 * 6)]);
    }

    #[test]
    fn rendering_twice_gives_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = small();
        g.set(1, 2, 0, 1, 0.3);
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        render_value_map(&g, &a).unwrap();
        render_value_map(&g, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(std::fs::read_to_string(scale_path(&a)).unwrap().contains("max 0.3"));
        assert!(render_value_map(&g, &dir.path().join("missing/x.png")).is_err());
    }
}
