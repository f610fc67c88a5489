//! Binary PGM (P5) export of centroids.
//!
//! Each centroid renders as one `height x width` image with pixel
//! `clamp(round(255 * v))`; each unit additionally gets a near-square
//! montage grid of all its centroids. Headers are exactly
//! `P5\n<width> <height>\n255\n`.

use std::path::{Path, PathBuf};

use crate::error::{Result, StamError};
use crate::hierarchy::Hierarchy;
use crate::unit::StamUnit;

pub fn pgm_bytes(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(StamError::LengthMismatch {
            expected: height * width,
            actual: values.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

/// Lays a unit's centroids out row-major in a near-square grid; empty cells
/// stay black. Returns (pixels, grid height, grid width).
pub fn centroid_grid(unit: &StamUnit, height: usize, width: usize) -> Result<(Vec<f64>, usize, usize)> {
    if unit.dim() != height * width {
        return Err(StamError::DimensionMismatch {
            expected: unit.dim(),
            actual: height * width,
        });
    }
    let n = unit.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * height, cols * width);
    let mut pixels = vec![0.0; gh * gw];
    for (k, c) in unit.centroids().iter().enumerate() {
        let (gr, gc) = (k / cols, k % cols);
        for r in 0..height {
            for col in 0..width {
                pixels[(gr * height + r) * gw + gc * width + col] = c.center()[r * width + col];
            }
        }
    }
    Ok((pixels, gh, gw))
}

/// Writes one PGM per centroid (`l<layer>_u<unit>_c<k>.pgm`) and one montage
/// per unit (`l<layer>_u<unit>.pgm`). Layers are numbered from 1 at the
/// bottom. Returns the written paths in order.
pub fn export_centroids(hierarchy: &Hierarchy, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (li, layer) in hierarchy.layers().iter().enumerate() {
        let (h, w) = (layer.spec().field_height, layer.spec().field_width);
        for (ui, unit) in layer.units().iter().enumerate() {
            for (k, c) in unit.centroids().iter().enumerate() {
                let path = dir.join(format!("l{}_u{}_c{}.pgm", li + 1, ui, k));
                std::fs::write(&path, pgm_bytes(c.center(), h, w)?)?;
                written.push(path);
            }
            let (pixels, gh, gw) = centroid_grid(unit, h, w)?;
            let path = dir.join(format!("l{}_u{}.pgm", li + 1, ui));
            std::fs::write(&path, pgm_bytes(&pixels, gh, gw)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
