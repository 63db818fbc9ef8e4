//! Binary PGM (grayscale) and PPM (color) images from values in `[-1, 1]`.

use crate::error::{Error, Result};

/// Linear map `[-1, 1] → [0, 255]`, clamped and rounded.
pub fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn header(magic: &str, rows: usize, cols: usize) -> Vec<u8> {
    format!("{magic}\n{cols} {rows}\n255\n").into_bytes()
}

/// Row-major grayscale image.
pub fn pgm(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::contract(format!("{} values for a {rows}x{cols} image", values.len())));
    }
    let mut out = header("P5", rows, cols);
    out.extend(values.iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Row-major interleaved RGB image (`rows × cols × 3` values).
pub fn ppm(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols * 3 {
        return Err(Error::contract(format!("{} values for a {rows}x{cols} RGB image", values.len())));
    }
    let mut out = header("P6", rows, cols);
    out.extend(values.iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Whether a sample shape is an image: `[rows, cols]` or `[rows, cols, 3]`.
pub fn is_image_shape(shape: &[usize]) -> bool {
    matches!(shape, [_, _] | [_, _, 3])
}

/// Tiles images into a grid with a one-pixel black border between cells.
/// Cell `(r, c)` shows `images[r * grid_cols + c]`.
pub fn image_grid(images: &[&[f64]], shape: &[usize], grid_rows: usize, grid_cols: usize) -> Result<Vec<u8>> {
    let (h, w, ch) = match *shape {
        [h, w] => (h, w, 1),
        [h, w, 3] => (h, w, 3),
        _ => return Err(Error::contract(format!("sample shape {shape:?} is not an image"))),
    };
    if images.len() != grid_rows * grid_cols {
        return Err(Error::contract(format!(
            "{} images for a {grid_rows}x{grid_cols} grid",
            images.len()
        )));
    }
    let rows = grid_rows * (h + 1) + 1;
    let cols = grid_cols * (w + 1) + 1;
    let mut canvas = vec![-1.0; rows * cols * ch];
    for (k, img) in images.iter().enumerate() {
        if img.len() != h * w * ch {
            return Err(Error::contract(format!("image {k} has {} values, expected {}", img.len(), h * w * ch)));
        }
        let (r0, c0) = ((k / grid_cols) * (h + 1) + 1, (k % grid_cols) * (w + 1) + 1);
        for y in 0..h {
            let dst = ((r0 + y) * cols + c0) * ch;
            canvas[dst..dst + w * ch].copy_from_slice(&img[y * w * ch..(y + 1) * w * ch]);
        }
    }
    if ch == 1 {
        pgm(&canvas, rows, cols)
    } else {
        ppm(&canvas, rows, cols)
    }
}
