//! Overlay rendering: translucent instance masks, bounding boxes, and
//! "<class> <score%>" captions for detections at or above the 80% rule.

use ndarray::Array3;

use crate::imageops::PixelArray;

use super::Detection;

/// Instances below this confidence are not drawn.
pub const RENDER_THRESHOLD: f32 = 0.8;

const MASK_ALPHA: f32 = 0.45;

/// Fixed palette keyed by instance index.
pub const PALETTE: [[f32; 3]; 10] = [
    [230.0, 25.0, 75.0],
    [60.0, 180.0, 75.0],
    [255.0, 225.0, 25.0],
    [0.0, 130.0, 200.0],
    [245.0, 130.0, 48.0],
    [145.0, 30.0, 180.0],
    [70.0, 240.0, 240.0],
    [240.0, 50.0, 230.0],
    [210.0, 245.0, 60.0],
    [170.0, 110.0, 40.0],
];

/// Render detections onto a copy of the image. With zero drawable
/// detections the copy is pixel-identical to the input.
pub fn render_overlay(image: &PixelArray, detections: &[Detection]) -> PixelArray {
    let mut out = image.clone();
    let (h, w, _) = out.dim();
    for (idx, det) in detections.iter().filter(|d| d.score >= RENDER_THRESHOLD).enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        blend_mask(&mut out, det, color);
        draw_box(&mut out, det, color);
        let caption = format!("{} {}%", det.label.name().to_ascii_uppercase(), (det.score * 100.0).round() as u32);
        let (y1, x1, _, _) = det.bbox;
        let ty = (y1 as i64 - 9).max(0) as usize;
        let tx = (x1 as i64).max(0).min(w as i64 - 1) as usize;
        draw_text(&mut out, &caption, tx, ty.min(h.saturating_sub(8)), color);
    }
    out
}

fn blend_mask(out: &mut PixelArray, det: &Detection, color: [f32; 3]) {
    let (h, w, _) = out.dim();
    let (mh, mw) = det.mask.dim();
    for y in 0..h.min(mh) {
        for x in 0..w.min(mw) {
            if det.mask[[y, x]] != 0 {
                for c in 0..3 {
                    out[[y, x, c]] = (1.0 - MASK_ALPHA) * out[[y, x, c]] + MASK_ALPHA * color[c];
                }
            }
        }
    }
}

fn draw_box(out: &mut PixelArray, det: &Detection, color: [f32; 3]) {
    let (h, w, _) = out.dim();
    let (y1, x1, y2, x2) = det.bbox;
    let y1 = (y1.round().max(0.0) as usize).min(h - 1);
    let x1 = (x1.round().max(0.0) as usize).min(w - 1);
    let y2 = (y2.round().max(0.0) as usize).min(h - 1);
    let x2 = (x2.round().max(0.0) as usize).min(w - 1);
    for x in x1..=x2 {
        set_px(out, y1, x, color);
        set_px(out, y2, x, color);
    }
    for y in y1..=y2 {
        set_px(out, y, x1, color);
        set_px(out, y, x2, color);
    }
}

fn set_px(out: &mut Array3<f32>, y: usize, x: usize, color: [f32; 3]) {
    for c in 0..3 {
        out[[y, x, c]] = color[c];
    }
}

// --- minimal built-in 5x7 font (uppercase, digits, '%', '.') ---

fn glyph(ch: char) -> [u8; 7] {
    match ch {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '%' => [0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        _ => [0; 7],
    }
}

fn draw_text(out: &mut PixelArray, text: &str, x0: usize, y0: usize, color: [f32; 3]) {
    let (h, w, _) = out.dim();
    let mut cursor = x0;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..5 {
                if row & (1 << (4 - dx)) != 0 {
                    let (y, x) = (y0 + dy, cursor + dx);
                    if y < h && x < w {
                        set_px(out, y, x, color);
                    }
                }
            }
        }
        cursor += 6;
        if cursor >= w {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ClassLabel;
    use ndarray::{Array2, Array3};

    fn base_image() -> PixelArray {
        Array3::from_elem((64, 64, 3), 100.0)
    }

    fn det(score: f32, offset: usize) -> Detection {
        let mut mask = Array2::<u8>::zeros((64, 64));
        for y in offset..offset + 10 {
            for x in offset..offset + 10 {
                mask[[y, x]] = 1;
            }
        }
        Detection {
            bbox: (offset as f32, offset as f32, (offset + 10) as f32, (offset + 10) as f32),
            mask,
            label: ClassLabel::Landslide,
            score,
        }
    }

    #[test]
    fn zero_detections_is_a_pixel_identical_copy() {
        let img = base_image();
        assert_eq!(render_overlay(&img, &[]), img);
    }

    #[test]
    fn below_eighty_percent_is_not_drawn() {
        let img = base_image();
        assert_eq!(render_overlay(&img, &[det(0.79, 20)]), img);
    }

    #[test]
    fn two_detections_use_two_palette_colors() {
        let img = base_image();
        let out = render_overlay(&img, &[det(0.95, 12), det(0.9, 36)]);
        assert_ne!(out, img);
        // Box outlines are drawn in pure palette color.
        let has_color = |color: [f32; 3]| {
            let (h, w, _) = out.dim();
            (0..h).any(|y| (0..w).any(|x| (0..3).all(|c| out[[y, x, c]] == color[c])))
        };
        assert!(has_color(PALETTE[0]));
        assert!(has_color(PALETTE[1]));
    }
}
