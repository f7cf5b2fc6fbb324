//! Box outlines and bitmap-font labels for the `visualize` command.

use crate::datamodel::{BBox, ImageBuffer};

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
const SCALE: u32 = 2;

/// 5x7 glyph rows, most significant of the low five bits is the left column.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ' ' => [0; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

/// Distinct, stable color per category id.
pub fn palette(key: u64) -> [u8; 3] {
    const COLORS: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    COLORS[(key % COLORS.len() as u64) as usize]
}

fn fill_rect(img: &mut ImageBuffer, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put(x as u32, y as u32, rgb);
        }
    }
}

/// Two-pixel outline just inside the box edges.
pub fn draw_box(img: &mut ImageBuffer, b: &BBox, rgb: [u8; 3]) {
    let (x0, y0) = (b.x.floor() as i64, b.y.floor() as i64);
    let (x1, y1) = (b.right().ceil() as i64, b.bottom().ceil() as i64);
    let t = 2;
    fill_rect(img, x0, y0, x1, y0 + t, rgb);
    fill_rect(img, x0, y1 - t, x1, y1, rgb);
    fill_rect(img, x0, y0, x0 + t, y1, rgb);
    fill_rect(img, x1 - t, y0, x1, y1, rgb);
}

/// Text on a filled background whose top-left corner is `(x, y)`.
pub fn draw_label(img: &mut ImageBuffer, x: i64, y: i64, text: &str, bg: [u8; 3]) {
    let advance = (GLYPH_W + 1) * SCALE;
    let width = text.chars().count() as i64 * advance as i64 + SCALE as i64;
    let height = ((GLYPH_H + 2) * SCALE) as i64;
    fill_rect(img, x, y, x + width, y + height, bg);
    let luma = 0.299 * bg[0] as f64 + 0.587 * bg[1] as f64 + 0.114 * bg[2] as f64;
    let fg = if luma > 128.0 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    };
    for (i, c) in text.chars().enumerate() {
        let gx = x + SCALE as i64 + i as i64 * advance as i64;
        let gy = y + SCALE as i64;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    let px = gx + (col * SCALE) as i64;
                    let py = gy + (row as u32 * SCALE) as i64;
                    fill_rect(img, px, py, px + SCALE as i64, py + SCALE as i64, fg);
                }
            }
        }
    }
}

/// Draws each box with its label above it (or inside, at the top edge).
pub fn annotate(img: &mut ImageBuffer, items: &[(BBox, String, u64)]) {
    let label_h = ((GLYPH_H + 2) * SCALE) as i64;
    for (b, label, key) in items {
        let rgb = palette(*key);
        draw_box(img, b, rgb);
        let top = b.y.floor() as i64;
        let y = if top >= label_h { top - label_h } else { top };
        draw_label(img, b.x.floor() as i64, y, label, rgb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_items_leaves_image_alone() {
        let mut img = ImageBuffer::filled(10, 10, [7, 8, 9]);
        let before = img.clone();
        annotate(&mut img, &[]);
        assert_eq!(img, before);
    }

    #[test]
    fn outline_touches_box_edges_only() {
        let mut img = ImageBuffer::filled(20, 20, [0; 3]);
        draw_box(&mut img, &BBox::new(5.0, 5.0, 10.0, 10.0), [255, 0, 0]);
        assert_eq!(img.get(5, 5), [255, 0, 0]);
        assert_eq!(img.get(14, 14), [255, 0, 0]);
        assert_eq!(img.get(10, 10), [0, 0, 0]);
        assert_eq!(img.get(4, 4), [0, 0, 0]);
    }

    #[test]
    fn labels_clip_at_borders() {
        let mut img = ImageBuffer::filled(8, 8, [0; 3]);
        draw_label(&mut img, -3, 4, "brand:0.97", [0, 130, 200]);
        assert_eq!(img.get(0, 5), [0, 130, 200]);
    }
}
