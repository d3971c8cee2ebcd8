use image::{Rgba, RgbaImage};

use super::{ClickError, ClickEvent, FrameOverlay};

/// Cursor raster plus the pixel that points at the click.
#[derive(Debug, Clone, PartialEq)]
pub struct CursorIcon {
    pub image: RgbaImage,
    pub hotspot: (u32, u32),
}

// 12x19 arrow: '#' outline, '.' fill, ' ' transparent.
const ARROW: [&str; 19] = [
    "#           ",
    "##          ",
    "#.#         ",
    "#..#        ",
    "#...#       ",
    "#....#      ",
    "#.....#     ",
    "#......#    ",
    "#.......#   ",
    "#........#  ",
    "#.........# ",
    "#......#####",
    "#...#..#    ",
    "#..# #..#   ",
    "#.#  #..#   ",
    "##    #..#  ",
    "#     #..#  ",
    "       #..# ",
    "       ###  ",
];

impl CursorIcon {
    /// Opaque black-and-white arrow with its tip at (0, 0).
    pub fn arrow() -> Self {
        let mut image = RgbaImage::new(ARROW[0].len() as u32, ARROW.len() as u32);
        for (y, row) in ARROW.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                let px = match ch {
                    '#' => Rgba([0, 0, 0, 255]),
                    '.' => Rgba([255, 255, 255, 255]),
                    _ => Rgba([0, 0, 0, 0]),
                };
                image.put_pixel(x as u32, y as u32, px);
            }
        }
        Self { image, hotspot: (0, 0) }
    }
}

impl Default for CursorIcon {
    fn default() -> Self {
        Self::arrow()
    }
}

fn blend(dst: Rgba<u8>, src: Rgba<u8>) -> Rgba<u8> {
    let a = u32::from(src[3]);
    match a {
        0 => dst,
        255 => src,
        _ => {
            let mix = |s: u8, d: u8| ((u32::from(s) * a + u32::from(d) * (255 - a) + 127) / 255) as u8;
            let out_a = a + (u32::from(dst[3]) * (255 - a) + 127) / 255;
            Rgba([mix(src[0], dst[0]), mix(src[1], dst[1]), mix(src[2], dst[2]), out_a.min(255) as u8])
        }
    }
}

/// Copy of `frame` with `cursor` alpha-blended so its hotspot sits on the
/// click. Parts of the icon outside the frame are clipped.
pub fn compose_visual_prompt(frame: &RgbaImage, click: &ClickEvent, cursor: &CursorIcon) -> Result<RgbaImage, ClickError> {
    let (fw, fh) = frame.dimensions();
    let (iw, ih) = cursor.image.dimensions();
    if iw > fw || ih > fh {
        return Err(ClickError::IconTooLarge {
            icon_w: iw,
            icon_h: ih,
            frame_w: fw,
            frame_h: fh,
        });
    }
    if click.x >= fw || click.y >= fh {
        return Err(ClickError::OutOfBounds {
            x: click.x,
            y: click.y,
            width: fw,
            height: fh,
        });
    }
    let mut out = frame.clone();
    let origin_x = i64::from(click.x) - i64::from(cursor.hotspot.0);
    let origin_y = i64::from(click.y) - i64::from(cursor.hotspot.1);
    for (ix, iy, px) in cursor.image.enumerate_pixels() {
        let tx = origin_x + i64::from(ix);
        let ty = origin_y + i64::from(iy);
        if tx < 0 || ty < 0 || tx >= i64::from(fw) || ty >= i64::from(fh) {
            continue;
        }
        let (tx, ty) = (tx as u32, ty as u32);
        let dst = *out.get_pixel(tx, ty);
        out.put_pixel(tx, ty, blend(dst, *px));
    }
    Ok(out)
}

/// Flat rendering of an overlay: dark frame, light message boxes.
pub fn render_overlay(overlay: &FrameOverlay) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(overlay.width, overlay.height, Rgba([24, 24, 32, 255]));
    for m in &overlay.messages {
        for y in m.bbox.y_min..m.bbox.y_max.min(overlay.height) {
            for x in m.bbox.x_min..m.bbox.x_max.min(overlay.width) {
                img.put_pixel(x, y, Rgba([220, 220, 220, 255]));
            }
        }
    }
    img
}
