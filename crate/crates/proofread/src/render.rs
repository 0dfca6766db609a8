use image::{ImageFormat, Rgb, RgbImage};
use spinelink_core::volume::BACKGROUND;

use crate::session::{Session, SessionError};

pub const SPINE_COLOR: [u8; 3] = [31, 119, 180];
pub const CANDIDATE_COLOR: [u8; 3] = [255, 127, 14];
pub const OTHER_CANDIDATE_COLOR: [u8; 3] = [44, 160, 44];
pub const BACKGROUND_COLOR: [u8; 3] = [16, 16, 16];

/// Gray level for objects that are neither the spine nor a candidate.
fn neutral(label: u64) -> [u8; 3] {
    let g = 70 + (label.wrapping_mul(2_654_435_761) % 90) as u8;
    [g, g, g]
}

/// Overlay of slice `z` of the spine's window: spine blue, `candidate` orange,
/// other candidates green, everything else gray.
pub fn render_overlay(session: &Session, spine: u64, candidate: u64, z: usize) -> Result<RgbImage, SessionError> {
    let tree = session.tree(spine)?;
    if !tree.candidates.iter().any(|c| c.shaft_id == candidate) {
        return Err(SessionError::NotACandidate { spine, shaft: candidate });
    }
    let z = session.check_z(tree, z)?;
    let w = &tree.window;
    let ext = w.extent();
    let volume = &session.data().volume;
    let mut img = RgbImage::new(ext[0] as u32, ext[1] as u32);
    for y in 0..ext[1] {
        for x in 0..ext[0] {
            let label = volume.get([w.lo[0] + x, w.lo[1] + y, z]);
            let color = if label == BACKGROUND {
                BACKGROUND_COLOR
            } else if label == spine {
                SPINE_COLOR
            } else if label == candidate {
                CANDIDATE_COLOR
            } else if tree.candidates.iter().any(|c| c.shaft_id == label) {
                OTHER_CANDIDATE_COLOR
            } else {
                neutral(label)
            };
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory png encoding");
    out.into_inner()
}
