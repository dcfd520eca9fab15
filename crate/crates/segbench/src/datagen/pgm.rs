//! Binary PGM (P5, 8-bit) image files for dataset inspection.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write a `[1,H,W]` or `[H,W]` tensor of values in `[0,1]` as an 8-bit P5
/// file. Values are scaled by 255 and rounded.
pub fn save_pgm(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = match t.shape.as_slice() {
        [1, h, w] | [h, w] => (*h, *w),
        other => {
            return Err(Error::shape(format!(
                "save_pgm: expected [1,H,W] or [H,W], got {other:?}"
            )))
        }
    };
    let mut buf = Vec::with_capacity(32 + h * w);
    write!(buf, "P5\n{w} {h}\n255\n").expect("write to Vec cannot fail");
    for v in &t.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read an 8-bit P5 file back as a `[1,H,W]` tensor with values `v/255`.
/// Comments (`#` to end of line) are allowed anywhere in the header.
pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let name = path.display();
    let bad = |what: &str| Error::format(format!("{name}: {what}"));

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("not a binary PGM (missing P5 magic)"));
    }
    // Header: three whitespace-separated numbers after the magic, with
    // comment lines skipped; a single whitespace byte then separates the
    // header from the payload.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while matches!(bytes.get(pos), Some(b) if b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return Err(bad("expected a number in the header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ASCII");
        *field = text
            .parse()
            .map_err(|_| bad("header number out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!(
            "unsupported maxval {maxval}, only 255 is handled"
        )));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero image extent"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing separator before payload")),
    }
    let payload = &bytes[pos..];
    if payload.len() != w * h {
        return Err(bad(&format!(
            "payload is {} bytes, expected {}x{} = {}",
            payload.len(),
            w,
            h,
            w * h
        )));
    }
    let data = payload.iter().map(|b| f64::from(*b) / 255.0).collect();
    Tensor::from_vec(&[1, h, w], data)
}
