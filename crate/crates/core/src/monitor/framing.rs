//! Framed binary hidden-state stream: each record is a u32 little-endian byte
//! length followed by that many bytes of little-endian `f32` values.

use std::io::{self, Read, Write};

pub fn write_frame(out: &mut impl Write, values: &[f32]) -> io::Result<()> {
    out.write_all(&((values.len() * 4) as u32).to_le_bytes())?;
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_frame(buf: &mut Vec<u8>, values: &[f32]) {
    buf.extend_from_slice(&((values.len() * 4) as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads the next frame into `dst` (resized to the frame length). Returns
/// `Ok(false)` on a clean end of stream before any length bytes.
pub fn read_frame(
    input: &mut impl Read,
    dst: &mut Vec<f32>,
    scratch: &mut Vec<u8>,
) -> io::Result<bool> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = input.read(&mut len[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "truncated frame length",
            ));
        }
        filled += n;
    }
    let bytes = u32::from_le_bytes(len) as usize;
    if bytes % 4 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {bytes} is not a multiple of 4"),
        ));
    }
    scratch.resize(bytes, 0);
    input.read_exact(scratch)?;
    decode_values(scratch, dst);
    Ok(true)
}

/// Decodes little-endian `f32`s from `src` into `dst`, reusing its allocation.
#[inline]
pub fn decode_values(src: &[u8], dst: &mut Vec<f32>) {
    crate::linalg::decode_f32_le(src, dst);
}

/// Zero-copy iterator over frames in an in-memory framed buffer.
pub struct FrameSlices<'a> {
    bytes: &'a [u8],
}

impl<'a> FrameSlices<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }
}

impl<'a> Iterator for FrameSlices<'a> {
    type Item = &'a [u8];

    fn next(&mut self) -> Option<&'a [u8]> {
        if self.bytes.len() < 4 {
            return None;
        }
        let len = u32::from_le_bytes(self.bytes[..4].try_into().expect("4 bytes")) as usize;
        let end = (4 + len).min(self.bytes.len());
        let out = &self.bytes[4..end];
        self.bytes = &self.bytes[end..];
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &[1.0, -2.5]).unwrap();
        write_frame(&mut buf, &[]).unwrap();
        write_frame(&mut buf, &[3.25]).unwrap();
        let mut cur = io::Cursor::new(&buf);
        let (mut dst, mut scratch) = (Vec::new(), Vec::new());
        let mut got = Vec::new();
        while read_frame(&mut cur, &mut dst, &mut scratch).unwrap() {
            got.push(dst.clone());
        }
        assert_eq!(got, vec![vec![1.0, -2.5], vec![], vec![3.25]]);
        assert_eq!(FrameSlices::new(&buf).count(), 3);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &[1.0, 2.0]).unwrap();
        buf.pop();
        let mut cur = io::Cursor::new(&buf);
        assert!(read_frame(&mut cur, &mut Vec::new(), &mut Vec::new()).is_err());
        let mut cur = io::Cursor::new(&buf[..2]);
        assert!(read_frame(&mut cur, &mut Vec::new(), &mut Vec::new()).is_err());
    }
}
