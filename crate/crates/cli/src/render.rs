//! Mask rendering as ASCII art or binary PGM.
//!
//! Cells are classified as unattended, stride-only or window. The window
//! class wins where both apply.

use std::path::Path;

use ppa_core::mask::{pattern_mask, BoolMatrix};
use ppa_core::{MaskConfig, PatternKind};

use crate::error::{CliError, Result};

pub const MAX_RENDER_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Ascii,
    Pgm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSpec {
    pub kind: PatternKind,
    pub len: usize,
    pub cfg: MaskConfig,
    pub format: RenderFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Unattended,
    Stride,
    Window,
}

impl Cell {
    pub fn ascii(self) -> u8 {
        match self {
            Cell::Unattended => b'.',
            Cell::Stride => b'S',
            Cell::Window => b'W',
        }
    }

    pub fn gray(self) -> u8 {
        match self {
            Cell::Unattended => 0,
            Cell::Stride => 128,
            Cell::Window => 255,
        }
    }
}

pub fn classify(spec: &RenderSpec) -> Result<Vec<Vec<Cell>>> {
    if spec.len == 0 || spec.len > MAX_RENDER_LEN {
        return Err(CliError::Usage(format!(
            "render length must be in 1..={MAX_RENDER_LEN}, got {}",
            spec.len
        )));
    }
    let mask: BoolMatrix = pattern_mask(spec.kind, spec.len, &spec.cfg)?;
    let overlay = matches!(spec.kind, PatternKind::IncrementalPlusWindow);
    Ok((0..spec.len)
        .map(|q| {
            (0..spec.len)
                .map(|k| {
                    if !mask.get(q, k) {
                        Cell::Unattended
                    } else if overlay && k <= q && q - k < spec.cfg.window {
                        Cell::Window
                    } else {
                        Cell::Stride
                    }
                })
                .collect()
        })
        .collect())
}

pub fn render_bytes(spec: &RenderSpec) -> Result<Vec<u8>> {
    let cells = classify(spec)?;
    let mut out = Vec::new();
    match spec.format {
        RenderFormat::Ascii => {
            for row in &cells {
                out.extend(row.iter().map(|c| c.ascii()));
                out.push(b'\n');
            }
        }
        RenderFormat::Pgm => {
            out.extend_from_slice(format!("P5\n{} {}\n255\n", spec.len, spec.len).as_bytes());
            for row in &cells {
                out.extend(row.iter().map(|c| c.gray()));
            }
        }
    }
    Ok(out)
}

pub fn cmd_render(spec: &RenderSpec, out: &Path) -> Result<()> {
    let bytes = render_bytes(spec)?;
    crate::write_file(out, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: PatternKind, len: usize, p: f64, window: usize) -> RenderSpec {
        RenderSpec {
            kind,
            len,
            cfg: MaskConfig::new(p, window).unwrap(),
            format: RenderFormat::Ascii,
        }
    }

    #[test]
    fn ppa_golden() {
        // worked out by hand from the indicator definition
        let golden = "\
W.......
WW......
.WW.....
S.WW....
.S.WW...
..S.WW..
...S.WW.
....S.WW
";
        let bytes = render_bytes(&spec(PatternKind::IncrementalPlusWindow, 8, 0.5, 2)).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), golden);
    }

    #[test]
    fn fixed_stride_one_is_triangle() {
        let bytes = render_bytes(&spec(PatternKind::FixedStride(1), 4, 0.5, 1)).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "S...\nSS..\nSSS.\nSSSS\n"
        );
    }

    #[test]
    fn pgm_header_and_levels() {
        let mut s = spec(PatternKind::IncrementalPlusWindow, 8, 0.5, 2);
        s.format = RenderFormat::Pgm;
        let bytes = render_bytes(&s).unwrap();
        let header = b"P5\n8 8\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 64);
        assert_eq!(&body[56..], &[0, 0, 0, 0, 128, 0, 255, 255]);
    }

    #[test]
    fn size_cap() {
        let s = spec(PatternKind::IncrementalStride, 513, 0.5, 2);
        assert!(matches!(render_bytes(&s), Err(CliError::Usage(_))));
    }
}
