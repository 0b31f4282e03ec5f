//! File formats: the CGLF binary field format and CSV exports.

pub mod config;

use std::path::Path;
use std::sync::Arc;

use crate::error::{CglError, Result};
use crate::field::{CField, Grid};

pub const CGLF_MAGIC: &[u8; 4] = b"CGLF";
pub const CGLF_VERSION: u32 = 1;

/// Header, per-axis sizes and lengths, then little-endian `(u₁, u₂)` pairs in row-major order.
pub fn encode_cglf(u: &CField) -> Vec<u8> {
    let g = u.grid();
    let mut out = Vec::with_capacity(12 + 16 * g.dim() + 8 * u.data().len());
    out.extend_from_slice(CGLF_MAGIC);
    out.extend_from_slice(&CGLF_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    for &n in g.n() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for &l in g.lengths() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for v in u.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(CglError::Format(format!("truncated CGLF data while reading {what}")));
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(a)
    }
}

pub fn decode_cglf(bytes: &[u8]) -> Result<CField> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<4>("magic")? != CGLF_MAGIC {
        return Err(CglError::Format("missing CGLF magic bytes".into()));
    }
    let version = u32::from_le_bytes(c.take("version")?);
    if version != CGLF_VERSION {
        return Err(CglError::Format(format!("unsupported CGLF version {version}")));
    }
    let dim = u32::from_le_bytes(c.take("dimension")?) as usize;
    if dim != 1 && dim != 2 {
        return Err(CglError::Format(format!("CGLF dimension must be 1 or 2, got {dim}")));
    }
    let mut n = Vec::with_capacity(dim);
    for _ in 0..dim {
        let v = u64::from_le_bytes(c.take("axis size")?);
        n.push(usize::try_from(v).map_err(|_| CglError::Format(format!("axis size {v} too large")))?);
    }
    let mut lengths = Vec::with_capacity(dim);
    for _ in 0..dim {
        lengths.push(f64::from_le_bytes(c.take("axis length")?));
    }
    let grid = Grid::new(&n, &lengths).map_err(|e| CglError::Format(format!("bad CGLF grid: {e}")))?;
    let count = 2 * grid.nodes();
    let expected = c.pos + 8 * count;
    if bytes.len() != expected {
        return Err(CglError::Format(format!(
            "CGLF payload has {} bytes, header implies {}",
            bytes.len(),
            expected
        )));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from_le_bytes(c.take("node value")?));
    }
    CField::from_data(Arc::new(grid), data).map_err(|e| CglError::Format(e.to_string()))
}

pub fn write_cglf(path: &Path, u: &CField) -> Result<()> {
    std::fs::write(path, encode_cglf(u))?;
    Ok(())
}

pub fn read_cglf(path: &Path) -> Result<CField> {
    decode_cglf(&std::fs::read(path)?)
}

/// Columns `x[,y],u1,u2`, one row per interior node.
pub fn field_csv(u: &CField) -> String {
    let g = u.grid();
    let mut s = String::from(if g.dim() == 1 { "x,u1,u2\n" } else { "x,y,u1,u2\n" });
    for i in 0..u.nodes() {
        for x in g.coords(i) {
            s.push_str(&format!("{x:.17e},"));
        }
        let [a, b] = u.node(i);
        s.push_str(&format!("{a:.17e},{b:.17e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let g = Arc::new(Grid::rect(3, 2, 1.0, 0.5).unwrap());
        let u = CField::zeros(g);
        let b = encode_cglf(&u);
        assert_eq!(&b[..4], b"CGLF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 3);
        assert_eq!(b.len(), 12 + 2 * 8 + 2 * 8 + 6 * 2 * 8);
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = Arc::new(Grid::line(4, 1.0).unwrap());
        let b = encode_cglf(&CField::zeros(g));
        assert!(decode_cglf(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_cglf(&bad).is_err());
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(decode_cglf(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(decode_cglf(&extra).is_err());
    }

    #[test]
    fn csv_columns() {
        let g = Arc::new(Grid::line(3, 1.0).unwrap());
        let u = CField::from_data(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = field_csv(&u);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,u1,u2");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("2.50000000000000000e-1,1.0"));
        let g2 = Arc::new(Grid::rect(2, 2, 1.0, 1.0).unwrap());
        assert!(field_csv(&CField::zeros(g2)).starts_with("x,y,u1,u2\n"));
    }

    proptest! {
        #[test]
        fn roundtrip_is_byte_identical(seed in any::<u64>(), two_d in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = if two_d { Arc::new(Grid::rect(5, 3, 1.2, 0.7).unwrap()) } else { Arc::new(Grid::line(9, 2.0).unwrap()) };
            let u = CField::random(g, 10.0, &mut rng);
            let b = encode_cglf(&u);
            let v = decode_cglf(&b).unwrap();
            prop_assert_eq!(&v, &u);
            prop_assert_eq!(encode_cglf(&v), b);
        }
    }
}
