//! Binary wire form of a [`ShuffledReport`].
//!
//! ```text
//! "BUDS" u16 version
//! u32 column count, then per column: u32 byte length + UTF-8 name
//! u32 group count, then per group: u32 length + u32 column indices
//! 32-byte plan digest
//! u64 row count, then cells row-major
//! ```
//!
//! Each cell is a tag byte and a payload: `0` i64, `1` f64 bits, `2` u32
//! length + UTF-8, `3` u32 bit length + u32 hex length + lowercase hex of
//! the packed bits, `4` u32 arity + cells. All integers are big-endian.

use super::{AttributeTable, BudsError, Cell, Result, ShuffledReport};
use crate::BitString;

const MAGIC: &[u8; 4] = b"BUDS";
const VERSION: u16 = 1;

pub fn encode_report(report: &ShuffledReport) -> Vec<u8> {
    let table = &report.table;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&(table.column_names.len() as u32).to_be_bytes());
    for name in &table.column_names {
        put_str(&mut out, name);
    }
    out.extend_from_slice(&(table.groups.len() as u32).to_be_bytes());
    for group in &table.groups {
        out.extend_from_slice(&(group.len() as u32).to_be_bytes());
        for &c in group {
            out.extend_from_slice(&(c as u32).to_be_bytes());
        }
    }
    out.extend_from_slice(&report.plan_digest);
    out.extend_from_slice(&(table.rows.len() as u64).to_be_bytes());
    for row in &table.rows {
        for cell in row {
            put_cell(&mut out, cell);
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_cell(out: &mut Vec<u8>, cell: &Cell) {
    match cell {
        Cell::Int(v) => {
            out.push(0);
            out.extend_from_slice(&v.to_be_bytes());
        }
        Cell::Real(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        Cell::Text(s) => {
            out.push(2);
            put_str(out, s);
        }
        Cell::Bits(bits) => {
            out.push(3);
            out.extend_from_slice(&(bits.len() as u32).to_be_bytes());
            let mut packed = bits.clone();
            packed.set_uninitialized(false);
            put_str(out, &hex::encode(packed.as_raw_slice()));
        }
        Cell::Tuple(items) => {
            out.push(4);
            out.extend_from_slice(&(items.len() as u32).to_be_bytes());
            for item in items {
                put_cell(out, item);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> BudsError {
        BudsError::Decode {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| BudsError::Decode {
            offset: at,
            message: "invalid UTF-8".into(),
        })
    }

    fn cell(&mut self, depth: usize) -> Result<Cell> {
        if depth > 16 {
            return Err(self.err("tuple nesting too deep"));
        }
        let at = self.pos;
        match self.u8()? {
            0 => Ok(Cell::Int(self.u64()? as i64)),
            1 => Ok(Cell::Real(f64::from_bits(self.u64()?))),
            2 => Ok(Cell::Text(self.string()?)),
            3 => {
                let n_bits = self.u32()?;
                let hex_at = self.pos;
                let text = self.string()?;
                let raw = hex::decode(&text).map_err(|e| BudsError::Decode {
                    offset: hex_at,
                    message: format!("bad hex: {e}"),
                })?;
                if raw.len() != n_bits.div_ceil(8) {
                    return Err(BudsError::Decode {
                        offset: hex_at,
                        message: format!("{} bytes cannot hold {n_bits} bits", raw.len()),
                    });
                }
                let mut bits = BitString::from_vec(raw);
                bits.truncate(n_bits);
                Ok(Cell::Bits(bits))
            }
            4 => {
                let n = self.u32()?;
                let items = (0..n)
                    .map(|_| self.cell(depth + 1))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Cell::Tuple(items))
            }
            tag => Err(BudsError::Decode {
                offset: at,
                message: format!("unknown cell tag {tag}"),
            }),
        }
    }
}

pub fn decode_report(bytes: &[u8]) -> Result<ShuffledReport> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(BudsError::Decode {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = u16::from_be_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(BudsError::Decode {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n_cols = r.u32()?;
    let names = (0..n_cols)
        .map(|_| r.string())
        .collect::<Result<Vec<_>>>()?;
    let n_groups = r.u32()?;
    let mut groups = Vec::with_capacity(n_groups.min(1024));
    for _ in 0..n_groups {
        let len = r.u32()?;
        groups.push((0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
    }
    let plan_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let n_rows = r.u64()? as usize;
    let mut rows = Vec::with_capacity(n_rows.min(1 << 20));
    for _ in 0..n_rows {
        rows.push((0..n_cols).map(|_| r.cell(0)).collect::<Result<Vec<_>>>()?);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    let table = AttributeTable::with_groups(names, rows, groups)?;
    Ok(ShuffledReport { table, plan_digest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bitvec::prelude::*;
    use proptest::prelude::*;

    fn sample_report() -> ShuffledReport {
        let bits: BitString = bitvec![u8, Msb0; 0, 1, 0, 0, 1, 1, 0, 0, 0, 1];
        let table = AttributeTable::new(
            vec![
                "user_id".into(),
                "count".into(),
                "max_index:min_index".into(),
            ],
            vec![
                vec![
                    Cell::Bits(bits.clone()),
                    Cell::Int(200),
                    Cell::Tuple(vec![Cell::Int(501), Cell::Int(300)]),
                ],
                vec![
                    Cell::Text("x".into()),
                    Cell::Real(-0.25),
                    Cell::Tuple(vec![Cell::Int(801), Cell::Int(600)]),
                ],
            ],
        )
        .unwrap();
        ShuffledReport {
            table,
            plan_digest: [7; 32],
        }
    }

    #[test]
    fn matches_golden_bytes() {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/golden/shuffled_report.bin"
        );
        let encoded = encode_report(&sample_report());
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(path, &encoded).unwrap();
        }
        let golden = std::fs::read(path).expect("golden file present");
        assert_eq!(encoded, golden);
        assert_eq!(decode_report(&golden).unwrap(), sample_report());
    }

    #[test]
    fn bit_cells_are_hex_text() {
        let encoded = encode_report(&sample_report());
        // 10 bits packed Msb0 -> 0x4c 0x40
        let needle = b"4c40";
        assert!(encoded.windows(4).any(|w| w == needle));
    }

    #[test]
    fn truncation_reports_offset() {
        let encoded = encode_report(&sample_report());
        for cut in [0, 3, 10, encoded.len() - 1] {
            assert!(matches!(
                decode_report(&encoded[..cut]),
                Err(BudsError::Decode { .. })
            ));
        }
        let mut extra = encoded.clone();
        extra.push(0);
        assert!(matches!(
            decode_report(&extra),
            Err(BudsError::Decode { offset, .. }) if offset == encoded.len()
        ));
    }

    fn cell_strategy() -> impl Strategy<Value = Cell> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(Cell::Int),
            any::<f64>()
                .prop_filter("finite", |v| v.is_finite())
                .prop_map(Cell::Real),
            "[a-z0-9:]{0,8}".prop_map(Cell::Text),
            prop::collection::vec(any::<bool>(), 0..40)
                .prop_map(|v| Cell::Bits(v.into_iter().collect())),
        ];
        leaf.prop_recursive(2, 8, 3, |inner| {
            prop::collection::vec(inner, 0..3).prop_map(Cell::Tuple)
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            rows in prop::collection::vec(prop::collection::vec(cell_strategy(), 3), 0..8),
            digest in any::<[u8; 32]>(),
        ) {
            let table = AttributeTable::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
            let report = ShuffledReport { table, plan_digest: digest };
            prop_assert_eq!(decode_report(&encode_report(&report)).unwrap(), report);
        }
    }
}
