use std::collections::HashMap;

use bitvec::prelude::*;

use super::{ClientShard, DatasetError, Result};
use crate::BitString;

/// Maps each distinct value of one attribute to a bit position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    name: String,
    values: Vec<String>,
    positions: HashMap<String, usize>,
}

impl Codebook {
    /// Builds a codebook; duplicate values keep their first position.
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = String>) -> Self {
        let mut book = Self {
            name: name.into(),
            values: Vec::new(),
            positions: HashMap::new(),
        };
        for v in values {
            book.insert(v);
        }
        book
    }

    fn insert(&mut self, value: String) {
        if !self.positions.contains_key(&value) {
            self.positions.insert(value.clone(), self.values.len());
            self.values.push(value);
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, value: &str) -> Option<usize> {
        self.positions.get(value).copied()
    }

    pub fn value(&self, position: usize) -> Option<&str> {
        self.values.get(position).map(String::as_str)
    }
}

/// Concatenated one-hot blocks, one per attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotCodec {
    books: Vec<Codebook>,
}

impl OneHotCodec {
    pub fn new(books: Vec<Codebook>) -> Self {
        Self { books }
    }

    /// Collects every value seen in `records` into per-attribute codebooks,
    /// in first-seen order.
    pub fn fit<'a, I>(names: &[&str], records: I) -> Self
    where
        I: IntoIterator<Item = &'a [(&'a str, String)]>,
    {
        let mut books: Vec<Codebook> = names
            .iter()
            .map(|n| Codebook::new(*n, std::iter::empty()))
            .collect();
        for record in records {
            for (name, value) in record {
                if let Some(book) = books.iter_mut().find(|b| b.name == *name) {
                    book.insert(value.clone());
                }
            }
        }
        Self { books }
    }

    /// Codec over all [`ClientShard::ATTRIBUTES`] of a cohort.
    pub fn for_shards(shards: &[ClientShard]) -> Self {
        let records: Vec<Vec<(&str, String)>> =
            shards.iter().map(ClientShard::attributes).collect();
        Self::fit(&ClientShard::ATTRIBUTES, records.iter().map(Vec::as_slice))
    }

    pub fn books(&self) -> &[Codebook] {
        &self.books
    }

    pub fn book(&self, name: &str) -> Option<&Codebook> {
        self.books.iter().find(|b| b.name == name)
    }

    pub fn total_bits(&self) -> usize {
        self.books.iter().map(Codebook::len).sum()
    }

    /// Encodes one value of a single attribute as its own one-hot block.
    pub fn encode_value(&self, attribute: &str, value: &str) -> Result<BitString> {
        let book = self.book(attribute).ok_or_else(|| DatasetError::Encoding {
            attribute: attribute.to_string(),
            message: "no codebook for attribute".into(),
        })?;
        let pos = book.position(value).ok_or_else(|| DatasetError::Encoding {
            attribute: attribute.to_string(),
            message: format!("value `{value}` not in codebook"),
        })?;
        let mut bits = bitvec![u8, Msb0; 0; book.len()];
        bits.set(pos, true);
        Ok(bits)
    }

    pub fn decode_value(&self, attribute: &str, bits: &BitSlice<u8, Msb0>) -> Result<String> {
        let book = self.book(attribute).ok_or_else(|| DatasetError::Encoding {
            attribute: attribute.to_string(),
            message: "no codebook for attribute".into(),
        })?;
        decode_block(book, bits)
    }

    /// Encodes a record whose attributes appear in codebook order.
    pub fn encode<S: AsRef<str>>(&self, record: &[(S, String)]) -> Result<BitString> {
        let mut out = BitString::with_capacity(self.total_bits());
        for book in &self.books {
            let value = record
                .iter()
                .find(|(n, _)| n.as_ref() == book.name)
                .map(|(_, v)| v)
                .ok_or_else(|| DatasetError::Encoding {
                    attribute: book.name.clone(),
                    message: "attribute missing from record".into(),
                })?;
            out.extend_from_bitslice(&self.encode_value(&book.name, value)?);
        }
        Ok(out)
    }

    pub fn decode(&self, bits: &BitSlice<u8, Msb0>) -> Result<Vec<(String, String)>> {
        if bits.len() != self.total_bits() {
            return Err(DatasetError::Encoding {
                attribute: "*".into(),
                message: format!("expected {} bits, got {}", self.total_bits(), bits.len()),
            });
        }
        let mut offset = 0;
        self.books
            .iter()
            .map(|book| {
                let block = &bits[offset..offset + book.len()];
                offset += book.len();
                Ok((book.name.clone(), decode_block(book, block)?))
            })
            .collect()
    }
}

fn decode_block(book: &Codebook, block: &BitSlice<u8, Msb0>) -> Result<String> {
    if block.len() != book.len() || block.count_ones() != 1 {
        return Err(DatasetError::Encoding {
            attribute: book.name.clone(),
            message: "block is not one-hot".into(),
        });
    }
    let pos = block.first_one().expect("one bit set");
    Ok(book.values[pos].clone())
}

pub fn encode_one_hot(shard: &ClientShard, codec: &OneHotCodec) -> Result<BitString> {
    codec.encode(&shard.attributes())
}

impl ClientShard {
    pub fn decode_one_hot(bits: &BitSlice<u8, Msb0>, codec: &OneHotCodec) -> Result<Self> {
        Self::from_attributes(&codec.decode(bits)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::partition_random;
    use proptest::prelude::*;

    fn strings(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn block_for_third_of_five() {
        let codec = OneHotCodec::new(vec![Codebook::new("a", strings(5))]);
        let bits = codec.encode(&[("a", "v2".to_string())]).unwrap();
        assert_eq!(bits, bitvec![u8, Msb0; 0, 0, 1, 0, 0]);
    }

    #[test]
    fn total_bits_sum_of_codebooks() {
        let codec = OneHotCodec::new(vec![
            Codebook::new("a", strings(4)),
            Codebook::new("b", strings(6)),
            Codebook::new("c", strings(8)),
        ]);
        assert_eq!(codec.total_bits(), 18);
        let record = [
            ("a", "v3".to_string()),
            ("b", "v0".to_string()),
            ("c", "v7".to_string()),
        ];
        let bits = codec.encode(&record).unwrap();
        assert_eq!(bits.len(), 18);
        assert_eq!(bits.count_ones(), 3);
        assert!(bits[3] && bits[4] && bits[17]);
    }

    #[test]
    fn unknown_value_names_attribute() {
        let codec = OneHotCodec::new(vec![Codebook::new("count", strings(2))]);
        match codec.encode(&[("count", "v9".to_string())]) {
            Err(DatasetError::Encoding { attribute, .. }) => assert_eq!(attribute, "count"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shard_round_trip_through_cohort_codec() {
        let mut shards = partition_random(500, 7, 1).unwrap();
        shards[2].cluster_id = Some(1);
        let codec = OneHotCodec::for_shards(&shards);
        for shard in &shards {
            let bits = encode_one_hot(shard, &codec).unwrap();
            assert_eq!(bits.len(), codec.total_bits());
            assert_eq!(bits.count_ones(), ClientShard::ATTRIBUTES.len());
            assert_eq!(&ClientShard::decode_one_hot(&bits, &codec).unwrap(), shard);
        }
    }

    proptest! {
        #[test]
        fn blocks_hold_exactly_one_bit(sizes in prop::collection::vec(1usize..12, 1..6), pick in any::<u64>()) {
            let books: Vec<Codebook> = sizes.iter().enumerate()
                .map(|(i, &s)| Codebook::new(format!("a{i}"), strings(s))).collect();
            let codec = OneHotCodec::new(books);
            let record: Vec<(String, String)> = sizes.iter().enumerate()
                .map(|(i, &s)| (format!("a{i}"), format!("v{}", (pick as usize + i) % s))).collect();
            let bits = codec.encode(&record).unwrap();
            prop_assert_eq!(bits.count_ones(), sizes.len());
            let mut offset = 0;
            for s in &sizes {
                prop_assert_eq!(bits[offset..offset + s].count_ones(), 1);
                offset += s;
            }
            prop_assert_eq!(codec.decode(&bits).unwrap(), record);
        }
    }
}
