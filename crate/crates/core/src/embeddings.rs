//! Static word vectors loaded from text files.
//!
//! Each line holds a word followed by `dimension` space-separated numbers.
//! An optional first line `count dim` (word2vec text style) is skipped.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// What [`EmbeddingTable::lookup`] returns for a word that is not stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    Zero,
    UnkRow,
    #[default]
    LowercaseThenUnk,
}

impl FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(OovPolicy::Zero),
            "unk_row" | "unk" => Ok(OovPolicy::UnkRow),
            "lowercase_then_unk" | "lowercase" => Ok(OovPolicy::LowercaseThenUnk),
            other => Err(Error::InvalidArgument(format!("unknown OOV policy `{other}`"))),
        }
    }
}

impl fmt::Display for OovPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OovPolicy::Zero => "zero",
            OovPolicy::UnkRow => "unk_row",
            OovPolicy::LowercaseThenUnk => "lowercase_then_unk",
        })
    }
}

/// Immutable word → vector table with a total lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<f64>,
    unk: Vec<f64>,
    zero: Vec<f64>,
    policy: OovPolicy,
}

pub const UNK_WORD: &str = "<unk>";

impl EmbeddingTable {
    /// Builds a table from rows; the first occurrence of a word wins.
    ///
    /// The unknown vector is the `<unk>` row when present and the
    /// element-wise mean of all rows otherwise.
    pub fn from_rows<I>(dimension: usize, rows: I, policy: OovPolicy) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dimension == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut words = Vec::new();
        let mut index = HashMap::new();
        let mut matrix = Vec::new();
        for (word, row) in rows {
            if row.len() != dimension {
                return Err(Error::InvalidArgument(format!(
                    "row for `{word}` has {} values, expected {dimension}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row for `{word}` is not finite")));
            }
            if index.contains_key(&word) {
                log::warn!("duplicate embedding for `{word}`; keeping the first");
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            matrix.extend(row);
        }
        if words.is_empty() {
            return Err(Error::InvalidArgument("embedding table is empty".into()));
        }
        let unk = match index.get(UNK_WORD) {
            Some(&i) => matrix[i * dimension..(i + 1) * dimension].to_vec(),
            None => {
                let mut mean = vec![0.0; dimension];
                for row in matrix.chunks(dimension) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                let n = words.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                mean
            }
        };
        Ok(EmbeddingTable {
            dimension,
            words,
            index,
            matrix,
            unk,
            zero: vec![0.0; dimension],
            policy,
        })
    }

    /// Reassembles a table from stored parts, keeping `unk` as given.
    pub(crate) fn from_parts(
        dimension: usize,
        words: Vec<String>,
        matrix: Vec<f64>,
        unk: Vec<f64>,
        policy: OovPolicy,
    ) -> Result<Self> {
        let mut table = Self::from_rows(
            dimension,
            words
                .into_iter()
                .zip(matrix.chunks(dimension.max(1)).map(<[f64]>::to_vec)),
            policy,
        )?;
        if unk.len() != dimension || table.matrix.len() != matrix.len() {
            return Err(Error::InvalidArgument("inconsistent embedding parts".into()));
        }
        table.unk = unk;
        Ok(table)
    }

    pub fn parse(text: &str, expected_dimension: usize, policy: OovPolicy) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let lineno = k + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap().to_string();
            let values: Vec<&str> = fields.collect();
            if k == 0 && values.len() == 1 {
                if let (Ok(_), Ok(d)) = (word.parse::<usize>(), values[0].parse::<usize>()) {
                    if d == expected_dimension {
                        continue;
                    }
                }
            }
            if values.len() != expected_dimension {
                return Err(Error::parse(
                    lineno,
                    format!("expected {expected_dimension} values, found {}", values.len()),
                ));
            }
            let row = values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::parse(lineno, format!("invalid number `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((word, row));
        }
        if rows.is_empty() {
            return Err(Error::parse(0, "embedding file is empty"));
        }
        Self::from_rows(expected_dimension, rows, policy)
    }

    pub fn load(path: impl AsRef<Path>, expected_dimension: usize, policy: OovPolicy) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, expected_dimension, policy)
    }

    /// Writes the table in the text format, with a `count dim` header when
    /// `header` is set. Values use the shortest round-trip representation.
    pub fn write<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "{} {}", self.words.len(), self.dimension)?;
        }
        for (w, row) in self.words.iter().zip(self.matrix.chunks(self.dimension)) {
            write!(out, "{w}")?;
            for v in row {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(file, false)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn policy(&self) -> OovPolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: OovPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn unk_vector(&self) -> &[f64] {
        &self.unk
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.matrix[i * self.dimension..(i + 1) * self.dimension])
    }

    /// Exact match, then (policy permitting) lowercase match, then the
    /// policy's fallback vector. Never fails.
    pub fn lookup(&self, word: &str) -> &[f64] {
        if let Some(v) = self.get(word) {
            return v;
        }
        match self.policy {
            OovPolicy::Zero => &self.zero,
            OovPolicy::UnkRow => &self.unk,
            OovPolicy::LowercaseThenUnk => self.get(&word.to_lowercase()).unwrap_or(&self.unk),
        }
    }
}

/// Element-wise arithmetic mean of equal-length vectors.
pub fn pool_mean<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot pool an empty list of vectors".into()))?;
    let dim = first.as_ref().len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "vector length {} differs from {dim}",
                v.len()
            )));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loads_and_means() {
        let t = EmbeddingTable::parse("a 1.0 2.0\nb 3.0 4.0", 2, OovPolicy::UnkRow).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.unk_vector(), &[2.0, 3.0]);
        assert_eq!(t.lookup("a"), &[1.0, 2.0]);
        assert_eq!(t.lookup("zzz"), &[2.0, 3.0]);
    }

    #[test]
    fn load_errors() {
        match EmbeddingTable::parse("a 1.0", 2, OovPolicy::Zero) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(EmbeddingTable::parse("", 2, OovPolicy::Zero).is_err());
        assert!(EmbeddingTable::parse("a 1 nan", 2, OovPolicy::Zero).is_err());
    }

    #[test]
    fn duplicates_header_and_unk_row() {
        let t = EmbeddingTable::parse("3 2\na 1 1\na 5 5\n<unk> 9 9\n", 2, OovPolicy::UnkRow).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("a"), &[1.0, 1.0]);
        assert_eq!(t.lookup("q"), &[9.0, 9.0]);
    }

    #[test]
    fn oov_policies() {
        let text = "fever 1 0\ncough 0 1\n";
        let t = EmbeddingTable::parse(text, 2, OovPolicy::LowercaseThenUnk).unwrap();
        assert_eq!(t.lookup("Fever"), &[1.0, 0.0]);
        let t = t.with_policy(OovPolicy::UnkRow);
        assert_eq!(t.lookup("Fever"), &[0.5, 0.5]);
        let t = t.with_policy(OovPolicy::Zero);
        assert_eq!(t.lookup("Fever"), &[0.0, 0.0]);
        assert_eq!("lowercase_then_unk".parse::<OovPolicy>().unwrap(), OovPolicy::LowercaseThenUnk);
        assert!("bogus".parse::<OovPolicy>().is_err());
    }

    #[test]
    fn pooling() {
        assert_eq!(pool_mean(&[vec![1.0, 3.0]]).unwrap(), vec![1.0, 3.0]);
        assert_eq!(pool_mean(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap(), vec![1.0, 2.0]);
        for k in 1..=5 {
            let v = vec![0.3, -1.7, 2.5];
            assert_eq!(pool_mean(&vec![v.clone(); k]).unwrap(), v);
        }
        assert!(pool_mean::<Vec<f64>>(&[]).is_err());
        assert!(pool_mean(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn ten_thousand_random_lookups() {
        use rand::{Rng, SeedableRng};
        let t = EmbeddingTable::parse("Alpha 0.5 -1.5\nbeta 1 2\n", 2, OovPolicy::LowercaseThenUnk).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let len = rng.gen_range(0..10);
            let w: String = (0..len).map(|_| rng.gen::<char>()).collect();
            let v = t.lookup(&w);
            assert_eq!(v.len(), 2);
            assert!(v.iter().all(|x| x.is_finite()));
            assert_eq!(v, t.lookup(&w));
        }
    }

    proptest! {
        #[test]
        fn lookup_is_total(words in prop::collection::vec("\\PC{0,12}", 1..50)) {
            let t = EmbeddingTable::parse("Alpha 0.5 -1.5 2\nbeta 1 2 3\n", 3, OovPolicy::LowercaseThenUnk).unwrap();
            for w in &words {
                let v = t.lookup(w);
                prop_assert_eq!(v.len(), 3);
                prop_assert!(v.iter().all(|x| x.is_finite()));
            }
        }

        #[test]
        fn pool_mean_equivariance(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..8),
            c in -10.0f64..10.0,
            rot in 0usize..8,
        ) {
            let base = pool_mean(&rows).unwrap();
            let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| c * x).collect()).collect();
            let scaled = pool_mean(&scaled_rows).unwrap();
            for (a, b) in scaled.iter().zip(&base) {
                prop_assert!((a - c * b).abs() <= 1e-12 * (1.0 + (c * b).abs()));
            }
            let mut permuted = rows.clone();
            let len = permuted.len();
            permuted.rotate_left(rot % len);
            let p = pool_mean(&permuted).unwrap();
            for (a, b) in p.iter().zip(&base) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn write_then_load(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..10), header in any::<bool>()) {
            let named: Vec<(String, Vec<f64>)> = rows.iter().enumerate().map(|(i, r)| (format!("w{i}"), r.clone())).collect();
            let t = EmbeddingTable::from_rows(3, named, OovPolicy::UnkRow).unwrap();
            let mut buf = Vec::new();
            t.write(&mut buf, header).unwrap();
            let back = EmbeddingTable::parse(std::str::from_utf8(&buf).unwrap(), 3, OovPolicy::UnkRow).unwrap();
            for (a, b) in back.matrix().iter().zip(t.matrix()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE));
            }
            prop_assert_eq!(back.words(), t.words());
        }
    }
}
