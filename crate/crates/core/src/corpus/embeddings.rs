use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row 0 of every table; used for tokens outside the vocabulary.
pub const UNK_TOKEN: &str = "<unk>";

const OOV_RANGE: f64 = 0.05;

/// Word vectors for a fixed vocabulary, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<f64>,
    from_file: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of vocabulary rows that came from the vector file.
    pub fn rows_from_file(&self) -> usize {
        self.from_file
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    /// The token's vector, or the `<unk>` row.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.index.get(token).copied().unwrap_or(0))
    }

    /// Concatenated vectors of `tokens` as a `[len, dim]` row-major buffer.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut out = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            out.extend_from_slice(self.lookup(t.as_ref()));
        }
        out
    }
}

/// Deterministic vector for a token missing from the vector file: each
/// component uniform in `[-0.05, 0.05]`, drawn from a generator keyed by
/// `(seed, token)`, so the value does not depend on vocabulary order.
pub fn oov_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..dim).map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE)).collect()
}

/// Builds a table for `vocab_tokens` (plus `<unk>`). Tokens found in the
/// whitespace-separated vector file at `path` take its values; the rest get
/// [`oov_vector`]s. Every file line must hold exactly `dim` values.
pub fn load_embeddings<'a, I>(path: Option<&Path>, vocab_tokens: I, dim: usize, seed: u64) -> Result<EmbeddingTable>
where
    I: IntoIterator<Item = &'a str>,
{
    match path {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_embeddings(BufReader::new(file), vocab_tokens, dim, seed).map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
        }
        None => read_embeddings(std::io::empty(), vocab_tokens, dim, seed),
    }
}

/// [`load_embeddings`] over an already opened vector source.
pub fn read_embeddings<'a, R, I>(reader: R, vocab_tokens: I, dim: usize, seed: u64) -> Result<EmbeddingTable>
where
    R: BufRead,
    I: IntoIterator<Item = &'a str>,
{
    if dim == 0 {
        return Err(Error::InvalidInput("embedding dimension must be positive".into()));
    }
    let mut tokens = vec![UNK_TOKEN.to_string()];
    let mut index = HashMap::new();
    index.insert(UNK_TOKEN.to_string(), 0);
    for t in vocab_tokens {
        if !index.contains_key(t) {
            index.insert(t.to_string(), tokens.len());
            tokens.push(t.to_string());
        }
    }
    let mut matrix = vec![0.0; tokens.len() * dim];
    let mut filled = vec![false; tokens.len()];

    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::EmbeddingLine {
                line: n + 1,
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(&row) = index.get(token) {
            if filled[row] {
                continue;
            }
            for (k, v) in values.iter().enumerate() {
                matrix[row * dim + k] = v.parse().map_err(|_| Error::Malformed {
                    line: n + 1,
                    message: format!("`{v}` is not a number"),
                })?;
            }
            filled[row] = true;
        }
    }
    let from_file = filled.iter().filter(|&&f| f).count();
    for (row, token) in tokens.iter().enumerate() {
        if !filled[row] {
            matrix[row * dim..(row + 1) * dim].copy_from_slice(&oov_vector(token, dim, seed));
        }
    }
    Ok(EmbeddingTable {
        dim,
        tokens,
        index,
        matrix,
        from_file,
    })
}
