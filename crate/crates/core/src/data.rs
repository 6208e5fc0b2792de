//! Corpus ingestion, vocabulary, embeddings, negative sampling and batching.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// Half-width of the uniform range used for out-of-file token vectors.
pub const FALLBACK_SCALE: Real = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("sentence has no tokens".into()));
        }
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::Data("sentence contains an empty token".into()));
        }
        Ok(Sentence { tokens })
    }

    /// Splits on whitespace. No other tokenization is applied.
    pub fn from_line(line: &str) -> Result<Self> {
        Sentence::new(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One sentence per non-blank line.
pub fn parse_corpus(text: &str) -> Result<Vec<Sentence>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(Sentence::from_line)
        .collect()
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus = parse_corpus(&text)?;
    if corpus.is_empty() {
        return Err(Error::Data(format!("{}: corpus is empty", path.display())));
    }
    Ok(corpus)
}

/// Token ids in order of first appearance, with corpus frequencies.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    freqs: Vec<u64>,
}

impl Vocab {
    pub fn build(corpus: &[Sentence]) -> Result<Self> {
        let mut v = Vocab::default();
        for tok in corpus.iter().flat_map(|s| s.tokens()) {
            match v.ids.get(tok) {
                Some(&id) => v.freqs[id] += 1,
                None => {
                    v.ids.insert(tok.clone(), v.tokens.len());
                    v.tokens.push(tok.clone());
                    v.freqs.push(1);
                }
            }
        }
        if v.tokens.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs[id]
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }
}

/// Deterministic pseudo-random vector for a token missing from the embedding file.
pub fn fallback_vector(token: &str, dim: usize, seed: u64) -> Tensor {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    Tensor::vector(
        (0..dim)
            .map(|_| rng.gen_range(-FALLBACK_SCALE..=FALLBACK_SCALE))
            .collect(),
    )
}

/// Pre-trained vectors from a text file plus the hashed fallback for everything else.
#[derive(Clone, Debug)]
pub struct EmbeddingSource {
    dim: usize,
    seed: u64,
    vectors: HashMap<String, Vec<Real>>,
}

impl EmbeddingSource {
    /// Source with no file: every token uses the fallback.
    pub fn fallback_only(dim: usize, seed: u64) -> Self {
        EmbeddingSource {
            dim,
            seed,
            vectors: HashMap::new(),
        }
    }

    /// Parses rows of `token f1 … fD`. When `dim` is given every row must match it;
    /// otherwise the first row fixes the dimension.
    pub fn parse(text: &str, dim: Option<usize>, seed: u64) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = dim;
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<Real>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("embedding row {}: {e}", lineno + 1)))?;
            if values.is_empty() {
                return Err(Error::Data(format!("embedding row {}: no values", lineno + 1)));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("embedding row {}: non-finite value", lineno + 1)));
            }
            match dim {
                Some(d) if d != values.len() => {
                    return Err(Error::Data(format!(
                        "embedding row {}: dimension {} but expected {}",
                        lineno + 1,
                        values.len(),
                        d
                    )))
                }
                Some(_) => {}
                None => dim = Some(values.len()),
            }
            vectors.insert(token.to_owned(), values);
        }
        let dim = dim.ok_or_else(|| Error::Data("embedding file has no rows".into()))?;
        Ok(EmbeddingSource { dim, seed, vectors })
    }

    pub fn load(path: impl AsRef<Path>, dim: Option<usize>, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dim, seed)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> Tensor {
        match self.vectors.get(token) {
            Some(v) => Tensor::vector(v.clone()),
            None => fallback_vector(token, self.dim, self.seed),
        }
    }
}

/// Input vector for every vocabulary id.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    vectors: Vec<Tensor>,
    fallback_count: usize,
}

impl EmbeddingTable {
    pub fn build(vocab: &Vocab, source: &EmbeddingSource) -> Self {
        let mut fallback_count = 0;
        let vectors = vocab
            .tokens()
            .iter()
            .map(|t| {
                if !source.contains(t) {
                    fallback_count += 1;
                }
                source.lookup(t)
            })
            .collect();
        EmbeddingTable {
            vectors,
            fallback_count,
        }
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.vectors[id]
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Number of vocabulary entries that were not in the file.
    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }
}

/// Loads an embedding file and resolves every vocabulary entry against it.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let source = EmbeddingSource::load(path, Some(dim), seed)?;
    Ok(EmbeddingTable::build(vocab, &source))
}

/// Draws token ids with probability proportional to `freq^power`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn new(freqs: &[u64], power: f64, seed: u64) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Data("cannot sample negatives from an empty vocabulary".into()));
        }
        let mut acc = 0.0;
        let cumulative = freqs
            .iter()
            .map(|&f| {
                acc += (f as f64).powf(power);
                acc
            })
            .collect();
        Ok(NegativeSampler {
            cumulative,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn from_vocab(vocab: &Vocab, power: f64, seed: u64) -> Result<Self> {
        Self::new(vocab.freqs(), power, seed)
    }

    pub fn sample_one(&mut self) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = self.rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }

    pub fn sample(&mut self, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Invalid("number of negatives must be at least 1".into()));
        }
        Ok((0..n).map(|_| self.sample_one()).collect())
    }
}

/// Groups sentence indices into batches of a single length.
///
/// Batches are ordered by length, then by corpus position; sentences keep
/// their corpus order inside a batch.
pub fn batch_by_length(corpus: &[Sentence], batch_size: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.iter().enumerate() {
        by_len.entry(s.len()).or_default().push(i);
    }
    by_len
        .into_values()
        .flat_map(|ids| ids.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| Sentence::from_line(l).unwrap()).collect()
    }

    #[test]
    fn vocab_counts() {
        let v = Vocab::build(&corpus(&["a b a"])).unwrap();
        assert_eq!(v.freq(v.id("a").unwrap()), 2);
        assert_eq!(v.freq(v.id("b").unwrap()), 1);
        assert_eq!(Vocab::build(&corpus(&["x"])).unwrap().len(), 1);
        assert!(Vocab::build(&[]).is_err());
    }

    #[test]
    fn vocab_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lines: Vec<String> = (0..1000)
            .map(|_| {
                let n = rng.gen_range(1..12);
                (0..n)
                    .map(|_| format!("w{}", rng.gen_range(0..60)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let text = lines.join("\n");
        let v = Vocab::build(&parse_corpus(&text).unwrap()).unwrap();
        let mut recount: HashMap<&str, u64> = HashMap::new();
        for tok in text.split_whitespace() {
            *recount.entry(tok).or_default() += 1;
        }
        assert_eq!(recount.len(), v.len());
        for (tok, n) in recount {
            assert_eq!(v.freq(v.id(tok).unwrap()), n, "{tok}");
        }
        let ids: Vec<usize> = v.tokens().iter().map(|t| v.id(t).unwrap()).collect();
        assert_eq!(ids, (0..v.len()).collect::<Vec<_>>());
    }

    #[test]
    fn sentence_validation() {
        assert!(Sentence::new(vec![]).is_err());
        assert!(Sentence::new(vec!["a".into(), String::new()]).is_err());
        assert_eq!(parse_corpus("a b\n\n c \n").unwrap().len(), 2);
    }

    #[test]
    fn embedding_rows_and_fallbacks() {
        let src = EmbeddingSource::parse("cat 0.1 0.2\n", Some(2), 9).unwrap();
        assert_eq!(src.lookup("cat").data(), &[0.1, 0.2]);
        let a = src.lookup("dog");
        let b = EmbeddingSource::parse("cat 0.1 0.2\n", Some(2), 9).unwrap().lookup("dog");
        assert_eq!(a, b);
        assert!(a.data().iter().all(|x| x.abs() <= FALLBACK_SCALE));
        assert_ne!(a, EmbeddingSource::fallback_only(2, 10).lookup("dog"));
    }

    #[test]
    fn embedding_errors() {
        assert!(EmbeddingSource::parse("cat 0.1 0.2\n", Some(3), 0).is_err());
        assert!(EmbeddingSource::parse("cat 0.1 0.2\ndog 0.3\n", None, 0).is_err());
        assert!(EmbeddingSource::parse("cat 0.1 zz\n", None, 0).is_err());
        assert!(EmbeddingSource::parse("cat\n", None, 0).is_err());
        assert!(EmbeddingSource::parse("", None, 0).is_err());
    }

    #[test]
    fn fallback_count_is_set_difference() {
        let vocab_line: Vec<String> = (0..50).map(|i| format!("t{i}")).collect();
        let vocab = Vocab::build(&corpus(&[&vocab_line.join(" ")])).unwrap();
        // rows for t0..t29
        let file: String = (0..30).map(|i| format!("t{i} {i}.0 1.0\n")).collect();
        let src = EmbeddingSource::parse(&file, Some(2), 1).unwrap();
        let table = EmbeddingTable::build(&vocab, &src);
        let in_file: std::collections::HashSet<String> = (0..30).map(|i| format!("t{i}")).collect();
        let expected = vocab.tokens().iter().filter(|t| !in_file.contains(*t)).count();
        assert_eq!(expected, 20);
        assert_eq!(table.fallback_count(), expected);
        assert_eq!(table.get(vocab.id("t7").unwrap()).data(), &[7.0, 1.0]);
    }

    #[test]
    fn sampler_proportions() {
        let mut s = NegativeSampler::new(&[3, 1], 1.0, 42).unwrap();
        let draws = s.sample(100_000).unwrap();
        let pa = draws.iter().filter(|&&d| d == 0).count() as f64 / draws.len() as f64;
        assert!((pa - 0.75).abs() <= 0.01, "P(a) = {pa}");
    }

    #[test]
    fn sampler_single_symbol_and_determinism() {
        let mut s = NegativeSampler::new(&[1], 1.0, 0).unwrap();
        assert!(s.sample(50).unwrap().iter().all(|&d| d == 0));
        let a = NegativeSampler::new(&[5, 2, 9], 1.0, 11).unwrap().sample(200).unwrap();
        let b = NegativeSampler::new(&[5, 2, 9], 1.0, 11).unwrap().sample(200).unwrap();
        assert_eq!(a, b);
        assert!(NegativeSampler::new(&[], 1.0, 0).is_err());
        assert!(s.sample(0).is_err());
    }

    #[test]
    fn sampler_chi_square() {
        let freqs: Vec<u64> = (1..=10).collect();
        let total: u64 = freqs.iter().sum();
        let mut s = NegativeSampler::new(&freqs, 1.0, 2024).unwrap();
        let n = 100_000;
        let mut counts = [0u64; 10];
        for d in s.sample(n).unwrap() {
            counts[d] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&freqs)
            .map(|(&o, &f)| {
                let e = n as f64 * f as f64 / total as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square critical value, 9 degrees of freedom, p = 0.001
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn batches_are_length_uniform() {
        let c = corpus(&["a b c", "d e f", "g h i j k"]);
        assert_eq!(batch_by_length(&c, 2), vec![vec![0, 1], vec![2]]);
        let c = corpus(&["a", "a b", "a b c"]);
        assert_eq!(batch_by_length(&c, 4).len(), 3);
    }

    #[test]
    fn batches_cover_corpus_exactly_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<Sentence> = (0..1000)
            .map(|i| {
                let n = rng.gen_range(1..15);
                Sentence::new((0..n).map(|j| format!("s{i}_{j}")).collect()).unwrap()
            })
            .collect();
        let batches = batch_by_length(&c, 7);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() <= 7);
            assert!(b.iter().all(|&i| c[i].len() == c[b[0]].len()));
        }
    }
}
