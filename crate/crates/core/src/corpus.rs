//! Token corpora: documents wrapped in BOS/EOS, concatenated, chunked into
//! fixed-length training sequences, persisted, and batched.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{BpeVocab, TokenId, BOS, EOS};
use crate::image::RgbImage;
use crate::jpeg::{canonicalize, encode_image, CodecProfile};
use crate::{Error, Result};

pub const TOKENS_FILE: &str = "tokens.bin";
pub const MANIFEST_FILE: &str = "manifest.toml";
const STORE_VERSION: u32 = 1;

/// How the flat token array is cut into training sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chunking {
    /// Consecutive windows `flat[i*L..(i+1)*L]`; a trailing partial window is dropped.
    #[default]
    Packed,
    /// One window at every document start, plus one every `L` tokens inside
    /// documents longer than `L`. Windows run on into the following
    /// documents, wrapping from the last document to the first.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStore {
    /// The corpus followed by a copy of its head, so aligned windows near
    /// the end are contiguous slices.
    tokens: Vec<TokenId>,
    n_tokens: usize,
    /// Start of every document in `tokens`, plus the total length.
    doc_bounds: Vec<usize>,
    chunk_starts: Vec<usize>,
    context_len: usize,
    chunking: Chunking,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub profile_hash: String,
}

/// Structured-text summary written next to the token file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub image_count: usize,
    pub token_count: usize,
    pub byte_count: usize,
    pub mean_doc_len: f64,
    pub median_doc_len: f64,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub profile_hash: String,
    pub context_len: usize,
    #[serde(default)]
    pub chunking: Chunking,
    pub chunk_count: usize,
    pub token_width: u8,
    pub tokens_digest: String,
    /// `[low, high, count]` rows over document lengths in tokens.
    pub length_histogram: Vec<[usize; 3]>,
}

impl TokenStore {
    /// Concatenates already-tokenized documents. Each must start with BOS,
    /// end with EOS and contain neither anywhere else.
    pub fn from_documents(
        docs: impl IntoIterator<Item = Vec<TokenId>>,
        vocab: &BpeVocab,
        context_len: usize,
    ) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut doc_bounds = vec![0];
        for (i, d) in docs.into_iter().enumerate() {
            let ok = d.len() >= 2
                && d[0] == BOS
                && d[d.len() - 1] == EOS
                && d[1..d.len() - 1].iter().all(|&t| t != BOS && t != EOS)
                && d.iter().all(|&t| (t as usize) < vocab.size());
            if !ok {
                return Err(Error::Data(format!(
                    "document {i} is not a BOS..EOS token sequence over the vocabulary"
                )));
            }
            tokens.extend(d);
            doc_bounds.push(tokens.len());
        }
        if doc_bounds.len() == 1 {
            return Err(Error::EmptyCorpus);
        }
        if context_len < 2 {
            return Err(Error::Config(format!("context_len {context_len} < 2")));
        }
        Ok(Self::assemble(
            tokens,
            doc_bounds,
            context_len,
            Chunking::Packed,
            vocab.size(),
            vocab.hash(),
            vocab.profile_hash.clone(),
        ))
    }

    fn assemble(
        mut tokens: Vec<TokenId>,
        doc_bounds: Vec<usize>,
        context_len: usize,
        chunking: Chunking,
        vocab_size: usize,
        vocab_hash: String,
        profile_hash: String,
    ) -> Self {
        let n = tokens.len();
        let l = context_len;
        let chunk_starts: Vec<usize> = match chunking {
            Chunking::Packed => (0..n / l).map(|i| i * l).collect(),
            Chunking::Aligned => doc_bounds
                .windows(2)
                .flat_map(|w| (w[0]..w[1]).step_by(l))
                .collect(),
        };
        let reach = chunk_starts.last().map_or(n, |&s| s + l);
        for i in n..reach {
            tokens.push(tokens[i % n]);
        }
        Self {
            tokens,
            n_tokens: n,
            doc_bounds,
            chunk_starts,
            context_len,
            chunking,
            vocab_size,
            vocab_hash,
            profile_hash,
        }
    }

    /// Re-cuts the store under another chunking scheme.
    pub fn with_chunking(mut self, chunking: Chunking) -> Self {
        self.tokens.truncate(self.n_tokens);
        Self::assemble(
            self.tokens,
            self.doc_bounds,
            self.context_len,
            chunking,
            self.vocab_size,
            self.vocab_hash,
            self.profile_hash,
        )
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn chunking(&self) -> Chunking {
        self.chunking
    }

    /// Tokenizes canonical streams in order.
    pub fn from_streams<S: AsRef<[u8]> + Sync>(
        streams: &[S],
        vocab: &BpeVocab,
        context_len: usize,
    ) -> Result<Self> {
        let docs = crate::util::map_maybe_parallel(streams, |s| vocab.encode(s.as_ref(), true, true));
        Self::from_documents(docs, vocab, context_len)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens[..self.n_tokens]
    }

    pub fn doc_count(&self) -> usize {
        self.doc_bounds.len() - 1
    }

    pub fn document(&self, i: usize) -> &[TokenId] {
        &self.tokens[self.doc_bounds[i]..self.doc_bounds[i + 1]]
    }

    pub fn doc_lengths(&self) -> Vec<usize> {
        self.doc_bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunk_starts.len()
    }

    pub fn chunk(&self, i: usize) -> &[TokenId] {
        let s = self.chunk_starts[i];
        &self.tokens[s..s + self.context_len]
    }

    /// Bytes represented by the store's tokens (specials excluded).
    pub fn byte_count(&self, vocab: &BpeVocab) -> usize {
        self.tokens()
            .iter()
            .map(|&t| vocab.expansion(t).map_or(0, <[u8]>::len))
            .sum()
    }

    pub fn check_vocab(&self, vocab: &BpeVocab) -> Result<()> {
        if self.vocab_hash != vocab.hash() {
            return Err(Error::Mismatch(format!(
                "store built with vocab {} but vocab {} given",
                self.vocab_hash,
                vocab.hash()
            )));
        }
        Ok(())
    }

    fn token_width(&self) -> u8 {
        if self.vocab_size <= 256 {
            1
        } else {
            2
        }
    }

    pub fn manifest(&self, vocab: &BpeVocab) -> Manifest {
        let mut lens = self.doc_lengths();
        lens.sort_unstable();
        let n = lens.len();
        let median = if n % 2 == 1 {
            lens[n / 2] as f64
        } else {
            (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
        };
        Manifest {
            version: STORE_VERSION,
            image_count: n,
            token_count: self.n_tokens,
            byte_count: self.byte_count(vocab),
            mean_doc_len: self.n_tokens as f64 / n as f64,
            median_doc_len: median,
            min_doc_len: lens[0],
            max_doc_len: lens[n - 1],
            vocab_size: self.vocab_size,
            vocab_hash: self.vocab_hash.clone(),
            profile_hash: self.profile_hash.clone(),
            context_len: self.context_len,
            chunking: self.chunking,
            chunk_count: self.chunk_count(),
            token_width: self.token_width(),
            tokens_digest: crate::util::digest_hex(&self.token_bytes()),
            length_histogram: length_histogram(&lens, 10),
        }
    }

    fn token_bytes(&self) -> Vec<u8> {
        match self.token_width() {
            1 => self.tokens().iter().map(|&t| t as u8).collect(),
            _ => self
                .tokens()
                .iter()
                .flat_map(|&t| (t as u16).to_le_bytes())
                .collect(),
        }
    }

    /// Writes `tokens.bin` and `manifest.toml` into `dir`.
    pub fn save(&self, dir: &Path, vocab: &BpeVocab) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest(vocab);
        let tp = dir.join(TOKENS_FILE);
        std::fs::write(&tp, self.token_bytes()).map_err(|e| Error::io(&tp, e))?;
        let mp = dir.join(MANIFEST_FILE);
        let text = toml::to_string(&manifest).map_err(|e| Error::format(&mp, e.to_string()))?;
        std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?;
        if m.version != STORE_VERSION {
            return Err(Error::format(&mp, format!("unsupported version {}", m.version)));
        }
        let tp = dir.join(TOKENS_FILE);
        let raw = std::fs::read(&tp).map_err(|e| Error::io(&tp, e))?;
        if crate::util::digest_hex(&raw) != m.tokens_digest {
            return Err(Error::format(&tp, "digest does not match manifest"));
        }
        let tokens: Vec<TokenId> = match m.token_width {
            1 => raw.iter().map(|&b| TokenId::from(b)).collect(),
            2 if raw.len() % 2 == 0 => raw
                .chunks_exact(2)
                .map(|c| TokenId::from(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
            w => return Err(Error::format(&tp, format!("bad token width {w}"))),
        };
        let mut doc_bounds: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|&(_, &t)| t == BOS)
            .map(|(i, _)| i)
            .collect();
        doc_bounds.push(tokens.len());
        if tokens.len() != m.token_count
            || doc_bounds.len() - 1 != m.image_count
            || doc_bounds[0] != 0
            || tokens.iter().any(|&t| t as usize >= m.vocab_size)
            || m.context_len < 2
        {
            return Err(Error::format(&tp, "contents do not match manifest"));
        }
        let store = Self::assemble(
            tokens,
            doc_bounds,
            m.context_len,
            m.chunking,
            m.vocab_size,
            m.vocab_hash.clone(),
            m.profile_hash.clone(),
        );
        if store.chunk_count() != m.chunk_count {
            return Err(Error::format(&mp, "chunk count does not match manifest"));
        }
        Ok((store, m))
    }

    pub fn batches(&self, batch_size: usize, seed: u64) -> Batches<'_> {
        Batches::new(self, batch_size, seed)
    }
}

fn length_histogram(sorted: &[usize], bins: usize) -> Vec<[usize; 3]> {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let width = (hi - lo) / bins + 1;
    let mut rows: Vec<[usize; 3]> = (0..bins)
        .map(|b| [lo + b * width, lo + (b + 1) * width - 1, 0])
        .collect();
    for &l in sorted {
        rows[(l - lo) / width][2] += 1;
    }
    rows.retain(|r| r[2] > 0);
    rows
}

/// Image files under `dir` that [`RgbImage::load`] understands, sorted by
/// file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && RgbImage::is_supported(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Encodes one image file to its canonical stream.
pub fn canonical_stream_of(path: &Path, profile: &CodecProfile) -> Result<Vec<u8>> {
    let img = RgbImage::load(path)?;
    let jpeg = encode_image(&img, profile).map_err(|e| Error::format(path, e.to_string()))?;
    let (stream, _) = canonicalize(&jpeg).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(stream.bytes)
}

/// Canonical streams of every image in `dir`, in file-name order.
pub fn encode_directory(dir: &Path, profile: &CodecProfile) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    crate::util::map_maybe_parallel(&files, |p| canonical_stream_of(p, profile).map(|s| (p.clone(), s)))
        .into_iter()
        .collect()
}

/// Encodes, tokenizes and concatenates every image in `image_dir`.
pub fn build_corpus(
    image_dir: &Path,
    profile: &CodecProfile,
    vocab: &BpeVocab,
    context_len: usize,
) -> Result<TokenStore> {
    if vocab.profile_hash != profile.hash() {
        return Err(Error::Mismatch(format!(
            "vocab trained under profile {} but corpus uses {}",
            vocab.profile_hash,
            profile.hash()
        )));
    }
    let streams: Vec<Vec<u8>> = encode_directory(image_dir, profile)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let store = TokenStore::from_streams(&streams, vocab, context_len)?;
    let lens = store.doc_lengths();
    log::info!(
        "corpus: {} images, {} tokens, mean doc {:.1} tokens",
        lens.len(),
        store.n_tokens,
        store.n_tokens as f64 / lens.len() as f64
    );
    Ok(store)
}

/// `batch_size` rows of `seq_len` tokens; targets are each row shifted left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub inputs: Vec<TokenId>,
    /// `batch_size` rows of `seq_len - 1`.
    pub targets: Vec<TokenId>,
}

impl Batch {
    pub fn from_rows(rows: &[&[TokenId]]) -> Self {
        let seq_len = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == seq_len), "ragged batch");
        let mut inputs = Vec::with_capacity(rows.len() * seq_len);
        let mut targets = Vec::with_capacity(rows.len() * seq_len.saturating_sub(1));
        for r in rows {
            inputs.extend_from_slice(r);
            targets.extend_from_slice(&r[1.min(r.len())..]);
        }
        Self {
            batch_size: rows.len(),
            seq_len,
            inputs,
            targets,
        }
    }

    pub fn input_row(&self, b: usize) -> &[TokenId] {
        &self.inputs[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn target_row(&self, b: usize) -> &[TokenId] {
        let l = self.seq_len - 1;
        &self.targets[b * l..(b + 1) * l]
    }

    pub fn positions(&self) -> usize {
        self.targets.len()
    }
}

/// Seeded schedule of chunk indices: step `s` is a pure function of
/// `(seed, s)`, so training can resume at any step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub n_chunks: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSchedule {
    /// Batches per epoch; the last one of an epoch may be short.
    pub fn epoch_len(&self) -> usize {
        self.n_chunks.div_ceil(self.batch_size)
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.n_chunks).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::util::mix_seed(self.seed, epoch));
        perm.shuffle(&mut rng);
        perm
    }

    pub fn chunks_at(&self, step: u64) -> Vec<usize> {
        let per = self.epoch_len() as u64;
        let (epoch, i) = (step / per, (step % per) as usize);
        let perm = self.permutation(epoch);
        let end = ((i + 1) * self.batch_size).min(self.n_chunks);
        perm[i * self.batch_size..end].to_vec()
    }
}

/// Endless iterator of batches, epoch after epoch.
pub struct Batches<'a> {
    store: &'a TokenStore,
    schedule: BatchSchedule,
    step: u64,
    perm: Vec<usize>,
    perm_epoch: Option<u64>,
}

impl<'a> Batches<'a> {
    pub fn new(store: &'a TokenStore, batch_size: usize, seed: u64) -> Self {
        Self {
            store,
            schedule: BatchSchedule {
                n_chunks: store.chunk_count(),
                batch_size: batch_size.max(1),
                seed,
            },
            step: 0,
            perm: Vec::new(),
            perm_epoch: None,
        }
    }

    pub fn schedule(&self) -> BatchSchedule {
        self.schedule
    }

    pub fn epoch_len(&self) -> usize {
        self.schedule.epoch_len()
    }

    /// Repositions the iterator so the next batch is the one for `step`.
    pub fn seek(&mut self, step: u64) {
        self.step = step;
    }

    pub fn batch_at(&mut self, step: u64) -> Batch {
        let per = self.schedule.epoch_len() as u64;
        let epoch = step / per;
        if self.perm_epoch != Some(epoch) {
            self.perm = self.schedule.permutation(epoch);
            self.perm_epoch = Some(epoch);
        }
        let bs = self.schedule.batch_size;
        let i = (step % per) as usize;
        let idx = &self.perm[i * bs..((i + 1) * bs).min(self.schedule.n_chunks)];
        let rows: Vec<&[TokenId]> = idx.iter().map(|&c| self.store.chunk(c)).collect();
        Batch::from_rows(&rows)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.schedule.n_chunks == 0 {
            return None;
        }
        let b = self.batch_at(self.step);
        self.step += 1;
        Some(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> BpeVocab {
        BpeVocab::bytes_only(CodecProfile::default().hash())
    }

    fn store(docs: &[&[u8]], l: usize) -> TokenStore {
        let v = vocab();
        TokenStore::from_streams(docs, &v, l).unwrap()
    }

    #[test]
    fn chunks_drop_partial_tail() {
        let s = store(&[b"abcd", b"efg"], 4);
        // BOS a b c d EOS BOS e f g EOS = 11 tokens
        assert_eq!(s.tokens().len(), 11);
        assert_eq!(s.chunk_count(), 2);
        assert_eq!(s.chunk(1), &[b'd' as u32, EOS, BOS, b'e' as u32]);
        assert_eq!(s.doc_lengths(), vec![6, 5]);
        assert_eq!(s.document(1)[0], BOS);
    }

    #[test]
    fn empty_corpus() {
        let v = vocab();
        let none: [&[u8]; 0] = [];
        assert!(matches!(
            TokenStore::from_streams(&none, &v, 8),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn malformed_documents_rejected() {
        let v = vocab();
        let bad = vec![vec![BOS, 1, 2]];
        assert!(TokenStore::from_documents(bad, &v, 4).is_err());
        let inner = vec![vec![BOS, 1, BOS, EOS]];
        assert!(TokenStore::from_documents(inner, &v, 4).is_err());
    }

    #[test]
    fn one_row_batches_per_chunk() {
        let s = store(&[b"abcdefghij"], 4);
        assert_eq!(s.chunk_count(), 3);
        let it = s.batches(1, 7);
        assert_eq!(it.epoch_len(), 3);
        let epoch: Vec<Batch> = it.take(3).collect();
        let mut seen: Vec<&[u32]> = epoch.iter().map(|b| b.input_row(0)).collect();
        seen.sort();
        let mut all: Vec<&[u32]> = (0..3).map(|i| s.chunk(i)).collect();
        all.sort();
        assert_eq!(seen, all);
    }

    #[test]
    fn targets_are_shifted_inputs() {
        let s = store(&[b"the quick brown fox", b"jumps over"], 5);
        for b in s.batches(2, 1).take(10) {
            for r in 0..b.batch_size {
                assert_eq!(b.target_row(r), &b.input_row(r)[1..]);
            }
        }
    }

    #[test]
    fn schedule_matches_iterator() {
        let s = store(&[b"0123456789abcdefghijklmnopqrstuvwxyz"], 4);
        let sched = s.batches(3, 9).schedule();
        let mut it = s.batches(3, 9);
        for step in 0..20u64 {
            let b = it.next().unwrap();
            let rows: Vec<&[u32]> = sched.chunks_at(step).iter().map(|&c| s.chunk(c)).collect();
            assert_eq!(b, Batch::from_rows(&rows));
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let v = vocab();
        let s = store(&[b"abc", b"defgh", b"ij"], 3);
        let dir = tempfile::tempdir().unwrap();
        let m = s.save(dir.path(), &v).unwrap();
        assert_eq!(m.image_count, 3);
        assert_eq!(m.token_width, 2);
        assert_eq!(m.median_doc_len, 5.0);
        let (back, m2) = TokenStore::load(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m2, m);
        std::fs::write(dir.path().join(TOKENS_FILE), [1u8, 0]).unwrap();
        assert!(TokenStore::load(dir.path()).is_err());
    }

    #[test]
    fn histogram_counts_every_doc() {
        let h = length_histogram(&[3, 3, 4, 10, 50], 4);
        assert_eq!(h.iter().map(|r| r[2]).sum::<usize>(), 5);
        assert_eq!(h[0][0], 3);
    }
}
