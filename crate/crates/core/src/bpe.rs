//! Byte-level BPE over canonical streams.
//!
//! Ids 0..=255 are raw bytes, 256 is BOS, 257 is EOS, and learned merges
//! follow from 258 in the order they were adopted.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const FIRST_MERGE: TokenId = 258;

const VOCAB_HEADER: &str = "# codeclm bpe vocabulary";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BpeError {
    #[error("target vocabulary {0} is below the 258 base entries")]
    TargetTooSmall(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no adjacent pair occurs at least {min_count} times")]
    CorpusTooSmall { min_count: u64 },
    #[error("token id {id} outside vocabulary of {size}")]
    InvalidTokenId { id: TokenId, size: usize },
    #[error("vocab file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeTrainConfig {
    pub target_vocab: usize,
    pub min_count: u64,
}

impl Default for BpeTrainConfig {
    fn default() -> Self {
        Self {
            target_vocab: 322,
            min_count: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(TokenId, TokenId)>,
    /// Byte expansion of every id; empty for the specials.
    expansions: Vec<Vec<u8>>,
    pub profile_hash: String,
}

impl BpeVocab {
    /// The pure byte vocabulary: 256 bytes plus BOS and EOS.
    pub fn bytes_only(profile_hash: impl Into<String>) -> Self {
        Self::from_merges(Vec::new(), profile_hash.into()).expect("no merges to validate")
    }

    pub fn from_merges(
        merges: Vec<(TokenId, TokenId)>,
        profile_hash: String,
    ) -> Result<Self, BpeError> {
        let mut expansions: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        expansions.push(Vec::new());
        expansions.push(Vec::new());
        for (i, &(a, b)) in merges.iter().enumerate() {
            let id = FIRST_MERGE + i as TokenId;
            for t in [a, b] {
                if t >= id || t == BOS || t == EOS {
                    return Err(BpeError::Parse {
                        line: 0,
                        reason: format!("merge {id} refers to invalid id {t}"),
                    });
                }
            }
            let e = [expansions[a as usize].as_slice(), &expansions[b as usize]].concat();
            expansions.push(e);
        }
        Ok(Self {
            merges,
            expansions,
            profile_hash,
        })
    }

    pub fn size(&self) -> usize {
        256 + self.merges.len() + 2
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn is_special(id: TokenId) -> bool {
        id == BOS || id == EOS
    }

    /// Bytes a token expands to (empty for specials).
    pub fn expansion(&self, id: TokenId) -> Result<&[u8], BpeError> {
        self.expansions
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(BpeError::InvalidTokenId {
                id,
                size: self.size(),
            })
    }

    /// Applies merges in vocabulary order, each as a left-to-right
    /// non-overlapping pass. Specials are only added on request.
    pub fn encode(&self, bytes: &[u8], add_bos: bool, add_eos: bool) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = bytes.iter().map(|&b| TokenId::from(b)).collect();
        for (i, &pair) in self.merges.iter().enumerate() {
            if ids.len() < 2 {
                break;
            }
            apply_merge(&mut ids, pair, FIRST_MERGE + i as TokenId);
        }
        let mut out = Vec::with_capacity(ids.len() + 2);
        if add_bos {
            out.push(BOS);
        }
        out.extend(ids);
        if add_eos {
            out.push(EOS);
        }
        out
    }

    /// Concatenated byte expansions with specials dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, BpeError> {
        let mut out = Vec::with_capacity(ids.len() * 2);
        for &id in ids {
            out.extend_from_slice(self.expansion(id)?);
        }
        Ok(out)
    }

    /// Tokens for a prompt covering exactly `bytes[..cut]`: the prefix is
    /// encoded on its own, so no merge straddles the cut.
    pub fn encode_prompt(&self, bytes: &[u8], cut: usize) -> Vec<TokenId> {
        self.encode(&bytes[..cut.min(bytes.len())], true, false)
    }

    /// Number of leading tokens whose bytes fit within `byte_offset`, and
    /// the byte length they cover.
    pub fn aligned_prefix(&self, ids: &[TokenId], byte_offset: usize) -> (usize, usize) {
        let mut covered = 0;
        for (i, &id) in ids.iter().enumerate() {
            let len = self.expansions.get(id as usize).map_or(0, Vec::len);
            if covered + len > byte_offset {
                return (i, covered);
            }
            covered += len;
        }
        (ids.len(), covered)
    }

    /// Stable identifier over merges and profile hash.
    pub fn hash(&self) -> String {
        crate::util::digest_hex(self.to_text().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_HEADER}");
        let _ = writeln!(s, "version {VOCAB_VERSION}");
        let _ = writeln!(s, "profile {}", self.profile_hash);
        let _ = writeln!(s, "size {}", self.size());
        let _ = writeln!(s, "bos {BOS}");
        let _ = writeln!(s, "eos {EOS}");
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (i, &(a, b)) in self.merges.iter().enumerate() {
            let id = FIRST_MERGE + i as TokenId;
            let hex: Vec<String> = self.expansions[id as usize]
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            let _ = writeln!(s, "{id} = {a} {b} # {}", hex.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, BpeError> {
        let err = |line: usize, reason: &str| BpeError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(VOCAB_HEADER) {
            return Err(err(0, "missing header line"));
        }
        let mut field = |key: &str| -> Result<(usize, String), BpeError> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(0, "unexpected end of file"))?;
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(|r| (n, r.trim().to_string()))
                .ok_or_else(|| err(n, &format!("expected '{key}'")))
        };
        let (n, version) = field("version")?;
        if version != VOCAB_VERSION.to_string() {
            return Err(err(n, &format!("unsupported version {version}")));
        }
        let (_, profile) = field("profile")?;
        let (ns, size) = field("size")?;
        let (nb, bos) = field("bos")?;
        if bos != BOS.to_string() {
            return Err(err(nb, "bos id must be 256"));
        }
        let (ne, eos) = field("eos")?;
        if eos != EOS.to_string() {
            return Err(err(ne, "eos id must be 257"));
        }
        let (nm, count) = field("merges")?;
        let count: usize = count.parse().map_err(|_| err(nm, "bad merge count"))?;
        let mut merges = Vec::with_capacity(count);
        for (n, l) in lines {
            let body = l.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let [id, "=", a, b] = fields[..] else {
                return Err(err(n, "expected '<id> = <left> <right>'"));
            };
            let num = |s: &str| s.parse::<TokenId>().map_err(|_| err(n, "bad token id"));
            if num(id)? != FIRST_MERGE + merges.len() as TokenId {
                return Err(err(n, "merge ids must be consecutive from 258"));
            }
            merges.push((num(a)?, num(b)?));
        }
        if merges.len() != count {
            return Err(err(nm, "merge count does not match listed merges"));
        }
        let vocab = Self::from_merges(merges, profile)?;
        if size != vocab.size().to_string() {
            return Err(err(ns, "size does not match merge count"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| crate::Error::io(path, e))
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| crate::Error::format(path, e.to_string()))
    }
}

fn apply_merge(ids: &mut Vec<TokenId>, pair: (TokenId, TokenId), new: TokenId) {
    let mut w = 0;
    let mut r = 0;
    while r < ids.len() {
        if r + 1 < ids.len() && ids[r] == pair.0 && ids[r + 1] == pair.1 {
            ids[w] = new;
            r += 2;
        } else {
            ids[w] = ids[r];
            r += 1;
        }
        w += 1;
    }
    ids.truncate(w);
}

fn count_pairs(docs: &[Vec<TokenId>]) -> HashMap<(TokenId, TokenId), u64> {
    let mut counts = HashMap::new();
    for d in docs {
        for w in d.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    counts
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair (ties go to
/// the smallest `(left, right)`) until the target size is reached or no pair
/// occurs `min_count` times.
pub fn train_bpe<'a, I>(
    corpus: I,
    config: &BpeTrainConfig,
    profile_hash: &str,
) -> Result<BpeVocab, BpeError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    if config.target_vocab < 258 {
        return Err(BpeError::TargetTooSmall(config.target_vocab));
    }
    let mut docs: Vec<Vec<TokenId>> = corpus
        .into_iter()
        .map(|d| d.iter().map(|&b| TokenId::from(b)).collect())
        .collect();
    if docs.is_empty() {
        return Err(BpeError::EmptyCorpus);
    }
    let n_merges = config.target_vocab - 258;
    let mut merges = Vec::with_capacity(n_merges);
    while merges.len() < n_merges {
        let counts = count_pairs(&docs);
        let best = counts
            .into_iter()
            .filter(|&(_, c)| c >= config.min_count)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)));
        let Some((pair, count)) = best else {
            if merges.is_empty() {
                return Err(BpeError::CorpusTooSmall {
                    min_count: config.min_count,
                });
            }
            log::info!(
                "bpe: stopped at {} merges, no pair reaches min_count",
                merges.len()
            );
            break;
        };
        let id = FIRST_MERGE + merges.len() as TokenId;
        log::debug!("bpe merge {id} = {pair:?} ({count})");
        for d in &mut docs {
            apply_merge(d, pair, id);
        }
        merges.push(pair);
    }
    BpeVocab::from_merges(merges, profile_hash.to_string())
}

/// Checks the sequence invariants: ids in range, BOS only first, EOS only last.
pub fn validate_sequence(ids: &[TokenId], vocab_size: usize) -> Result<(), BpeError> {
    let last = ids.len().saturating_sub(1);
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= vocab_size
            || (id == BOS && i != 0)
            || (id == EOS && i != last)
        {
            return Err(BpeError::InvalidTokenId {
                id,
                size: vocab_size,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train(docs: &[&[u8]], target: usize) -> Result<BpeVocab, BpeError> {
        let cfg = BpeTrainConfig {
            target_vocab: target,
            min_count: 2,
        };
        train_bpe(docs.iter().copied(), &cfg, "test")
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let v = train(&[b"aaab", b"aaab"], 259).unwrap();
        assert_eq!(v.merges(), &[(b'a' as u32, b'a' as u32)]);
        assert_eq!(v.size(), 259);
    }

    #[test]
    fn ties_break_to_smallest_pair() {
        let v = train(&[b"xyab", b"xyab"], 259).unwrap();
        assert_eq!(v.merges(), &[(b'a' as u32, b'b' as u32)]);
    }

    #[test]
    fn base_vocab_has_no_merges() {
        let v = train(&[b"abc"], 258).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.size(), 258);
    }

    #[test]
    fn errors() {
        assert_eq!(train(&[b"ab"], 257), Err(BpeError::TargetTooSmall(257)));
        assert_eq!(train(&[], 300), Err(BpeError::EmptyCorpus));
        assert_eq!(
            train(&[b"abcdef"], 300),
            Err(BpeError::CorpusTooSmall { min_count: 2 })
        );
    }

    #[test]
    fn stops_early_when_pairs_run_out() {
        let v = train(&[b"abab"], 300).unwrap();
        assert_eq!(v.merges().len(), 1);
    }

    #[test]
    fn specials() {
        let v = BpeVocab::bytes_only("p");
        assert_eq!(v.encode(b"", true, true), vec![BOS, EOS]);
        assert_eq!(v.decode(&[BOS, EOS]).unwrap(), b"");
        assert_eq!(v.decode(&[0x41]).unwrap(), b"A");
        assert_eq!(
            v.decode(&[258]),
            Err(BpeError::InvalidTokenId { id: 258, size: 258 })
        );
    }

    #[test]
    fn nested_merges_roundtrip() {
        let v = train(&[b"abababab", b"abababab"], 262).unwrap();
        let s = b"xabababay";
        let ids = v.encode(s, false, false);
        assert!(ids.len() < s.len());
        assert_eq!(v.decode(&ids).unwrap(), s);
    }

    #[test]
    fn text_roundtrip() {
        let v = train(&[b"hello hello hello", b"yellow fellow"], 270).unwrap();
        let t = v.to_text();
        assert_eq!(BpeVocab::from_text(&t).unwrap(), v);
        assert!(BpeVocab::from_text(&t.replace("version 1", "version 9")).is_err());
    }

    #[test]
    fn aligned_prefix_lands_at_or_before() {
        let v = train(&[b"aaaa", b"aaaa"], 260).unwrap();
        let ids = v.encode(b"aaaaa", false, false);
        // [aaaa, a]
        assert_eq!(v.aligned_prefix(&ids, 3), (0, 0));
        assert_eq!(v.aligned_prefix(&ids, 4), (1, 4));
        assert_eq!(v.aligned_prefix(&ids, 99), (2, 5));
    }

    #[test]
    fn sequence_validation() {
        assert!(validate_sequence(&[BOS, 1, 2, EOS], 258).is_ok());
        assert!(validate_sequence(&[1, BOS], 258).is_err());
        assert!(validate_sequence(&[EOS, 1], 258).is_err());
        assert!(validate_sequence(&[300], 258).is_err());
    }
}
