//! Encoding and decoding with a trained vocabulary.
//!
//! Encoding replays the learned merges in order over the raw symbol stream,
//! which makes it the exact inverse-construction of the training
//! segmentation. Quality annotations play no part here; construction is the
//! only place they are consulted.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::merge::Vocabulary;
use crate::{SymbolId, TokenId};

/// Encodes raw symbols into token ids by replaying merges in learned order.
pub fn encode(symbols: &[SymbolId], vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    for (position, &s) in symbols.iter().enumerate() {
        if s >= vocab.base_size() {
            return Err(Error::UnknownSymbol {
                position,
                symbol: s,
            });
        }
    }
    let mut tokens: Vec<TokenId> = symbols.to_vec();
    let mut scratch: Vec<TokenId> = Vec::with_capacity(tokens.len());
    for rule in vocab.merges() {
        if tokens.len() < 2 {
            break;
        }
        if !tokens.windows(2).any(|w| w[0] == rule.a && w[1] == rule.b) {
            continue;
        }
        scratch.clear();
        let mut i = 0;
        while i < tokens.len() {
            if i + 1 < tokens.len() && tokens[i] == rule.a && tokens[i + 1] == rule.b {
                scratch.push(rule.new_id);
                i += 2;
            } else {
                scratch.push(tokens[i]);
                i += 1;
            }
        }
        core::mem::swap(&mut tokens, &mut scratch);
    }
    Ok(tokens)
}

/// Expands token ids back into the raw symbol stream.
pub fn decode(ids: &[TokenId], vocab: &Vocabulary) -> Result<Vec<SymbolId>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        out.extend(vocab.expand(id)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_sequence_and_zero_merges() {
        let vocab = Vocabulary::base(4);
        assert_eq!(encode(&[], &vocab).unwrap(), Vec::<u32>::new());
        assert_eq!(encode(&[0, 3, 2], &vocab).unwrap(), vec![0, 3, 2]);
        assert_eq!(decode(&[0, 3, 2], &vocab).unwrap(), vec![0, 3, 2]);
    }

    #[test]
    fn single_merge_replay() {
        let mut vocab = Vocabulary::base(2);
        let x = vocab.push_merge(0, 1, 1.0).unwrap();
        assert_eq!(encode(&[0, 1, 0, 1], &vocab).unwrap(), vec![x, x]);
        assert_eq!(decode(&[x], &vocab).unwrap(), vec![0, 1]);
    }

    #[test]
    fn unknown_symbol_reports_position() {
        let vocab = Vocabulary::base(2);
        match encode(&[0, 1, 7], &vocab) {
            Err(Error::UnknownSymbol {
                position: 2,
                symbol: 7,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_id_errors_on_decode() {
        let vocab = Vocabulary::base(2);
        assert!(decode(&[5], &vocab).is_err());
    }

    #[test]
    fn token_count_never_exceeds_input_length() {
        let mut vocab = Vocabulary::base(3);
        vocab.push_merge(0, 1, 1.0).unwrap();
        vocab.push_merge(1, 2, 1.0).unwrap();
        let input = vec![0, 1, 2, 0, 1, 1, 2, 2];
        let ids = encode(&input, &vocab).unwrap();
        assert!(ids.len() <= input.len());
        assert_eq!(decode(&ids, &vocab).unwrap(), input);
    }
}
