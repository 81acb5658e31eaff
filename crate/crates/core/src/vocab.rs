//! Gesture vocabulary: `G1..G{K-1}` map to indices `0..K-2`, and the last
//! index is the corruption-only MASK token.

use alloc::format;
use alloc::string::String;

pub const DEFAULT_VOCAB: usize = 16;

pub fn mask_token(vocab: usize) -> usize {
    vocab - 1
}

pub fn gesture_count(vocab: usize) -> usize {
    vocab - 1
}

pub fn label(token: usize, vocab: usize) -> String {
    if token == mask_token(vocab) {
        String::from("MASK")
    } else {
        format!("G{}", token + 1)
    }
}

/// Index of a gesture label such as `G5`. MASK and out-of-vocabulary labels
/// return `None`; MASK never appears in ground truth.
pub fn parse_gesture(label: &str, vocab: usize) -> Option<usize> {
    let n: usize = label.strip_prefix('G')?.parse().ok()?;
    (1..=gesture_count(vocab)).contains(&n).then(|| n - 1)
}
