//! Generated sentence-pair sets with known structure, for checking that the
//! learners can fit what they should.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledExample;

pub const ARG1_KEYWORDS: [&str; 5] = ["alpha", "bravo", "charlie", "delta", "echo"];
pub const ARG2_KEYWORDS: [&str; 4] = ["kilo", "lima", "mike", "november"];

const FILLER: [&str; 40] = [
    "the", "a", "of", "to", "and", "in", "was", "for", "on", "with", "as", "by", "at", "from", "city", "river", "team",
    "year", "album", "church", "school", "game", "party", "station", "road", "court", "village", "film", "season",
    "record", "built", "played", "named", "moved", "opened", "won", "large", "early", "local", "new",
];

/// Filler words beyond the named list are spelled `fillerNNN`. A wide filler
/// vocabulary keeps chance co-occurrences between fillers rare, so the
/// planted pair is the only signal that repeats reliably.
const FILLER_VOCAB: usize = 200;

fn filler(rng: &mut ChaCha8Rng) -> String {
    let k = rng.random_range(0..FILLER_VOCAB);
    match FILLER.get(k) {
        Some(w) => w.to_string(),
        None => format!("filler{k:03}"),
    }
}

fn sentence(rng: &mut ChaCha8Rng, keyword: &str) -> Vec<String> {
    let len = rng.random_range(4..9);
    let mut words: Vec<String> = (0..len).map(|_| filler(rng)).collect();
    let at = rng.random_range(0..=len);
    words.insert(at, keyword.to_string());
    words.push(".".to_string());
    words
}

/// Twenty classes, one per (Arg1 keyword, Arg2 keyword) combination; label
/// `i * 4 + j` for keywords `i` and `j`. Keywords sit at random positions
/// among filler words, so only their co-occurrence across the two
/// sentences determines the class.
pub fn planted_keyword_pairs(per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(20 * per_class);
    for (i, k1) in ARG1_KEYWORDS.iter().enumerate() {
        for (j, k2) in ARG2_KEYWORDS.iter().enumerate() {
            let label = i * ARG2_KEYWORDS.len() + j;
            for n in 0..per_class {
                out.push(LabeledExample {
                    arg1: sentence(&mut rng, k1),
                    arg2: sentence(&mut rng, k2),
                    label,
                    article_id: format!("syn{label:02}-{n:03}"),
                });
            }
        }
    }
    out.shuffle(&mut rng);
    out
}

/// Two-class task over a small vocabulary: label 0 when Arg2 is a
/// permutation of Arg1, label 1 when it is drawn independently. Tokens
/// within a sentence are distinct.
pub fn copy_task(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    (0..n)
        .map(|k| {
            let arg1: Vec<String> = words.choose_multiple(&mut rng, len).cloned().collect();
            let label = k % 2;
            let arg2 = if label == 0 {
                let mut p = arg1.clone();
                p.shuffle(&mut rng);
                p
            } else {
                words.choose_multiple(&mut rng, len).cloned().collect()
            };
            LabeledExample {
                arg1,
                arg2,
                label,
                article_id: format!("copy{k:04}"),
            }
        })
        .collect()
}
