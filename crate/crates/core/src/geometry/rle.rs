//! Column-major run-length encoding, COCO compatible.
//!
//! `counts` alternates zero and one runs and always starts with a zero run
//! (possibly empty), scanning pixels top to bottom within each column and
//! columns left to right.

use serde::{Deserialize, Serialize};

use super::BitMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }
}

pub fn rle_encode(m: &BitMask) -> RleMask {
    let (w, h) = (m.width(), m.height());
    let data = m.data();
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = data[y * w + x];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        width: w,
        height: h,
        counts,
    }
}

pub fn rle_decode(r: &RleMask) -> Result<BitMask> {
    let total: u64 = r.counts.iter().map(|&c| c as u64).sum();
    let expected = (r.width * r.height) as u64;
    if total != expected {
        return Err(Error::MalformedRle(format!(
            "run lengths sum to {total}, expected {expected} for {}x{}",
            r.width, r.height
        )));
    }
    let mut mask = BitMask::new(r.width, r.height);
    let mut idx = 0usize;
    for (i, &c) in r.counts.iter().enumerate() {
        let c = c as usize;
        if i % 2 == 1 {
            for k in idx..idx + c {
                mask.set(k / r.height, k % r.height, true);
            }
        }
        idx += c;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(rle_encode(&BitMask::new(3, 3)).counts, vec![9]);
        assert_eq!(rle_encode(&BitMask::full(3, 3)).counts, vec![0, 9]);

        // 2x2 with only the top-right pixel set: column-major order is
        // (0,0) (0,1) (1,0) (1,1) so the runs are 2 zeros, 1 one, 1 zero.
        let mut m = BitMask::new(2, 2);
        m.set(1, 0, true);
        let r = rle_encode(&m);
        assert_eq!(r.counts, vec![2, 1, 1]);
        assert_eq!(r.area(), 1);
        assert_eq!(rle_decode(&r).unwrap(), m);
    }

    #[test]
    fn sum_mismatch_rejected() {
        let r = RleMask {
            width: 3,
            height: 3,
            counts: vec![4, 4],
        };
        assert!(matches!(rle_decode(&r), Err(Error::MalformedRle(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip(w in 1usize..17, h in 1usize..17, seed in any::<u64>()) {
            let mut state = seed | 1;
            let m = BitMask::from_fn(w, h, |_, _| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state & 3 == 0
            });
            let r = rle_encode(&m);
            prop_assert_eq!(r.counts.iter().map(|&c| c as usize).sum::<usize>(), w * h);
            prop_assert_eq!(r.area() as usize, m.count());
            prop_assert_eq!(rle_decode(&r).unwrap(), m);
        }
    }
}
