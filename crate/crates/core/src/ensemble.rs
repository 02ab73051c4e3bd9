//! Deterministic parallel accumulation over frames.
//!
//! Frames are split into fixed-size chunks by index. Chunks run in parallel
//! on the current rayon pool and are merged strictly in chunk order, so the
//! result does not depend on the number of threads.

use rayon::prelude::*;

use crate::correlator::Merge;
use crate::error::Result;
use crate::seed::frame_seed;

/// Frames per chunk. Fixed so results are independent of the pool size.
pub const CHUNK: u64 = 64;

/// Accumulates `n_frames` frames with seeds `frame_seed(base_seed, k)`.
///
/// `make` builds an empty accumulator, `step` feeds one frame's seed into it.
pub fn run_ensemble<A, M, S>(n_frames: u64, base_seed: u64, make: M, step: S) -> Result<A>
where
    A: Merge + Send,
    M: Fn() -> Result<A> + Sync,
    S: Fn(&mut A, u64) -> Result<()> + Sync,
{
    let n_chunks = n_frames.div_ceil(CHUNK);
    // Bounds how many partial accumulators are alive at once.
    let wave = (2 * rayon::current_num_threads()).max(1) as u64;
    let mut total = make()?;
    let mut start = 0;
    while start < n_chunks {
        let end = (start + wave).min(n_chunks);
        let parts: Vec<Result<A>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut acc = make()?;
                for k in c * CHUNK..((c + 1) * CHUNK).min(n_frames) {
                    step(&mut acc, frame_seed(base_seed, k))?;
                }
                Ok(acc)
            })
            .collect();
        for p in parts {
            total.merge(p?)?;
        }
        start = end;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq)]
    struct Seq(Vec<u64>);

    impl Merge for Seq {
        fn merge(&mut self, other: Self) -> Result<()> {
            self.0.extend(other.0);
            Ok(())
        }
    }

    #[test]
    fn order_is_independent_of_pool_size() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_ensemble(
                        300,
                        9,
                        || Ok(Seq(Vec::new())),
                        |a: &mut Seq, s| {
                            a.0.push(s);
                            Ok(())
                        },
                    )
                    .unwrap()
                })
        };
        let one = run(1);
        assert_eq!(one.0.len(), 300);
        assert_eq!(one.0[17], frame_seed(9, 17));
        assert_eq!(one, run(3));
    }
}
