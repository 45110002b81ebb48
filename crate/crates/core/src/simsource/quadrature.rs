//! Composite 10-point Gauss–Legendre integration.

const NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_14,
];

/// Integrates `f` over `[lo, hi]`, splitting at `breaks` (kinks of `f`) and
/// into pieces no longer than `max_piece`.
pub(crate) fn integrate<T, F>(lo: f64, hi: f64, breaks: &[f64], max_piece: f64, zero: T, mut f: F) -> T
where
    T: Copy + std::ops::Add<Output = T>,
    F: FnMut(f64, f64) -> T,
{
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&b| b > lo && b < hi).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut acc = zero;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let pieces = ((b - a) / max_piece).ceil().max(1.0) as usize;
        let h = (b - a) / pieces as f64;
        for p in 0..pieces {
            let mid = a + (p as f64 + 0.5) * h;
            let half = 0.5 * h;
            for (x, w) in NODES.iter().zip(WEIGHTS) {
                acc = acc + f(mid - half * x, w * half);
                acc = acc + f(mid + half * x, w * half);
            }
        }
    }
    acc
}
