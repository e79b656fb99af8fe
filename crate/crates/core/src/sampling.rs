//! Small exact samplers shared by the round functions.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

/// Binomial(n, p) draw, tolerant of degenerate parameters.
pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("p checked to lie in (0,1)")
        .sample(rng)
}

/// Uniform target for `caller` among all `n` nodes, or among the other `n - 1`.
#[inline]
pub fn uniform_target<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    caller: usize,
    include_self: bool,
) -> usize {
    if include_self {
        rng.random_range(0..n)
    } else {
        let t = rng.random_range(0..n - 1);
        if t >= caller {
            t + 1
        } else {
            t
        }
    }
}

/// Calls `visit(i)` for each index `i < len` kept independently with probability `q`,
/// in increasing order. Geometric skipping makes the cost proportional to the number kept.
pub fn bernoulli_subset<R: Rng + ?Sized>(
    rng: &mut R,
    len: u64,
    q: f64,
    mut visit: impl FnMut(u64),
) {
    if len == 0 || q <= 0.0 {
        return;
    }
    if q >= 1.0 {
        (0..len).for_each(visit);
        return;
    }
    if q > 0.25 {
        for i in 0..len {
            if rng.random::<f64>() < q {
                visit(i);
            }
        }
        return;
    }
    let log_miss = (-q).ln_1p();
    let mut i: u64 = 0;
    loop {
        // u in (0,1] keeps the logarithm finite
        let u = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / log_miss).floor();
        if skip >= (len - i) as f64 {
            return;
        }
        i += skip as u64;
        visit(i);
        i += 1;
        if i >= len {
            return;
        }
    }
}

/// Fills `out` with `r` distinct values from `0..pool`, in random order.
pub fn distinct_indices<R: Rng + ?Sized>(rng: &mut R, pool: usize, r: usize, out: &mut Vec<usize>) {
    debug_assert!(r <= pool);
    out.clear();
    if r <= 16 {
        while out.len() < r {
            let t = rng.random_range(0..pool);
            if !out.contains(&t) {
                out.push(t);
            }
        }
    } else {
        out.extend(rand::seq::index::sample(rng, pool, r));
    }
}
