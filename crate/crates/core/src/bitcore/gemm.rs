//! Bit-tile GEMM.
//!
//! The portable counterpart of a binary tensor-core MMA: operands are cut
//! into 8x128-bit fragments and every tile step accumulates
//! `popc(A_row XOR B_col)` into an 8x8 grid of `i32`. Ternary weights run
//! two such accumulations (pos and neg planes) and combine them at the end.

use super::layout::{BLOCK_LANES, WORDS_PER_BLOCK};
use super::popcount::{Native, Popc, PopcountStrategy, Portable};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

pub const TILE: usize = 8;

/// 8 rows of one 128-lane block.
pub type Fragment = [[u64; WORDS_PER_BLOCK]; TILE];

/// 8x8 grid of accumulators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccumulatorTile(pub [[i32; TILE]; TILE]);

/// `acc[m][k] += popc(a[m] XOR b[k])` for every cell of the tile.
///
/// `a` holds rows of the activation operand, `b` holds columns of the weight
/// operand (one output channel per fragment row).
pub fn bit_tile_mma(acc: &mut AccumulatorTile, a: &Fragment, b: &Fragment) {
    tile_mma::<Native>(&mut acc.0, a, b);
}

#[inline(always)]
fn tile_mma<P: Popc>(acc: &mut [[i32; TILE]; TILE], a: &Fragment, b: &Fragment) {
    for (acc_row, a_row) in acc.iter_mut().zip(a) {
        for (cell, b_col) in acc_row.iter_mut().zip(b) {
            *cell += (P::popc(a_row[0] ^ b_col[0]) + P::popc(a_row[1] ^ b_col[1])) as i32;
        }
    }
}

/// Row-major bit matrix whose row width is a whole number of 128-lane blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    k_lanes: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, k_lanes: usize) -> Result<Self> {
        Self::check_k(k_lanes)?;
        Ok(BitMatrix {
            rows,
            k_lanes,
            words: vec![0; rows * k_lanes / 64],
        })
    }

    pub fn from_words(rows: usize, k_lanes: usize, words: Vec<u64>) -> Result<Self> {
        Self::check_k(k_lanes)?;
        if words.len() != rows * k_lanes / 64 {
            return Err(Error::Layout(format!(
                "{rows}x{k_lanes} bit matrix needs {} words, got {}",
                rows * k_lanes / 64,
                words.len()
            )));
        }
        Ok(BitMatrix {
            rows,
            k_lanes,
            words,
        })
    }

    fn check_k(k_lanes: usize) -> Result<()> {
        if !k_lanes.is_multiple_of(BLOCK_LANES) {
            return Err(Error::Layout(format!(
                "reduction width {k_lanes} is not a multiple of {BLOCK_LANES}"
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn k_lanes(&self) -> usize {
        self.k_lanes
    }
    pub fn k_words(&self) -> usize {
        self.k_lanes / 64
    }
    pub fn k_blocks(&self) -> usize {
        self.k_lanes / BLOCK_LANES
    }
    pub fn words(&self) -> &[u64] {
        &self.words
    }
    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    pub fn row(&self, r: usize) -> &[u64] {
        let kw = self.k_words();
        &self.words[r * kw..(r + 1) * kw]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u64] {
        let kw = self.k_words();
        &mut self.words[r * kw..(r + 1) * kw]
    }

    pub fn get(&self, r: usize, lane: usize) -> bool {
        (self.row(r)[lane / 64] >> (lane % 64)) & 1 == 1
    }

    pub fn set(&mut self, r: usize, lane: usize, bit: bool) {
        let word = &mut self.row_mut(r)[lane / 64];
        if bit {
            *word |= 1 << (lane % 64);
        } else {
            *word &= !(1 << (lane % 64));
        }
    }

    /// Copies a lane range `[start, start + len)` of every row, both block aligned.
    pub fn column_block(&self, start_lane: usize, len_lanes: usize) -> Result<BitMatrix> {
        if !start_lane.is_multiple_of(BLOCK_LANES) || start_lane + len_lanes > self.k_lanes {
            return Err(Error::Layout(format!(
                "lane range {start_lane}+{len_lanes} is not a block slice of {}",
                self.k_lanes
            )));
        }
        let (s, l) = (start_lane / 64, len_lanes / 64);
        let mut out = BitMatrix::zeros(self.rows, len_lanes)?;
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[s..s + l]);
        }
        Ok(out)
    }

    fn fragment(&self, row0: usize, block: usize) -> Fragment {
        let mut f = [[0u64; WORDS_PER_BLOCK]; TILE];
        let kw = self.k_words();
        for (i, slot) in f.iter_mut().enumerate() {
            let r = row0 + i;
            if r < self.rows {
                let base = r * kw + block * WORDS_PER_BLOCK;
                *slot = [self.words[base], self.words[base + 1]];
            }
        }
        f
    }

    /// Fragments for every (row tile, block), row tile major.
    fn fragments(&self) -> Vec<Fragment> {
        let tiles = self.rows.div_ceil(TILE);
        let kb = self.k_blocks();
        let mut out = Vec::with_capacity(tiles * kb);
        for t in 0..tiles {
            for b in 0..kb {
                out.push(self.fragment(t * TILE, b));
            }
        }
        out
    }
}

/// Row-major `i32` matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.cols + c]
    }
}

/// Weight operand of [`bit_gemm`]: one row per output column.
#[derive(Clone, Copy, Debug)]
pub enum GemmWeights<'a> {
    /// `{-1,+1}` weights; result is `k_true - 2 * popc(a XOR b)`.
    Binary(&'a BitMatrix),
    /// `{-1,0,+1}` weights as pos/neg planes; result is
    /// `popc(a XOR neg) - popc(a XOR pos)`.
    Masked {
        pos: &'a BitMatrix,
        neg: &'a BitMatrix,
    },
}

/// `out[m][n] = sum_k a[m][k] * b[k][n]` over bipolar activations.
///
/// `a` is M x K (row-major), weights are N x K (column-major B). `k_true` is
/// the number of lanes that carry real data; all other lanes must be zero in
/// both operands.
pub fn bit_gemm(
    a: &BitMatrix,
    weights: GemmWeights<'_>,
    k_true: usize,
    par: Parallelism,
) -> Result<IntMatrix> {
    bit_gemm_with(a, weights, k_true, par, PopcountStrategy::Auto)
}

pub fn bit_gemm_with(
    a: &BitMatrix,
    weights: GemmWeights<'_>,
    k_true: usize,
    par: Parallelism,
    strategy: PopcountStrategy,
) -> Result<IntMatrix> {
    let (pos, neg) = match weights {
        GemmWeights::Binary(b) => (b, None),
        GemmWeights::Masked { pos, neg } => {
            if pos.rows != neg.rows || pos.k_lanes != neg.k_lanes {
                return Err(Error::Layout("pos and neg planes differ in shape".into()));
            }
            if pos.words.iter().zip(&neg.words).any(|(p, q)| p & q != 0) {
                return Err(Error::Invariant("pos and neg planes overlap".into()));
            }
            (pos, Some(neg))
        }
    };
    if a.k_lanes != pos.k_lanes {
        return Err(Error::Layout(format!(
            "activation width {} differs from weight width {}",
            a.k_lanes, pos.k_lanes
        )));
    }
    if k_true > a.k_lanes {
        return Err(Error::Layout(format!(
            "true lane count {k_true} exceeds width {}",
            a.k_lanes
        )));
    }

    let n = pos.rows;
    let mut out = IntMatrix {
        rows: a.rows,
        cols: n,
        data: vec![0; a.rows * n],
    };
    if a.rows == 0 || n == 0 {
        return Ok(out);
    }
    let job = GemmJob {
        a,
        pos_frags: pos.fragments(),
        neg_frags: neg.map(|m| m.fragments()),
        n,
        k_blocks: a.k_blocks(),
        k_true: k_true as i32,
    };
    par::for_each_chunk(par, &mut out.data, TILE * n, |tile, chunk| {
        job.run(tile, chunk, strategy)
    });
    Ok(out)
}

struct GemmJob<'a> {
    a: &'a BitMatrix,
    pos_frags: Vec<Fragment>,
    neg_frags: Option<Vec<Fragment>>,
    n: usize,
    k_blocks: usize,
    k_true: i32,
}

impl GemmJob<'_> {
    fn run(&self, tile: usize, out: &mut [i32], strategy: PopcountStrategy) {
        match strategy {
            PopcountStrategy::Portable => self.run_generic::<Portable>(tile, out),
            PopcountStrategy::Auto => {
                #[cfg(target_arch = "x86_64")]
                if std::arch::is_x86_feature_detected!("popcnt") {
                    // SAFETY: the CPU supports popcnt, checked above.
                    unsafe { self.run_popcnt(tile, out) };
                    return;
                }
                self.run_generic::<Native>(tile, out)
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "popcnt")]
    unsafe fn run_popcnt(&self, tile: usize, out: &mut [i32]) {
        self.run_generic::<Native>(tile, out)
    }

    #[inline(always)]
    fn run_generic<P: Popc>(&self, tile: usize, out: &mut [i32]) {
        let kb = self.k_blocks;
        let a_frags: Vec<Fragment> = (0..kb).map(|b| self.a.fragment(tile * TILE, b)).collect();
        let rows = out.len() / self.n;
        for nt in 0..self.n.div_ceil(TILE) {
            let mut c_pos = [[0i32; TILE]; TILE];
            let pos = &self.pos_frags[nt * kb..(nt + 1) * kb];
            for (af, bf) in a_frags.iter().zip(pos) {
                tile_mma::<P>(&mut c_pos, af, bf);
            }
            let cols = (self.n - nt * TILE).min(TILE);
            match &self.neg_frags {
                Some(neg_frags) => {
                    let mut c_neg = [[0i32; TILE]; TILE];
                    let neg = &neg_frags[nt * kb..(nt + 1) * kb];
                    for (af, bf) in a_frags.iter().zip(neg) {
                        tile_mma::<P>(&mut c_neg, af, bf);
                    }
                    for i in 0..rows {
                        for j in 0..cols {
                            out[i * self.n + nt * TILE + j] = c_neg[i][j] - c_pos[i][j];
                        }
                    }
                }
                None => {
                    for i in 0..rows {
                        for j in 0..cols {
                            out[i * self.n + nt * TILE + j] = self.k_true - 2 * c_pos[i][j];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frag(rng: &mut impl Rng) -> Fragment {
        let mut f = [[0u64; 2]; 8];
        for row in &mut f {
            *row = [rng.random(), rng.random()];
        }
        f
    }

    #[test]
    fn zero_tile_leaves_acc() {
        let mut acc = AccumulatorTile([[3; 8]; 8]);
        bit_tile_mma(&mut acc, &[[0; 2]; 8], &[[0; 2]; 8]);
        assert_eq!(acc, AccumulatorTile([[3; 8]; 8]));
    }

    #[test]
    fn equal_row_and_column_adds_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_frag(&mut rng);
        let mut b = random_frag(&mut rng);
        b[5] = a[2];
        let mut acc = AccumulatorTile::default();
        bit_tile_mma(&mut acc, &a, &b);
        assert_eq!(acc.0[2][5], 0);
    }

    #[test]
    fn tile_matches_bit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_frag(&mut rng);
            let b = random_frag(&mut rng);
            let mut acc = AccumulatorTile::default();
            bit_tile_mma(&mut acc, &a, &b);
            for m in 0..8 {
                for k in 0..8 {
                    let mut expected = 0;
                    for lane in 0..128 {
                        let x = (a[m][lane / 64] >> (lane % 64)) & 1;
                        let y = (b[k][lane / 64] >> (lane % 64)) & 1;
                        expected += (x != y) as i32;
                    }
                    assert_eq!(acc.0[m][k], expected);
                }
            }
        }
    }

    #[test]
    fn unaligned_width_rejected() {
        assert!(matches!(BitMatrix::zeros(2, 100), Err(Error::Layout(_))));
    }

    #[test]
    fn all_ones_binary() {
        let mut a = BitMatrix::zeros(1, 128).unwrap();
        let mut b = BitMatrix::zeros(1, 128).unwrap();
        a.words_mut().fill(u64::MAX);
        b.words_mut().fill(u64::MAX);
        let out = bit_gemm(&a, GemmWeights::Binary(&b), 128, Parallelism::Sequential).unwrap();
        assert_eq!(out.data, vec![128]);
    }

    #[test]
    fn selector_weights_pick_lane() {
        // column j selects activation lane 3j
        let mut a = BitMatrix::zeros(3, 128).unwrap();
        let acts = [
            [true, false, true],
            [false, false, true],
            [true, true, false],
        ];
        for (r, row) in acts.iter().enumerate() {
            for (j, &bit) in row.iter().enumerate() {
                a.set(r, 3 * j, bit);
            }
        }
        let mut pos = BitMatrix::zeros(3, 128).unwrap();
        let neg = BitMatrix::zeros(3, 128).unwrap();
        for j in 0..3 {
            pos.set(j, 3 * j, true);
        }
        let out = bit_gemm(
            &a,
            GemmWeights::Masked {
                pos: &pos,
                neg: &neg,
            },
            128,
            Parallelism::Sequential,
        )
        .unwrap();
        for (r, row) in acts.iter().enumerate() {
            for (j, &bit) in row.iter().enumerate() {
                assert_eq!(out.get(r, j), if bit { 1 } else { -1 });
            }
        }
    }
}
