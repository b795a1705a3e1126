//! Panel-packed GEMM.
//!
//! The right-hand operand is packed into column panels of `PANEL` lanes
//! (zero padded on the last panel). Every output element is produced by the
//! same micro-kernel arithmetic regardless of its row or column position, and
//! accumulates its `k` products strictly in index order starting from zero.
//! Row blocks of every height share that arithmetic, and depth blocking only
//! spills and reloads the running sums, so a row's result never depends on
//! which other rows are in the product.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod simd {
    use core::arch::x86_64::*;

    pub const PANEL: usize = 32;

    /// `R` interleaved rows of `a` (entry `(r, p)` at `p·R + r`), depths
    /// `p0..p0+kc`, against the same panel rows, accumulating into `acc`
    /// (`R × PANEL`).
    #[inline(always)]
    pub fn block<const R: usize>(a: &[f32], p0: usize, kc: usize, panel: &[f32], acc: &mut [f32]) {
        assert!(acc.len() >= R * PANEL && panel.len() >= (p0 + kc) * PANEL);
        assert!(a.len() >= (p0 + kc) * R);
        // SAFETY: avx512f is enabled at compile time and the assertions above
        // keep every load and store in bounds.
        unsafe {
            let mut v = [[_mm512_setzero_ps(); 2]; R];
            let ap = a.as_ptr();
            let cp = acc.as_mut_ptr();
            for r in 0..R {
                v[r][0] = _mm512_loadu_ps(cp.add(r * PANEL));
                v[r][1] = _mm512_loadu_ps(cp.add(r * PANEL + 16));
            }
            let mut bp = panel.as_ptr().add(p0 * PANEL);
            for p in p0..p0 + kc {
                let b0 = _mm512_loadu_ps(bp);
                let b1 = _mm512_loadu_ps(bp.add(16));
                for r in 0..R {
                    let x = _mm512_set1_ps(*ap.add(p * R + r));
                    v[r][0] = _mm512_fmadd_ps(x, b0, v[r][0]);
                    v[r][1] = _mm512_fmadd_ps(x, b1, v[r][1]);
                }
                bp = bp.add(PANEL);
            }
            for r in 0..R {
                _mm512_storeu_ps(cp.add(r * PANEL), v[r][0]);
                _mm512_storeu_ps(cp.add(r * PANEL + 16), v[r][1]);
            }
        }
    }
}

#[cfg(all(
    target_arch = "x86_64",
    target_feature = "avx2",
    target_feature = "fma",
    not(target_feature = "avx512f")
))]
mod simd {
    use core::arch::x86_64::*;

    pub const PANEL: usize = 16;

    #[inline(always)]
    pub fn block<const R: usize>(a: &[f32], p0: usize, kc: usize, panel: &[f32], acc: &mut [f32]) {
        assert!(acc.len() >= R * PANEL && panel.len() >= (p0 + kc) * PANEL);
        assert!(a.len() >= (p0 + kc) * R);
        // SAFETY: avx2 and fma are enabled at compile time; loads and stores
        // stay inside the asserted bounds.
        unsafe {
            let mut v = [[_mm256_setzero_ps(); 2]; R];
            let ap = a.as_ptr();
            let cp = acc.as_mut_ptr();
            for r in 0..R {
                v[r][0] = _mm256_loadu_ps(cp.add(r * PANEL));
                v[r][1] = _mm256_loadu_ps(cp.add(r * PANEL + 8));
            }
            let mut bp = panel.as_ptr().add(p0 * PANEL);
            for p in p0..p0 + kc {
                let b0 = _mm256_loadu_ps(bp);
                let b1 = _mm256_loadu_ps(bp.add(8));
                for r in 0..R {
                    let x = _mm256_set1_ps(*ap.add(p * R + r));
                    v[r][0] = _mm256_fmadd_ps(x, b0, v[r][0]);
                    v[r][1] = _mm256_fmadd_ps(x, b1, v[r][1]);
                }
                bp = bp.add(PANEL);
            }
            for r in 0..R {
                _mm256_storeu_ps(cp.add(r * PANEL), v[r][0]);
                _mm256_storeu_ps(cp.add(r * PANEL + 8), v[r][1]);
            }
        }
    }
}

#[cfg(not(any(
    all(target_arch = "x86_64", target_feature = "avx512f"),
    all(target_arch = "x86_64", target_feature = "avx2", target_feature = "fma")
)))]
mod simd {
    pub const PANEL: usize = 16;

    #[inline(always)]
    pub fn block<const R: usize>(a: &[f32], p0: usize, kc: usize, panel: &[f32], acc: &mut [f32]) {
        for r in 0..R {
            let out = &mut acc[r * PANEL..(r + 1) * PANEL];
            for p in p0..p0 + kc {
                let x = a[p * R + r];
                let b = &panel[p * PANEL..(p + 1) * PANEL];
                for q in 0..PANEL {
                    out[q] += x * b[q];
                }
            }
        }
    }
}

pub use simd::PANEL;

/// Right-hand GEMM operand in panel layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl PackedMatrix {
    /// Packs a row-major `rows × cols` buffer.
    pub fn pack(rows: usize, cols: usize, src: &[f32]) -> Self {
        assert_eq!(src.len(), rows * cols, "pack: buffer length");
        let panels = cols.div_ceil(PANEL);
        let mut data = vec![0f32; panels * rows * PANEL];
        for jp in 0..panels {
            let j0 = jp * PANEL;
            let width = PANEL.min(cols - j0);
            let base = jp * rows * PANEL;
            for p in 0..rows {
                data[base + p * PANEL..base + p * PANEL + width]
                    .copy_from_slice(&src[p * cols + j0..p * cols + j0 + width]);
            }
        }
        Self { rows, cols, data }
    }

    /// Packs the transpose of a row-major `rows × cols` buffer, i.e. the
    /// resulting operand is `cols × rows`.
    pub fn pack_transposed(rows: usize, cols: usize, src: &[f32]) -> Self {
        assert_eq!(src.len(), rows * cols, "pack_transposed: buffer length");
        let (k, m) = (cols, rows);
        let panels = m.div_ceil(PANEL);
        let mut data = vec![0f32; panels * k * PANEL];
        for j in 0..m {
            let (jp, q) = (j / PANEL, j % PANEL);
            let base = jp * k * PANEL + q;
            let row = &src[j * cols..(j + 1) * cols];
            for (p, &v) in row.iter().enumerate() {
                data[base + p * PANEL] = v;
            }
        }
        Self { rows: k, cols: m, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn panels(&self) -> usize {
        self.cols.div_ceil(PANEL)
    }

    fn panel(&self, jp: usize) -> &[f32] {
        let len = self.rows * PANEL;
        &self.data[jp * len..(jp + 1) * len]
    }
}

/// `out[n × m] = a[n × k] · b`, overwriting `out`.
pub fn gemm(a: &[f32], n: usize, b: &PackedMatrix, out: &mut [f32]) {
    let (k, m) = (b.rows, b.cols);
    assert_eq!(a.len(), n * k, "gemm: lhs length");
    assert_eq!(out.len(), n * m, "gemm: out length");
    if n == 0 || m == 0 {
        return;
    }
    let packed = interleave_rows(a, n, k);
    let a = packed.as_slice();

    #[cfg(feature = "parallel")]
    {
        if n * k * m >= PARALLEL_MIN_MACS && b.panels() > 1 {
            gemm_parallel(a, n, b, out);
            return;
        }
    }

    for jp in 0..b.panels() {
        gemm_panel(a, n, b, jp, |i, lanes| {
            let j0 = jp * PANEL;
            let width = PANEL.min(m - j0);
            out[i * m + j0..i * m + j0 + width].copy_from_slice(&lanes[..width]);
        });
    }
}

#[cfg(feature = "parallel")]
const PARALLEL_MIN_MACS: usize = 1 << 20;

#[cfg(feature = "parallel")]
fn gemm_parallel(a: &[f32], n: usize, b: &PackedMatrix, out: &mut [f32]) {
    use rayon::prelude::*;
    let m = b.cols;
    let blocks: Vec<Vec<f32>> = (0..b.panels())
        .into_par_iter()
        .map(|jp| {
            let mut block = vec![0f32; n * PANEL];
            gemm_panel(a, n, b, jp, |i, lanes| {
                block[i * PANEL..(i + 1) * PANEL].copy_from_slice(lanes);
            });
            block
        })
        .collect();
    for (jp, block) in blocks.iter().enumerate() {
        let j0 = jp * PANEL;
        let width = PANEL.min(m - j0);
        for i in 0..n {
            out[i * m + j0..i * m + j0 + width].copy_from_slice(&block[i * PANEL..i * PANEL + width]);
        }
    }
}

/// Row-block heights used by [`gemm_panel`] for `n` rows, top to bottom.
fn row_blocks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    let full = n / MR * MR;
    let quads = full + (n - full) / 4 * 4;
    (0..full)
        .step_by(MR)
        .map(|i| (i, MR))
        .chain((full..quads).step_by(4).map(|i| (i, 4)))
        .chain((quads..n).map(|i| (i, 1)))
}

/// Rewrites each row block of `a` so the block's rows interleave by depth.
fn interleave_rows(a: &[f32], n: usize, k: usize) -> Vec<f32> {
    let mut out = vec![0f32; n * k];
    for (i, h) in row_blocks(n) {
        let dst = &mut out[i * k..(i + h) * k];
        for r in 0..h {
            for (p, &v) in a[(i + r) * k..(i + r + 1) * k].iter().enumerate() {
                dst[p * h + r] = v;
            }
        }
    }
    out
}

/// Depth of one pass over a panel; keeps the panel slice resident in L1.
const KC: usize = 256;
/// Rows per register block.
const MR: usize = 8;

/// `a` must already be interleaved by [`interleave_rows`].
fn gemm_panel(a: &[f32], n: usize, b: &PackedMatrix, jp: usize, mut emit: impl FnMut(usize, &[f32; PANEL])) {
    let k = b.rows;
    let panel = b.panel(jp);
    let mut tile = vec![0f32; n * PANEL];
    let mut p0 = 0;
    while p0 < k {
        let kc = KC.min(k - p0);
        for (i, h) in row_blocks(n) {
            let (a, acc) = (&a[i * k..(i + h) * k], &mut tile[i * PANEL..]);
            match h {
                MR => simd::block::<MR>(a, p0, kc, panel, acc),
                4 => simd::block::<4>(a, p0, kc, panel, acc),
                _ => simd::block::<1>(a, p0, kc, panel, acc),
            }
        }
        p0 += kc;
    }
    for i in 0..n {
        let lanes: &[f32; PANEL] = tile[i * PANEL..(i + 1) * PANEL].try_into().unwrap();
        emit(i, lanes);
    }
}
