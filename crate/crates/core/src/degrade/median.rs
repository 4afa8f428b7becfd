use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::Tensor;

/// Mirror an out-of-range index back into `[0, n)` without repeating the
/// edge sample (`-1 -> 1`, `n -> n-2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Per-channel median over each `k × k` window, edges reflected.
pub fn median_filter<T: Scalar>(image: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if k % 2 == 0 {
        return Err(Error::invalid(format!("median kernel must be odd, got {k}")));
    }
    if k > s.h.min(s.w) {
        return Err(Error::invalid(format!(
            "median kernel {k} exceeds image size {}x{}",
            s.h, s.w
        )));
    }
    let r = (k / 2) as isize;
    let mid = k * k / 2;
    let mut out = Vec::with_capacity(s.numel());
    let mut window = Vec::with_capacity(k * k);
    // Reflected row/column indices are shared by every plane.
    let rows: Vec<Vec<usize>> = (0..s.h as isize)
        .map(|y| (-r..=r).map(|d| reflect(y + d, s.h)).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..s.w as isize)
        .map(|x| (-r..=r).map(|d| reflect(x + d, s.w)).collect())
        .collect();
    for plane in image.data().chunks(s.plane()) {
        for row_idx in &rows {
            for col_idx in &cols {
                window.clear();
                for &yy in row_idx {
                    let line = &plane[yy * s.w..(yy + 1) * s.w];
                    window.extend(col_idx.iter().map(|&xx| line[xx]));
                }
                let (_, m, _) = window
                    .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite pixels"));
                out.push(*m);
            }
        }
    }
    Tensor::from_vec(s, out)
}
