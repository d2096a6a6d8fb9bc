//! Complex FFT kernels: iterative radix-2 for power-of-two lengths and
//! Bluestein's chirp-z reduction for everything else.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

/// Unnormalized in-place transform `X_k = sum_n x_n e^{sign i 2 pi k n / N}`.
pub(crate) fn fft_inplace(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, dir);
    } else {
        bluestein(buf, dir);
    }
}

fn radix2(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = dir.sign();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        // Twiddles evaluated directly rather than by recurrence to keep
        // round-off at the 1e-15 level for long transforms.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, step * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = dir.sign();
    // k^2 is reduced modulo 2n before scaling so the chirp phase stays exact.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * k2 / n as f64)
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        let c = chirp[k].conj();
        b[k] = c;
        b[m - k] = c;
    }
    radix2(&mut a, Direction::Forward);
    radix2(&mut b, Direction::Forward);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    radix2(&mut a, Direction::Inverse);
    let inv_m = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * inv_m * chirp[k];
    }
}

/// Unnormalized 2D transform of a row-major `rows x cols` buffer.
pub(crate) fn fft2_inplace(data: &mut [Complex64], rows: usize, cols: usize, dir: Direction) {
    debug_assert_eq!(data.len(), rows * cols);
    for row in data.chunks_exact_mut(cols) {
        fft_inplace(row, dir);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for x in 0..cols {
        for y in 0..rows {
            column[y] = data[y * cols + x];
        }
        fft_inplace(&mut column, dir);
        for y in 0..rows {
            data[y * cols + x] = column[y];
        }
    }
}
