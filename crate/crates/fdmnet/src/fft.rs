//! Complex FFT kernels for arbitrary lengths.
//!
//! Power-of-two lengths use an iterative radix-2 transform, composite lengths
//! use recursive mixed-radix Cooley-Tukey over the smallest prime factor, and
//! large prime lengths fall back to Bluestein's chirp-z algorithm. All
//! transforms are unnormalized; callers apply their own scaling.

use num_complex::Complex64;

use std::f64::consts::PI;

/// Largest prime length transformed by the direct O(n^2) sum before
/// switching to Bluestein.
const DIRECT_PRIME_MAX: usize = 31;

/// In-place forward transform: `X[k] = sum_j x[j] e^{-2*pi*i*j*k/n}`.
pub fn fft(data: &mut [Complex64]) {
    fft_dir(data, -1.0);
}

/// In-place unnormalized inverse transform: `x[j] = sum_k X[k] e^{+2*pi*i*j*k/n}`.
/// Dividing the result by `n` recovers the signal.
pub fn ifft(data: &mut [Complex64]) {
    fft_dir(data, 1.0);
}

fn fft_dir(data: &mut [Complex64], sign: f64) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(data, sign);
        return;
    }
    let p = smallest_prime_factor(n);
    if p == n {
        if n <= DIRECT_PRIME_MAX {
            direct_dft(data, sign);
        } else {
            bluestein(data, sign);
        }
    } else {
        cooley_tukey(data, p, sign);
    }
}

fn smallest_prime_factor(n: usize) -> usize {
    if n % 2 == 0 {
        return 2;
    }
    let mut p = 3;
    while p * p <= n {
        if n % p == 0 {
            return p;
        }
        p += 2;
    }
    n
}

fn twiddle(sign: f64, num: usize, den: usize) -> Complex64 {
    let angle = sign * 2.0 * PI * (num as f64) / (den as f64);
    Complex64::new(angle.cos(), angle.sin())
}

/// Iterative radix-2 with bit-reversal permutation. `n` must be a power of two.
fn radix2(data: &mut [Complex64], sign: f64) {
    let n = data.len();
    let levels = n.trailing_zeros();

    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - levels)) as usize;
        if j > i {
            data.swap(i, j);
        }
    }

    // One table of e^{sign*2*pi*i*k/n}, k < n/2, serves every level via striding.
    let table: Vec<Complex64> = (0..n / 2).map(|k| twiddle(sign, k, n)).collect();

    let mut len = 2;
    while len <= n {
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = table[k * stride];
                let a = data[start + k];
                let b = data[start + k + len / 2] * w;
                data[start + k] = a + b;
                data[start + k + len / 2] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Mixed-radix split over the smallest prime factor `p` of `n`.
fn cooley_tukey(data: &mut [Complex64], p: usize, sign: f64) {
    let n = data.len();
    let m = n / p;

    let mut subs: Vec<Vec<Complex64>> = (0..p)
        .map(|b| (0..m).map(|a| data[p * a + b]).collect())
        .collect();
    for sub in subs.iter_mut() {
        fft_dir(sub, sign);
    }

    let table: Vec<Complex64> = (0..n).map(|j| twiddle(sign, j, n)).collect();
    for (k, slot) in data.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, sub) in subs.iter().enumerate() {
            acc += table[(b * k) % n] * sub[k % m];
        }
        *slot = acc;
    }
}

/// Direct O(n^2) transform for small prime lengths.
fn direct_dft(data: &mut [Complex64], sign: f64) {
    let n = data.len();
    let table: Vec<Complex64> = (0..n).map(|j| twiddle(sign, j, n)).collect();
    let src = data.to_vec();
    for (k, slot) in data.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &x) in src.iter().enumerate() {
            acc += x * table[(j * k) % n];
        }
        *slot = acc;
    }
}

/// Bluestein chirp-z transform: rewrites the DFT as a circular convolution of
/// length >= 2n-1, evaluated with the radix-2 path.
fn bluestein(data: &mut [Complex64], sign: f64) {
    let n = data.len();
    let len = (2 * n - 1).next_power_of_two();

    // Chirp c_j = e^{sign*pi*i*j^2/n}; j^2 is reduced mod 2n so the angle
    // argument stays exact in f64.
    let chirp: Vec<Complex64> = (0..n)
        .map(|j| {
            let jj = (j * j) % (2 * n);
            let angle = sign * PI * (jj as f64) / (n as f64);
            Complex64::new(angle.cos(), angle.sin())
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); len];
    for j in 0..n {
        a[j] = data[j] * chirp[j];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); len];
    b[0] = chirp[0].conj();
    for j in 1..n {
        b[j] = chirp[j].conj();
        b[len - j] = chirp[j].conj();
    }

    radix2(&mut a, -1.0);
    radix2(&mut b, -1.0);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= *y;
    }
    radix2(&mut a, 1.0);

    let scale = 1.0 / (len as f64);
    for k in 0..n {
        data[k] = a[k] * scale * chirp[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_dft(input: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = input.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &x) in input.iter().enumerate() {
                    let angle = sign * 2.0 * PI * (j as f64) * (k as f64) / (n as f64);
                    acc += x * Complex64::new(angle.cos(), angle.sin());
                }
                acc
            })
            .collect()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<Complex64> {
        // splitmix64, enough for test inputs
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z = z ^ (z >> 31);
            (z as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        (0..n).map(|_| Complex64::new(next(), next())).collect()
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn matches_reference_for_all_small_lengths() {
        for n in 1..=64 {
            let input = pseudo_random(n, n as u64);
            let mut out = input.clone();
            fft(&mut out);
            let want = reference_dft(&input, -1.0);
            assert!(
                max_abs_diff(&out, &want) < 1e-10,
                "forward mismatch at n={n}"
            );

            let mut inv = input.clone();
            ifft(&mut inv);
            let want = reference_dft(&input, 1.0);
            assert!(
                max_abs_diff(&inv, &want) < 1e-10,
                "inverse mismatch at n={n}"
            );
        }
    }

    #[test]
    fn matches_reference_on_bluestein_lengths() {
        // Primes above DIRECT_PRIME_MAX exercise the chirp-z path.
        for &n in &[37usize, 41, 101, 127] {
            let input = pseudo_random(n, n as u64);
            let mut out = input.clone();
            fft(&mut out);
            let want = reference_dft(&input, -1.0);
            assert!(max_abs_diff(&out, &want) < 1e-9, "mismatch at n={n}");
        }
    }

    #[test]
    fn forward_inverse_roundtrip() {
        for &n in &[1usize, 2, 3, 6, 8, 12, 17, 32, 45, 64, 37] {
            let input = pseudo_random(n, 1000 + n as u64);
            let mut data = input.clone();
            fft(&mut data);
            ifft(&mut data);
            let scale = 1.0 / n as f64;
            for x in data.iter_mut() {
                *x *= scale;
            }
            assert!(max_abs_diff(&data, &input) < 1e-12, "roundtrip at n={n}");
        }
    }

    #[test]
    fn impulse_transforms_to_constant() {
        let mut data = vec![Complex64::new(0.0, 0.0); 12];
        data[0] = Complex64::new(1.0, 0.0);
        fft(&mut data);
        for x in &data {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }
}
