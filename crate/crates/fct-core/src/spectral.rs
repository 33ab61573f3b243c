//! Real-input DFT/IDFT with half-spectrum storage.
//!
//! Convention: forward unnormalized, inverse carries 1/N. A real length-N
//! signal transforms into floor(N/2)+1 unique complex bins; the remaining
//! bins are conjugate mirrors. Power-of-two lengths take an iterative
//! radix-2 Cooley-Tukey path with precomputed twiddles; other lengths fall
//! back to the naive O(N^2) sum.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{FctError, Result};
use crate::tensor::{ComplexTensor, RealTensor};

/// Unique bins of a conjugate-symmetric spectrum plus the original length.
#[derive(Debug, Clone)]
pub struct HalfSpectrum {
    pub bins: ComplexTensor,
    pub original_len: usize,
    pub axis: usize,
}

pub fn half_len(n: usize) -> usize {
    n / 2 + 1
}

struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

thread_local! {
    static TWIDDLE_CACHE: RefCell<HashMap<usize, Rc<Twiddles>>> = RefCell::new(HashMap::new());
}

fn twiddles(n: usize) -> Rc<Twiddles> {
    TWIDDLE_CACHE.with(|c| {
        c.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let half = n / 2;
                let mut cos = Vec::with_capacity(half);
                let mut sin = Vec::with_capacity(half);
                for k in 0..half {
                    let a = -2.0 * PI * k as f64 / n as f64;
                    cos.push(a.cos());
                    sin.push(a.sin());
                }
                Rc::new(Twiddles { cos, sin })
            })
            .clone()
    })
}

/// In-place radix-2 DIT FFT over power-of-two length. `inverse` conjugates
/// the twiddles; no normalization either way.
fn fft_pow2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let tw = twiddles(n);
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let wc = tw.cos[k * stride];
                let ws = if inverse {
                    -tw.sin[k * stride]
                } else {
                    tw.sin[k * stride]
                };
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * wc - im[b] * ws;
                let ti = re[b] * ws + im[b] * wc;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Naive evaluation of the forward sum, O(N^2). Oracle for the fast path and
/// fallback for non-power-of-two lengths.
pub fn naive_dft_row(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let l = half_len(n);
    let mut re = vec![0.0; l];
    let mut im = vec![0.0; l];
    for (k, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
        for (t, &v) in x.iter().enumerate() {
            let a = -2.0 * PI * (k * t) as f64 / n as f64;
            *r += v * a.cos();
            *i += v * a.sin();
        }
    }
    (re, im)
}

/// Forward transform of one real row into half-spectrum bins.
/// DC (and Nyquist for even N) imaginary parts are exactly zero.
pub fn rfft_row(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let l = half_len(n);
    let (re, mut im) = if n.is_power_of_two() {
        let mut fr = x.to_vec();
        let mut fi = vec![0.0; n];
        fft_pow2(&mut fr, &mut fi, false);
        fr.truncate(l);
        fi.truncate(l);
        (fr, fi)
    } else {
        naive_dft_row(x)
    };
    im[0] = 0.0;
    if n % 2 == 0 {
        im[l - 1] = 0.0;
    }
    (re, im)
}

/// Inverse of one row given half-spectrum bins; expands the conjugate-
/// symmetric full spectrum and applies the 1/N factor. Imaginary parts at
/// DC/Nyquist are ignored (they are zero for any valid half-spectrum).
pub fn irfft_row(bre: &[f64], bim: &[f64], n: usize) -> Vec<f64> {
    let l = half_len(n);
    debug_assert_eq!(bre.len(), l);
    let mut fr = vec![0.0; n];
    let mut fi = vec![0.0; n];
    fr[0] = bre[0];
    for k in 1..l {
        if n % 2 == 0 && k == l - 1 {
            fr[k] = bre[k];
        } else {
            fr[k] = bre[k];
            fi[k] = bim[k];
            fr[n - k] = bre[k];
            fi[n - k] = -bim[k];
        }
    }
    if n.is_power_of_two() {
        fft_pow2(&mut fr, &mut fi, true);
        fr.iter().map(|&v| v / n as f64).collect()
    } else {
        let mut out = vec![0.0; n];
        for (t, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..n {
                let a = 2.0 * PI * (k * t) as f64 / n as f64;
                acc += fr[k] * a.cos() - fi[k] * a.sin();
            }
            *o = acc / n as f64;
        }
        out
    }
}

/// Adjoint (plain Jacobian transpose) of the real-to-half-spectrum map:
/// x_grad(t) = sum_k g_re[k] cos(2*pi*k*t/N) - g_im[k] sin(2*pi*k*t/N).
/// Each unique bin contributes once; this is what finite differences of the
/// forward map produce.
pub fn rfft_adjoint_row(gre: &[f64], gim: &[f64], n: usize) -> Vec<f64> {
    let l = half_len(n);
    debug_assert_eq!(gre.len(), l);
    if n.is_power_of_two() {
        // Re(sum_{k<L} g_k e^{+j theta}) via an unnormalized inverse FFT with
        // the mirror bins left at zero.
        let mut fr = vec![0.0; n];
        let mut fi = vec![0.0; n];
        fr[..l].copy_from_slice(gre);
        fi[..l].copy_from_slice(gim);
        fft_pow2(&mut fr, &mut fi, true);
        fr
    } else {
        let mut out = vec![0.0; n];
        for (t, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..l {
                let a = 2.0 * PI * (k * t) as f64 / n as f64;
                acc += gre[k] * a.cos() - gim[k] * a.sin();
            }
            *o = acc;
        }
        out
    }
}

/// Adjoint of `irfft_row` as a map from bins to signal.
pub fn irfft_adjoint_row(gx: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = gx.len();
    let l = half_len(n);
    // forward sums of the gradient signal; DC/Nyquist sine sums vanish exactly
    let (r, i) = rfft_row(gx);
    let mut gre = vec![0.0; l];
    let mut gim = vec![0.0; l];
    gre[0] = r[0] / n as f64;
    for k in 1..l {
        if n % 2 == 0 && k == l - 1 {
            gre[k] = r[k] / n as f64;
        } else {
            gre[k] = 2.0 * r[k] / n as f64;
            gim[k] = 2.0 * i[k] / n as f64;
        }
    }
    (gre, gim)
}

fn rows_view(x: &RealTensor, axis: usize) -> Result<(RealTensor, bool)> {
    match (x.shape().len(), axis) {
        (1, 0) => Ok((x.clone(), false)),
        (2, 1) => Ok((x.clone(), false)),
        (2, 0) => Ok((x.transpose(), true)),
        _ => Err(FctError::Size(format!(
            "dft supports 1-D or 2-D input, got shape {:?} axis {axis}",
            x.shape()
        ))),
    }
}

/// Forward DFT along `axis`, row batched for 2-D input.
pub fn dft(x: &RealTensor, axis: usize) -> Result<HalfSpectrum> {
    let (m, transposed) = rows_view(x, axis)?;
    let n = m.cols();
    if n < 2 {
        return Err(FctError::Size(format!("dft needs axis length >= 2, got {n}")));
    }
    let l = half_len(n);
    let rows = m.rows();
    let mut re = Vec::with_capacity(rows * l);
    let mut im = Vec::with_capacity(rows * l);
    for r in 0..rows {
        let (br, bi) = rfft_row(&m.data()[r * n..(r + 1) * n]);
        re.extend_from_slice(&br);
        im.extend_from_slice(&bi);
    }
    let shape = if x.shape().len() == 1 {
        vec![l]
    } else {
        vec![rows, l]
    };
    let bins = ComplexTensor::new(RealTensor::new(shape.clone(), re)?, RealTensor::new(shape, im)?)?;
    let _ = transposed;
    Ok(HalfSpectrum {
        bins,
        original_len: n,
        axis,
    })
}

/// Exact inverse. Rejects spectra whose DC/Nyquist bins carry imaginary mass.
pub fn idft(s: &HalfSpectrum) -> Result<RealTensor> {
    let n = s.original_len;
    let l = half_len(n);
    if s.bins.re.cols() != l {
        return Err(FctError::Size(format!(
            "half-spectrum has {} bins, expected {} for N={}",
            s.bins.re.cols(),
            l,
            n
        )));
    }
    let rows = s.bins.re.rows();
    let tol = 1e-12 * (1.0 + s.bins.max_abs());
    for r in 0..rows {
        let dc = s.bins.im.data()[r * l];
        if dc.abs() > tol {
            return Err(FctError::Invariant(format!("DC bin must be real, im={dc}")));
        }
        if n % 2 == 0 {
            let ny = s.bins.im.data()[r * l + l - 1];
            if ny.abs() > tol {
                return Err(FctError::Invariant(format!(
                    "Nyquist bin must be real, im={ny}"
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        out.extend(irfft_row(
            &s.bins.re.data()[r * l..(r + 1) * l],
            &s.bins.im.data()[r * l..(r + 1) * l],
            n,
        ));
    }
    let t = if s.bins.re.shape().len() == 1 {
        RealTensor::new(vec![n], out)?
    } else {
        RealTensor::new(vec![rows, n], out)?
    };
    if s.axis == 0 && t.shape().len() == 2 {
        Ok(t.transpose())
    } else {
        Ok(t)
    }
}

/// Jacobian-transpose product of the forward map, batched over rows.
pub fn dft_adjoint(grad_bins: &ComplexTensor, n: usize) -> Result<RealTensor> {
    let l = half_len(n);
    if grad_bins.re.cols() != l {
        return Err(FctError::Size(format!(
            "gradient has {} bins, expected {} for N={}",
            grad_bins.re.cols(),
            l,
            n
        )));
    }
    let rows = grad_bins.re.rows();
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        out.extend(rfft_adjoint_row(
            &grad_bins.re.data()[r * l..(r + 1) * l],
            &grad_bins.im.data()[r * l..(r + 1) * l],
            n,
        ));
    }
    if grad_bins.re.shape().len() == 1 {
        RealTensor::new(vec![n], out)
    } else {
        RealTensor::new(vec![rows, n], out)
    }
}

/// Split a signal into its cosine-spectrum (symmetric) and sine-spectrum
/// (antisymmetric) components. The parts sum back to the input.
pub fn decompose(x: &RealTensor) -> Result<(RealTensor, RealTensor)> {
    let axis = x.shape().len() - 1;
    let s = dft(x, axis)?;
    let zero = RealTensor::zeros(s.bins.re.shape());
    let sym = idft(&HalfSpectrum {
        bins: ComplexTensor::new(s.bins.re.clone(), zero.clone())?,
        original_len: s.original_len,
        axis: s.axis,
    })?;
    let anti = idft(&HalfSpectrum {
        bins: ComplexTensor::new(zero, s.bins.im.clone())?,
        original_len: s.original_len,
        axis: s.axis,
    })?;
    Ok((sym, anti))
}

/// Full N-bin complex spectrum of each row (used by the associativity probe,
/// where products of square spectra are required).
pub fn full_dft_rows(x: &RealTensor) -> Result<ComplexTensor> {
    let n = x.cols();
    let rows = x.rows();
    let mut re = Vec::with_capacity(rows * n);
    let mut im = Vec::with_capacity(rows * n);
    for r in 0..rows {
        let row = &x.data()[r * n..(r + 1) * n];
        if n.is_power_of_two() {
            let mut fr = row.to_vec();
            let mut fi = vec![0.0; n];
            fft_pow2(&mut fr, &mut fi, false);
            re.extend_from_slice(&fr);
            im.extend_from_slice(&fi);
        } else {
            for k in 0..n {
                let (mut sr, mut si) = (0.0, 0.0);
                for (t, &v) in row.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    sr += v * a.cos();
                    si += v * a.sin();
                }
                re.push(sr);
                im.push(si);
            }
        }
    }
    let shape = x.shape().to_vec();
    ComplexTensor::new(RealTensor::new(shape.clone(), re)?, RealTensor::new(shape, im)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn constant_signal_is_pure_dc() {
        let x = RealTensor::new(vec![4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let s = dft(&x, 0).unwrap();
        assert!(close(s.bins.re.data()[0], 4.0, 1e-12));
        for k in 1..3 {
            assert!(s.bins.re.data()[k].abs() < 1e-12);
            assert!(s.bins.im.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_and_sine_lines_match_direct_evaluation() {
        // frozen from the naive forward sum at N=4
        let x = RealTensor::new(vec![4], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let s = dft(&x, 0).unwrap();
        let want_re = [0.0, 2.0, 0.0];
        let want_im = [0.0, 0.0, 0.0];
        for k in 0..3 {
            assert!(close(s.bins.re.data()[k], want_re[k], 1e-12));
            assert!(close(s.bins.im.data()[k], want_im[k], 1e-12));
        }

        let y = RealTensor::new(vec![4], vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let sy = dft(&y, 0).unwrap();
        let want_re = [0.0, 0.0, 0.0];
        let want_im = [0.0, -2.0, 0.0];
        for k in 0..3 {
            assert!(close(sy.bins.re.data()[k], want_re[k], 1e-12));
            assert!(close(sy.bins.im.data()[k], want_im[k], 1e-12));
        }
    }

    #[test]
    fn idft_frozen_cases() {
        let s = HalfSpectrum {
            bins: ComplexTensor::new(
                RealTensor::new(vec![3], vec![4.0, 0.0, 0.0]).unwrap(),
                RealTensor::zeros(&[3]),
            )
            .unwrap(),
            original_len: 4,
            axis: 0,
        };
        let x = idft(&s).unwrap();
        for &v in x.data() {
            assert!(close(v, 1.0, 1e-12));
        }

        let s2 = HalfSpectrum {
            bins: ComplexTensor::new(
                RealTensor::new(vec![3], vec![0.0, 2.0, 0.0]).unwrap(),
                RealTensor::zeros(&[3]),
            )
            .unwrap(),
            original_len: 4,
            axis: 0,
        };
        let x2 = idft(&s2).unwrap();
        let want = [1.0, 0.0, -1.0, 0.0];
        for (a, b) in x2.data().iter().zip(want) {
            assert!(close(*a, b, 1e-12));
        }

        let z = HalfSpectrum {
            bins: ComplexTensor::zeros(&[3]),
            original_len: 4,
            axis: 0,
        };
        assert!(idft(&z).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn idft_rejects_complex_dc() {
        let s = HalfSpectrum {
            bins: ComplexTensor::new(
                RealTensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap(),
                RealTensor::new(vec![3], vec![0.5, 0.0, 0.0]).unwrap(),
            )
            .unwrap(),
            original_len: 4,
            axis: 0,
        };
        assert!(matches!(idft(&s), Err(FctError::Invariant(_))));
    }

    #[test]
    fn round_trip_many_sizes() {
        for &n in &[4usize, 8, 16, 64, 256, 1024, 6, 10, 12] {
            let mut rng = Rng::new(n as u64);
            let x = RealTensor::from_fn(&[n], |_| rng.normal());
            let back = idft(&dft(&x, 0).unwrap()).unwrap();
            assert!(x.rel_dist(&back) < 1e-10, "n={n} dist {}", x.rel_dist(&back));
        }
    }

    #[test]
    fn fast_path_matches_naive_oracle() {
        for &n in &[4usize, 16, 128, 1024] {
            let mut rng = Rng::new(7 + n as u64);
            let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let (fr, fi) = rfft_row(&x);
            let (nr, ni) = naive_dft_row(&x);
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())) * n as f64;
            for k in 0..half_len(n) {
                assert!((fr[k] - nr[k]).abs() < 1e-10 * scale);
                assert!((fi[k] - ni[k]).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn parseval_over_sizes() {
        for &n in &[4usize, 8, 16, 64, 256] {
            let mut rng = Rng::new(n as u64 * 31);
            let x = RealTensor::from_fn(&[n], |_| rng.normal());
            let s = dft(&x, 0).unwrap();
            let l = half_len(n);
            let mut spec_energy = 0.0;
            for k in 0..l {
                let e = s.bins.re.data()[k].powi(2) + s.bins.im.data()[k].powi(2);
                let endpoint = k == 0 || (n % 2 == 0 && k == l - 1);
                spec_energy += if endpoint { e } else { 2.0 * e };
            }
            let time_energy: f64 = x.data().iter().map(|v| v * v).sum();
            assert!(
                close(time_energy, spec_energy / n as f64, 1e-9),
                "n={n}: {time_energy} vs {}",
                spec_energy / n as f64
            );
        }
    }

    #[test]
    fn linearity() {
        let n = 32;
        let mut rng = Rng::new(5);
        let x = RealTensor::from_fn(&[n], |_| rng.normal());
        let y = RealTensor::from_fn(&[n], |_| rng.normal());
        let (a, b) = (1.7, -0.3);
        let lhs = dft(&x.scale(a).add(&y.scale(b)).unwrap(), 0).unwrap();
        let sx = dft(&x, 0).unwrap();
        let sy = dft(&y, 0).unwrap();
        let rhs_re = sx.bins.re.scale(a).add(&sy.bins.re.scale(b)).unwrap();
        let rhs_im = sx.bins.im.scale(a).add(&sy.bins.im.scale(b)).unwrap();
        assert!(lhs.bins.re.rel_dist(&rhs_re) < 1e-10);
        assert!(lhs.bins.im.rel_dist(&rhs_im) < 1e-10);
    }

    #[test]
    fn conjugate_symmetry_of_full_spectrum() {
        let n = 16;
        let mut rng = Rng::new(21);
        let x = RealTensor::from_fn(&[n], |_| rng.normal());
        let full = full_dft_rows(&x.reshape(&[1, n]).unwrap()).unwrap();
        let scale = full.max_abs();
        for k in 1..n {
            let re_k = full.re.data()[k];
            let im_k = full.im.data()[k];
            let re_m = full.re.data()[n - k];
            let im_m = full.im.data()[n - k];
            assert!((re_k - re_m).abs() < 1e-12 * scale);
            assert!((im_k + im_m).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_unit_dc_gradient_is_ones() {
        let n = 8;
        let l = half_len(n);
        let mut gre = vec![0.0; l];
        gre[0] = 1.0;
        let gim = vec![0.0; l];
        let x = rfft_adjoint_row(&gre, &gim, n);
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let zero = rfft_adjoint_row(&vec![0.0; l], &vec![0.0; l], n);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_matches_finite_difference_jacobian_transpose() {
        let n = 8;
        let l = half_len(n);
        let mut rng = Rng::new(17);
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let gre: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let gim: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let analytic = rfft_adjoint_row(&gre, &gim, n);

        // finite differences of t -> <dft(x + t e_i), g>
        let h = 1e-6;
        for i in 0..n {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let (pr, pi) = rfft_row(&xp);
            let (mr, mi) = rfft_row(&xm);
            let mut dot_p = 0.0;
            let mut dot_m = 0.0;
            for k in 0..l {
                dot_p += pr[k] * gre[k] + pi[k] * gim[k];
                dot_m += mr[k] * gre[k] + mi[k] * gim[k];
            }
            let fd = (dot_p - dot_m) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() < 1e-8 * (1.0 + analytic[i].abs()),
                "coord {i}: fd {fd} vs {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn adjoint_inner_product_identity() {
        for &n in &[8usize, 16, 12] {
            let l = half_len(n);
            let mut rng = Rng::new(n as u64 + 3);
            let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let gre: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
            let gim: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
            let (fr, fi) = rfft_row(&x);
            let lhs: f64 = (0..l).map(|k| fr[k] * gre[k] + fi[k] * gim[k]).sum();
            let adj = rfft_adjoint_row(&gre, &gim, n);
            let rhs: f64 = x.iter().zip(adj.iter()).map(|(a, b)| a * b).sum();
            assert!(close(lhs, rhs, 1e-10), "n={n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn irfft_adjoint_inner_product_identity() {
        let n = 16;
        let l = half_len(n);
        let mut rng = Rng::new(77);
        let bre: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let mut bim: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        bim[0] = 0.0;
        bim[l - 1] = 0.0;
        let g: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y = irfft_row(&bre, &bim, n);
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let (are, aim) = irfft_adjoint_row(&g);
        let rhs: f64 = (0..l).map(|k| bre[k] * are[k] + bim[k] * aim[k]).sum();
        assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn decompose_even_odd_and_sum() {
        let even = RealTensor::new(vec![4], vec![2.0, 1.0, 0.0, 1.0]).unwrap();
        let (_, anti) = decompose(&even).unwrap();
        assert!(anti.max_abs() < 1e-12);

        let odd = RealTensor::new(vec![4], vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let (sym, _) = decompose(&odd).unwrap();
        assert!(sym.max_abs() < 1e-12);

        let mut rng = Rng::new(8);
        let x = RealTensor::from_fn(&[2, 16], |_| rng.normal());
        let (s, a) = decompose(&x).unwrap();
        let back = s.add(&a).unwrap();
        assert!(x.rel_dist(&back) < 1e-10);
    }

    #[test]
    fn dft_axis0_of_matrix() {
        let mut rng = Rng::new(13);
        let x = RealTensor::from_fn(&[8, 3], |_| rng.normal());
        let s = dft(&x, 0).unwrap();
        assert_eq!(s.bins.re.shape(), &[3, 5]);
        let back = idft(&s).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert!(x.rel_dist(&back) < 1e-10);
    }

    #[test]
    fn too_short_signal_rejected() {
        let x = RealTensor::new(vec![1], vec![3.0]).unwrap();
        assert!(dft(&x, 0).is_err());
    }
}
