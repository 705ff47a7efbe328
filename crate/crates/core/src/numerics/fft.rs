//! Unitary 2-D discrete Fourier transforms.
//!
//! Both directions carry a `1/sqrt(height*width)` factor, so `dft2` preserves
//! the Euclidean norm and `idft2` is its exact inverse. Channels are
//! transformed independently.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::tensor::{ComplexImageTensor, ImageTensor};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

fn plan(len: usize, direction: Direction) -> std::sync::Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(len),
            Direction::Inverse => p.plan_fft_inverse(len),
        }
    })
}

/// Unnormalized in-place transform of one `height x width` plane.
fn transform_plane(plane: &mut [Complex64], height: usize, width: usize, direction: Direction) {
    let row_fft = plan(width, direction);
    for row in plane.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    if height > 1 {
        let col_fft = plan(height, direction);
        let mut column = vec![Complex64::new(0.0, 0.0); height];
        for j in 0..width {
            for i in 0..height {
                column[i] = plane[i * width + j];
            }
            col_fft.process(&mut column);
            for i in 0..height {
                plane[i * width + j] = column[i];
            }
        }
    }
}

fn transform(data: &mut [Complex64], height: usize, width: usize, direction: Direction, scale: f64) {
    let n = height * width;
    if n == 0 {
        return;
    }
    for plane in data.chunks_exact_mut(n) {
        transform_plane(plane, height, width, direction);
    }
    if scale != 1.0 {
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Unitary forward DFT of a real image.
pub fn dft2(x: &ImageTensor) -> ComplexImageTensor {
    dft2_complex(&ComplexImageTensor::from_real(x))
}

/// Unitary forward DFT of a complex image.
pub fn dft2_complex(x: &ComplexImageTensor) -> ComplexImageTensor {
    let mut out = x.clone();
    let (h, w) = (x.height(), x.width());
    transform(out.data_mut(), h, w, Direction::Forward, 1.0 / ((h * w) as f64).sqrt());
    out
}

/// Unitary inverse DFT.
pub fn idft2(x: &ComplexImageTensor) -> ComplexImageTensor {
    let mut out = x.clone();
    let (h, w) = (x.height(), x.width());
    transform(out.data_mut(), h, w, Direction::Inverse, 1.0 / ((h * w) as f64).sqrt());
    out
}

/// Eigenvalues of circular convolution with `kernel` on a `height x width`
/// grid: the unnormalized DFT of the kernel embedded with its center at the
/// origin. Circular `conv2d(x, kernel)` equals
/// `idft2(dft2(x) * transfer_function(kernel))`.
pub fn transfer_function(kernel: &ImageTensor, height: usize, width: usize) -> ComplexImageTensor {
    let embedded = embed_kernel(kernel, height, width);
    let mut out = ComplexImageTensor::from_real(&embedded);
    transform(out.data_mut(), height, width, Direction::Forward, 1.0);
    out
}

/// Places an odd-sized kernel on a `height x width` grid with its center tap at
/// `(0, 0)` and the remaining taps wrapped around the borders.
pub fn embed_kernel(kernel: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    let (kh, kw) = (kernel.height(), kernel.width());
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = ImageTensor::zeros(height, width);
    for a in 0..kh {
        for b in 0..kw {
            let i = (a as isize - ch as isize).rem_euclid(height as isize) as usize;
            let j = (b as isize - cw as isize).rem_euclid(width as isize) as usize;
            let v = out.get(i, j) + kernel.get(a, b);
            out.set(i, j, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn impulse_maps_to_flat_spectrum() {
        let mut x = ImageTensor::zeros(4, 4);
        x.set(0, 0, 1.0);
        let f = dft2(&x);
        for c in f.data() {
            assert!((c.re - 0.25).abs() < 1e-15 && c.im.abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let x = random_image(8, 8, 1);
        let back = idft2(&dft2(&x));
        let err = back.real().zip_map(&x, |a, b| a - b).norm() / x.norm();
        assert!(err < 1e-10, "{err}");
        assert!(back.imag().norm() < 1e-12);
    }

    #[test]
    fn parseval() {
        let x = random_image(16, 16, 2);
        let f = dft2(&x);
        assert!((f.norm() - x.norm()).abs() / x.norm() < 1e-10);
    }

    #[test]
    fn non_square_and_odd_sizes() {
        let x = random_image(5, 12, 3);
        let back = idft2(&dft2(&x)).real();
        assert!(back.max_abs_diff(&x) < 1e-12);
        let one = random_image(1, 1, 4);
        assert!((dft2(&one).data()[0].re - one.data()[0]).abs() < 1e-15);
    }

    #[test]
    fn conjugate_symmetry_of_real_input() {
        let x = random_image(6, 7, 5);
        let f = dft2(&x);
        for i in 0..6 {
            for j in 0..7 {
                let a = f.data()[i * 7 + j];
                let b = f.data()[((6 - i) % 6) * 7 + (7 - j) % 7];
                assert!((a - b.conj()).norm() < 1e-12);
            }
        }
    }
}
