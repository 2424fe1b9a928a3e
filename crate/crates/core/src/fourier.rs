//! Multi-dimensional complex FFTs over row-major arrays.

use rustfft::{FftDirection, FftPlanner};

use crate::spinor::C64;

/// In-place unnormalized transform of a row-major array with the given shape.
/// `Inverse` uses the kernel `exp(+2πi jk/N)`.
pub fn fft_nd(data: &mut [C64], shape: &[usize], direction: FftDirection) {
    let total: usize = shape.iter().product();
    assert_eq!(total, data.len(), "shape does not match buffer");
    let mut planner = FftPlanner::<f64>::new();
    let mut stride = 1usize;
    let mut line = Vec::new();
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        if n > 1 {
            let fft = planner.plan_fft(n, direction);
            line.resize(n, C64::new(0.0, 0.0));
            let block = n * stride;
            for outer in 0..total / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    fft.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                }
            }
        }
        stride *= n;
    }
}
